"""Configuration management for the writer identification pipeline."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.exceptions import ConfigurationError


class StrictModel(BaseModel):
    """Base for every config section: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class SiftConfig(StrictModel):
    """Scale-space keypoint detection parameters."""
    sigma0: float = Field(1.6, gt=0)
    scales_per_octave: int = Field(3, ge=1)
    octaves: Optional[int] = Field(None, ge=1)  # None: as many as keep the coarsest level >= 8x8
    contrast_thresh: float = Field(0.03, ge=0)
    edge_ratio: float = Field(10.0, gt=1)
    assumed_blur: float = Field(0.5, ge=0)
    orientation_bins: int = Field(36, ge=4)
    orientation_peak_ratio: float = Field(0.8, gt=0, le=1)
    refine_attempts: int = Field(5, ge=1)


class FragmentConfig(StrictModel):
    """Fragment cutting parameters."""
    eta: float = Field(6.0, gt=0)
    min_side: int = Field(17, ge=3)
    background: float = Field(1.0, ge=0, le=1)

    @field_validator("min_side")
    @classmethod
    def round_up_to_odd(cls, value: int) -> int:
        return value if value % 2 == 1 else value + 1


class BlockSpec(StrictModel):
    """One convolution block: convolution -> ReLU -> batch normalization."""
    filters: int = Field(..., ge=1)
    kernel: int = 3
    stride: Literal[1, 2] = 1
    padding: Literal["same"] = "same"

    @field_validator("kernel")
    @classmethod
    def check_kernel(cls, value: int) -> int:
        if value != 3:
            raise ValueError("convolution kernels are 3x3")
        return value


def _default_blocks() -> List[BlockSpec]:
    plan = [(32, 1), (32, 1), (64, 2), (64, 1), (128, 2), (128, 1)]
    return [BlockSpec(filters=f, stride=s) for f, s in plan]


class ConvSpec(StrictModel):
    """Six-block fully convolutional feature extractor plus its training head."""
    blocks: List[BlockSpec] = Field(default_factory=_default_blocks)
    in_channels: int = 1
    num_classes: int = Field(26, ge=2)
    # torch convention: running = (1 - momentum) * running + momentum * batch
    bn_momentum: float = Field(0.1, gt=0, lt=1)
    bn_eps: float = Field(1e-5, gt=0)

    @field_validator("blocks")
    @classmethod
    def check_blocks(cls, blocks: List[BlockSpec]) -> List[BlockSpec]:
        if len(blocks) != 6:
            raise ValueError(f"expected exactly 6 convolution blocks, got {len(blocks)}")
        first = blocks[0]
        if first.filters != 32 or first.stride != 1:
            raise ValueError("block 1 must be 32 filters, 3x3, stride 1")
        return blocks

    @property
    def strides(self) -> List[int]:
        return [block.stride for block in self.blocks]

    def output_size(self, side: int, layer: int) -> int:
        """Spatial side of the feature maps of `layer` for an input of `side` pixels."""
        for block in self.blocks[:layer]:
            side = side if block.stride == 1 else math.ceil(side / 2)
        return side


class TrainingConfig(StrictModel):
    """Training protocol of the writer-independent network."""
    epochs: int = Field(50, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    lr_step_epochs: int = Field(10, ge=1)
    lr_decay: float = Field(0.1, gt=0, le=1)
    batch_size: int = Field(128, ge=1)
    betas: List[float] = Field(default_factory=lambda: [0.9, 0.999])
    adam_eps: float = Field(1e-8, gt=0)
    validation_fraction: float = Field(0.1, gt=0, lt=1)
    max_train_samples: Optional[int] = Field(None, ge=1)
    label_scheme: Literal["letters", "byclass"] = "letters"
    invert_ink: bool = True  # EMNIST is light ink on dark; word images are dark on white


class HogParams(StrictModel):
    """Adaptive-grid HOG parameters for one convolution layer."""
    m: int = Field(4, ge=1)
    n: int = Field(4, ge=1)
    t: int = Field(4, ge=1)
    b: int = Field(4, ge=1)
    k: int = Field(10, ge=2)

    @model_validator(mode="after")
    def check_partition(self) -> "HogParams":
        if self.m * self.n != self.t * self.b:
            raise ValueError(f"m*n ({self.m * self.n}) must equal t*b ({self.t * self.b})")
        rows, cols = self.block_shape
        if self.m % rows or self.n % cols:
            raise ValueError(f"t={self.t} cells cannot tile a {self.m}x{self.n} grid")
        return self

    @property
    def block_shape(self) -> tuple:
        """Cells per block as (rows, cols), as close to square as the grid allows."""
        for rows in range(int(math.isqrt(self.t)), 0, -1):
            cols = self.t // rows
            if rows * cols == self.t and self.m % rows == 0 and self.n % cols == 0:
                return rows, cols
        return 1, self.t

    @property
    def length(self) -> int:
        return self.k * self.t * self.b


def _default_hog() -> Dict[int, HogParams]:
    fine = HogParams(m=4, n=4, t=4, b=4, k=10)
    coarse = HogParams(m=2, n=2, t=1, b=4, k=10)
    return {1: fine, 2: fine, 3: coarse, 4: coarse, 5: coarse, 6: coarse}


class HogConfig(StrictModel):
    """HOG parameters per convolution layer."""
    layers: Dict[int, HogParams] = Field(default_factory=_default_hog)

    def for_layer(self, layer: int) -> HogParams:
        if layer not in self.layers:
            raise KeyError(f"no HOG parameters configured for layer {layer}")
        return self.layers[layer]

    def with_bins(self, k: int) -> "HogConfig":
        return HogConfig(layers={layer: p.model_copy(update={"k": k}) for layer, p in self.layers.items()})


class SaliencyConfig(StrictModel):
    """Sparse-PCA entropy saliency calibration."""
    components: int = Field(8, ge=1)
    bins: int = Field(16, ge=2)
    ridge: float = Field(1e-4, ge=0)
    lasso: Optional[float] = Field(None, ge=0)  # None: tuned to target_sparsity
    target_sparsity: float = Field(0.5, ge=0, lt=1)
    method: Literal["sparse", "dense"] = "sparse"
    max_iter: int = Field(200, ge=1)
    tol: float = Field(1e-6, gt=0)
    strict_convergence: bool = False
    calibration_writers: int = Field(50, ge=2)
    words_per_writer: int = Field(10, ge=1)
    max_fragments_per_writer: Optional[int] = Field(None, ge=1)


def _default_gamma_grid() -> List[float]:
    return [2.0 ** e for e in range(-7, 4)]


class SvmConfig(StrictModel):
    """One-vs-all RBF-SVM training and grid search."""
    C_grid: List[float] = Field(default_factory=lambda: [0.1, 1.0, 10.0, 100.0])
    gamma_grid: List[float] = Field(default_factory=_default_gamma_grid)
    tol: float = Field(1e-3, gt=0)
    negative_ratio: int = Field(20, ge=1)
    precompute_limit: int = Field(8000, ge=0)  # full Gram matrix is computed up to this many rows
    validation_fraction: float = Field(0.25, gt=0, lt=1)

    @field_validator("C_grid", "gamma_grid")
    @classmethod
    def check_positive(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("grid values must be positive")
        return sorted(values)


class FusionConfig(StrictModel):
    """conv1/conv2 score fusion."""
    alpha_points: int = Field(21, ge=2)
    alpha: Optional[float] = Field(None, ge=0, le=1)  # fixed alpha skips the validation sweep

    @property
    def alpha_grid(self) -> List[float]:
        return [round(float(a), 10) for a in np.linspace(0.0, 1.0, self.alpha_points)]


class EvaluationConfig(StrictModel):
    """Desk-scale experiments run by the evaluate command."""
    words_per_writer_sweep: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    repeats: int = Field(10, ge=1)
    hog_bin_sweep: List[int] = Field(default_factory=lambda: [6, 8, 10, 12])
    top_k: int = Field(5, ge=1)


class SyntheticConfig(StrictModel):
    """Synthetic handwriting corpus generator."""
    num_writers: int = Field(10, ge=2)
    words_per_writer: int = Field(40, ge=2)
    words_per_page: int = Field(10, ge=1)
    test_pages: int = Field(1, ge=1)
    min_letters: int = Field(3, ge=1)
    max_letters: int = Field(7, ge=1)
    max_slant_deg: float = Field(15.0, ge=0, lt=45)
    max_thickness: int = Field(2, ge=0)
    max_scale_jitter: float = Field(0.10, ge=0, lt=0.5)
    max_baseline_amplitude: float = Field(2.0, ge=0)
    exemplars_per_letter: int = Field(2, ge=1)
    canvas_height: int = Field(48, ge=32)
    margin: int = Field(8, ge=0)

    @model_validator(mode="after")
    def check_letters(self) -> "SyntheticConfig":
        if self.min_letters > self.max_letters:
            raise ValueError("min_letters must not exceed max_letters")
        return self


class PathsConfig(StrictModel):
    """Input and artifact locations."""
    emnist_train_images: Optional[str] = None
    emnist_train_labels: Optional[str] = None
    emnist_val_images: Optional[str] = None
    emnist_val_labels: Optional[str] = None
    corpus_manifest: Optional[str] = None
    calibration_manifest: Optional[str] = None
    synthetic_dir: str = "artifacts/synthetic"
    artifacts_dir: str = "artifacts"
    weights: str = "artifacts/convnet.sidw"
    profiles_dir: str = "artifacts/saliency"
    bundle: str = "artifacts/writers.sidb"
    report_dir: str = "artifacts/report"


LayerMode = Literal["conv1", "conv2", "conv3", "fused"]
PoolingStrategy = Literal["average", "pre", "post"]


class PipelineConfig(StrictModel):
    """Every parameter of the pipeline; serialized into each artifact."""
    seed: int = 0
    sift: SiftConfig = Field(default_factory=SiftConfig)
    fragments: FragmentConfig = Field(default_factory=FragmentConfig)
    conv: ConvSpec = Field(default_factory=ConvSpec)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    hog: HogConfig = Field(default_factory=HogConfig)
    saliency: SaliencyConfig = Field(default_factory=SaliencyConfig)
    pooling: PoolingStrategy = "post"
    layers: List[int] = Field(default_factory=lambda: [1, 2])
    layer_mode: LayerMode = "fused"
    protocol: Literal["manifest", "iam"] = "manifest"  # iam: re-split into one train and one test page
    svm: SvmConfig = Field(default_factory=SvmConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @field_validator("layers")
    @classmethod
    def check_layers(cls, layers: List[int]) -> List[int]:
        if not layers or any(layer < 1 or layer > 6 for layer in layers):
            raise ValueError("modelled layers must be within 1..6")
        return sorted(set(layers))

    # Sections that do not influence trained artifacts
    RUNTIME_SECTIONS: ClassVar[Tuple[str, ...]] = ("paths", "evaluation")
    # Sections a saliency profile depends on
    CALIBRATION_SECTIONS: ClassVar[Tuple[str, ...]] = ("seed", "sift", "fragments", "conv", "hog", "saliency")

    def _hash(self, payload: Dict[str, Any]) -> str:
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def digest(self) -> str:
        """SHA-256 over the artifact-relevant part of the config."""
        return self._hash(self.model_dump(mode="json", exclude=set(self.RUNTIME_SECTIONS)))

    def calibration_digest(self) -> str:
        """Digest of the sections saliency calibration reads."""
        return self._hash(self.model_dump(mode="json", include=set(self.CALIBRATION_SECTIONS)))

    def model_digest(self) -> str:
        """Digest a writer model bundle is checked against.

        The layer mode is left out: one bundle serves every mode whose
        layers it holds.
        """
        return self._hash(self.model_dump(mode="json", exclude=set(self.RUNTIME_SECTIONS) | {"layer_mode"}))

    def seed_for(self, component: str) -> int:
        """Stable per-component seed derived from the master seed."""
        salt = int.from_bytes(hashlib.sha256(component.encode("utf-8")).digest()[:4], "little")
        return int(np.random.SeedSequence([self.seed, salt]).generate_state(1)[0])

    def modelled_layers(self) -> List[int]:
        """Layers that need SVM models for the selected layer mode."""
        if self.layer_mode == "fused":
            return sorted(set(self.layers) | {1, 2})
        return sorted(set(self.layers) | {int(self.layer_mode[-1])})


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Load a JSON config file (or defaults) and apply flag overrides."""
    data: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigurationError(f"Config file not found: {config_path}", {"path": str(config_path)})
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {config_path} is not valid JSON: {e}")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return PipelineConfig.model_validate(data)


class Settings(BaseSettings):
    """Process-level settings read from the environment."""

    log_level: str = "INFO"
    log_dir: str = "./logs"
    log_to_file: bool = True
    jobs: int = 1

    model_config = SettingsConfigDict(
        env_prefix="WRITERID_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# Global settings instance
settings = Settings()
