"""Per-layer saliency profiles and their JSON files."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, model_validator

from core.exceptions import FormatVersionMismatch, MissingFile, ProfileMismatch
from core.logger import setup_logger

logger = setup_logger("saliency")

PROFILE_FORMAT = "writer-id/saliency"
PROFILE_VERSION = 1


class FilterRank(BaseModel):
    """One filter with its writer-summed entropy row (length L)."""
    filter: int
    weight: float
    entropy_row: List[float]


class SaliencyProfile(BaseModel):
    """Per-filter mean entropy and normalized saliency weight for one layer."""
    layer: int = Field(..., ge=1)
    phi: List[float]
    w: List[float]
    bins: int
    components: int
    writers: int
    fragments_per_writer: int
    lasso: List[Optional[float]] = Field(default_factory=list)
    sparsity: List[Optional[float]] = Field(default_factory=list)
    dead_filters: List[int] = Field(default_factory=list)
    strongest: List[FilterRank] = Field(default_factory=list)
    weakest: List[FilterRank] = Field(default_factory=list)
    config_digest: str = ""
    weights_digest: str = ""

    @model_validator(mode="after")
    def check_weights(self) -> "SaliencyProfile":
        if len(self.phi) != len(self.w) or not self.w:
            raise ValueError("phi and w must be non-empty and of equal length")
        if any(v < 0 for v in self.w) or abs(sum(self.w) - 1.0) > 1e-9:
            raise ValueError("saliency weights must be non-negative and sum to 1")
        ceiling = math.log2(self.bins) + 1e-9
        if any(v < -1e-12 or v > ceiling for v in self.phi):
            raise ValueError(f"filter entropies must lie in [0, log2({self.bins})]")
        return self

    @property
    def filters(self) -> int:
        return len(self.w)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.w, dtype=np.float64)

    def digest(self) -> str:
        """SHA-256 over layer, phi and w."""
        payload = json.dumps({"layer": self.layer, "phi": self.phi, "w": self.w},
                             sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def check_stack(self, layer: int, filters: int):
        """Raise unless this profile fits a stack of ``filters`` maps at ``layer``."""
        if layer != self.layer or filters != self.filters:
            raise ProfileMismatch(
                f"Profile for conv{self.layer} ({self.filters} filters) does not fit "
                f"conv{layer} with {filters} maps",
                {"profile_layer": self.layer, "layer": layer, "filters": filters},
            )

    @classmethod
    def uniform(cls, layer: int, filters: int, bins: int = 16) -> "SaliencyProfile":
        """Equal weights, used for average pooling."""
        return cls(layer=layer, phi=[0.0] * filters, w=[1.0 / filters] * filters, bins=bins,
                   components=0, writers=0, fragments_per_writer=0)


def profile_path(directory: Path, layer: int) -> Path:
    return Path(directory) / f"conv{layer}.json"


def save_profile(profile: SaliencyProfile, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document: Dict[str, Any] = {
        "format": PROFILE_FORMAT,
        "version": PROFILE_VERSION,
        "digest": profile.digest(),
        "profile": profile.model_dump(mode="json"),
    }
    path.write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"💾 Saved conv{profile.layer} saliency profile to {path}")
    return path


def load_profile(path: Path) -> SaliencyProfile:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"Saliency profile not found: {path}", {"path": str(path)})
    document = json.loads(path.read_text(encoding="utf-8"))
    if document.get("format") != PROFILE_FORMAT or document.get("version") != PROFILE_VERSION:
        raise FormatVersionMismatch(
            f"Unsupported saliency profile format in {path.name}",
            {"format": document.get("format"), "version": document.get("version")},
        )
    try:
        profile = SaliencyProfile.model_validate(document["profile"])
    except (KeyError, PydanticValidationError) as e:
        raise ProfileMismatch(f"Invalid saliency profile {path.name}: {e}")
    if profile.digest() != document.get("digest"):
        raise ProfileMismatch(f"Saliency profile {path.name} does not match its digest")
    return profile
