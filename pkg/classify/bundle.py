"""Model bundle: every writer's SVMs for every modelled layer in one container."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.container import read_container, write_container
from core.exceptions import FormatVersionMismatch, WeightMismatch, WriterSetMismatch
from core.logger import setup_logger
from classify.svm import SvmModel

logger = setup_logger("classify")

BUNDLE_MAGIC = b"SIDB0001"
BUNDLE_VERSION = 1


@dataclass
class LayerModels:
    """Writer models trained on one layer's descriptors."""
    layer: int
    C: float
    gamma: float
    models: List[SvmModel]
    saliency_digest: str = ""
    grid: List[Dict[str, float]] = field(default_factory=list)

    @property
    def writers(self) -> List[str]:
        return [m.writer for m in self.models]


@dataclass
class WriterBundle:
    writers: List[str]
    layers: Dict[int, LayerModels]
    pooling: str
    layer_mode: str
    alpha: Optional[float] = None
    config_digest: str = ""
    weights_digest: str = ""
    config: Dict[str, Any] = field(default_factory=dict)

    def validate(self):
        for layer, lm in self.layers.items():
            if lm.writers != self.writers:
                raise WriterSetMismatch(
                    f"conv{layer} models cover different writers than the bundle",
                    {"bundle": self.writers, "layer": lm.writers},
                )

    def layer(self, layer: int) -> LayerModels:
        if layer not in self.layers:
            raise WeightMismatch(f"Bundle has no models for conv{layer}", {"layers": sorted(self.layers)})
        return self.layers[layer]


def _blob(layer: int, writer: str, kind: str) -> str:
    return f"conv{layer}/{writer}/{kind}"


def save_bundle(bundle: WriterBundle, path: Path) -> Path:
    bundle.validate()
    header: Dict[str, Any] = {
        "format_version": BUNDLE_VERSION,
        "writers": bundle.writers,
        "pooling": bundle.pooling,
        "layer_mode": bundle.layer_mode,
        "alpha": bundle.alpha,
        "config_digest": bundle.config_digest,
        "weights_digest": bundle.weights_digest,
        "config": bundle.config,
        "layers": [],
    }
    blobs = []
    for layer in sorted(bundle.layers):
        lm = bundle.layers[layer]
        entry = {
            "layer": layer, "C": lm.C, "gamma": lm.gamma,
            "saliency_digest": lm.saliency_digest, "grid": lm.grid, "models": [],
        }
        for m in lm.models:
            entry["models"].append({
                "writer": m.writer, "intercept": m.intercept,
                "n_positive": m.n_positive, "n_negative": m.n_negative,
            })
            blobs.append((_blob(layer, m.writer, "sv"), m.support_vectors))
            blobs.append((_blob(layer, m.writer, "coef"), m.dual_coef))
        header["layers"].append(entry)
    path = write_container(path, BUNDLE_MAGIC, header, blobs)
    logger.info(f"💾 Saved {len(bundle.writers)} writers x {len(bundle.layers)} layers to {path}")
    return path


def _check_header(header: Dict[str, Any]):
    if header.get("format_version") != BUNDLE_VERSION:
        raise FormatVersionMismatch(
            f"Unsupported bundle format version {header.get('format_version')}",
            {"found": header.get("format_version"), "expected": BUNDLE_VERSION},
        )
    expected = set()
    for entry in header.get("layers", []):
        for m in entry["models"]:
            expected.add(_blob(entry["layer"], m["writer"], "sv"))
            expected.add(_blob(entry["layer"], m["writer"], "coef"))
    stored = {b["name"] for b in header.get("blobs", [])}
    if stored != expected:
        raise WeightMismatch("Bundle blobs do not match its model list",
                             {"missing": sorted(expected - stored), "unexpected": sorted(stored - expected)})


def load_bundle(path: Path) -> WriterBundle:
    header, arrays = read_container(path, BUNDLE_MAGIC, _check_header)
    layers: Dict[int, LayerModels] = {}
    for entry in header["layers"]:
        layer = int(entry["layer"])
        models = []
        for m in entry["models"]:
            sv = arrays[_blob(layer, m["writer"], "sv")].astype(np.float64)
            coef = arrays[_blob(layer, m["writer"], "coef")].astype(np.float64)
            models.append(SvmModel(
                writer=m["writer"], support_vectors=sv, dual_coef=coef,
                intercept=float(m["intercept"]), C=float(entry["C"]), gamma=float(entry["gamma"]),
                n_positive=int(m.get("n_positive", 0)), n_negative=int(m.get("n_negative", 0)),
            ))
        layers[layer] = LayerModels(layer, float(entry["C"]), float(entry["gamma"]), models,
                                    entry.get("saliency_digest", ""), entry.get("grid", []))
    bundle = WriterBundle(
        writers=list(header["writers"]),
        layers=layers,
        pooling=header["pooling"],
        layer_mode=header["layer_mode"],
        alpha=header.get("alpha"),
        config_digest=header.get("config_digest", ""),
        weights_digest=header.get("weights_digest", ""),
        config=header.get("config", {}),
    )
    bundle.validate()
    logger.debug(f"Loaded bundle {path}: {len(bundle.writers)} writers, layers {sorted(layers)}")
    return bundle
