"""Weight container files."""

from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError as PydanticValidationError

from core.config import ConvSpec
from core.container import read_container, write_container
from core.exceptions import FormatVersionMismatch, WeightMismatch
from core.logger import setup_logger
from convnet.network import NetWeights, tensor_shapes

logger = setup_logger("convnet")

WEIGHTS_MAGIC = b"SIDW0001"
FORMAT_VERSION = 1


def save_weights(w: NetWeights, path: Path) -> Path:
    """Write weights and provenance to a container file."""
    w.validate()
    header = {
        "format_version": FORMAT_VERSION,
        "spec": w.spec.model_dump(mode="json"),
        "seed": w.seed,
        "epoch": w.epoch,
        "dataset_digest": w.dataset_digest,
        "config_digest": w.config_digest,
        "val_accuracy": w.val_accuracy,
        "invert_ink": w.invert_ink,
        "extra": w.extra,
    }
    path = write_container(path, WEIGHTS_MAGIC, header, list(w.tensors.items()))
    logger.info(f"💾 Saved weights ({len(w.tensors)} tensors, epoch {w.epoch}) to {path}")
    return path


def _header_checker(expected_spec: Optional[ConvSpec]):
    def check(header: Dict[str, Any]):
        if header.get("format_version") != FORMAT_VERSION:
            raise FormatVersionMismatch(
                f"Unsupported weight format version {header.get('format_version')}",
                {"found": header.get("format_version"), "expected": FORMAT_VERSION},
            )
        try:
            spec = ConvSpec.model_validate(header["spec"])
        except (KeyError, PydanticValidationError) as e:
            raise WeightMismatch(f"Weight header has no valid network spec: {e}")
        if expected_spec is not None and spec != expected_spec:
            raise WeightMismatch("Weight file was trained for a different network spec")
        expected = tensor_shapes(spec)
        stored = OrderedDict((b["name"], tuple(b["shape"])) for b in header.get("blobs", []))
        if stored != expected:
            differing = sorted(
                name for name in set(stored) | set(expected) if stored.get(name) != expected.get(name)
            )
            raise WeightMismatch(
                "Weight file tensors do not match the network spec",
                {"tensors": differing},
            )
    return check


def load_weights(path: Path, expected_spec: Optional[ConvSpec] = None) -> NetWeights:
    """Read and verify a weight container."""
    header, arrays = read_container(path, WEIGHTS_MAGIC, _header_checker(expected_spec))
    weights = NetWeights(
        spec=ConvSpec.model_validate(header["spec"]),
        tensors=OrderedDict((b["name"], arrays[b["name"]]) for b in header["blobs"]),
        seed=header.get("seed", 0),
        epoch=header.get("epoch", 0),
        dataset_digest=header.get("dataset_digest", ""),
        config_digest=header.get("config_digest", ""),
        val_accuracy=header.get("val_accuracy"),
        invert_ink=header.get("invert_ink", True),
        extra=header.get("extra", {}),
    )
    weights.validate()
    logger.debug(f"Loaded weights from {path} (epoch {weights.epoch})")
    return weights
