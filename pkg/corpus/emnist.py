"""EMNIST IDX readers and labeled image sets."""

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import numpy as np

from core.exceptions import BadMagic, CountMismatch, MissingFile, TruncatedFile
from core.logger import setup_logger

logger = setup_logger("corpus")

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
NUM_LETTERS = 26
# byclass: 0-9 digits, 10-35 upper case, 36-61 lower case
BYCLASS_FIRST_LETTER = 10


@dataclass
class LabeledImages:
    """Upright 28x28 glyphs in [0, 1] with class labels."""
    images: np.ndarray  # (N, 28, 28) float64
    labels: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices) -> "LabeledImages":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImages(self.images[indices], self.labels[indices])

    def split(self, fraction: float, seed: int) -> Tuple["LabeledImages", "LabeledImages"]:
        """Seeded random (train, validation) split with ``fraction`` held out."""
        order = np.random.default_rng(seed).permutation(len(self))
        held = max(1, int(round(fraction * len(self))))
        return self.subset(np.sort(order[held:])), self.subset(np.sort(order[:held]))

    def inverted(self) -> "LabeledImages":
        """Dark ink on white, matching word images."""
        return LabeledImages(1.0 - self.images, self.labels)

    def digest(self, limit: Optional[int] = None) -> str:
        """SHA-256 of the quantized pixels and labels (first ``limit`` samples)."""
        count = len(self) if limit is None else min(limit, len(self))
        pixels = np.clip(np.rint(self.images[:count] * 255), 0, 255).astype(np.uint8)
        h = hashlib.sha256()
        h.update(pixels.tobytes())
        h.update(self.labels[:count].astype("<i8").tobytes())
        return h.hexdigest()


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"IDX file not found: {path}", {"path": str(path)})
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise TruncatedFile(f"Cannot decompress {path.name}: {e}", {"path": str(path)})
    return raw


def read_idx_images(path: Union[str, Path]) -> np.ndarray:
    """Raw uint8 images (N, rows, cols) exactly as stored."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise TruncatedFile(f"IDX image header truncated in {Path(path).name}")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise BadMagic(f"Bad IDX image magic 0x{magic:08x}", {"path": str(path), "magic": magic})
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise TruncatedFile(
            f"IDX image file holds {len(raw)} bytes, header promises {expected}",
            {"path": str(path), "expected": expected, "size": len(raw)},
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def read_idx_labels(path: Union[str, Path]) -> np.ndarray:
    """Raw uint8 labels (N,)."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise TruncatedFile(f"IDX label header truncated in {Path(path).name}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise BadMagic(f"Bad IDX label magic 0x{magic:08x}", {"path": str(path), "magic": magic})
    if len(raw) < 8 + count:
        raise TruncatedFile(
            f"IDX label file holds {len(raw) - 8} labels, header promises {count}",
            {"path": str(path), "expected": count},
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: Path, labels_path: Path):
    """Write uint8 images (stored layout) and labels as IDX files."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes())


def remap_labels(raw: np.ndarray, scheme: Literal["letters", "byclass"]) -> Tuple[np.ndarray, np.ndarray]:
    """Map stored labels to letter classes 0..25; returns (labels, letter mask)."""
    raw = raw.astype(np.int64)
    if scheme == "letters":
        return raw - 1, (raw >= 1) & (raw <= NUM_LETTERS)
    mask = raw >= BYCLASS_FIRST_LETTER
    return (raw - BYCLASS_FIRST_LETTER) % NUM_LETTERS, mask


def load_emnist(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    letters_only: bool = True,
    scheme: Literal["letters", "byclass"] = "letters",
) -> LabeledImages:
    """Decode an EMNIST image/label pair into upright [0, 1] glyphs with labels 0..25."""
    raw_images = read_idx_images(images_path)
    raw_labels = read_idx_labels(labels_path)
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise CountMismatch(
            f"{raw_images.shape[0]} images but {raw_labels.shape[0]} labels",
            {"images": int(raw_images.shape[0]), "labels": int(raw_labels.shape[0])},
        )

    labels, mask = remap_labels(raw_labels, scheme)
    # EMNIST stores glyphs transposed
    images = np.transpose(raw_images, (0, 2, 1)).astype(np.float64) / 255.0
    if letters_only:
        dropped = int((~mask).sum())
        if dropped:
            logger.info(f"Dropped {dropped} non-letter samples from {Path(images_path).name}")
        images, labels = images[mask], labels[mask]

    logger.info(f"📚 Loaded {len(labels)} EMNIST samples from {Path(images_path).name}")
    return LabeledImages(images=images, labels=labels)
