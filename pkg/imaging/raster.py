"""Grayscale rasters, image loading and intensity normalization."""

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from core.exceptions import CorruptImage, MissingFile, UnsupportedFormat
from core.logger import setup_logger

logger = setup_logger("imaging")

# Rec.601 luminance weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SUPPORTED_FORMATS = {"PNG", "PPM"}  # PIL reports binary PGM (P5) as PPM
SUPPORTED_MODES = {"L", "RGB"}


@dataclass(frozen=True)
class GrayImage:
    """Row-major grayscale raster of real intensities."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self):
        return self.data.shape

    def to_uint8(self, scale: float = 255.0) -> np.ndarray:
        """Quantize to 8 bits; ``scale`` maps the stored range onto 0..255."""
        return np.clip(np.rint(self.data * scale), 0, 255).astype(np.uint8)


def load_grayscale(path: Union[str, Path]) -> GrayImage:
    """Load an 8-bit gray or RGB PNG/PGM as intensities in [0, 255]."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"Image not found: {path}", {"path": str(path)})

    try:
        with Image.open(path) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise UnsupportedFormat(
                    f"Unsupported image format {img.format} for {path.name}",
                    {"path": str(path), "format": img.format},
                )
            if img.mode not in SUPPORTED_MODES:
                raise UnsupportedFormat(
                    f"Unsupported pixel mode {img.mode} for {path.name}",
                    {"path": str(path), "mode": img.mode},
                )
            img.load()
            pixels = np.asarray(img, dtype=np.float64)
    except UnidentifiedImageError as e:
        if path.suffix.lower() in (".png", ".pgm"):
            raise CorruptImage(f"Cannot decode {path.name}: {e}", {"path": str(path)})
        raise UnsupportedFormat(f"Not a PNG or PGM image: {path.name}", {"path": str(path)})
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptImage(f"Cannot decode {path.name}: {e}", {"path": str(path)})

    if pixels.ndim == 3:
        pixels = pixels[..., :3] @ LUMA_WEIGHTS
    return GrayImage(pixels)


def normalize01(img: GrayImage) -> GrayImage:
    """Divide intensities by 255."""
    return GrayImage(img.data / 255.0)


def save_png(img: GrayImage, path: Union[str, Path], scale: float = 255.0) -> Path:
    """Write an image as 8-bit grayscale PNG (debug dumps and synthetic corpora)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.to_uint8(scale)).save(path, format="PNG")
    return path
