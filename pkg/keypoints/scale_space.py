"""Gaussian scale space and difference-of-Gaussian stacks."""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from core.exceptions import ImageTooSmall
from core.logger import setup_logger
from imaging.raster import GrayImage

logger = setup_logger("keypoints")

MIN_IMAGE_SIDE = 16
MIN_OCTAVE_SIDE = 8


@dataclass
class GaussianPyramid:
    """Per-octave stacks of Gaussian levels, shape (scales_per_octave + 3, H_o, W_o)."""
    octaves: List[np.ndarray]
    sigma0: float
    scales_per_octave: int
    image_shape: tuple
    _dogs: Optional[List[np.ndarray]] = field(default=None, repr=False)

    @property
    def num_octaves(self) -> int:
        return len(self.octaves)

    @property
    def dogs(self) -> List[np.ndarray]:
        """Adjacent-level differences per octave, shape (scales_per_octave + 2, H_o, W_o)."""
        if self._dogs is None:
            self._dogs = [np.diff(stack, axis=0) for stack in self.octaves]
        return self._dogs

    def level_sigma(self, octave: int, level: float) -> float:
        """Absolute blur (input pixels) of a possibly fractional level."""
        return self.sigma0 * 2.0 ** (octave + level / self.scales_per_octave)

    def octave_sigma(self, level: float) -> float:
        """Blur of a level measured in its own octave's pixels."""
        return self.sigma0 * 2.0 ** (level / self.scales_per_octave)


def max_octaves(height: int, width: int) -> int:
    """Octaves that keep the coarsest level at least 8x8."""
    return int(math.floor(math.log2(min(height, width) / MIN_OCTAVE_SIDE))) + 1


def gaussian_increments(sigma0: float, scales_per_octave: int) -> np.ndarray:
    """Incremental blurs taking each level of an octave to the next."""
    k = 2.0 ** (1.0 / scales_per_octave)
    kernels = np.zeros(scales_per_octave + 3)
    kernels[0] = sigma0
    for index in range(1, scales_per_octave + 3):
        previous = sigma0 * k ** (index - 1)
        kernels[index] = math.sqrt((k * previous) ** 2 - previous ** 2)
    return kernels


def build_scale_space(
    img: GrayImage,
    octaves: Optional[int] = None,
    scales_per_octave: int = 3,
    sigma0: float = 1.6,
    assumed_blur: float = 0.5,
) -> GaussianPyramid:
    """Build the Gaussian pyramid of a normalized image.

    The input is not upsampled; its base level is blurred from the assumed
    camera blur up to ``sigma0``. Each next octave starts from the level with
    twice the base blur, sampled at every second pixel.
    """
    height, width = img.height, img.width
    if min(height, width) < MIN_IMAGE_SIDE:
        raise ImageTooSmall(
            f"Image {width}x{height} is smaller than {MIN_IMAGE_SIDE}px on a side",
            {"width": width, "height": height},
        )

    limit = max_octaves(height, width)
    if octaves is None:
        octaves = limit
    elif octaves > limit:
        logger.debug(f"Clipping {octaves} octaves to {limit} for a {width}x{height} image")
        octaves = limit

    base_blur = math.sqrt(max(sigma0 ** 2 - assumed_blur ** 2, 0.01))
    image = gaussian_filter(np.asarray(img.data, dtype=np.float64), base_blur, mode="nearest")
    increments = gaussian_increments(sigma0, scales_per_octave)

    stacks: List[np.ndarray] = []
    for _ in range(octaves):
        levels = [image]
        for sigma in increments[1:]:
            levels.append(gaussian_filter(levels[-1], sigma, mode="nearest"))
        stacks.append(np.stack(levels))
        image = levels[scales_per_octave][::2, ::2]

    return GaussianPyramid(
        octaves=stacks,
        sigma0=sigma0,
        scales_per_octave=scales_per_octave,
        image_shape=(height, width),
    )
