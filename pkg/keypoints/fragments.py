"""Oriented fragments cut around keypoints."""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from core.config import FragmentConfig
from core.logger import setup_logger
from imaging.raster import GrayImage
from keypoints.detector import Keypoint

logger = setup_logger("keypoints")


@dataclass(frozen=True)
class Fragment:
    """Square, orientation-normalized patch around a keypoint."""
    patch: GrayImage
    side: int
    source: Keypoint


def fragment_side(sigma: float, eta: float) -> int:
    """Odd side 2*round(eta*sigma)+1, rounding halves up."""
    return 2 * int(math.floor(eta * sigma + 0.5)) + 1


def extract_fragment(
    img: GrayImage,
    kp: Keypoint,
    eta: float = 6.0,
    min_side: int = 17,
    background: float = 1.0,
) -> Optional[Fragment]:
    """Sample a patch on a grid rotated by the keypoint orientation.

    Patch column u and row v map to image point
    (x + u cos t - v sin t, y + u sin t + v cos t), so the keypoint's dominant
    gradient direction lies along the patch rows. Returns None when the patch
    would be smaller than ``min_side``.
    """
    side = fragment_side(kp.sigma, eta)
    if side < min_side:
        return None

    half = side // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    u, v = np.meshgrid(offsets, offsets)  # u varies along columns, v along rows
    theta = math.radians(kp.orientation)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    xs = kp.x + u * cos_t - v * sin_t
    ys = kp.y + u * sin_t + v * cos_t

    patch = map_coordinates(
        np.asarray(img.data, dtype=np.float64),
        [ys, xs],
        order=1,
        mode="constant",
        cval=background,
    )
    return Fragment(patch=GrayImage(np.clip(patch, 0.0, 1.0)), side=side, source=kp)


def extract_fragments(
    img: GrayImage,
    keypoints: List[Keypoint],
    config: Optional[FragmentConfig] = None,
) -> Tuple[List[Fragment], int]:
    """Cut every keypoint's fragment; returns the fragments and the skip count."""
    config = config or FragmentConfig()
    fragments: List[Fragment] = []
    skipped = 0
    for kp in keypoints:
        fragment = extract_fragment(img, kp, config.eta, config.min_side, config.background)
        if fragment is None:
            skipped += 1
        else:
            fragments.append(fragment)
    if skipped:
        logger.debug(f"Skipped {skipped} of {len(keypoints)} keypoints below {config.min_side}px")
    return fragments, skipped
