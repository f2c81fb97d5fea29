"""Scale-space extrema detection, sub-pixel localization and orientation assignment."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from core.config import SiftConfig
from core.logger import setup_logger
from imaging.raster import GrayImage
from keypoints.scale_space import GaussianPyramid, build_scale_space

logger = setup_logger("keypoints")

BORDER = 1
ORIENTATION_RADIUS_FACTOR = 3.0
ORIENTATION_SCALE_FACTOR = 1.5


@dataclass(frozen=True)
class Keypoint:
    """A localized DoG extremum in input-image coordinates."""
    x: float
    y: float
    sigma: float
    orientation: float  # degrees in [0, 360), y axis pointing down
    octave: int
    response: float

    def sort_key(self) -> Tuple:
        return (self.octave, self.y, self.x, self.sigma, self.orientation)

    def to_row(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "sigma": self.sigma,
            "orientation": self.orientation,
            "octave": self.octave,
            "response": self.response,
        }


def _cube_derivatives(cube: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian at the center of a 3x3x3 (scale, y, x) cube."""
    center = cube[1, 1, 1]
    dx = 0.5 * (cube[1, 1, 2] - cube[1, 1, 0])
    dy = 0.5 * (cube[1, 2, 1] - cube[1, 0, 1])
    ds = 0.5 * (cube[2, 1, 1] - cube[0, 1, 1])
    dxx = cube[1, 1, 2] - 2 * center + cube[1, 1, 0]
    dyy = cube[1, 2, 1] - 2 * center + cube[1, 0, 1]
    dss = cube[2, 1, 1] - 2 * center + cube[0, 1, 1]
    dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
    dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
    dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
    gradient = np.array([dx, dy, ds])
    hessian = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return gradient, hessian


def candidate_extrema(dog: np.ndarray, threshold: float) -> np.ndarray:
    """(level, row, col) of 3x3x3 extrema above ``threshold`` in one octave's DoG stack."""
    local_max = maximum_filter(dog, size=3, mode="nearest")
    local_min = minimum_filter(dog, size=3, mode="nearest")
    strong = np.abs(dog) > threshold
    mask = strong & (((dog >= local_max) & (dog > 0)) | ((dog <= local_min) & (dog < 0)))
    # Only interior levels and pixels have a full neighbourhood
    mask[0] = False
    mask[-1] = False
    mask[:, :BORDER, :] = False
    mask[:, -BORDER:, :] = False
    mask[:, :, :BORDER] = False
    mask[:, :, -BORDER:] = False
    return np.argwhere(mask)


def localize(
    dog: np.ndarray,
    level: int,
    row: int,
    col: int,
    scales_per_octave: int,
    contrast_thresh: float,
    edge_ratio: float,
    attempts: int = 5,
) -> Optional[Tuple[int, int, int, np.ndarray, float]]:
    """Refine an extremum by iterated quadratic fits.

    Returns the final integer (level, row, col), the sub-pixel offset
    (dx, dy, ds) and the interpolated DoG value, or None when the candidate
    drifts off the grid, fails to settle, has low contrast or lies on an edge.
    """
    height, width = dog.shape[1:]
    converged = False
    for _ in range(attempts):
        cube = dog[level - 1:level + 2, row - 1:row + 2, col - 1:col + 2]
        gradient, hessian = _cube_derivatives(cube)
        offset = -np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        if np.all(np.abs(offset) < 0.5):
            converged = True
            break
        col += int(round(offset[0]))
        row += int(round(offset[1]))
        level += int(round(offset[2]))
        if not (BORDER <= row < height - BORDER and BORDER <= col < width - BORDER
                and 1 <= level <= scales_per_octave):
            return None
    if not converged:
        return None

    value = float(cube[1, 1, 1] + 0.5 * np.dot(gradient, offset))
    if abs(value) < contrast_thresh:
        return None

    xy = hessian[:2, :2]
    trace = np.trace(xy)
    det = np.linalg.det(xy)
    if det <= 0 or edge_ratio * trace ** 2 >= (edge_ratio + 1) ** 2 * det:
        return None
    return level, row, col, offset, value


def orientation_histogram(gaussian: np.ndarray, row: float, col: float, scale: float,
                          num_bins: int = 36) -> np.ndarray:
    """Gaussian-weighted gradient orientation histogram around a point."""
    radius = int(round(ORIENTATION_RADIUS_FACTOR * scale))
    center_r, center_c = int(round(row)), int(round(col))
    height, width = gaussian.shape

    offsets = np.arange(-radius, radius + 1)
    rr = center_r + offsets[:, None]
    cc = center_c + offsets[None, :]
    valid = (rr > 0) & (rr < height - 1) & (cc > 0) & (cc < width - 1)
    rr, cc = np.broadcast_arrays(rr, cc)
    dr, dc = np.broadcast_arrays(offsets[:, None], offsets[None, :])
    rr, cc, dr, dc = rr[valid], cc[valid], dr[valid], dc[valid]

    gx = gaussian[rr, cc + 1] - gaussian[rr, cc - 1]
    gy = gaussian[rr + 1, cc] - gaussian[rr - 1, cc]
    magnitude = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx))
    weight = np.exp(-0.5 * (dr ** 2 + dc ** 2) / scale ** 2)
    bins = np.round(angle * num_bins / 360.0).astype(int) % num_bins
    return np.bincount(bins, weights=weight * magnitude, minlength=num_bins)


def dominant_orientations(histogram: np.ndarray, peak_ratio: float = 0.8) -> List[float]:
    """Smoothed-histogram peaks within ``peak_ratio`` of the maximum, in degrees."""
    num_bins = len(histogram)
    smooth = (
        6 * histogram
        + 4 * (np.roll(histogram, 1) + np.roll(histogram, -1))
        + np.roll(histogram, 2) + np.roll(histogram, -2)
    ) / 16.0
    peak_max = smooth.max()
    if peak_max <= 0:
        return [0.0]

    left = np.roll(smooth, 1)
    right = np.roll(smooth, -1)
    peaks = np.where((smooth > left) & (smooth > right) & (smooth >= peak_ratio * peak_max))[0]
    orientations = []
    for index in peaks:
        denom = left[index] - 2 * smooth[index] + right[index]
        shift = 0.5 * (left[index] - right[index]) / denom if denom != 0 else 0.0
        angle = ((index + shift) % num_bins) * 360.0 / num_bins
        orientations.append(float(angle % 360.0))
    return orientations or [float(np.argmax(smooth) * 360.0 / num_bins)]


def detect_keypoints(
    pyramid: GaussianPyramid,
    contrast_thresh: float = 0.03,
    edge_ratio: float = 10.0,
    orientation_bins: int = 36,
    peak_ratio: float = 0.8,
    refine_attempts: int = 5,
) -> List[Keypoint]:
    """Detect oriented keypoints in a Gaussian pyramid, sorted by octave, y, x, sigma."""
    spo = pyramid.scales_per_octave
    height, width = pyramid.image_shape
    prefilter = 0.5 * contrast_thresh / spo
    found = set()
    keypoints: List[Keypoint] = []

    for octave, (gaussians, dog) in enumerate(zip(pyramid.octaves, pyramid.dogs)):
        if min(dog.shape[1:]) < 2 * BORDER + 1:
            continue
        candidates = candidate_extrema(dog, prefilter)
        factor = 2.0 ** octave
        for level, row, col in candidates:
            result = localize(dog, int(level), int(row), int(col), spo,
                              contrast_thresh, edge_ratio, refine_attempts)
            if result is None:
                continue
            level_i, row_i, col_i, offset, value = result
            x = (col_i + offset[0]) * factor
            y = (row_i + offset[1]) * factor
            if not (0 <= x < width and 0 <= y < height):
                continue
            fractional_level = level_i + offset[2]
            sigma = pyramid.level_sigma(octave, fractional_level)
            scale = ORIENTATION_SCALE_FACTOR * pyramid.octave_sigma(fractional_level)
            histogram = orientation_histogram(gaussians[level_i], row_i + offset[1],
                                              col_i + offset[0], scale, orientation_bins)
            for angle in dominant_orientations(histogram, peak_ratio):
                keypoint = Keypoint(
                    x=float(x), y=float(y), sigma=float(sigma),
                    orientation=angle, octave=octave, response=abs(value),
                )
                # Distinct candidates can settle on the same extremum
                identity = (keypoint.octave, keypoint.x, keypoint.y, keypoint.sigma, keypoint.orientation)
                if identity in found:
                    continue
                found.add(identity)
                keypoints.append(keypoint)

    keypoints.sort(key=Keypoint.sort_key)
    logger.debug(f"Detected {len(keypoints)} keypoints over {pyramid.num_octaves} octaves")
    return keypoints


def detect(img: GrayImage, sift: Optional[SiftConfig] = None) -> List[Keypoint]:
    """Build the scale space of a normalized image and detect its keypoints."""
    sift = sift or SiftConfig()
    pyramid = build_scale_space(img, sift.octaves, sift.scales_per_octave, sift.sigma0, sift.assumed_blur)
    return detect_keypoints(
        pyramid,
        contrast_thresh=sift.contrast_thresh,
        edge_ratio=sift.edge_ratio,
        orientation_bins=sift.orientation_bins,
        peak_ratio=sift.orientation_peak_ratio,
        refine_attempts=sift.refine_attempts,
    )
