"""Histogram of oriented gradients on convolution feature maps.

The cell grid adapts to the map: an H x W map is split into m x n cells of
ceil(H/m) x ceil(W/n) pixels (trailing cells clip at the border). Cells are
grouped into b blocks of t cells; every cell gets a k-bin histogram of signed
gradient orientations voted by magnitude, histograms are concatenated block
by block, and the whole vector is L2-normalized once.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from core.config import HogParams
from core.exceptions import MapTooSmall


@dataclass(frozen=True)
class CellGeometry:
    r_cell: int
    c_cell: int
    cells: List[Tuple[int, int, int, int]]  # (row0, row1, col0, col1), row-major


@dataclass(frozen=True)
class HogVector:
    values: np.ndarray
    params: HogParams
    layer: int = 0

    def __len__(self) -> int:
        return int(self.values.shape[-1])


def cell_geometry(H: int, W: int, p: HogParams) -> CellGeometry:
    """Cell sizes and row-major cell rectangles for an H x W map."""
    if H < p.m or W < p.n:
        raise MapTooSmall(
            f"Feature map {H}x{W} is smaller than the {p.m}x{p.n} cell grid",
            {"height": H, "width": W, "m": p.m, "n": p.n},
        )
    r_cell = math.ceil(H / p.m)
    c_cell = math.ceil(W / p.n)
    cells = []
    for i in range(p.m):
        for j in range(p.n):
            r0, c0 = min(i * r_cell, H), min(j * c_cell, W)
            cells.append((r0, min(r0 + r_cell, H), c0, min(c0 + c_cell, W)))
    return CellGeometry(r_cell=r_cell, c_cell=c_cell, cells=cells)


def gradients(fmap: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel gradient magnitude and orientation in degrees [0, 360).

    Works on one map (H, W) or a stack (..., H, W). Central differences
    with replicated borders; x runs along columns, y along rows.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    pad = [(0, 0)] * (fmap.ndim - 2) + [(1, 1), (1, 1)]
    padded = np.pad(fmap, pad, mode="edge")
    gx = 0.5 * (padded[..., 1:-1, 2:] - padded[..., 1:-1, :-2])
    gy = 0.5 * (padded[..., 2:, 1:-1] - padded[..., :-2, 1:-1])
    magnitude = np.hypot(gx, gy)
    orientation = np.mod(np.degrees(np.arctan2(gy, gx)), 360.0)
    # mod can round a tiny negative angle up to exactly 360
    orientation[orientation >= 360.0] = 0.0
    return magnitude, orientation


def orientation_bins(orientation: np.ndarray, k: int) -> np.ndarray:
    """Zero-based bin index: bin width ceil(360/k), bin ceil(theta/width), 0 folded into the first."""
    width = math.ceil(360 / k)
    index = np.ceil(orientation / width).astype(np.int64)
    return np.clip(index, 1, k) - 1


def _vector_positions(H: int, W: int, p: HogParams) -> np.ndarray:
    """Offset of each pixel's cell histogram inside the block-major vector."""
    geometry = cell_geometry(H, W, p)
    rows, cols = p.block_shape
    blocks_per_row = p.n // cols
    cell_r = np.arange(H) // geometry.r_cell
    cell_c = np.arange(W) // geometry.c_cell
    block = (cell_r[:, None] // rows) * blocks_per_row + (cell_c[None, :] // cols)
    within = (cell_r[:, None] % rows) * cols + (cell_c[None, :] % cols)
    return (block * p.t + within) * p.k


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; zero rows stay zero."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)


def raw_histograms(maps: np.ndarray, p: HogParams) -> np.ndarray:
    """Unnormalized block-major histograms for a (F, H, W) stack, shape (F, k*t*b)."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim == 2:
        maps = maps[None]
    F, H, W = maps.shape
    positions = _vector_positions(H, W, p)
    magnitude, orientation = gradients(maps)
    index = positions[None] + orientation_bins(orientation, p.k)
    index = index + (np.arange(F) * p.length)[:, None, None]
    counts = np.bincount(index.ravel(), weights=magnitude.ravel(), minlength=F * p.length)
    return counts.reshape(F, p.length)


def descriptors(maps: np.ndarray, p: HogParams) -> np.ndarray:
    """L2-normalized descriptors for every map of a (F, H, W) stack."""
    return l2_normalize(raw_histograms(maps, p))


def descriptor(fmap: np.ndarray, p: HogParams, layer: int = 0) -> HogVector:
    """Descriptor of one 2-D map."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 2:
        raise ValueError(f"descriptor expects a 2-D map, got shape {fmap.shape}")
    return HogVector(values=descriptors(fmap[None], p)[0], params=p, layer=layer)
