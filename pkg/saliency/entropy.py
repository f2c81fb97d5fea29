"""Coefficient histograms, entropies and saliency weights."""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import entr

from core.logger import setup_logger

logger = setup_logger("saliency")


@dataclass
class HistogramSet:
    """Normalized histograms p with shape (writers, components, bins)."""
    p: np.ndarray
    edges: np.ndarray  # (components, bins + 1)
    degenerate_components: List[int] = field(default_factory=list)


def coefficient_histograms(alpha: np.ndarray, writer_index: np.ndarray, B: int) -> HistogramSet:
    """Per-writer, per-component histograms over global equal-width bins.

    ``writer_index`` holds a writer number 0..W-1 per row of ``alpha``. Bin
    edges span each component's global range with the last edge inclusive.
    A constant component puts every coefficient in the first bin.
    """
    if B < 2:
        raise ValueError("at least two histogram bins are required")
    alpha = np.asarray(alpha, dtype=np.float64)
    writer_index = np.asarray(writer_index, dtype=np.int64)
    rows, L = alpha.shape
    W = int(writer_index.max()) + 1

    low = alpha.min(axis=0)
    high = alpha.max(axis=0)
    span = high - low
    degenerate = [int(j) for j in np.where(span <= 0)[0]]
    if degenerate:
        logger.debug(f"Degenerate coefficient range for components {degenerate}")
    safe_span = np.where(span > 0, span, 1.0)
    bins = np.floor((alpha - low) / safe_span * B).astype(np.int64)
    bins = np.clip(bins, 0, B - 1)
    bins[:, span <= 0] = 0

    flat = (writer_index[:, None] * L + np.arange(L)[None, :]) * B + bins
    counts = np.bincount(flat.ravel(), minlength=W * L * B).reshape(W, L, B).astype(np.float64)
    totals = counts.sum(axis=2, keepdims=True)
    p = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)

    edges = low[:, None] + np.linspace(0.0, 1.0, B + 1)[None, :] * span[:, None]
    return HistogramSet(p=p, edges=edges, degenerate_components=degenerate)


def entropy_matrix(p: np.ndarray) -> np.ndarray:
    """Base-2 entropy of each distribution along the last axis (0 log 0 = 0)."""
    return entr(np.asarray(p, dtype=np.float64)).sum(axis=-1) / math.log(2)


def filter_entropy(p: np.ndarray) -> float:
    """Mean entropy over all writer/component entries."""
    return float(entropy_matrix(p).mean())


def saliency_weights(phi: np.ndarray) -> np.ndarray:
    """Normalize per-filter entropies to weights summing to one.

    When every filter has zero entropy the weights fall back to uniform.
    """
    phi = np.asarray(phi, dtype=np.float64)
    total = phi.sum()
    if total <= 0:
        logger.warning(f"⚠️ All {len(phi)} filters have zero entropy, using uniform saliency weights")
        return np.full(len(phi), 1.0 / len(phi))
    return phi / total
