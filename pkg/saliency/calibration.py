"""Per-filter saliency calibration of one convolution layer."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.config import SaliencyConfig
from core.exceptions import EmptyDataset, RankDeficient
from core.logger import setup_logger
from core.monitoring import MetricsCollector, metrics_collector
from saliency.entropy import coefficient_histograms, entropy_matrix, saliency_weights
from saliency.profile import FilterRank, SaliencyProfile
from saliency.sparse_pca import center, project, sparse_pca

logger = setup_logger("saliency")


@dataclass
class CalibrationSet:
    """Per-filter HOG vectors of W writers x N fragments, shape (W, N, F, D)."""
    layer: int
    writers: List[str]
    hogs: np.ndarray

    @property
    def W(self) -> int:
        return int(self.hogs.shape[0])

    @property
    def N(self) -> int:
        return int(self.hogs.shape[1])

    @property
    def F(self) -> int:
        return int(self.hogs.shape[2])

    @property
    def M(self) -> int:
        return self.W * self.N

    def filter_matrix(self, f: int) -> Tuple[np.ndarray, np.ndarray]:
        """Rows grouped by writer for filter ``f`` and the writer number of each row."""
        X = self.hogs[:, :, f, :].reshape(self.M, -1)
        return X, np.repeat(np.arange(self.W), self.N)


def build_calibration_set(
    per_writer: Dict[str, np.ndarray],
    layer: int,
    max_per_writer: Optional[int] = None,
    seed: int = 0,
) -> CalibrationSet:
    """Equalize writers to a common fragment count N by seeded subsampling."""
    writers = sorted(w for w, hogs in per_writer.items() if len(hogs))
    if len(writers) < 2:
        raise EmptyDataset(f"Saliency calibration needs at least two writers with fragments, got {len(writers)}")
    N = min(len(per_writer[w]) for w in writers)
    if max_per_writer is not None:
        N = min(N, max_per_writer)
    rng = np.random.default_rng(seed)
    rows = []
    for writer in writers:
        hogs = np.asarray(per_writer[writer], dtype=np.float64)
        keep = np.sort(rng.choice(len(hogs), size=N, replace=False)) if len(hogs) > N else np.arange(N)
        rows.append(hogs[keep])
    logger.info(f"Calibration set for conv{layer}: {len(writers)} writers x {N} fragments")
    return CalibrationSet(layer=layer, writers=writers, hogs=np.stack(rows))


@dataclass
class FilterResult:
    phi: float
    entropy_row: np.ndarray
    lasso: Optional[float]
    sparsity: Optional[float]
    dead: bool


def calibrate_filter(X: np.ndarray, writer_index: np.ndarray, config: SaliencyConfig) -> FilterResult:
    """Mean entropy of one filter's sparse-PCA coefficient histograms."""
    lasso = 0.0 if config.method == "dense" else config.lasso
    try:
        loadings = sparse_pca(
            X, config.components,
            ridge=config.ridge, lasso=lasso,
            max_iter=config.max_iter, tol=config.tol,
            strict=config.strict_convergence,
            target_sparsity=config.target_sparsity,
        )
    except RankDeficient:
        return FilterResult(0.0, np.zeros(config.components), None, None, True)

    alpha = project(center(X), loadings.V)
    histograms = coefficient_histograms(alpha, writer_index, config.bins)
    E = entropy_matrix(histograms.p)
    return FilterResult(
        phi=float(E.mean()),
        entropy_row=E.sum(axis=0),
        lasso=loadings.lasso,
        sparsity=loadings.sparsity,
        dead=False,
    )


def calibrate_layer(
    cset: CalibrationSet,
    config: Optional[SaliencyConfig] = None,
    jobs: int = 1,
    top_k: int = 5,
    config_digest: str = "",
    weights_digest: str = "",
    metrics: Optional[MetricsCollector] = None,
) -> SaliencyProfile:
    """Saliency profile of every filter of a layer; filters run in parallel."""
    config = config or SaliencyConfig()
    metrics = metrics or metrics_collector

    def run(f: int) -> FilterResult:
        X, writer_index = cset.filter_matrix(f)
        return calibrate_filter(X, writer_index, config)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(run, range(cset.F)))

    phi = np.array([r.phi for r in results])
    dead = [f for f, r in enumerate(results) if r.dead]
    if dead:
        logger.warning(f"⚠️ conv{cset.layer}: {len(dead)} dead filters get zero saliency")
        metrics.increment_counter("dead_filters", len(dead), {"layer": str(cset.layer)})
    w = saliency_weights(phi)

    order = np.argsort(-w, kind="stable")
    ranks = [FilterRank(filter=int(f), weight=float(w[f]), entropy_row=results[f].entropy_row.tolist())
             for f in order]
    profile = SaliencyProfile(
        layer=cset.layer,
        phi=phi.tolist(),
        w=w.tolist(),
        bins=config.bins,
        components=config.components,
        writers=cset.W,
        fragments_per_writer=cset.N,
        lasso=[r.lasso for r in results],
        sparsity=[r.sparsity for r in results],
        dead_filters=dead,
        strongest=ranks[:top_k],
        weakest=ranks[::-1][:top_k],
        config_digest=config_digest,
        weights_digest=weights_digest,
    )
    logger.info(
        f"✅ conv{cset.layer} saliency: top filter {ranks[0].filter} (w={ranks[0].weight:.4f}), "
        f"bottom filter {ranks[-1].filter} (w={ranks[-1].weight:.4f})"
    )
    return profile
