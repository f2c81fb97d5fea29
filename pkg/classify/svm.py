"""One-vs-all RBF support vector machines over pooled descriptors."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics.pairwise import pairwise_kernels
from sklearn.svm import SVC

from core.config import SvmConfig
from core.exceptions import DegenerateKernel, SingleClass
from core.logger import setup_logger
from core.monitoring import MetricsCollector, metrics_collector
from classify.scoring import natural_key

logger = setup_logger("classify")


def rbf_kernel(X: np.ndarray, Y: np.ndarray, gamma: float) -> np.ndarray:
    """K(x, y) = exp(-gamma * ||x - y||^2)."""
    if gamma <= 0:
        raise DegenerateKernel(f"RBF gamma must be positive, got {gamma}", {"gamma": gamma})
    return pairwise_kernels(np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64),
                            metric="rbf", gamma=gamma)


@dataclass
class SvmModel:
    """Binary writer-vs-rest model: f(x) = sum_i coef_i K(sv_i, x) + intercept."""
    writer: str
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # y_i * alpha_i
    intercept: float
    C: float
    gamma: float
    n_positive: int = 0
    n_negative: int = 0
    meta: Dict[str, float] = field(default_factory=dict)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self.support_vectors) == 0:
            return np.full(X.shape[0], self.intercept)
        return rbf_kernel(X, self.support_vectors, self.gamma) @ self.dual_coef + self.intercept


def train_binary(
    X: np.ndarray,
    y: np.ndarray,
    C: float,
    gamma: float,
    tol: float = 1e-3,
    gram: Optional[np.ndarray] = None,
    writer: str = "",
) -> SvmModel:
    """Solve one +1/-1 problem; uses ``gram`` (K over X) when given."""
    if gamma <= 0:
        raise DegenerateKernel(f"RBF gamma must be positive, got {gamma}", {"gamma": gamma})
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if gram is not None:
        svc = SVC(C=C, kernel="precomputed", tol=tol)
        svc.fit(gram, y)
    else:
        svc = SVC(C=C, kernel="rbf", gamma=gamma, tol=tol)
        svc.fit(X, y)
    # classes_ is [-1, 1]; positive decisions mean the writer
    return SvmModel(
        writer=writer,
        support_vectors=X[svc.support_].copy(),
        dual_coef=svc.dual_coef_[0].astype(np.float64).copy(),
        intercept=float(svc.intercept_[0]),
        C=float(C),
        gamma=float(gamma),
        n_positive=int((y > 0).sum()),
        n_negative=int((y < 0).sum()),
    )


def drop_zero_rows(X: np.ndarray, labels: Sequence[str], metrics: Optional[MetricsCollector] = None):
    """Remove all-zero descriptors, which carry no evidence."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    keep = np.any(X != 0, axis=1)
    dropped = int((~keep).sum())
    if dropped:
        logger.info(f"Excluded {dropped} zero descriptors from SVM training")
        (metrics or metrics_collector).increment_counter("zero_descriptors", dropped)
    return X[keep], labels[keep]


def writer_rows(labels: np.ndarray, writer: str, negative_ratio: int, rng: np.random.Generator):
    """Indices of the writer's rows plus at most ``negative_ratio`` times as many negatives."""
    positives = np.flatnonzero(labels == writer)
    negatives = np.flatnonzero(labels != writer)
    limit = negative_ratio * len(positives)
    subsampled = 0
    if len(negatives) > limit:
        subsampled = len(negatives) - limit
        negatives = np.sort(rng.choice(negatives, size=limit, replace=False))
    return np.concatenate([positives, negatives]), len(positives), subsampled


def train_ova(
    X: np.ndarray,
    labels: Sequence[str],
    C: float,
    gamma: float,
    config: Optional[SvmConfig] = None,
    seed: int = 0,
    jobs: int = 1,
    gram: Optional[np.ndarray] = None,
    metrics: Optional[MetricsCollector] = None,
) -> List[SvmModel]:
    """One binary SVM per writer, in natural writer order.

    Zero descriptors must already be removed. ``gram`` may hold the full
    kernel matrix over X for the given gamma.
    """
    config = config or SvmConfig()
    metrics = metrics or metrics_collector
    if gamma <= 0:
        raise DegenerateKernel(f"RBF gamma must be positive, got {gamma}", {"gamma": gamma})
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    writers = sorted(set(labels.tolist()), key=natural_key)
    if len(writers) < 2:
        raise SingleClass(f"One-vs-all training needs at least two writers, got {len(writers)}",
                          {"writers": writers})

    if gram is None and len(X) <= config.precompute_limit:
        gram = rbf_kernel(X, X, gamma)

    seeds = np.random.SeedSequence(seed).spawn(len(writers))

    def fit(position: int) -> SvmModel:
        writer = writers[position]
        rng = np.random.default_rng(seeds[position])
        rows, n_pos, subsampled = writer_rows(labels, writer, config.negative_ratio, rng)
        if subsampled:
            metrics.increment_counter("negatives_subsampled", subsampled)
        y = np.where(labels[rows] == writer, 1, -1)
        sub_gram = gram[np.ix_(rows, rows)] if gram is not None else None
        return train_binary(X[rows], y, C, gamma, config.tol, sub_gram, writer)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        models = list(pool.map(fit, range(len(writers))))
    logger.debug(f"Trained {len(models)} writer models (C={C}, gamma={gamma})")
    return models


def decision_matrix(models: Sequence[SvmModel], X: np.ndarray) -> np.ndarray:
    """Decision values of every model, shape (rows, writers)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.column_stack([m.decision_function(X) for m in models])
