"""Sparse principal components by alternating elastic-net regression.

Each component's loading is the elastic-net regression of the current
principal response X a_j on X; the responses are then refreshed from the
polar factor of X^T X B. With no lasso penalty and a small ridge the loadings
reduce to ordinary principal directions.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import svd
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import ElasticNet

from core.exceptions import DimMismatch, NoConvergence, RankDeficient
from core.logger import setup_logger

logger = setup_logger("saliency")

RANK_TOL = 1e-10
TUNING_STEPS = 10
TUNING_MAX_ITER = 25


@dataclass
class SparseLoadings:
    """Unit-norm (or flagged all-zero) loading columns, shape (dim, L)."""
    V: np.ndarray
    components: int
    ridge: float
    lasso: float
    iterations: int = 0
    converged: bool = True
    zero_columns: List[int] = field(default_factory=list)

    @property
    def sparsity(self) -> float:
        """Fraction of exactly-zero loading entries."""
        return float(np.mean(self.V == 0.0))


def center(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X - X.mean(axis=0, keepdims=True)


def _check_rank(Xc: np.ndarray, L: int):
    """Right singular vectors of the centered data; raises when rank < L."""
    if Xc.shape[0] < L:
        raise RankDeficient(f"{Xc.shape[0]} rows cannot support {L} components", {"rows": Xc.shape[0]})
    _, s, vt = svd(Xc, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    if rank < L:
        raise RankDeficient(
            f"Data has {rank} nonzero singular values, {L} components requested",
            {"rank": rank, "components": L},
        )
    return s, vt


def _orient(V: np.ndarray) -> np.ndarray:
    """Fix column signs so each column's largest-magnitude entry is positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        if np.any(col):
            if col[np.argmax(np.abs(col))] < 0:
                V[:, j] = -col
    return V


def _normalize_columns(B: np.ndarray):
    norms = np.linalg.norm(B, axis=0)
    zero = [int(j) for j in np.where(norms == 0)[0]]
    V = np.divide(B, norms, out=np.zeros_like(B), where=norms > 0)
    return _orient(V), zero


def pca_loadings(X: np.ndarray, L: int) -> np.ndarray:
    """Top-L principal directions of the column-centered data, shape (dim, L)."""
    _, vt = _check_rank(center(X), L)
    return _orient(vt[:L].T)


def _beta_step(R: np.ndarray, G: np.ndarray, A: np.ndarray, ridge: float, lasso: float,
               previous: Optional[np.ndarray]) -> np.ndarray:
    dim, L = A.shape
    if lasso == 0:
        if ridge == 0:
            return np.linalg.lstsq(G, G @ A, rcond=None)[0]
        return np.linalg.solve(G + ridge * np.eye(dim), G @ A)

    rows = R.shape[0]
    alpha = lasso / (2 * rows) + ridge / rows
    l1_ratio = (lasso / (2 * rows)) / alpha
    B = np.zeros_like(A)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for j in range(L):
            model = ElasticNet(alpha=alpha, l1_ratio=l1_ratio, fit_intercept=False,
                               max_iter=5000, tol=1e-8, warm_start=previous is not None)
            if previous is not None:
                model.coef_ = previous[:, j].copy()
            model.fit(R, R @ A[:, j])
            B[:, j] = model.coef_
    return B


def _alternate(R, G, A, ridge, lasso, max_iter, tol):
    B = None
    for iteration in range(1, max_iter + 1):
        B_new = _beta_step(R, G, A, ridge, lasso, B)
        u, _, vt = svd(G @ B_new, full_matrices=False)
        A = u @ vt
        if B is not None:
            change = np.max(np.abs(B_new - B)) / max(np.max(np.abs(B_new)), 1e-12)
            if change < tol:
                return B_new, iteration, True
        B = B_new
    return B, max_iter, False


def sparse_pca(
    X: np.ndarray,
    L: int,
    ridge: float = 1e-4,
    lasso: Optional[float] = 0.0,
    max_iter: int = 200,
    tol: float = 1e-6,
    strict: bool = False,
    target_sparsity: float = 0.5,
) -> SparseLoadings:
    """Sparse loadings of X (rows x dim); ``lasso=None`` tunes the penalty to ``target_sparsity``."""
    Xc = center(X)
    _, vt = _check_rank(Xc, L)
    A0 = vt[:L].T
    # Regressions on R are equivalent to regressions on X, with fewer rows
    R = np.linalg.qr(Xc, mode="r")
    G = R.T @ R

    if lasso is None:
        lasso = tune_lasso(R, G, A0, ridge, target_sparsity, tol)

    B, iterations, converged = _alternate(R, G, A0, ridge, lasso, max_iter, tol)
    if not converged:
        message = f"Sparse PCA did not converge in {max_iter} iterations"
        if strict:
            raise NoConvergence(message, {"max_iter": max_iter, "lasso": lasso})
        logger.warning(f"⚠️ {message}")

    V, zero = _normalize_columns(B)
    if zero:
        logger.debug(f"Sparse PCA produced all-zero loadings for components {zero}")
    return SparseLoadings(V=V, components=L, ridge=ridge, lasso=float(lasso),
                          iterations=iterations, converged=converged, zero_columns=zero)


def tune_lasso(R: np.ndarray, G: np.ndarray, A0: np.ndarray, ridge: float,
               target_sparsity: float, tol: float) -> float:
    """Bisection on log(lasso) until the mean loading sparsity reaches the target."""
    if target_sparsity <= 0:
        return 0.0
    # Above twice the largest correlation every coefficient is thresholded to zero
    upper = 2.0 * float(np.max(np.abs(G @ A0)))
    if upper <= 0:
        return 0.0
    lo, hi = math.log(upper * 1e-6), math.log(upper)
    best = upper
    for _ in range(TUNING_STEPS):
        mid = 0.5 * (lo + hi)
        B, _, _ = _alternate(R, G, A0, ridge, math.exp(mid), TUNING_MAX_ITER, tol)
        sparsity = float(np.mean(B == 0.0))
        if sparsity < target_sparsity:
            lo = mid
        else:
            hi = mid
            best = math.exp(mid)
    logger.debug(f"Tuned lasso penalty to {best:.3e}")
    return best


def project(X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Coefficients of X on the loading columns."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != V.shape[0]:
        raise DimMismatch(
            f"Cannot project data of shape {X.shape} on loadings of shape {V.shape}",
            {"data": list(X.shape), "loadings": list(V.shape)},
        )
    return X @ V
