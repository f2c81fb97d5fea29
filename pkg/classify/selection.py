"""Hyperparameter selection on held-out validation words."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import SvmConfig
from core.exceptions import EmptyGrid, EmptyValidation
from core.logger import setup_logger
from core.monitoring import MetricsCollector
from classify.scoring import ScoreVector, fragment_scores, fuse, predict, word_score
from classify.svm import SvmModel, decision_matrix, rbf_kernel, train_ova

logger = setup_logger("classify")

# (fragment descriptors of one word, true writer)
ValidationWord = Tuple[np.ndarray, str]


@dataclass
class GridSearchResult:
    C: float
    gamma: float
    accuracy: float
    table: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class AlphaSelection:
    alpha: float
    accuracy: float
    table: List[Dict[str, float]] = field(default_factory=list)


def word_scores(models: Sequence[SvmModel], words: Sequence[np.ndarray], provenance: str = "") -> List[ScoreVector]:
    """Word score vectors for a list of fragment-descriptor matrices (none may be empty)."""
    if not words:
        return []
    writers = tuple(m.writer for m in models)
    sizes = [len(w) for w in words]
    decisions = decision_matrix(models, np.vstack(words))
    out = []
    start = 0
    for size in sizes:
        out.append(word_score(fragment_scores(decisions[start:start + size], writers, provenance)))
        start += size
    return out


def word_accuracy(models: Sequence[SvmModel], val: Sequence[ValidationWord]) -> float:
    scores = word_scores(models, [x for x, _ in val])
    hits = sum(1 for s, (_, truth) in zip(scores, val) if predict(s) == truth)
    return hits / len(val)


def grid_search(
    train: Tuple[np.ndarray, Sequence[str]],
    val: Sequence[ValidationWord],
    C_grid: Sequence[float],
    gamma_grid: Sequence[float],
    config: Optional[SvmConfig] = None,
    seed: int = 0,
    jobs: int = 1,
    metrics: Optional[MetricsCollector] = None,
) -> GridSearchResult:
    """Pick (C, gamma) maximizing word-level top-1 on ``val``.

    Ties go to the smaller C, then the smaller gamma.
    """
    config = config or SvmConfig()
    C_grid = sorted(C_grid)
    gamma_grid = sorted(gamma_grid)
    if not C_grid or not gamma_grid:
        raise EmptyGrid("SVM grid search needs at least one C and one gamma")
    if not val:
        raise EmptyValidation("SVM grid search needs validation words")

    X, labels = np.asarray(train[0], dtype=np.float64), np.asarray(train[1])
    results: Dict[Tuple[float, float], float] = {}
    for gamma in gamma_grid:
        gram = rbf_kernel(X, X, gamma) if len(X) <= config.precompute_limit else None
        for C in C_grid:
            models = train_ova(X, labels, C, gamma, config, seed=seed, jobs=jobs, gram=gram, metrics=metrics)
            results[(C, gamma)] = word_accuracy(models, val)
            logger.debug(f"grid C={C:g} gamma={gamma:g}: top-1 {results[(C, gamma)]:.4f}")

    best = None
    for C in C_grid:
        for gamma in gamma_grid:
            if best is None or results[(C, gamma)] > results[best]:
                best = (C, gamma)
    table = [{"C": C, "gamma": g, "top1": acc} for (C, g), acc in sorted(results.items())]
    logger.info(f"🔎 Grid search chose C={best[0]:g}, gamma={best[1]:g} (val top-1 {results[best]:.4f})")
    return GridSearchResult(C=best[0], gamma=best[1], accuracy=results[best], table=table)


def select_alpha(words: Sequence[Tuple[ScoreVector, ScoreVector, str]], grid: Sequence[float]) -> AlphaSelection:
    """Fusion weight maximizing word-level top-1; ties go to the alpha nearest 0.5, then the smaller."""
    if not words:
        raise EmptyValidation("fusion weight selection needs validation words")
    if not grid:
        raise EmptyGrid("fusion weight grid is empty")
    table = []
    for alpha in grid:
        hits = sum(1 for P1, P2, truth in words if predict(fuse(P1, P2, alpha)) == truth)
        table.append({"alpha": float(alpha), "top1": hits / len(words)})
    best = max(table, key=lambda row: (row["top1"], -abs(row["alpha"] - 0.5), -row["alpha"]))
    logger.info(f"⚖️ Fusion weight alpha={best['alpha']:.2f} (val top-1 {best['top1']:.4f})")
    return AlphaSelection(alpha=best["alpha"], accuracy=best["top1"], table=table)
