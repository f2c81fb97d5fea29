"""Score vectors and their aggregation from fragments to words, words to pages."""

import re
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from core.exceptions import EmptyPage, NoFragments, ValidationError, WriterSetMismatch

LEVELS = ("fragment", "word", "page")


def natural_key(writer: str) -> Tuple:
    """Sort key that orders ``w2`` before ``w10``."""
    return tuple(int(part) if part.isdigit() else part for part in re.split(r"(\d+)", str(writer)))


@dataclass(frozen=True)
class ScoreVector:
    """Per-writer scores in [0, 1] at one aggregation level."""
    writers: Tuple[str, ...]
    values: np.ndarray
    level: str = "word"
    provenance: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.writers),):
            raise ValidationError(f"{len(self.writers)} writers but scores of shape {values.shape}")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError("scores must lie in [0, 1]", {"min": float(values.min()), "max": float(values.max())})
        if self.level not in LEVELS:
            raise ValidationError(f"unknown score level {self.level!r}")
        object.__setattr__(self, "writers", tuple(self.writers))
        object.__setattr__(self, "values", values)

    def score_of(self, writer: str) -> float:
        return float(self.values[self.writers.index(writer)])


def sigmoid(v):
    """Logistic 1 / (1 + exp(-v)), stable for large |v|."""
    return expit(v)


def fragment_scores(decisions: np.ndarray, writers: Sequence[str], provenance: str = "") -> List[ScoreVector]:
    """Sigmoid of each row of a (fragments, writers) decision matrix."""
    probabilities = sigmoid(np.atleast_2d(np.asarray(decisions, dtype=np.float64)))
    return [ScoreVector(tuple(writers), row, "fragment", provenance) for row in probabilities]


def _same_writers(vectors: Sequence[ScoreVector]) -> Tuple[str, ...]:
    writers = vectors[0].writers
    for v in vectors[1:]:
        if v.writers != writers:
            raise WriterSetMismatch("score vectors cover different writer sets",
                                    {"expected": list(writers), "found": list(v.writers)})
    return writers


def _mean(vectors: Sequence[ScoreVector], level: str) -> ScoreVector:
    writers = _same_writers(vectors)
    values = np.mean(np.stack([v.values for v in vectors]), axis=0)
    return ScoreVector(writers, np.clip(values, 0.0, 1.0), level, vectors[0].provenance)


def word_score(fragments: Sequence[ScoreVector]) -> ScoreVector:
    """Mean fragment score per writer."""
    if not fragments:
        raise NoFragments("word yielded no usable fragments")
    return _mean(fragments, "word")


def page_score(words: Sequence[ScoreVector]) -> ScoreVector:
    """Mean word score per writer."""
    if not words:
        raise EmptyPage("page has no scored words")
    return _mean(words, "page")


def predict(scores: ScoreVector) -> str:
    # writers are naturally ordered and argmax keeps the first maximum
    return scores.writers[int(np.argmax(scores.values))]


def ranking(scores: ScoreVector) -> List[str]:
    """Writers by descending score, ties in writer order."""
    order = np.argsort(-scores.values, kind="stable")
    return [scores.writers[i] for i in order]


def rank_of_truth(scores: ScoreVector, truth: str) -> int:
    """1-based position of ``truth`` in the ranking; 0 when the writer is unknown."""
    ranked = ranking(scores)
    return ranked.index(truth) + 1 if truth in ranked else 0


def top_k(scores: ScoreVector, k: int = 5) -> List[str]:
    return ranking(scores)[:k]


def fuse(P1: ScoreVector, P2: ScoreVector, alpha: float) -> ScoreVector:
    """alpha * P1 + (1 - alpha) * P2 per writer."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"fusion weight must lie in [0, 1], got {alpha}")
    if P1.writers != P2.writers:
        raise WriterSetMismatch("conv1 and conv2 scores cover different writer sets",
                                {"conv1": list(P1.writers), "conv2": list(P2.writers)})
    values = np.clip(alpha * P1.values + (1.0 - alpha) * P2.values, 0.0, 1.0)
    return ScoreVector(P1.writers, values, P1.level, "fused")


def top_k_accuracy(pairs: Sequence[Tuple[ScoreVector, str]], k: int) -> float:
    """Fraction of (scores, truth) pairs whose truth ranks within the first k."""
    if not pairs:
        return 0.0
    hits = sum(1 for scores, truth in pairs if 0 < rank_of_truth(scores, truth) <= k)
    return hits / len(pairs)
