"""Ranking primitives over bounded multi-label score vectors.

Score vectors are post-sigmoid class relevancy scores, so every entry must
lie in [0, 1]. Ties between scores are broken deterministically by smaller
class index, which keeps every downstream ranking quantity reproducible.
All functions here are pure and safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Instance",
    "top_k_indices",
    "kth_largest",
    "avg_top_k",
    "variational_top_k_sum",
    "hinge",
    "delta_terms",
    "delta_tilde_terms",
]


def as_scores(values) -> np.ndarray:
    """Validate and return a score vector as a float64 array.

    Requires length >= 2 with every entry finite and inside [0, 1].
    """
    scores = np.asarray(values, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] < 2:
        raise ValueError("score vector must be 1-D with at least 2 entries")
    if not np.all(np.isfinite(scores)):
        raise ValueError("score vector contains non-finite entries")
    if np.any(scores < 0.0) or np.any(scores > 1.0):
        raise ValueError("score entries must lie in [0, 1]")
    return scores


def as_labels(bits, n_classes: int | None = None) -> np.ndarray:
    """Validate a binary label vector (1 = relevant, 0 = irrelevant)."""
    labels = np.asarray(bits)
    if labels.ndim != 1:
        raise ValueError("label vector must be 1-D")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("label entries must be 0 or 1")
    if n_classes is not None and labels.shape[0] != n_classes:
        raise ValueError(
            f"label vector length {labels.shape[0]} != score length {n_classes}"
        )
    return labels.astype(np.int64)


def _check_k(k: int, c: int) -> int:
    k = int(k)
    if not 1 <= k <= c:
        raise ValueError(f"k={k} out of range [1, {c}]")
    return k


@dataclass
class Instance:
    """One multi-label sample: feature vector ``x`` and binary labels ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = as_labels(self.y)
        if self.x.ndim != 1:
            raise ValueError("x must be 1-D")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("x contains non-finite entries")

    @property
    def n_classes(self) -> int:
        return int(self.y.shape[0])

    @property
    def relevant(self) -> tuple[int, ...]:
        """Indices of relevant labels, ascending."""
        return tuple(int(i) for i in np.flatnonzero(self.y == 1))

    @property
    def irrelevant(self) -> tuple[int, ...]:
        """Indices of irrelevant labels, ascending."""
        return tuple(int(i) for i in np.flatnonzero(self.y == 0))


def top_k_indices(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending by score.

    Ties are broken by smaller class index (stable sort on negated scores).
    """
    scores = as_scores(scores)
    k = _check_k(k, scores.shape[0])
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def kth_largest(scores, k: int) -> float:
    """The k-th largest score value."""
    scores = as_scores(scores)
    k = _check_k(k, scores.shape[0])
    return float(np.sort(scores)[::-1][k - 1])


def avg_top_k(scores, k: int) -> float:
    """Mean of the k largest scores; an upper bound on the k-th largest."""
    scores = as_scores(scores)
    k = _check_k(k, scores.shape[0])
    return float(np.sort(scores)[::-1][:k].mean())


def variational_top_k_sum(scores, k: int, lam: float) -> float:
    """Evaluate ``k*lam + sum_i max(0, f_i - lam)``.

    Minimized over lam in [0, 1] this equals the sum of the k largest
    scores, and lam equal to the k-th largest score attains the minimum.
    """
    scores = as_scores(scores)
    k = _check_k(k, scores.shape[0])
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam={lam} out of range [0, 1]")
    return float(k * lam + np.maximum(scores - lam, 0.0).sum())


def hinge(a: float) -> float:
    """max(0, a)."""
    return max(0.0, float(a))


def _check_index_set(indices, c: int, name: str) -> tuple[int, ...]:
    out = tuple(sorted(int(i) for i in indices))
    if len(out) == 0:
        raise ValueError(f"{name} must be non-empty")
    if len(set(out)) != len(out):
        raise ValueError(f"{name} contains duplicate indices")
    if out[0] < 0 or out[-1] >= c:
        raise ValueError(f"{name} has indices outside [0, {c})")
    return out


def delta_terms(scores, specified) -> np.ndarray:
    """Per-class gaps ``max(0, max_{s in S} f_s - f_i)``.

    The entry at the best-scored specified index is always 0. Entries are
    returned in class order; sort on demand for ranked views.
    """
    scores = as_scores(scores)
    spec = _check_index_set(specified, scores.shape[0], "specified set")
    smax = float(np.max(scores[list(spec)]))
    return np.maximum(smax - scores, 0.0)


def delta_tilde_terms(scores, relevant, specified) -> np.ndarray:
    """Per-class gaps ``max(0, f_j - min_{y in Yp \\ S} f_y)``.

    ``relevant`` is the full relevant-label index set; the reference score
    is the minimum over relevant labels outside the specified set, so that
    difference set must be non-empty.
    """
    scores = as_scores(scores)
    c = scores.shape[0]
    rel = _check_index_set(relevant, c, "relevant set")
    spec = _check_index_set(specified, c, "specified set")
    rest = sorted(set(rel) - set(spec))
    if not rest:
        raise ValueError("relevant set minus specified set is empty")
    ref = float(np.min(scores[rest]))
    return np.maximum(scores - ref, 0.0)
