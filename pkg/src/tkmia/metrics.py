"""Ranking-quality measures for top-k multi-label predictions.

All measures depend on the score vector only through its induced ranking
(ties broken by smaller class index), so they are invariant under strictly
monotone transforms of the scores. Undefined values (no relevant labels,
or an average over zero successful attacks) surface as errors or explicit
``None`` markers, never as silent zeros.

Implemented measures, for one instance with labels ``y`` and ranked labels
``y_[1], ..., y_[c]``:

  top-k accuracy   1 iff every relevant label ranks within the top k
  P@k              (1/k) * sum_{i<=k} y_[i]
  AP@k             (1/N_k) * sum_{i<=k} y_[i] * P@i  with N_k = min(k, |Yp|)
  NDCG@k           DCG@k / IDCG@k with log2(i+1) position discounts

and over an attacked instance set:

  delta_l          mean number of specified labels expelled from the top k
  APer             mean L2 norm of the successful perturbations
"""
from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import as_labels, as_scores, top_k_indices

__all__ = [
    "UndefinedMetricError",
    "MetricsRecord",
    "AggregateReport",
    "tk_acc",
    "precision_at_k",
    "ap_at_k",
    "map_at_k",
    "map_at_k_per_category",
    "ndcg_at_k",
    "delta_l",
    "aper",
    "evaluate_instance",
    "delta_report",
    "write_report_csv",
    "REPORT_COLUMNS",
]


class UndefinedMetricError(ValueError):
    """A measure was requested where its definition does not apply."""


def _ranked_labels(scores, labels, k: int) -> np.ndarray:
    scores = as_scores(scores)
    labels = as_labels(labels, scores.shape[0])
    return labels[top_k_indices(scores, k)]


def tk_acc(scores, labels, k: int) -> int:
    """1 iff the set of relevant labels is contained in the top-k classes."""
    scores = as_scores(scores)
    labels = as_labels(labels, scores.shape[0])
    topk = set(int(i) for i in top_k_indices(scores, k))
    relevant = set(int(i) for i in np.flatnonzero(labels == 1))
    return int(relevant <= topk)


def precision_at_k(scores, labels, k: int) -> float:
    """Fraction of the top-k ranked classes that are relevant."""
    ranked = _ranked_labels(scores, labels, k)
    return float(ranked.sum()) / k


def ap_at_k(scores, labels, k: int) -> float:
    """Average precision over the top-k prefix.

    Sums P@i at each relevant position i <= k and normalizes by
    N_k = min(k, number of relevant labels).
    """
    labels = as_labels(labels)
    n_relevant = int(labels.sum())
    if n_relevant == 0:
        raise UndefinedMetricError("AP@k undefined without relevant labels")
    ranked = _ranked_labels(scores, labels, k)
    hits = 0
    total = 0.0
    for i, rel in enumerate(ranked, start=1):
        if rel:
            hits += 1
            total += hits / i
    return total / min(k, n_relevant)


def map_at_k(samples: Sequence[tuple], k: int) -> float:
    """Mean of AP@k over ``(scores, labels)`` samples.

    This sample-mean reading is what the aggregate reports use. For the
    dataset-level per-category variant see :func:`map_at_k_per_category`.
    """
    if len(samples) == 0:
        raise ValueError("empty sample list")
    return float(np.mean([ap_at_k(s, y, k) for s, y in samples]))


def map_at_k_per_category(samples: Sequence[tuple], k: int) -> float:
    """Mean over categories of per-category AP@k.

    For category j, instances are ranked by their class-j score and scored
    against the binary relevance column y_j. Categories with no relevant
    instance are skipped; if every category is empty the metric is
    undefined.
    """
    if len(samples) == 0:
        raise ValueError("empty sample list")
    score_mat = np.asarray([as_scores(s) for s, _ in samples])
    label_mat = np.asarray([as_labels(y, score_mat.shape[1]) for _, y in samples])
    n, c = score_mat.shape
    if k > n:
        raise ValueError(f"k={k} exceeds instance count {n}")
    ap_values = []
    for j in range(c):
        if label_mat[:, j].sum() == 0:
            continue
        ap_values.append(_ap_over_items(score_mat[:, j], label_mat[:, j], k))
    if not ap_values:
        raise UndefinedMetricError("no category has a relevant instance")
    return float(np.mean(ap_values))


def _ap_over_items(item_scores: np.ndarray, item_labels: np.ndarray, k: int) -> float:
    # Same prefix-precision AP, but the ranked items are instances and the
    # scores need not be probabilities, so rank directly.
    order = np.argsort(-item_scores, kind="stable")[:k]
    ranked = item_labels[order]
    hits = 0
    total = 0.0
    for i, rel in enumerate(ranked, start=1):
        if rel:
            hits += 1
            total += hits / i
    return total / min(k, int(item_labels.sum()))


def ndcg_at_k(scores, labels, k: int) -> float:
    """Discounted cumulative gain over the top k, normalized by the ideal."""
    labels = as_labels(labels)
    n_relevant = int(labels.sum())
    if n_relevant == 0:
        raise UndefinedMetricError("NDCG@k undefined without relevant labels")
    ranked = _ranked_labels(scores, labels, k)
    positions = np.arange(1, k + 1)
    dcg = float((ranked / np.log2(positions + 1)).sum())
    ideal_len = min(k, n_relevant)
    idcg = float((1.0 / np.log2(np.arange(1, ideal_len + 1) + 1)).sum())
    return dcg / idcg


def delta_l(outcomes: Sequence) -> float:
    """Mean count of specified labels expelled from the top k.

    Each outcome must expose ``specified`` (the attacked label set) and
    ``residual`` (members of it still ranked in the top k afterwards).
    """
    if len(outcomes) == 0:
        raise ValueError("empty outcome list")
    return float(np.mean([len(o.specified) - len(o.residual) for o in outcomes]))


def aper(perturbations: Iterable[np.ndarray]) -> float | None:
    """Mean L2 norm over successful-attack perturbations.

    Returns None when there are no successes, the explicit
    undefined-metric marker.
    """
    norms = [float(np.linalg.norm(np.asarray(e, dtype=np.float64))) for e in perturbations]
    if not norms:
        return None
    return float(np.mean(norms))


@dataclass
class MetricsRecord:
    """Per-instance measure values at a fixed k."""

    k: int
    tk_acc: int
    p_at_k: float
    ap_at_k: float
    ndcg_at_k: float


def evaluate_instance(scores, labels, k: int) -> MetricsRecord:
    """All per-instance measures in one pass."""
    return MetricsRecord(
        k=int(k),
        tk_acc=tk_acc(scores, labels, k),
        p_at_k=precision_at_k(scores, labels, k),
        ap_at_k=ap_at_k(scores, labels, k),
        ndcg_at_k=ndcg_at_k(scores, labels, k),
    )


@dataclass
class AggregateReport:
    """Clean vs. perturbed means over one attacked instance set.

    Deltas follow the clean-minus-perturbed convention, so a positive
    delta means the attack degraded the measure. ``aper`` is None when no
    attack in the set succeeded.
    """

    n: int
    clean_tk_acc: float
    clean_p_at_k: float
    clean_map_at_k: float
    clean_ndcg_at_k: float
    pert_tk_acc: float
    pert_p_at_k: float
    pert_map_at_k: float
    pert_ndcg_at_k: float
    delta_tk_acc: float
    delta_p_at_k: float
    delta_map_at_k: float
    delta_ndcg_at_k: float
    delta_l: float
    aper: float | None


def delta_report(
    clean: Sequence[MetricsRecord],
    perturbed: Sequence[MetricsRecord],
    outcomes: Sequence,
) -> AggregateReport:
    """Aggregate one attacked instance set into a report row.

    ``clean`` and ``perturbed`` must describe the same instances in the
    same order (checked by length and k). The reported mAP@k is the
    sample mean of AP@k. APer averages over successful outcomes only.
    """
    if not (len(clean) == len(perturbed) == len(outcomes)) or len(clean) == 0:
        raise ValueError("clean, perturbed and outcomes must be non-empty and aligned")
    ks = {r.k for r in clean} | {r.k for r in perturbed}
    if len(ks) != 1:
        raise ValueError("mismatched k across records")

    def mean(records, attr):
        return float(np.mean([getattr(r, attr) for r in records]))

    c_acc = mean(clean, "tk_acc")
    c_p = mean(clean, "p_at_k")
    c_map = mean(clean, "ap_at_k")
    c_ndcg = mean(clean, "ndcg_at_k")
    p_acc = mean(perturbed, "tk_acc")
    p_p = mean(perturbed, "p_at_k")
    p_map = mean(perturbed, "ap_at_k")
    p_ndcg = mean(perturbed, "ndcg_at_k")
    return AggregateReport(
        n=len(clean),
        clean_tk_acc=c_acc,
        clean_p_at_k=c_p,
        clean_map_at_k=c_map,
        clean_ndcg_at_k=c_ndcg,
        pert_tk_acc=p_acc,
        pert_p_at_k=p_p,
        pert_map_at_k=p_map,
        pert_ndcg_at_k=p_ndcg,
        delta_tk_acc=c_acc - p_acc,
        delta_p_at_k=c_p - p_p,
        delta_map_at_k=c_map - p_map,
        delta_ndcg_at_k=c_ndcg - p_ndcg,
        delta_l=delta_l(outcomes),
        aper=aper([o.epsilon for o in outcomes if o.success]),
    )


REPORT_COLUMNS = (
    "k",
    "s_size",
    "method",
    "delta_tk_acc",
    "delta_p_at_k",
    "delta_map_at_k",
    "delta_ndcg_at_k",
    "delta_l",
    "aper",
    "n",
)


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, float):
        # normalize numpy scalars, whose repr is not round-trip plain text
        return repr(float(value))
    return str(value)


def write_report_csv(path: str, rows: Sequence[dict]) -> None:
    """Write report rows atomically in the fixed column order.

    Each row is a dict keyed by REPORT_COLUMNS. Floats serialize via repr
    so equal runs produce byte-identical files.
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(REPORT_COLUMNS)
            for row in rows:
                writer.writerow([_fmt(row[col]) for col in REPORT_COLUMNS])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
