"""Comparison attack losses run through the same iterative engine.

Two untargeted baselines are provided. Both are margin hinges plus the
same perturbation-norm penalty, minimized with the identical momentum
loop as the main attack (no lambda variables):

  ml_cw_u    [ min over relevant f_j - max over irrelevant f_i ]_+
             driving some relevant score below the best irrelevant one
  tkml_ap_u  [ max over relevant f_y - f_(k+1) ]_+
             driving every relevant score below ranking position k

Success for a baseline run is counted against the specified label set:
the attack succeeds once at least ``delta`` specified labels have left
the top k, with ``delta`` defaulting to all of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .attack import AttackConfig, AttackOutcome, run_attack_loop, residual_set
from .core import Instance, top_k_indices
from .model import Scorer

__all__ = [
    "BaselineSpec",
    "ml_cw_u_loss",
    "tkml_ap_u_loss",
    "run_baseline",
    "BASELINE_METHODS",
]

BASELINE_METHODS = ("ml_cw_u", "tkml_ap_u")


@dataclass(frozen=True)
class BaselineSpec:
    method: Literal["ml_cw_u", "tkml_ap_u"]
    config: AttackConfig

    def __post_init__(self):
        if self.method not in BASELINE_METHODS:
            raise ValueError(f"unknown baseline method {self.method!r}")


def _label_split(labels_or_relevant, c: int):
    relevant = tuple(sorted(int(i) for i in labels_or_relevant))
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    if relevant[0] < 0 or relevant[-1] >= c:
        raise ValueError(f"label indices outside [0, {c})")
    irrelevant = tuple(sorted(set(range(c)) - set(relevant)))
    if not irrelevant:
        raise ValueError("irrelevant set must be non-empty")
    return relevant, irrelevant


def ml_cw_u_loss(model: Scorer, x, eps, relevant, alpha: float = 0.0):
    """Margin hinge between worst relevant and best irrelevant score.

    Returns (value, gradient w.r.t. eps). Minimizing the value pushes the
    minimum relevant score below the maximum irrelevant score; the
    argmin/argmax pick single elements with ties broken by smallest index.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    rel, irr = _label_split(relevant, model.out_dim)
    scores = model.score(x + eps)
    j_min = rel[int(np.argmin(scores[list(rel)]))]
    i_max = irr[int(np.argmax(scores[list(irr)]))]
    margin = float(scores[j_min] - scores[i_max])
    value = max(0.0, margin) + 0.5 * alpha * float(eps @ eps)
    cot = np.zeros(model.out_dim)
    if margin > 0.0:
        cot[j_min] += 1.0
        cot[i_max] -= 1.0
    grad = model.input_gradient(x + eps, cot) + alpha * eps
    return value, grad


def tkml_ap_u_loss(model: Scorer, x, eps, relevant, k: int, alpha: float = 0.0):
    """Hinge pushing the best relevant score below ranking position k.

    The (k+1)-ranked class is found by the deterministic tie-break sort,
    and the gradient flows through that single class.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    c = model.out_dim
    if not 1 <= k < c:
        raise ValueError(f"k={k} out of range [1, {c - 1}]")
    rel, _ = _label_split(relevant, c)
    scores = model.score(x + eps)
    y_max = rel[int(np.argmax(scores[list(rel)]))]
    kp1 = int(top_k_indices(scores, k + 1)[k])
    margin = float(scores[y_max] - scores[kp1])
    value = max(0.0, margin) + 0.5 * alpha * float(eps @ eps)
    cot = np.zeros(c)
    if margin > 0.0:
        cot[y_max] += 1.0
        cot[kp1] -= 1.0
    grad = model.input_gradient(x + eps, cot) + alpha * eps
    return value, grad


def run_baseline(model: Scorer, instance: Instance, specified,
                 spec: BaselineSpec) -> AttackOutcome:
    """Attack one instance with a baseline loss.

    Preconditions match the main attack (|Yp| >= k + |S|, S inside the
    relevant set); success requires at least ``delta`` specified labels
    expelled from the top k, where delta defaults to |S| and may not
    exceed it.
    """
    config = spec.config
    relevant = instance.relevant
    s = tuple(sorted(int(i) for i in specified))
    if not s or not set(s) <= set(relevant):
        raise ValueError("specified set must be a non-empty subset of the relevant labels")
    if len(relevant) < config.k + len(s):
        raise ValueError(
            f"instance filter violated: |Yp|={len(relevant)} < k+|S|={config.k + len(s)}"
        )
    delta = config.delta_threshold if config.delta_threshold is not None else len(s)
    if delta > len(s):
        raise ValueError(f"delta threshold {delta} exceeds |S|={len(s)}")

    if spec.method == "ml_cw_u":
        def step(x_adv, eps):
            return ml_cw_u_loss(model, instance.x, eps, relevant, config.alpha)
    else:
        def step(x_adv, eps):
            return tkml_ap_u_loss(model, instance.x, eps, relevant, config.k,
                                  config.alpha)

    def succeeded(scores):
        expelled = len(s) - len(residual_set(scores, s, config.k))
        return expelled >= delta

    return run_attack_loop(model, instance, s, config, spec.method, step, succeeded)
