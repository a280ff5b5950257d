"""Measure-imperceptible top-k attack: objective, optimizer loop, selection.

The attack pushes a specified subset S of an instance's relevant labels
out of the top-k while pulling the remaining relevant labels up, so the
usual ranking measures barely move. The objective being minimized over
(epsilon, lambda1, lambda2) is

    lambda1 + lambda2 + (alpha/2) ||eps||^2
      + 1/(c-k) * sum_i [ max_{s in S} f_s(x+eps) - f_i(x+eps) - lambda1 ]_+
      + 1/k     * sum_j [ f_j(x+eps) - min_{y in Yp\\S} f_y(x+eps) - lambda2 ]_+

with both lambdas constrained to [0, 1]. The hinge sums are average-top-k
relaxations of the two ranking conditions ("all of S below position k",
"other relevant labels fill the top k"), so no sort appears anywhere in
the gradient path; only the success check ranks scores.

Per iteration the loop takes plain gradient steps on the lambdas
(projected back to [0, 1]), a momentum gradient step on epsilon, projects
x+eps into the clip domain, and stops early once the success condition
holds. Distinct instances never share state, so attacks parallelize
freely over instances with a read-only scorer.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .core import Instance, top_k_indices
from .model import Scorer

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "GlobalScheme",
    "RandomScheme",
    "tkmia_objective",
    "success_check",
    "tkmia_attack",
    "select_global",
    "select_random",
    "filter_instances",
]


@dataclass(frozen=True)
class GlobalScheme:
    """Specify the same category list for every instance (scheme S1)."""

    categories: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(int(i) for i in self.categories))
        if not self.categories:
            raise ValueError("category set must be non-empty")


@dataclass(frozen=True)
class RandomScheme:
    """Specify m randomly drawn relevant labels per instance (scheme S2)."""

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")


@dataclass
class AttackConfig:
    """Hyperparameters shared by the attack and the baseline losses.

    ``delta_threshold`` is the minimum number of expelled specified labels
    for a baseline run to count as successful; None means "all of S".
    ``success_mode`` picks the stopping condition: ``c1_only`` stops once
    every specified label ranks below position k, ``strict`` additionally
    requires the k-th score to be at most the lowest remaining-relevant
    score.
    """

    k: int
    eta: float
    alpha: float = 0.0
    momentum: float = 0.9
    max_iter: int = 300
    success_mode: Literal["c1_only", "strict"] = "c1_only"
    delta_threshold: int | None = None
    clip_domain: tuple[float, float] = (-1.0, 1.0)
    scheme: GlobalScheme | RandomScheme | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.success_mode not in ("c1_only", "strict"):
            raise ValueError(f"unknown success mode {self.success_mode!r}")
        if self.delta_threshold is not None and self.delta_threshold < 1:
            raise ValueError("delta threshold must be positive")
        lo, hi = self.clip_domain
        if not lo < hi:
            raise ValueError("clip domain must satisfy lo < hi")
        if isinstance(self.scheme, RandomScheme) and self.scheme.m > self.k:
            raise ValueError("random scheme requires m <= k")


@dataclass
class AttackOutcome:
    """Result of one attack run on one instance.

    ``residual`` holds the specified labels still ranked in the top k
    after the attack; ``trace`` records the objective value at each
    iterate that received a gradient step.
    """

    method: str
    epsilon: np.ndarray
    iterations_used: int
    success: bool
    specified: tuple[int, ...]
    residual: tuple[int, ...]
    lambda1: float
    lambda2: float
    trace: list[float]
    scores_before: np.ndarray
    scores_after: np.ndarray

    @property
    def epsilon_norm(self) -> float:
        return float(np.linalg.norm(self.epsilon))

    @property
    def expelled(self) -> int:
        return len(self.specified) - len(self.residual)

    def to_record(self, **extra) -> dict:
        """Flat dict for line-delimited JSON serialization."""
        record = {
            "method": self.method,
            "success": self.success,
            "iterations_used": self.iterations_used,
            "specified": list(self.specified),
            "residual": list(self.residual),
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "epsilon_norm": self.epsilon_norm,
            "epsilon": self.epsilon.tolist(),
            "scores_before": self.scores_before.tolist(),
            "scores_after": self.scores_after.tolist(),
        }
        record.update(extra)
        return record


def _split_sets(specified, relevant, c: int):
    spec = tuple(sorted(int(i) for i in specified))
    rel = tuple(sorted(int(i) for i in relevant))
    if not spec:
        raise ValueError("specified set must be non-empty")
    if any(i < 0 or i >= c for i in spec) or any(i < 0 or i >= c for i in rel):
        raise ValueError(f"label indices outside [0, {c})")
    if not set(spec) <= set(rel):
        raise ValueError("specified set must be a subset of the relevant labels")
    rest = tuple(sorted(set(rel) - set(spec)))
    if not rest:
        raise ValueError("no relevant labels left outside the specified set")
    return spec, rest


def tkmia_objective(model: Scorer, x, eps, lam1: float, lam2: float,
                    specified, relevant, config: AttackConfig):
    """Objective value and its gradients with respect to (eps, lam1, lam2).

    Subgradients of the max/min over label sets follow the single
    argmax/argmin element, ties broken by smallest index; hinge
    subgradients are 0 at the kink. ``x + eps`` is assumed already inside
    the clip domain.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    c = model.out_dim
    k = config.k
    if not 1 <= k < c:
        raise ValueError(f"k={k} out of range [1, {c - 1}] for the objective")
    if not (0.0 <= lam1 <= 1.0 and 0.0 <= lam2 <= 1.0):
        raise ValueError("lambdas must lie in [0, 1]")
    spec, rest = _split_sets(specified, relevant, c)

    scores = model.score(x + eps)
    s_max = spec[int(np.argmax(scores[list(spec)]))]
    y_min = rest[int(np.argmin(scores[list(rest)]))]

    gaps1 = scores[s_max] - scores - lam1
    gaps2 = scores - scores[y_min] - lam2
    active1 = gaps1 > 0.0
    active2 = gaps2 > 0.0
    n1 = int(active1.sum())
    n2 = int(active2.sum())

    value = (lam1 + lam2 + 0.5 * config.alpha * float(eps @ eps)
             + float(gaps1[active1].sum()) / (c - k)
             + float(gaps2[active2].sum()) / k)
    grad_lam1 = 1.0 - n1 / (c - k)
    grad_lam2 = 1.0 - n2 / k

    cot = np.zeros(c)
    cot[s_max] += n1 / (c - k)
    cot[active1] -= 1.0 / (c - k)
    cot[active2] += 1.0 / k
    cot[y_min] -= n2 / k
    grad_eps = model.input_gradient(x + eps, cot) + config.alpha * eps
    return value, grad_eps, grad_lam1, grad_lam2


def success_check(scores, specified, relevant, k: int,
                  mode: Literal["c1_only", "strict"] = "c1_only") -> bool:
    """Whether the attack conditions hold for a score vector.

    ``c1_only``: every specified label ranks strictly below position k
    (equivalently the (k+1)-th score is at least the best specified score,
    read through the deterministic index tie-break). ``strict``
    additionally requires the k-th score to be at most the minimum score
    over relevant labels outside the specified set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    c = scores.shape[0]
    if k >= c:
        raise ValueError(f"k={k} must be smaller than c={c}")
    spec, rest = _split_sets(specified, relevant, c)
    topk = set(int(i) for i in top_k_indices(scores, k))
    c1 = not (set(spec) & topk)
    if mode == "c1_only":
        return c1
    if mode != "strict":
        raise ValueError(f"unknown success mode {mode!r}")
    kth = float(np.sort(scores)[::-1][k - 1])
    return c1 and kth <= float(np.min(scores[list(rest)]))


def residual_set(scores, specified, k: int) -> tuple[int, ...]:
    """Specified labels still ranked inside the top k."""
    topk = set(int(i) for i in top_k_indices(scores, k))
    return tuple(i for i in specified if i in topk)


def run_attack_loop(model: Scorer, instance: Instance, specified,
                    config: AttackConfig, method: str,
                    step_fn: Callable, success_fn: Callable) -> AttackOutcome:
    """Shared iterative engine for the attack and the baseline losses.

    ``step_fn(x_adv, eps) -> (value, grad_eps)`` evaluates one loss and
    may advance its own auxiliary state; ``success_fn(scores) -> bool``
    is the stopping test. The loop evaluates success before any update,
    so an instance that already satisfies it returns epsilon exactly 0
    after zero iterations.
    """
    lo, hi = config.clip_domain
    x = instance.x
    eps = np.zeros_like(x)
    velocity = np.zeros_like(x)
    trace: list[float] = []
    scores_before = None
    scores = None
    success = False
    iterations = 0

    for it in range(config.max_iter + 1):
        x_adv = np.clip(x + eps, lo, hi)
        scores = model.score(x_adv)
        if it == 0:
            scores_before = scores.copy()
        if success_fn(scores):
            success = True
            iterations = it
            break
        if it == config.max_iter:
            iterations = it
            break
        value, grad_eps = step_fn(x_adv, eps)
        if not np.all(np.isfinite(grad_eps)):
            raise FloatingPointError(f"non-finite gradient at iteration {it}")
        trace.append(value)
        velocity = config.momentum * velocity + grad_eps
        eps = eps - config.eta * velocity
        # Keep eps consistent with the projected adversarial input so the
        # reported norm reflects the perturbation actually applied.
        eps = np.clip(x + eps, lo, hi) - x

    return AttackOutcome(
        method=method,
        epsilon=eps,
        iterations_used=iterations,
        success=success,
        specified=tuple(sorted(int(i) for i in specified)),
        residual=residual_set(scores, sorted(int(i) for i in specified), config.k),
        lambda1=0.0,
        lambda2=0.0,
        trace=trace,
        scores_before=scores_before,
        scores_after=scores,
    )


def tkmia_attack(model: Scorer, instance: Instance, specified,
                 config: AttackConfig) -> AttackOutcome:
    """Run the measure-imperceptible attack on one instance.

    Requires the instance filter |Yp| >= k + |S| and S a subset of the
    relevant labels. Both lambdas start at 0 (every hinge active, maximal
    gradient signal) and take plain projected gradient steps with the same
    step size as epsilon; momentum applies to epsilon only.
    """
    relevant = instance.relevant
    spec = tuple(sorted(int(i) for i in specified))
    if len(relevant) < config.k + len(spec):
        raise ValueError(
            f"instance filter violated: |Yp|={len(relevant)} < k+|S|={config.k + len(spec)}"
        )
    lam = [0.0, 0.0]

    def step(x_adv, eps):
        value, grad_eps, g1, g2 = tkmia_objective(
            model, instance.x, eps, lam[0], lam[1], spec, relevant, config)
        if not (np.isfinite(g1) and np.isfinite(g2)):
            raise FloatingPointError("non-finite lambda gradient")
        lam[0] = float(np.clip(lam[0] - config.eta * g1, 0.0, 1.0))
        lam[1] = float(np.clip(lam[1] - config.eta * g2, 0.0, 1.0))
        return value, grad_eps

    def succeeded(scores):
        return success_check(scores, spec, relevant, config.k, config.success_mode)

    outcome = run_attack_loop(model, instance, spec, config, "tkmia", step, succeeded)
    return replace(outcome, lambda1=lam[0], lambda2=lam[1])


def select_global(dataset: Sequence[Instance], categories) -> list[tuple[int, tuple[int, ...]]]:
    """Per-instance specified sets under the global selection scheme.

    Returns (dataset index, S) pairs with S the intersection of the
    instance's relevant labels and the category list; instances with an
    empty intersection are not attackable and are dropped.
    """
    cats = set(int(i) for i in categories)
    if not cats:
        raise ValueError("category set must be non-empty")
    selected = []
    for idx, inst in enumerate(dataset):
        overlap = tuple(sorted(cats & set(inst.relevant)))
        if overlap:
            selected.append((idx, overlap))
    return selected


def select_random(instance: Instance, m: int, seed) -> tuple[int, ...]:
    """Uniform sample of m relevant labels, deterministic under the seed."""
    relevant = instance.relevant
    if not 0 < m <= len(relevant):
        raise ValueError(f"m={m} out of range (0, {len(relevant)}]")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(relevant), size=m, replace=False)
    return tuple(sorted(relevant[i] for i in picked))


def filter_instances(dataset: Sequence[Instance], k: int, s_size: int) -> list[int]:
    """Indices of instances with at least k + s_size relevant labels."""
    return [i for i, inst in enumerate(dataset) if len(inst.relevant) >= k + s_size]
