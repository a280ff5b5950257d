"""Small differentiable multi-label scorers with exact input gradients.

Two victim families are provided: an affine map and a one-hidden-layer
MLP, both ending in a sigmoid so scores live in (0, 1). They are small on
purpose: the affine family keeps the attack objective convex in the
perturbation (with the sigmoid disabled), the MLP family gives a realistic
non-convex victim, and both admit hand-written forward/backward passes
that can be validated against finite differences.

A scorer is immutable after construction as far as callers are concerned:
``score`` and ``input_gradient`` never mutate state and may run
concurrently. Training builds a new scorer.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Scorer",
    "TrainConfig",
    "make_affine",
    "make_mlp",
    "train_bce",
    "bce_loss",
    "finite_diff_check",
    "save_scorer",
    "load_scorer",
]

FORMAT_TAG = "tkmia-scorer-v1"

# Sigmoid saturates to exactly 0.0/1.0 in float64 beyond |z| ~ 36.7; clip
# logits so outputs stay strictly inside (0, 1).
_LOGIT_CLIP = 36.0

_ACTIVATIONS = ("tanh", "relu", "identity")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_LOGIT_CLIP, _LOGIT_CLIP)))


def _sigmoid_grad(z: np.ndarray) -> np.ndarray:
    p = _sigmoid(z)
    return p * (1.0 - p) * (np.abs(z) < _LOGIT_CLIP)


def _act(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(pre)
    if name == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _act_grad(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


class Scorer:
    """Multi-label prediction function mapping features to class scores.

    ``weights``/``biases`` hold one (out, in)-shaped matrix and one bias
    vector per layer: a single layer for the affine family, two for the
    MLP. The terminal sigmoid can be disabled (``sigmoid_output=False``)
    for analyses that need raw affine outputs; normal victims keep it on.
    """

    def __init__(self, weights, biases, activation: str = "tanh",
                 sigmoid_output: bool = True):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if len(self.weights) not in (1, 2) or len(self.weights) != len(self.biases):
            raise ValueError("expected 1 (affine) or 2 (mlp) weight/bias layers")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("layer shapes inconsistent")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameters")
        if len(self.weights) == 2 and self.weights[0].shape[0] != self.weights[1].shape[1]:
            raise ValueError("hidden dimensions do not chain")
        self.activation = activation
        self.sigmoid_output = bool(sigmoid_output)

    @property
    def arch(self) -> str:
        return "affine" if len(self.weights) == 1 else "mlp"

    @property
    def in_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weights[-1].shape[0])

    def copy(self) -> "Scorer":
        return Scorer([w.copy() for w in self.weights],
                      [b.copy() for b in self.biases],
                      self.activation, self.sigmoid_output)

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.in_dim:
            raise ValueError(f"input dimension {x.shape} != ({self.in_dim},)")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input")
        return x

    def logits(self, x) -> np.ndarray:
        """Pre-sigmoid outputs."""
        x = self._check_input(x)
        if self.arch == "affine":
            return self.weights[0] @ x + self.biases[0]
        hidden = _act(self.activation, self.weights[0] @ x + self.biases[0])
        return self.weights[1] @ hidden + self.biases[1]

    def score(self, x) -> np.ndarray:
        """Deterministic forward pass; scores strictly inside (0, 1)."""
        z = self.logits(x)
        return _sigmoid(z) if self.sigmoid_output else z

    def input_gradient(self, x, cotangent) -> np.ndarray:
        """Gradient of ``cotangent . score(x)`` with respect to ``x``.

        A vector-Jacobian product by exact chain rule; linear in the
        cotangent.
        """
        x = self._check_input(x)
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != (self.out_dim,):
            raise ValueError(f"cotangent shape {cot.shape} != ({self.out_dim},)")
        if not np.all(np.isfinite(cot)):
            raise ValueError("non-finite cotangent")
        if self.arch == "affine":
            z = self.weights[0] @ x + self.biases[0]
            g_z = cot * _sigmoid_grad(z) if self.sigmoid_output else cot
            return self.weights[0].T @ g_z
        pre = self.weights[0] @ x + self.biases[0]
        hidden = _act(self.activation, pre)
        z = self.weights[1] @ hidden + self.biases[1]
        g_z = cot * _sigmoid_grad(z) if self.sigmoid_output else cot
        g_hidden = self.weights[1].T @ g_z
        g_pre = g_hidden * _act_grad(self.activation, pre)
        return self.weights[0].T @ g_pre


def _init_layer(rng: np.random.Generator, out_dim: int, in_dim: int):
    # Uniform in [-s, s] with s = 1/sqrt(fan_in).
    s = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-s, s, size=(out_dim, in_dim)), rng.uniform(-s, s, size=out_dim)


def make_affine(in_dim: int, n_classes: int, seed: int = 0,
                sigmoid_output: bool = True) -> Scorer:
    rng = np.random.default_rng(seed)
    w, b = _init_layer(rng, n_classes, in_dim)
    return Scorer([w], [b], sigmoid_output=sigmoid_output)


def make_mlp(in_dim: int, hidden_dim: int, n_classes: int, seed: int = 0,
             activation: str = "tanh", sigmoid_output: bool = True) -> Scorer:
    rng = np.random.default_rng(seed)
    w1, b1 = _init_layer(rng, hidden_dim, in_dim)
    w2, b2 = _init_layer(rng, n_classes, hidden_dim)
    return Scorer([w1, w2], [b1, b2], activation, sigmoid_output)


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")


def _stack_dataset(dataset) -> tuple[np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    X = np.stack([inst.x for inst in dataset])
    Y = np.stack([inst.y for inst in dataset]).astype(np.float64)
    return X, Y


def bce_loss(model: Scorer, dataset) -> float:
    """Mean binary cross-entropy of the scorer over a dataset."""
    X, Y = _stack_dataset(dataset)
    if model.arch == "affine":
        Z = X @ model.weights[0].T + model.biases[0]
    else:
        H = _act(model.activation, X @ model.weights[0].T + model.biases[0])
        Z = H @ model.weights[1].T + model.biases[1]
    # Stable form of -[y log p + (1-y) log(1-p)] with p = sigmoid(z).
    return float(np.mean(np.logaddexp(0.0, Z) - Y * Z))


def train_bce(dataset, config: TrainConfig, model: Scorer | None = None) -> Scorer:
    """Mini-batch gradient descent with momentum on mean BCE.

    Starts from ``model`` when given, otherwise from a seeded affine
    initialization sized to the dataset. Identical (dataset, config,
    model) always produce bit-identical parameters.
    """
    X, Y = _stack_dataset(dataset)
    n, d = X.shape
    c = Y.shape[1]
    if model is None:
        model = make_affine(d, c, seed=config.seed)
    else:
        if model.in_dim != d or model.out_dim != c:
            raise ValueError("model dimensions do not match dataset")
        model = model.copy()
    if not model.sigmoid_output:
        raise ValueError("BCE training requires a sigmoid output")

    rng = np.random.default_rng(config.seed)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads_w, grads_b = _bce_grads(model, X[idx], Y[idx])
            for i in range(len(model.weights)):
                vel_w[i] = config.momentum * vel_w[i] + grads_w[i]
                vel_b[i] = config.momentum * vel_b[i] + grads_b[i]
                model.weights[i] -= config.learning_rate * vel_w[i]
                model.biases[i] -= config.learning_rate * vel_b[i]
    return model


def _bce_grads(model: Scorer, X: np.ndarray, Y: np.ndarray):
    b, c = X.shape[0], model.out_dim
    if model.arch == "affine":
        Z = X @ model.weights[0].T + model.biases[0]
        dZ = (_sigmoid(Z) - Y) * (np.abs(Z) < _LOGIT_CLIP) / (b * c)
        return [dZ.T @ X], [dZ.sum(axis=0)]
    Pre = X @ model.weights[0].T + model.biases[0]
    H = _act(model.activation, Pre)
    Z = H @ model.weights[1].T + model.biases[1]
    dZ = (_sigmoid(Z) - Y) * (np.abs(Z) < _LOGIT_CLIP) / (b * c)
    dW2 = dZ.T @ H
    db2 = dZ.sum(axis=0)
    dPre = (dZ @ model.weights[1]) * _act_grad(model.activation, Pre)
    dW1 = dPre.T @ X
    db1 = dPre.sum(axis=0)
    return [dW1, dW2], [db1, db2]


def finite_diff_check(model: Scorer, x, tolerance: float,
                      step: float = 1e-5) -> tuple[bool, float]:
    """Compare input_gradient rows against central finite differences.

    Checks the full Jacobian, one output class at a time, at an interior
    point (no logit clipping active). Returns (passed, max relative
    error) where the error is normwise per class row.
    """
    x = np.asarray(x, dtype=np.float64)
    worst = 0.0
    for j in range(model.out_dim):
        cot = np.zeros(model.out_dim)
        cot[j] = 1.0
        analytic = model.input_gradient(x, cot)
        numeric = np.zeros_like(x)
        for i in range(x.shape[0]):
            bump = np.zeros_like(x)
            bump[i] = step
            numeric[i] = (model.score(x + bump)[j] - model.score(x - bump)[j]) / (2 * step)
        scale = max(float(np.linalg.norm(numeric)), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric)) / scale)
    return worst <= tolerance, worst


def save_scorer(model: Scorer, path: str) -> None:
    """Serialize a scorer as line-delimited JSON (header + one layer/line)."""
    header = {
        "format": FORMAT_TAG,
        "arch": model.arch,
        "activation": model.activation,
        "sigmoid_output": model.sigmoid_output,
        "shapes": [list(w.shape) for w in model.weights],
    }
    lines = [json.dumps(header)]
    for w, b in zip(model.weights, model.biases):
        lines.append(json.dumps({
            "weight": w.ravel(order="C").tolist(),
            "bias": b.tolist(),
        }))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_scorer(path: str) -> Scorer:
    with open(path) as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"empty scorer file {path}")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported scorer format {header.get('format')!r}")
    shapes = [tuple(s) for s in header["shapes"]]
    if len(lines) - 1 != len(shapes):
        raise ValueError("layer count does not match header")
    weights, biases = [], []
    for shape, line in zip(shapes, lines[1:]):
        layer = json.loads(line)
        weights.append(np.asarray(layer["weight"], dtype=np.float64).reshape(shape))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
    return Scorer(weights, biases, header["activation"], header["sigmoid_output"])
