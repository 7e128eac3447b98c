"""Minimal deterministic feed-forward classifier with hand-derived gradients.

Everything here is plain numpy: an MLP with per-hidden-layer activations
(tanh or relu), softmax output, cross-entropy / squared-error losses, SGD
with optional momentum, and an EMA shadow copy of the weights.  No autodiff;
the backward pass is written out by hand and checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ModelParams:
    """Weights/biases of an MLP. Layer l maps (fan_in,) -> (fan_out,) via x @ W + b."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]  # one entry per hidden layer

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        if len(self.activations) != len(self.weights) - 1:
            raise ValueError("need one activation per hidden layer")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {l}: inconsistent shapes {w.shape} / {b.shape}")
            if l > 0 and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {l}: fan_in does not match previous fan_out")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]


@dataclass(frozen=True)
class Gradients:
    """Same shapes as the ModelParams they were taken against."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class EmaParams:
    """Shadow copy of ModelParams updated as decay*shadow + (1-decay)*params."""

    shadow: ModelParams
    decay: float

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError("decay must lie in [0, 1]")


def init_params(layer_sizes, seed: int, activation: str = "tanh") -> ModelParams:
    """Glorot-uniform init (+-sqrt(6/(fan_in+fan_out))), zero biases, seeded."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    acts = (activation,) * (len(sizes) - 2)
    return ModelParams(tuple(weights), tuple(biases), acts)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax, floored at PROB_FLOOR and renormalized."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    p = np.clip(p, PROB_FLOOR, None)
    return p / p.sum(axis=-1, keepdims=True)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(z.dtype)


def forward_cached(params: ModelParams, X: np.ndarray):
    """Batch forward pass; returns (probs, cache) with cache reused by backward."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != model dim {params.input_dim}")
    pre, post = [], [X]
    h = X
    for l, act in enumerate(params.activations):
        z = h @ params.weights[l] + params.biases[l]
        h = _activate(z, act)
        pre.append(z)
        post.append(h)
    logits = h @ params.weights[-1] + params.biases[-1]
    return softmax(logits), (pre, post)


def forward_batch(params: ModelParams, X: np.ndarray) -> np.ndarray:
    probs, _ = forward_cached(params, X)
    return probs


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class-probability vector for a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("forward expects a single feature vector")
    return forward_batch(params, x[None, :])[0]


def backward_from_dlogits(
    params: ModelParams, cache, dlogits: np.ndarray, need_input_grad: bool = False
):
    """Backprop a gradient w.r.t. the output logits down to params (and optionally input)."""
    pre, post = cache
    d = dlogits
    dws = [None] * len(params.weights)
    dbs = [None] * len(params.biases)
    dws[-1] = post[-1].T @ d
    dbs[-1] = d.sum(axis=0)
    for l in range(len(params.activations) - 1, -1, -1):
        d = d @ params.weights[l + 1].T
        d = d * _activate_grad(pre[l], post[l + 1], params.activations[l])
        dws[l] = post[l].T @ d
        dbs[l] = d.sum(axis=0)
    grads = Gradients(tuple(dws), tuple(dbs))
    if need_input_grad:
        return grads, d @ params.weights[0].T
    return grads


def _as_soft_targets(targets, n: int, n_classes: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 1 and np.issubdtype(t.dtype, np.integer):
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), t] = 1.0
        return onehot
    t = np.atleast_2d(t).astype(float)
    if t.shape != (n, n_classes):
        raise ValueError(f"targets shape {t.shape} != ({n}, {n_classes})")
    return t


def loss_and_grad(
    params: ModelParams,
    X: np.ndarray,
    targets,
    kind: str = "cross_entropy",
    weight: float = 1.0,
    need_input_grad: bool = False,
):
    """Mean per-example loss (times weight) and its gradient in ModelParams shape.

    `targets` is either an int class array (hard labels) or an (n, C) matrix of
    probability vectors (soft labels).  kind is "cross_entropy" or
    "squared_error"; the squared-error loss is the per-example sum of squared
    probability differences.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    probs, cache = forward_cached(params, X)
    t = _as_soft_targets(targets, n, params.n_classes)
    if kind == "cross_entropy":
        logp = np.log(np.clip(probs, PROB_FLOOR, 1.0))
        loss = weight * float(-(t * logp).sum() / n)
        dlogits = (probs - t) * (weight / n)
    elif kind == "squared_error":
        diff = probs - t
        loss = weight * float((diff * diff).sum() / n)
        dprobs = diff * (2.0 * weight / n)
        dlogits = probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    out = backward_from_dlogits(params, cache, dlogits, need_input_grad)
    if need_input_grad:
        grads, dx = out
        return loss, grads, dx
    return loss, out


def entropy_and_dlogits(probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean prediction entropy over the batch and its gradient w.r.t. logits."""
    n = probs.shape[0]
    logp = np.log(np.clip(probs, PROB_FLOOR, 1.0))
    ent = float(-(probs * logp).sum() / n)
    # dH/dz_k = -p_k (log p_k + H(p)) per example
    per_ex_h = -(probs * logp).sum(axis=1, keepdims=True)
    dlogits = -probs * (logp + per_ex_h) / n
    return ent, dlogits


def _check_same_shapes(params: ModelParams, grads) -> None:
    if len(grads.weights) != len(params.weights):
        raise ValueError("gradient layer count mismatch")
    for w, dw, b, db in zip(params.weights, grads.weights, params.biases, grads.biases):
        if w.shape != dw.shape or b.shape != db.shape:
            raise ValueError("gradient shape mismatch")


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """params - lr * grads, elementwise. Pure; momentum lives in MomentumSgd."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    _check_same_shapes(params, grads)
    ws = tuple(w - lr * dw for w, dw in zip(params.weights, grads.weights))
    bs = tuple(b - lr * db for b, db in zip(params.biases, grads.biases))
    return ModelParams(ws, bs, params.activations)


class MomentumSgd:
    """Heavy-ball SGD; velocity persists across steps, zero-initialized.

    ``weight_decay`` adds an L2 penalty gradient on the weight matrices
    (never the biases) before the momentum update.
    """

    def __init__(self, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._vel_w = None
        self._vel_b = None

    def step(self, params: ModelParams, grads: Gradients) -> ModelParams:
        _check_same_shapes(params, grads)
        if self._vel_w is None:
            self._vel_w = [np.zeros_like(w) for w in params.weights]
            self._vel_b = [np.zeros_like(b) for b in params.biases]
        wd = self.weight_decay
        for i in range(len(self._vel_w)):
            g_w = grads.weights[i]
            if wd:
                g_w = g_w + wd * params.weights[i]
            self._vel_w[i] = self.momentum * self._vel_w[i] + g_w
            self._vel_b[i] = self.momentum * self._vel_b[i] + grads.biases[i]
        ws = tuple(w - self.lr * v for w, v in zip(params.weights, self._vel_w))
        bs = tuple(b - self.lr * v for b, v in zip(params.biases, self._vel_b))
        return ModelParams(ws, bs, params.activations)


def ema_update(ema: EmaParams, params: ModelParams) -> EmaParams:
    """shadow <- decay*shadow + (1-decay)*params."""
    s = ema.shadow
    if s.layer_sizes != params.layer_sizes:
        raise ValueError("EMA shadow shape mismatch")
    d = ema.decay
    ws = tuple(d * sw + (1.0 - d) * w for sw, w in zip(s.weights, params.weights))
    bs = tuple(d * sb + (1.0 - d) * b for sb, b in zip(s.biases, params.biases))
    return EmaParams(ModelParams(ws, bs, params.activations), d)
