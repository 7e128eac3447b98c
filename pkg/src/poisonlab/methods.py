"""Semi-supervised training strategies over a shared guessed-label loop.

Seven methods are provided; they differ only in how the unlabeled target is
guessed and which loss couples the model to it:

- ``pseudo-label``: hard one-hot target from the current model when the max
  probability clears the confidence threshold, cross-entropy on the raw input.
- ``pi-model``: squared error between predictions under two independent weak
  augmentations (one side is the detached target).
- ``mean-teacher``: squared error toward the EMA-shadow model's prediction.
- ``vat``: KL toward the clean prediction under an adversarial input
  perturbation found by one power iteration, plus an entropy penalty.
- ``mixmatch-like``: average of several weakly augmented predictions,
  sharpened, matched with squared error (optional mixup).
- ``uda-like``: sharpened soft target from a weak augmentation, trained with a
  KL-style loss on a strong augmentation, gated by the confidence threshold.
- ``fixmatch-like``: hard target from a weak augmentation above the threshold,
  cross-entropy on a strong augmentation.

Every method shares the supervised loss on the labeled batch, SGD with
momentum, an EMA shadow, and a linear warm-up of the unlabeled weight over the
first tenth of training.  With ``lambda_u = 0`` all methods reduce to the same
supervised-only run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import Augmenter, TrainView, augment_batch
from .errors import ConfigError, TrainingDiverged

METHODS = (
    "pseudo-label",
    "pi-model",
    "mean-teacher",
    "vat",
    "mixmatch-like",
    "uda-like",
    "fixmatch-like",
)

_TRACE_MAGIC = "poisonlab-trace 1"


@dataclass(frozen=True)
class TrainerConfig:
    method: str = "fixmatch-like"
    epochs: int = 350
    labeled_batch: int = 16  # 0 = the full labeled set every step
    unlabeled_batch: int = 64
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0
    lambda_u: float = 1.0
    tau: float = 0.95
    temperature: float = 0.5
    ema_decay: float = 0.95
    vat_eps: float = 0.15
    vat_xi: float = 1e-4
    vat_entropy_weight: float = 0.3
    n_aug: int = 2
    mixup: bool = False
    warmup_frac: float = 0.02
    weak_sigma: float = 0.05
    strong_sigma: float = 0.08
    strong_dropout: float = 0.05
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    seed: int = 0
    record_trace: bool = True

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.epochs < 2:
            raise ConfigError("epochs must be >= 2 (influence windows need deltas)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be > 0")
        if self.n_aug < 1:
            raise ConfigError("n_aug must be >= 1")
        if self.lr <= 0.0:
            raise ConfigError("lr must be > 0")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass(frozen=True)
class PredictionTrace:
    """Per-epoch class probabilities over the unlabeled set, shape (K, |U|, C)."""

    probs: np.ndarray
    method: str
    seed: int

    @property
    def n_epochs(self) -> int:
        return self.probs.shape[0]

    @property
    def n_examples(self) -> int:
        return self.probs.shape[1]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[2]

    def save(self, path) -> None:
        """Line-oriented text format: header, then one example-row per line (9 sig digits)."""
        K, U, C = self.probs.shape
        lines = [_TRACE_MAGIC, f"epochs {K}", f"examples {U}", f"classes {C}",
                 f"method {self.method}", f"seed {self.seed}", "---"]
        for i in range(K):
            for j in range(U):
                lines.append(" ".join(f"{v:.9g}" for v in self.probs[i, j]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PredictionTrace":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != _TRACE_MAGIC:
            raise ConfigError(f"{path}: not a poisonlab trace file")
        header = {}
        i = 1
        while lines[i] != "---":
            key, _, value = lines[i].partition(" ")
            header[key] = value
            i += 1
        K, U, C = int(header["epochs"]), int(header["examples"]), int(header["classes"])
        flat = np.array([[float(v) for v in line.split()] for line in lines[i + 1:] if line.strip()])
        return cls(flat.reshape(K, U, C), header["method"], int(header["seed"]))


@dataclass
class TrainResult:
    params: nn.ModelParams
    ema: nn.EmaParams
    trace: PredictionTrace | None
    metrics: dict[str, list]


def sharpen(p: np.ndarray, temperature: float) -> np.ndarray:
    """Raise probabilities to 1/T and renormalize; T < 1 reduces entropy."""
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    q = np.power(np.clip(p, nn.PROB_FLOOR, 1.0), 1.0 / temperature)
    return q / q.sum(axis=-1, keepdims=True)


def _onehot(idx: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(idx), n_classes))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def vat_perturbation(params: nn.ModelParams, x: np.ndarray, eps: float, xi: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Adversarial direction of radius eps via one power iteration on the KL."""
    delta, _ = vat_perturbation_batch(params, np.asarray(x, dtype=float)[None, :], eps, xi, rng)
    return delta[0]


def vat_perturbation_batch(params: nn.ModelParams, X: np.ndarray, eps: float, xi: float,
                           rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Batch VAT directions; returns (deltas, number of zero-gradient fallbacks)."""
    n, d = X.shape
    if eps == 0.0:
        return np.zeros_like(X), 0
    if eps < 0.0:
        raise ConfigError("vat radius must be >= 0")
    q = nn.forward_batch(params, X)
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # gradient of KL(q || f(x + xi*d)) w.r.t. the input, one power iteration
    _, _, dx = nn.loss_and_grad(params, X + xi * dirs, q, "cross_entropy",
                                weight=float(n), need_input_grad=True)
    norms = np.linalg.norm(dx, axis=1, keepdims=True)
    degenerate = norms[:, 0] < 1e-300
    n_fallback = int(degenerate.sum())
    if n_fallback:
        dx = np.where(degenerate[:, None], dirs, dx)
        norms = np.linalg.norm(dx, axis=1, keepdims=True)
    return eps * dx / norms, n_fallback


def guess_label(params: nn.ModelParams, ema: nn.EmaParams, cfg: TrainerConfig,
                u: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Method-specific guessed label for one unlabeled example.

    Returns (soft label, train-on-it).  Thresholded methods skip when the max
    probability is below tau; averaging/sharpening methods always train.
    """
    u = np.asarray(u, dtype=float)
    weak = Augmenter("weak", cfg.weak_sigma)
    if cfg.method in ("pseudo-label", "fixmatch-like"):
        x_in = u if cfg.method == "pseudo-label" else augment_batch(weak, u[None, :], rng)[0]
        p = nn.forward(params, x_in)
        if p.max() < cfg.tau:
            return p, False
        hard = np.zeros_like(p)
        hard[int(p.argmax())] = 1.0
        return hard, True
    if cfg.method == "uda-like":
        p = nn.forward(params, augment_batch(weak, u[None, :], rng)[0])
        if p.max() < cfg.tau:
            return p, False
        return sharpen(p, cfg.temperature), True
    if cfg.method == "mixmatch-like":
        reps = np.stack([augment_batch(weak, u[None, :], rng)[0] for _ in range(cfg.n_aug)])
        p = nn.forward_batch(params, reps).mean(axis=0)
        return sharpen(p, cfg.temperature), True
    if cfg.method == "mean-teacher":
        return nn.forward(ema.shadow, augment_batch(weak, u[None, :], rng)[0]), True
    # pi-model and vat target the current prediction itself
    return nn.forward(params, u), True


def _add_grads(a: nn.Gradients | None, b: nn.Gradients | None) -> nn.Gradients | None:
    if a is None:
        return b
    if b is None:
        return a
    return nn.Gradients(
        tuple(x + y for x, y in zip(a.weights, b.weights)),
        tuple(x + y for x, y in zip(a.biases, b.biases)),
    )


def _unlabeled_step(params, ema, cfg, Xb, lam, weak, strong, rng):
    """Loss, gradients, and trained-on fraction for one unlabeled batch."""
    B = len(Xb)
    method = cfg.method
    if method == "fixmatch-like":
        guess = nn.forward_batch(params, augment_batch(weak, Xb, rng))
        mask = guess.max(axis=1) >= cfg.tau
        if not mask.any():
            return 0.0, None, 0.0
        targets = _onehot(guess[mask].argmax(axis=1), guess.shape[1])
        w = lam * mask.sum() / B
        loss, grads = nn.loss_and_grad(params, augment_batch(strong, Xb[mask], rng),
                                       targets, "cross_entropy", weight=w)
        return loss, grads, mask.mean()
    if method == "uda-like":
        guess = nn.forward_batch(params, augment_batch(weak, Xb, rng))
        mask = guess.max(axis=1) >= cfg.tau
        if not mask.any():
            return 0.0, None, 0.0
        targets = sharpen(guess[mask], cfg.temperature)
        w = lam * mask.sum() / B
        loss, grads = nn.loss_and_grad(params, augment_batch(strong, Xb[mask], rng),
                                       targets, "cross_entropy", weight=w)
        return loss, grads, mask.mean()
    if method == "pseudo-label":
        guess = nn.forward_batch(params, Xb)
        mask = guess.max(axis=1) >= cfg.tau
        if not mask.any():
            return 0.0, None, 0.0
        targets = _onehot(guess[mask].argmax(axis=1), guess.shape[1])
        w = lam * mask.sum() / B
        loss, grads = nn.loss_and_grad(params, Xb[mask], targets, "cross_entropy", weight=w)
        return loss, grads, mask.mean()
    if method == "pi-model":
        targets = nn.forward_batch(params, augment_batch(weak, Xb, rng))
        loss, grads = nn.loss_and_grad(params, augment_batch(weak, Xb, rng),
                                       targets, "squared_error", weight=lam)
        return loss, grads, 1.0
    if method == "mean-teacher":
        targets = nn.forward_batch(ema.shadow, augment_batch(weak, Xb, rng))
        loss, grads = nn.loss_and_grad(params, augment_batch(weak, Xb, rng),
                                       targets, "squared_error", weight=lam)
        return loss, grads, 1.0
    if method == "mixmatch-like":
        reps = np.stack([nn.forward_batch(params, augment_batch(weak, Xb, rng))
                         for _ in range(cfg.n_aug)])
        targets = sharpen(reps.mean(axis=0), cfg.temperature)
        x_in = augment_batch(weak, Xb, rng)
        if cfg.mixup:
            m = float(rng.beta(0.75, 0.75))
            m = max(m, 1.0 - m)
            perm = rng.permutation(B)
            x_in = m * x_in + (1.0 - m) * x_in[perm]
            targets = m * targets + (1.0 - m) * targets[perm]
        loss, grads = nn.loss_and_grad(params, x_in, targets, "squared_error", weight=lam)
        return loss, grads, 1.0
    if method == "vat":
        probs, cache = nn.forward_cached(params, Xb)
        delta, _ = vat_perturbation_batch(params, Xb, cfg.vat_eps, cfg.vat_xi, rng)
        loss, grads = nn.loss_and_grad(params, Xb + delta, probs, "cross_entropy", weight=lam)
        ent, dlogits = nn.entropy_and_dlogits(probs)
        ent_w = lam * cfg.vat_entropy_weight
        grads = _add_grads(grads, nn.backward_from_dlogits(params, cache, dlogits * ent_w))
        return loss + ent_w * ent, grads, 1.0
    raise ConfigError(f"unknown method {method!r}")


def initial_params(cfg: TrainerConfig, dim: int, n_classes: int) -> nn.ModelParams:
    """The exact initialization train() will use for this config."""
    init_seed = np.random.SeedSequence(cfg.seed).spawn(3)[0]
    return nn.init_params((dim, *cfg.hidden, n_classes), init_seed,
                          activation=cfg.activation)


def train(view: TrainView, cfg: TrainerConfig) -> TrainResult:
    """Run K epochs (one pass over U each) and record the prediction trace."""
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    init_seed, batch_seed, aug_seed = ss.spawn(3)
    rng_batch = np.random.default_rng(batch_seed)
    rng_aug = np.random.default_rng(aug_seed)

    params = nn.init_params((view.dim, *cfg.hidden, view.n_classes), init_seed,
                            activation=cfg.activation)
    ema = nn.EmaParams(params, cfg.ema_decay)
    opt = nn.MomentumSgd(cfg.lr, cfg.momentum, cfg.weight_decay)
    weak = Augmenter("weak", cfg.weak_sigma)
    strong = Augmenter("strong", cfg.strong_sigma, cfg.strong_dropout)

    n_u = len(view.unlabeled_x)
    n_l = len(view.labeled_x)
    K = cfg.epochs
    lb = n_l if cfg.labeled_batch in (0, None) else min(cfg.labeled_batch, n_l)
    warm_epochs = max(1, round(cfg.warmup_frac * K))

    trace = np.empty((K, n_u, view.n_classes)) if cfg.record_trace else None
    metrics: dict[str, list] = {"test_acc": [], "sup_loss": [], "unsup_loss": [],
                                "mask_rate": []}

    for epoch in range(K):
        lam = cfg.lambda_u * min(1.0, (epoch + 1) / warm_epochs)
        order = rng_batch.permutation(n_u)
        sup_losses, unsup_losses, mask_rates = [], [], []
        for bidx, start in enumerate(range(0, n_u, cfg.unlabeled_batch)):
            Xb_u = view.unlabeled_x[order[start:start + cfg.unlabeled_batch]]
            if lb == n_l:
                Xb_l, yb_l = view.labeled_x, view.labeled_y
            else:
                pick = rng_batch.choice(n_l, size=lb, replace=False)
                Xb_l, yb_l = view.labeled_x[pick], view.labeled_y[pick]
            sup_loss, grads = nn.loss_and_grad(
                params, augment_batch(weak, Xb_l, rng_aug), yb_l, "cross_entropy")
            unsup_loss, mask_rate = 0.0, 0.0
            if lam > 0.0:
                unsup_loss, ugrads, mask_rate = _unlabeled_step(
                    params, ema, cfg, Xb_u, lam, weak, strong, rng_aug)
                grads = _add_grads(grads, ugrads)
            total = sup_loss + unsup_loss
            if not math.isfinite(total):
                raise TrainingDiverged("non-finite loss", seed=cfg.seed, epoch=epoch,
                                       batch=bidx)
            params = opt.step(params, grads)
            ema = nn.ema_update(ema, params)
            sup_losses.append(sup_loss)
            unsup_losses.append(unsup_loss)
            mask_rates.append(mask_rate)
        if cfg.record_trace:
            trace[epoch] = nn.forward_batch(params, view.unlabeled_x)
        test_pred = nn.forward_batch(params, view.test_x).argmax(axis=1)
        metrics["test_acc"].append(float((test_pred == view.test_y).mean()))
        metrics["sup_loss"].append(float(np.mean(sup_losses)))
        metrics["unsup_loss"].append(float(np.mean(unsup_losses)))
        metrics["mask_rate"].append(float(np.mean(mask_rates)))

    trace_obj = PredictionTrace(trace, cfg.method, cfg.seed) if cfg.record_trace else None
    return TrainResult(params, ema, trace_obj, metrics)
