"""Seeded synthetic datasets, labeled/unlabeled splits, and augmentation.

All features live in the box [-1, 1]^d.  Unlabeled ground truth is retained on
the bundle for evaluation only; training code receives a TrainView, which
simply does not carry it.

Dataset text format (one file per bundle or poison set)::

    poisonlab-dataset 1
    kind two-moons
    dim 4
    classes 2
    seed 7
    box -1.0 1.0
    counts labeled=40 unlabeled=5000 test=1000
    ---
    <split> <f0> ... <fd-1> <label or ->

Splits are ``labeled``, ``unlabeled``, ``test``, ``poison``.  Floats are
written with repr so a round trip is bit-exact.  A label on an ``unlabeled``
line is the privately retained ground truth; ``poison`` lines carry ``-``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError

BOX_LOW = -1.0
BOX_HIGH = 1.0

DATASET_KINDS = ("two-moons", "gaussian-blobs", "ring", "raster-digits-lite")

_FORMAT_MAGIC = "poisonlab-dataset 1"


@dataclass(frozen=True)
class TrainView:
    """What a trainer is allowed to see: no unlabeled ground truth."""

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int

    @property
    def dim(self) -> int:
        return self.labeled_x.shape[1]


@dataclass(frozen=True)
class DatasetBundle:
    kind: str
    seed: int
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_truth: np.ndarray  # evaluation only; never exposed to trainers
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int

    @property
    def dim(self) -> int:
        return self.labeled_x.shape[1]

    def train_view(self) -> TrainView:
        return TrainView(
            self.labeled_x,
            self.labeled_y,
            self.unlabeled_x,
            self.test_x,
            self.test_y,
            self.n_classes,
        )

    def with_unlabeled(self, unlabeled_x: np.ndarray, unlabeled_truth: np.ndarray) -> "DatasetBundle":
        """Copy of the bundle with a replaced unlabeled set (e.g. after poisoning)."""
        return replace(self, unlabeled_x=unlabeled_x, unlabeled_truth=unlabeled_truth)


def _balanced_counts(n: int, n_classes: int) -> np.ndarray:
    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    return counts


def _moons_points(n_per_class: np.ndarray, rng: np.random.Generator, noise: float,
                  ambient_dim: int, ambient_scale: float,
                  ambient_shift: float) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for cls, n in enumerate(n_per_class):
        t = rng.uniform(0.0, np.pi, size=n)
        if cls == 0:
            pts = np.stack([np.cos(t), np.sin(t)], axis=1)
        else:
            pts = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        xs.append(pts)
        ys.append(np.full(n, cls, dtype=int))
    pts = np.concatenate(xs)
    labels = np.concatenate(ys)
    # map the raw moons (x in [-1,2], y in [-0.5,1]) into the feature box
    pts = (pts - np.array([0.5, 0.25])) * 0.6
    pts = pts + rng.normal(0.0, noise, size=pts.shape)
    if ambient_dim > 0:
        # weakly class-correlated extra coordinates: like image channels, they
        # carry a little signal each, so a trained model cannot ignore them
        means = np.where(labels[:, None] == 0, -ambient_shift, ambient_shift)
        extra = rng.normal(0.0, ambient_scale, size=(pts.shape[0], ambient_dim))
        pts = np.concatenate([pts, means + extra], axis=1)
    return pts, labels


def _blob_points(n_per_class: np.ndarray, rng: np.random.Generator, dim: int,
                 spread: float) -> tuple[np.ndarray, np.ndarray]:
    n_classes = len(n_per_class)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = 0.7 * np.cos(angles)
    means[:, 1 % dim] = 0.7 * np.sin(angles)
    xs, ys = [], []
    for cls, n in enumerate(n_per_class):
        xs.append(means[cls] + rng.normal(0.0, spread, size=(n, dim)))
        ys.append(np.full(n, cls, dtype=int))
    return np.concatenate(xs), np.concatenate(ys)


def _ring_points(n_per_class: np.ndarray, rng: np.random.Generator,
                 noise: float) -> tuple[np.ndarray, np.ndarray]:
    radii = (0.3, 0.8)
    xs, ys = [], []
    for cls, n in enumerate(n_per_class):
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        r = radii[cls % 2] + rng.normal(0.0, noise, size=n)
        xs.append(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))
        ys.append(np.full(n, cls, dtype=int))
    return np.concatenate(xs), np.concatenate(ys)


# 8x8 glyph templates: box, bar, stripes, cross
_GLYPHS = {
    0: ["11111111", "10000001", "10000001", "10000001",
        "10000001", "10000001", "10000001", "11111111"],
    1: ["00011000", "00011000", "00011000", "00011000",
        "00011000", "00011000", "00011000", "00011000"],
    2: ["11111111", "00000000", "11111111", "00000000",
        "11111111", "00000000", "11111111", "00000000"],
    3: ["10000001", "01000010", "00100100", "00011000",
        "00011000", "00100100", "01000010", "10000001"],
}


def _raster_points(n_per_class: np.ndarray, rng: np.random.Generator,
                   jitter: float) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for cls, n in enumerate(n_per_class):
        rows = _GLYPHS[cls % len(_GLYPHS)]
        template = np.array([[1.0 if ch == "1" else -1.0 for ch in row] for row in rows])
        flat = template.reshape(-1)
        gain = rng.uniform(0.6, 1.0, size=(n, 1))
        pts = gain * flat + rng.normal(0.0, jitter, size=(n, 64))
        xs.append(pts)
        ys.append(np.full(n, cls, dtype=int))
    return np.concatenate(xs), np.concatenate(ys)


_DEFAULTS = {
    "two-moons": {"noise": 0.12, "ambient_dim": 6, "ambient_scale": 0.25,
                  "ambient_shift": 0.1, "n_classes": 2},
    "gaussian-blobs": {"dim": 2, "spread": 0.08, "n_classes": 2},
    "ring": {"noise": 0.04, "n_classes": 2},
    "raster-digits-lite": {"jitter": 0.12, "n_classes": 4},
}


def _generate(kind: str, n_per_class: np.ndarray, rng: np.random.Generator, p: dict):
    if kind == "two-moons":
        return _moons_points(n_per_class, rng, p["noise"], p["ambient_dim"],
                             p["ambient_scale"], p["ambient_shift"])
    if kind == "gaussian-blobs":
        return _blob_points(n_per_class, rng, int(p["dim"]), p["spread"])
    if kind == "ring":
        return _ring_points(n_per_class, rng, p["noise"])
    if kind == "raster-digits-lite":
        return _raster_points(n_per_class, rng, p["jitter"])
    raise ConfigError(f"unknown dataset kind {kind!r}")


def make_dataset(kind: str, n_labeled: int, n_unlabeled: int, n_test: int,
                 seed: int, params: dict | None = None) -> DatasetBundle:
    """Deterministic bundle with a class-balanced labeled split.

    Labeled, unlabeled, and test examples are drawn independently from the same
    generator stream, so the splits are disjoint by construction.
    """
    if kind not in DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if min(n_labeled, n_unlabeled, n_test) <= 0:
        raise ConfigError("split sizes must be positive")
    p = dict(_DEFAULTS[kind])
    p.update(params or {})
    n_classes = int(p["n_classes"])
    rng = np.random.default_rng(seed)

    lx, ly = _generate(kind, _balanced_counts(n_labeled, n_classes), rng, p)
    perm = rng.permutation(n_labeled)
    lx, ly = lx[perm], ly[perm]

    ucounts = rng.multinomial(n_unlabeled, np.full(n_classes, 1.0 / n_classes))
    ux, uy = _generate(kind, ucounts, rng, p)
    perm = rng.permutation(n_unlabeled)
    ux, uy = ux[perm], uy[perm]

    tcounts = rng.multinomial(n_test, np.full(n_classes, 1.0 / n_classes))
    tx, ty = _generate(kind, tcounts, rng, p)
    perm = rng.permutation(n_test)
    tx, ty = tx[perm], ty[perm]

    clip = lambda a: np.clip(a, BOX_LOW, BOX_HIGH)
    return DatasetBundle(kind, seed, clip(lx), ly, clip(ux), uy, clip(tx), ty, n_classes)


# ---------------------------------------------------------------------------
# Augmentation

@dataclass(frozen=True)
class Augmenter:
    """Stochastic perturbation; 'strong' additionally zeroes random features."""

    kind: str  # "weak" | "strong"
    sigma: float
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ConfigError(f"unknown augmenter kind {self.kind!r}")
        if self.kind == "weak" and self.dropout:
            raise ConfigError("feature dropout is a strong-augmentation knob")


def augment_batch(aug: Augmenter, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = X + rng.normal(0.0, aug.sigma, size=X.shape) if aug.sigma > 0 else X.copy()
    if aug.dropout > 0:
        mask = rng.random(X.shape) < aug.dropout
        out = np.where(mask, 0.0, out)
    return np.clip(out, BOX_LOW, BOX_HIGH)


def augment(aug: Augmenter, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Perturbed copy of a single feature vector; the input is not modified."""
    return augment_batch(aug, np.asarray(x, dtype=float)[None, :], rng)[0]


# ---------------------------------------------------------------------------
# Text format

def _format_example(split: str, features: np.ndarray, label) -> str:
    feats = " ".join(repr(float(v)) for v in features)
    lab = "-" if label is None else str(int(label))
    return f"{split} {feats} {lab}"


def write_examples(path, header: dict, sections: dict[str, tuple[np.ndarray, np.ndarray | None]]) -> None:
    """Write splits to the dataset text format; see the module docstring."""
    lines = [_FORMAT_MAGIC]
    for key in ("kind", "dim", "classes", "seed"):
        lines.append(f"{key} {header[key]}")
    lines.append(f"box {repr(float(BOX_LOW))} {repr(float(BOX_HIGH))}")
    counts = " ".join(f"{split}={len(x)}" for split, (x, _) in sections.items())
    lines.append(f"counts {counts}")
    lines.append("---")
    for split, (X, labels) in sections.items():
        for i in range(len(X)):
            lab = None if labels is None else (None if labels[i] < 0 else labels[i])
            lines.append(_format_example(split, X[i], lab))
    Path(path).write_text("\n".join(lines) + "\n")


def read_examples(path) -> tuple[dict, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Parse the dataset text format; labels are -1 where the file had '-'."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _FORMAT_MAGIC:
        raise ConfigError(f"{path}: not a poisonlab dataset file")
    header: dict = {}
    i = 1
    while text[i] != "---":
        key, _, value = text[i].partition(" ")
        header[key] = value
        i += 1
    dim = int(header["dim"])
    rows: dict[str, list] = {}
    labels: dict[str, list] = {}
    for line in text[i + 1:]:
        if not line.strip():
            continue
        parts = line.split()
        split, feats, lab = parts[0], parts[1:1 + dim], parts[1 + dim]
        rows.setdefault(split, []).append([float(v) for v in feats])
        labels.setdefault(split, []).append(-1 if lab == "-" else int(lab))
    out = {}
    for split in rows:
        out[split] = (np.array(rows[split]), np.array(labels[split], dtype=int))
    return header, out


def save_bundle(bundle: DatasetBundle, path) -> None:
    header = {"kind": bundle.kind, "dim": bundle.dim, "classes": bundle.n_classes,
              "seed": bundle.seed}
    sections = {
        "labeled": (bundle.labeled_x, bundle.labeled_y),
        "unlabeled": (bundle.unlabeled_x, bundle.unlabeled_truth),
        "test": (bundle.test_x, bundle.test_y),
    }
    write_examples(path, header, sections)


def load_bundle(path) -> DatasetBundle:
    header, sections = read_examples(path)
    lx, ly = sections["labeled"]
    ux, uy = sections["unlabeled"]
    tx, ty = sections["test"]
    return DatasetBundle(header["kind"], int(header["seed"]), lx, ly, ux, uy, tx, ty,
                         int(header["classes"]))


def save_poison_set(X: np.ndarray, path, dim: int, n_classes: int, seed: int = 0) -> None:
    """Poison sets ship in the same format under the 'poison' split tag."""
    header = {"kind": "poison-set", "dim": dim, "classes": n_classes, "seed": seed}
    write_examples(path, header, {"poison": (X, None)})


def load_poison_set(path) -> np.ndarray:
    _, sections = read_examples(path)
    return sections["poison"][0]
