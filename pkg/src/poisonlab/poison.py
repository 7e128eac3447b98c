"""Poison-set construction for unlabeled training data.

The attack inserts a bridge of interpolated points between a source example
``x_src`` (something the model will label with the desired class early in
training) and a target ``x_tgt`` (the example the adversary wants mislabeled).
Guessed-label training then walks the desired label down the bridge point by
point until it reaches the target.

Bridge spacing is controlled by a density on [0, 1]: points are placed at the
quantiles of the normalized density, so mass near 0 packs points close to the
source and mass near 1 packs them close to the target.  Endpoints are always
included exactly.

Also provided: a zero-knowledge variant that adds support paths from known
in-distribution points to a synthetic source, and a search for a
transfer-learning source (the minimally perturbed target that a frozen initial
model already labels with the desired class).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import BOX_HIGH, BOX_LOW
from .errors import BudgetError, ConfigError

GRID_POINTS = 10_001
BUDGET_FRACTION = 0.01

# Named interpolation densities. phi(x) is the standard normal pdf.
_PHI = lambda x: np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)

DENSITIES: dict = {
    "(1-x)^2": lambda x: (1.0 - x) ** 2,
    "phi(x+.5)": lambda x: _PHI(x + 0.5),
    "phi(x+.3)": lambda x: _PHI(x + 0.3),
    "x": lambda x: np.asarray(x, dtype=float),
    "x^4+(1-x)^4": lambda x: x ** 4 + (1.0 - x) ** 4,
    "sqrt(1-x)": lambda x: np.sqrt(np.clip(1.0 - x, 0.0, None)),
    "x^2+(1-x)^2": lambda x: x ** 2 + (1.0 - x) ** 2,
    "1": lambda x: np.ones_like(np.asarray(x, dtype=float)),
    "(1-x)^2+.5": lambda x: (1.0 - x) ** 2 + 0.5,
    "1-x": lambda x: 1.0 - x,
    "1.5-x": lambda x: 1.5 - x,
}


@dataclass(frozen=True)
class DensityFn:
    """A density on [0, 1] with its tabulated normalization and CDF."""

    name: str
    grid: np.ndarray      # (GRID_POINTS,) uniform nodes on [0, 1]
    pdf: np.ndarray       # normalized density values at the nodes
    cdf: np.ndarray       # trapezoid cumulative, cdf[0] = 0, cdf[-1] = 1


def normalize_density(fn, name: str = "") -> DensityFn:
    """Tabulate fn on a uniform grid and rescale to unit trapezoid integral.

    Accepts a callable or a registered density name.  Negative samples and
    zero total mass are rejected; isolated zeros (several registered densities
    vanish at one endpoint) are fine.
    """
    if isinstance(fn, DensityFn):
        return fn
    if isinstance(fn, str):
        name = name or fn
        if fn not in DENSITIES:
            raise ConfigError(f"unknown density {fn!r}; known: {sorted(DENSITIES)}")
        fn = DENSITIES[fn]
    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    vals = np.asarray(fn(grid), dtype=float)
    if vals.shape != grid.shape:
        raise ConfigError("density must map the grid to one value per node")
    if not np.isfinite(vals).all():
        raise ConfigError("density produced non-finite values on [0, 1]")
    if vals.min() < 0.0:
        raise ConfigError("density must be nonnegative on [0, 1]")
    dx = grid[1] - grid[0]
    segments = 0.5 * (vals[1:] + vals[:-1]) * dx
    total = float(segments.sum())
    if total <= 0.0:
        raise ConfigError("density integrates to zero on [0, 1]")
    pdf = vals / total
    cdf = np.concatenate([[0.0], np.cumsum(segments / total)])
    cdf[-1] = 1.0
    return DensityFn(name or getattr(fn, "__name__", "<custom>"), grid, pdf, cdf)


def cdf_at(density: DensityFn, x) -> np.ndarray:
    """Evaluate the tabulated cumulative F at x (piecewise linear)."""
    return np.interp(x, density.grid, density.cdf)


def sample_alphas(density, n: int) -> np.ndarray:
    """Deterministic quantile placement: alpha_i = F^{-1}(i / (n-1)).

    The first and last alphas are exactly 0 and 1; the sequence is strictly
    increasing for every registered density.
    """
    density = normalize_density(density)
    if n < 2:
        raise ConfigError("need at least 2 interpolation points")
    qs = np.arange(n) / (n - 1)
    cdf, grid = density.cdf, density.grid
    # invert the piecewise-linear cdf; flat pieces take the left edge
    hi = np.searchsorted(cdf, qs, side="left")
    hi = np.clip(hi, 1, len(cdf) - 1)
    lo = hi - 1
    width = cdf[hi] - cdf[lo]
    frac = np.where(width > 0, (qs - cdf[lo]) / np.where(width > 0, width, 1.0), 0.0)
    alphas = grid[lo] + frac * (grid[hi] - grid[lo])
    alphas[0], alphas[-1] = 0.0, 1.0
    if np.any(np.diff(alphas) <= 0):
        raise ConfigError(f"density {density.name!r} yields non-increasing alphas")
    return alphas


def interp(x_src: np.ndarray, x_tgt: np.ndarray, alpha: float) -> np.ndarray:
    """Linear interpolation x_src * (1 - alpha) + x_tgt * alpha."""
    x_src = np.asarray(x_src, dtype=float)
    x_tgt = np.asarray(x_tgt, dtype=float)
    if x_src.shape != x_tgt.shape:
        raise ConfigError("interpolation endpoints must share a shape")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    return x_src * (1.0 - alpha) + x_tgt * alpha


@dataclass(frozen=True)
class PoisonSpec:
    """Everything needed to build one poison set.

    ``path_fn(x_src, x_tgt, alpha)`` generalizes the straight line; it must
    hit the endpoints at alpha = 0 and 1.  ``support_sources`` switches on the
    zero-knowledge construction.
    """

    x_source: np.ndarray
    x_target: np.ndarray
    y_target: int
    n_points: int
    density: object = "1"
    sigma_p: float = 0.0
    path_fn: object = None
    support_sources: tuple = ()
    seed: int = 0

    def validate(self) -> None:
        if np.asarray(self.x_source).shape != np.asarray(self.x_target).shape:
            raise ConfigError("source and target dimensions differ")
        if self.n_points < 2:
            raise ConfigError("budget must allow at least 2 points")
        if self.sigma_p < 0:
            raise ConfigError("sigma_p must be >= 0")
        if self.y_target < 0:
            raise ConfigError("y_target must be a class index")


@dataclass(frozen=True)
class BridgeSet:
    points: np.ndarray   # (n, d), in alpha order
    alphas: np.ndarray   # (n,)


def check_budget(n_points: int, n_unlabeled: int, fraction: float = BUDGET_FRACTION,
                 override: bool = False) -> None:
    """Enforce |poison| < fraction * |U| unless explicitly overridden."""
    if override:
        return
    if n_points >= fraction * n_unlabeled:
        raise BudgetError(
            f"{n_points} poison points >= {fraction:.2%} of {n_unlabeled} unlabeled "
            f"examples; pass override to exceed the budget")


def _materialize(x_src, x_tgt, alphas, path_fn):
    if path_fn is None:
        return x_src[None, :] * (1.0 - alphas[:, None]) + x_tgt[None, :] * alphas[:, None]
    pts = np.stack([np.asarray(path_fn(x_src, x_tgt, a), dtype=float) for a in alphas])
    if not (np.allclose(pts[0], x_src) and np.allclose(pts[-1], x_tgt)):
        raise ConfigError("path_fn must reproduce the endpoints at alpha 0 and 1")
    return pts


def build_bridge(spec: PoisonSpec, n_unlabeled: int | None = None,
                 override: bool = False) -> BridgeSet:
    """Poison points along the source-to-target path at density quantiles."""
    spec.validate()
    if n_unlabeled is not None:
        check_budget(spec.n_points, n_unlabeled, override=override)
    x_src = np.asarray(spec.x_source, dtype=float)
    x_tgt = np.asarray(spec.x_target, dtype=float)
    alphas = sample_alphas(spec.density, spec.n_points)
    pts = _materialize(x_src, x_tgt, alphas, spec.path_fn)
    if spec.sigma_p > 0.0:
        rng = np.random.default_rng(spec.seed)
        pts = pts + rng.normal(scale=spec.sigma_p, size=pts.shape)
    return BridgeSet(np.clip(pts, BOX_LOW, BOX_HIGH), alphas)


@dataclass(frozen=True)
class ZeroKnowledgeSet:
    points: np.ndarray          # all poison points, main bridge first
    main: BridgeSet
    supports: tuple              # one BridgeSet per support path (x_hat -> x_src)


def build_zero_knowledge(spec: PoisonSpec, n_unlabeled: int | None = None,
                         override: bool = False) -> ZeroKnowledgeSet:
    """Main bridge plus one support path per known in-distribution point.

    The budget is split evenly across the 1 + len(support_sources) paths with
    the remainder going to the main bridge.  Every path needs at least two
    points.
    """
    spec.validate()
    if not spec.support_sources:
        bridge = build_bridge(spec, n_unlabeled, override)
        return ZeroKnowledgeSet(bridge.points, bridge, ())
    if n_unlabeled is not None:
        check_budget(spec.n_points, n_unlabeled, override=override)
    n_paths = 1 + len(spec.support_sources)
    base, extra = divmod(spec.n_points, n_paths)
    if base < 2:
        raise ConfigError(
            f"budget {spec.n_points} cannot give {n_paths} paths >= 2 points each")
    counts = [base + extra] + [base] * (n_paths - 1)
    main = build_bridge(
        PoisonSpec(spec.x_source, spec.x_target, spec.y_target, counts[0],
                   spec.density, spec.sigma_p, spec.path_fn, (), spec.seed))
    supports = []
    for k, x_hat in enumerate(spec.support_sources):
        supports.append(build_bridge(
            PoisonSpec(np.asarray(x_hat, dtype=float), spec.x_source, spec.y_target,
                       counts[1 + k], spec.density, spec.sigma_p, spec.path_fn,
                       (), spec.seed + 1 + k)))
    points = np.concatenate([main.points] + [s.points for s in supports])
    return ZeroKnowledgeSet(points, main, tuple(supports))


@dataclass(frozen=True)
class TransferResult:
    found: bool
    x_source: np.ndarray | None
    delta_norm: float
    steps_used: int


def find_transfer_source(params: nn.ModelParams, x_target: np.ndarray, y_target: int,
                         steps: int = 400, step_size: float = 0.05) -> TransferResult:
    """Smallest perturbation of the target that the given model labels y_target.

    Projected gradient descent on the cross-entropy toward y_target, followed
    by a bisection shrink along the found perturbation.  Returns an explicit
    failure result if no such point is reached within the step budget.
    """
    x_target = np.asarray(x_target, dtype=float)
    y_arr = np.array([y_target])

    def classified(x):
        return int(np.argmax(nn.forward(params, x))) == y_target

    if classified(x_target):
        return TransferResult(True, x_target.copy(), 0.0, 0)

    delta = np.zeros_like(x_target)
    hit = None
    used = steps
    for step in range(steps):
        x_cur = np.clip(x_target + delta, BOX_LOW, BOX_HIGH)
        if classified(x_cur):
            hit, used = x_cur, step
            break
        _, _, dx = nn.loss_and_grad(params, x_cur[None, :], y_arr, "cross_entropy",
                                    need_input_grad=True)
        delta = delta - step_size * dx[0]
    if hit is None:
        return TransferResult(False, None, math.inf, steps)

    # shrink along the ray while the classification survives
    full = hit - x_target
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if classified(np.clip(x_target + mid * full, BOX_LOW, BOX_HIGH)):
            hi = mid
        else:
            lo = mid
    best = np.clip(x_target + hi * full, BOX_LOW, BOX_HIGH)
    if not classified(best):
        best = hit
    return TransferResult(True, best, float(np.linalg.norm(best - x_target)), used)
