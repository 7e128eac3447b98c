"""Experiment orchestration: seeded trials, matrices, curves, retraining.

A trial is a pure function of its config: build the dataset, optionally plan
and inject a poison bridge into the unlabeled set, train, evaluate the attack,
run the selected defenses, and (optionally) write every artifact to a run
directory.  Matrices fan trials out over a process pool and aggregate success
counts per cell.

The paired protocol mirrors how the attack is usually reported: one
source/target pair per row (fixed by ``attack_seed``), varied training seeds,
and a no-poison control for every poisoned run.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import data, defense, methods, nn, poison
from .errors import ConfigError

DEFENSE_NAMES = ("influence", "collinear", "cluster")
ATTACK_MODES = ("bridge", "zero-knowledge", "transfer")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "two-moons"
    n_labeled: int = 40
    n_unlabeled: int = 5000
    n_test: int = 1000
    seed: int = 0
    params: dict | None = None

    def build(self) -> data.DatasetBundle:
        return data.make_dataset(self.kind, self.n_labeled, self.n_unlabeled,
                                 self.n_test, self.seed, self.params)


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "bridge"
    density: str = "1.5-x"
    budget_frac: float = 0.005
    sigma_p: float = 0.0
    n_supports: int = 2
    attack_seed: int = 0
    # eligible targets must clear this quantile of the labeled-1NN margins,
    # so a control model reliably gets them right
    margin_quantile: float = 0.0
    # bridge planning: how many isolated targets / scored pairs to consider,
    # and how long the vetting runs are.  rehearsal_epochs=0 skips vetting and
    # commits to the top-scored pair.
    n_target_candidates: int = 20
    n_pair_candidates: int = 12
    rehearsal_epochs: int = 150
    # when vetting, fall back to the other ramp shapes if no pair passes
    density_ladder: bool = True

    def validate(self) -> None:
        if self.mode not in ATTACK_MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if not 0.0 < self.budget_frac < 1.0:
            raise ConfigError("budget_frac must be in (0, 1)")
        if self.sigma_p < 0:
            raise ConfigError("sigma_p must be >= 0")
        if min(self.n_target_candidates, self.n_pair_candidates) < 1:
            raise ConfigError("candidate counts must be positive")
        if self.rehearsal_epochs < 0:
            raise ConfigError("rehearsal_epochs must be >= 0")


@dataclass(frozen=True)
class TrialConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    trainer: methods.TrainerConfig = field(default_factory=methods.TrainerConfig)
    attack: AttackConfig | None = field(default_factory=AttackConfig)
    defenses: tuple = ()
    seed: int = 0
    outdir: str | None = None
    cell: str = ""

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["trainer"]["hidden"] = list(self.trainer.hidden)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrialConfig":
        trainer = dict(raw.get("trainer", {}))
        if "hidden" in trainer:
            trainer["hidden"] = tuple(trainer["hidden"])
        attack = raw.get("attack")
        return cls(
            dataset=DatasetConfig(**raw.get("dataset", {})),
            trainer=methods.TrainerConfig(**trainer),
            attack=AttackConfig(**attack) if attack is not None else None,
            defenses=tuple(raw.get("defenses", ())),
            seed=raw.get("seed", 0),
            outdir=raw.get("outdir"),
            cell=raw.get("cell", ""),
        )


@dataclass(frozen=True)
class AttackPlan:
    x_source: np.ndarray
    x_target: np.ndarray
    y_target: int
    true_class: int
    target_test_index: int
    points: np.ndarray       # all injected points, main bridge first
    alphas: np.ndarray       # alphas of the main bridge
    n_main: int              # main-bridge point count (prefix of points)
    density: str = "1.5-x"   # ramp actually used (the ladder may switch it)
    n_rehearsals: int = 0    # vetting runs spent before committing
    vetted: bool = False     # True if a vetting run showed full propagation


def _labeled_margin(bundle: data.DatasetBundle) -> tuple[np.ndarray, np.ndarray]:
    """1-NN labeled vote and margin (other-class minus same-class distance)."""
    d2 = ((bundle.test_x[:, None, :] - bundle.labeled_x[None, :, :]) ** 2).sum(axis=2)
    d = np.sqrt(d2)
    same = np.where(bundle.labeled_y[None, :] == bundle.test_y[:, None], d, np.inf)
    other = np.where(bundle.labeled_y[None, :] != bundle.test_y[:, None], d, np.inf)
    margin = other.min(axis=1) - same.min(axis=1)
    vote = bundle.labeled_y[d.argmin(axis=1)]
    return vote, margin


def _isolation_ranked_targets(bundle: data.DatasetBundle, acfg: AttackConfig,
                              extra_ok: np.ndarray | None = None) -> list[int]:
    """Correctly-voted targets above the margin quantile, most isolated first.

    Isolation is the distance to the 5th-nearest unlabeled point; fringe
    points have the least benign mass arguing against a flip.
    """
    vote, margin = _labeled_margin(bundle)
    correct = vote == bundle.test_y
    if not correct.any():
        raise ConfigError("no eligible attack targets (dataset too noisy)")
    cut = np.quantile(margin[correct], acfg.margin_quantile)
    ok = correct & (margin >= cut) & (margin > 0)
    if extra_ok is not None:
        ok &= extra_ok
    d2 = ((bundle.test_x[:, None, :] - bundle.unlabeled_x[None, :, :]) ** 2).sum(axis=2)
    k = min(5, d2.shape[1]) - 1
    iso = np.sort(d2, axis=1)[:, k]
    ranked = [int(i) for i in np.argsort(-iso) if ok[i]]
    if not ranked:
        raise ConfigError("no eligible attack targets (dataset too noisy)")
    return ranked[: acfg.n_target_candidates]


def _scored_pairs(bundle: data.DatasetBundle, acfg: AttackConfig,
                  targets: list[int], n_points: int,
                  len_penalty: float = 0.15) -> list[tuple[int, int, int]]:
    """Rank (target, labeled source) pairs by bridge clearance from benign mass.

    The score rewards chords whose interior stays far from unlabeled points
    and mildly penalises length; up to two sources per target keep the list
    diverse.  Returns (target_index, source_index, y_star) tuples.
    """
    scored = []
    for t_idx in targets:
        x_t = bundle.test_x[t_idx]
        y_star = (int(bundle.test_y[t_idx]) + 1) % bundle.n_classes
        sources = np.flatnonzero(bundle.labeled_y == y_star)
        if sources.size == 0:
            continue
        for s_idx in sources:
            x_s = bundle.labeled_x[s_idx]
            probe = np.stack([poison.interp(x_s, x_t, a)
                              for a in np.linspace(0.0, 1.0, max(n_points, 9))])
            inner = probe[2:-2] if len(probe) >= 7 else probe[1:-1]
            d2 = ((inner[:, None, :] - bundle.unlabeled_x[None, :, :]) ** 2).sum(axis=2)
            clearance = float(np.sqrt(d2.min(axis=1)).min())
            length = float(np.linalg.norm(x_t - x_s))
            scored.append((clearance - len_penalty * length,
                           t_idx, int(s_idx), y_star))
    if not scored:
        raise ConfigError("no labeled source of the desired class")
    scored.sort(key=lambda r: (-r[0], r[1], r[2]))
    per_target: dict[int, int] = {}
    pairs = []
    for _, t_idx, s_idx, y_star in scored:
        if per_target.get(t_idx, 0) >= 2:
            continue
        per_target[t_idx] = per_target.get(t_idx, 0) + 1
        pairs.append((t_idx, s_idx, y_star))
        if len(pairs) == acfg.n_pair_candidates:
            break
    return pairs


def _bridge_for(bundle, acfg, t_idx, s_idx, y_star, n_points, density):
    spec = poison.PoisonSpec(bundle.labeled_x[s_idx], bundle.test_x[t_idx],
                             y_star, n_points, density, acfg.sigma_p,
                             seed=acfg.attack_seed)
    return poison.build_bridge(spec, n_unlabeled=len(bundle.unlabeled_x))


def _rehearse(bundle, trainer, bridge, x_tgt, y_star, epochs) -> tuple[int, float]:
    """Short poisoned run; returns (#bridge points won over, final target P(y*))."""
    merged = np.concatenate([bundle.unlabeled_x, bridge.points])
    view = data.TrainView(bundle.labeled_x, bundle.labeled_y, merged,
                          bundle.test_x, bundle.test_y, bundle.n_classes)
    cfg = dataclasses.replace(trainer, epochs=epochs, record_trace=True)
    result = methods.train(view, cfg)
    final = result.trace.probs[-1, len(bundle.unlabeled_x):, y_star]
    p_tgt = float(nn.forward(result.params, x_tgt)[y_star])
    return int((final >= 0.5).sum()), p_tgt


def plan_attack(bundle: data.DatasetBundle, acfg: AttackConfig,
                trainer: methods.TrainerConfig | None = None) -> AttackPlan:
    """Resolve an attack config into concrete poison points.

    Bridge mode plans like a careful attacker: train a clean model to find
    targets whose prediction is stable without poison, rank isolated fringe
    targets against every labeled source of the flip class by chord
    clearance, then vet candidates with short poisoned rehearsal runs until
    one shows full propagation.  Zero-knowledge and transfer modes reuse the
    static ranking but skip the vetting.
    """
    acfg.validate()
    rng = np.random.default_rng(acfg.attack_seed)
    n_u = len(bundle.unlabeled_x)
    n_points = max(2, int(acfg.budget_frac * n_u))

    if acfg.mode == "transfer":
        if trainer is None:
            raise ConfigError("transfer mode needs the trainer config (known init)")
        targets = _isolation_ranked_targets(bundle, acfg)
        t_idx = targets[0]
        x_tgt = bundle.test_x[t_idx]
        true_c = int(bundle.test_y[t_idx])
        y_star = (true_c + 1) % bundle.n_classes
        init = methods.initial_params(trainer, bundle.dim, bundle.n_classes)
        found = poison.find_transfer_source(init, x_tgt, y_star)
        if not found.found:
            raise ConfigError("transfer source search failed for this target")
        spec = poison.PoisonSpec(found.x_source, x_tgt, y_star, n_points,
                                 acfg.density, acfg.sigma_p, seed=acfg.attack_seed)
        bridge = poison.build_bridge(spec, n_unlabeled=n_u)
        return AttackPlan(found.x_source, x_tgt, y_star, true_c, t_idx,
                          bridge.points, bridge.alphas, len(bridge.points),
                          density=acfg.density)

    if acfg.mode == "zero-knowledge":
        targets = _isolation_ranked_targets(bundle, acfg)
        t_idx, s_idx, y_star = _scored_pairs(bundle, acfg, targets, n_points)[0]
        x_tgt = bundle.test_x[t_idx]
        true_c = int(bundle.test_y[t_idx])
        # the source is attacker-made, not a labeled-set member
        x_src = np.clip(bundle.labeled_x[s_idx]
                        + rng.normal(scale=0.02, size=bundle.dim),
                        data.BOX_LOW, data.BOX_HIGH)
        d2 = ((bundle.unlabeled_x - x_src) ** 2).sum(axis=1)
        supports = bundle.unlabeled_x[np.argsort(d2)[:acfg.n_supports]]
        spec = poison.PoisonSpec(x_src, x_tgt, y_star, n_points, acfg.density,
                                 acfg.sigma_p, support_sources=tuple(supports),
                                 seed=acfg.attack_seed)
        zk = poison.build_zero_knowledge(spec, n_unlabeled=n_u)
        return AttackPlan(x_src, x_tgt, y_star, true_c, t_idx, zk.points,
                          zk.main.alphas, len(zk.main.points),
                          density=acfg.density)

    if trainer is None:
        raise ConfigError("bridge mode needs the trainer config for planning")

    # a target only counts if the clean pipeline classifies it confidently,
    # so every poisoned-vs-control comparison is meaningful
    clean_cfg = dataclasses.replace(trainer, record_trace=False)
    clean = methods.train(bundle.train_view(), clean_cfg)
    clean_probs = nn.forward_batch(clean.params, bundle.test_x)
    stable = clean_probs[np.arange(len(bundle.test_y)), bundle.test_y] >= 0.6

    targets = _isolation_ranked_targets(bundle, acfg, extra_ok=stable)
    pairs = _scored_pairs(bundle, acfg, targets, n_points)

    ladder = [acfg.density]
    if acfg.density_ladder:
        ladder += [d for d in ("1.5-x", "1", "x") if d != acfg.density]

    chosen = None
    best = None
    n_rehearsals = 0
    if acfg.rehearsal_epochs > 0:
        for density in ladder:
            for t_idx, s_idx, y_star in pairs:
                bridge = _bridge_for(bundle, acfg, t_idx, s_idx, y_star,
                                     n_points, density)
                won, p_tgt = _rehearse(bundle, trainer, bridge,
                                       bundle.test_x[t_idx], y_star,
                                       acfg.rehearsal_epochs)
                n_rehearsals += 1
                key = (won, p_tgt)
                if best is None or key > best[0]:
                    best = (key, t_idx, s_idx, y_star, density)
                if won >= n_points - 1 and p_tgt >= 0.5:
                    chosen = (t_idx, s_idx, y_star, density, True)
                    break
            if chosen:
                break
        if chosen is None:
            chosen = best[1:] + (False,)
    else:
        t_idx, s_idx, y_star = pairs[0]
        chosen = (t_idx, s_idx, y_star, acfg.density, False)

    t_idx, s_idx, y_star, density, vetted = chosen
    bridge = _bridge_for(bundle, acfg, t_idx, s_idx, y_star, n_points, density)
    return AttackPlan(bundle.labeled_x[s_idx], bundle.test_x[t_idx], y_star,
                      int(bundle.test_y[t_idx]), t_idx, bridge.points,
                      bridge.alphas, len(bridge.points), density=density,
                      n_rehearsals=n_rehearsals, vetted=vetted)


@dataclass
class TrialResult:
    attack_success: bool
    misclassified: bool
    test_acc: float
    y_target: int | None
    true_class: int | None
    planted: np.ndarray          # merged-U indices of injected points
    alphas: np.ndarray | None
    first_cross: np.ndarray | None   # per main-bridge point, -1 = never
    spearman: float | None
    target_prob: np.ndarray | None   # P(y*) for the target by epoch
    defense_results: dict
    trace: methods.PredictionTrace | None
    wall_time: float
    density: str | None = None
    planner_rehearsals: int = 0
    vetted: bool = False
    plan: AttackPlan | None = None   # kept for reuse; not serialized
    params: nn.ModelParams | None = None  # final weights; not serialized

    def summary_dict(self) -> dict:
        """Deterministic, JSON-ready view (no timing)."""
        out = {
            "attack_success": self.attack_success,
            "misclassified": self.misclassified,
            "test_acc": self.test_acc,
            "y_target": self.y_target,
            "true_class": self.true_class,
            "planted": self.planted.tolist(),
            "alphas": None if self.alphas is None else self.alphas.tolist(),
            "first_cross": (None if self.first_cross is None
                            else self.first_cross.tolist()),
            "spearman": self.spearman,
            "density": self.density,
            "vetted": self.vetted,
            "defenses": {},
        }
        for name, res in sorted(self.defense_results.items()):
            out["defenses"][name] = {
                "flagged": res["flagged"].tolist(),
                "tpr": res["tpr"],
                "fpr": res["fpr"],
            }
        return out


def propagation_curves(trace, bridge_indices, y_star: int,
                       threshold: float = 0.5):
    """P(y*) per bridge point by epoch, plus first epochs crossing threshold.

    Returns (curves of shape (n_bridge, K), first_cross with -1 for never).
    """
    if trace is None:
        raise ConfigError("propagation analysis needs a recorded trace")
    probs = trace.probs if hasattr(trace, "probs") else np.asarray(trace)
    bridge_indices = np.asarray(bridge_indices, dtype=int)
    if bridge_indices.size and (bridge_indices.min() < 0
                                or bridge_indices.max() >= probs.shape[1]):
        raise ConfigError("bridge index outside the trace")
    curves = probs[:, bridge_indices, y_star].T
    crossed = curves >= threshold
    first = np.where(crossed.any(axis=1), crossed.argmax(axis=1), -1)
    return curves, first


def crossing_spearman(alphas, first_cross) -> float | None:
    """Rank correlation of crossing epoch vs alpha over observed crossings.

    Points first seen above threshold at the very first snapshot have no
    observable crossing epoch (they started there), so only crossings at
    epoch >= 1 enter; fewer than three observed crossings return None.
    """
    first_cross = np.asarray(first_cross)
    mask = first_cross >= 1
    if mask.sum() < 3:
        return None
    rho = spearmanr(np.asarray(alphas)[mask], first_cross[mask]).statistic
    return float(rho)


def _run_defenses(cfg: TrialConfig, merged_x, trace, planted) -> dict:
    out = {}
    n = len(merged_x)
    for name in cfg.defenses:
        if name == "influence":
            if trace is None:
                raise ConfigError(
                    "the influence defense needs a recorded trace; "
                    "set trainer.record_trace")
            report = defense.influence_report(trace)
            flagged = report.flagged
        elif name == "collinear":
            flagged = defense.detect_collinear(merged_x, seed=cfg.seed)
        elif name == "cluster":
            flagged = defense.agglomerative_filter(merged_x).removed_indices
        else:
            raise ConfigError(f"unknown defense {name!r}; known: {DEFENSE_NAMES}")
        tpr, fpr = defense.detection_rates(flagged, planted, n)
        out[name] = {"flagged": flagged, "tpr": tpr, "fpr": fpr}
    return out


def run_trial(cfg: TrialConfig, plan: AttackPlan | None = None) -> TrialResult:
    """Dataset -> poison -> train -> evaluate -> defend, all from one config.

    Pass a plan from a previous run of the same dataset/attack config to skip
    the planner (it is deterministic, so the result is unchanged).

    The trial seed overrides both the dataset seed and the trainer seed, so a
    paired-seed sweep redraws the data and the training randomness together.
    """
    start = time.monotonic()
    bundle = dataclasses.replace(cfg.dataset, seed=cfg.seed).build()
    trainer = dataclasses.replace(cfg.trainer, seed=cfg.seed)

    if cfg.attack is not None:
        if plan is None:
            plan = plan_attack(bundle, cfg.attack, trainer)
        n_u = len(bundle.unlabeled_x)
        merged_x = np.concatenate([bundle.unlabeled_x, plan.points])
        merged_truth = np.concatenate(
            [bundle.unlabeled_truth, np.full(len(plan.points), -1, dtype=int)])
        bundle = bundle.with_unlabeled(merged_x, merged_truth)
        planted = np.arange(n_u, n_u + len(plan.points))
    else:
        plan = None
        planted = np.arange(0)

    result = methods.train(bundle.train_view(), trainer)
    probs_test = nn.forward_batch(result.params, bundle.test_x)
    test_acc = float((probs_test.argmax(axis=1) == bundle.test_y).mean())

    if plan is not None:
        p_tgt = nn.forward(result.params, plan.x_target)
        success = int(p_tgt.argmax()) == plan.y_target
        mis = int(p_tgt.argmax()) != plan.true_class
        if result.trace is not None:
            main_idx = planted[:plan.n_main]
            _, first = propagation_curves(result.trace, main_idx, plan.y_target)
            rho = crossing_spearman(plan.alphas, first)
            target_prob = result.trace.probs[:, planted[plan.n_main - 1],
                                             plan.y_target]
        else:
            first, rho, target_prob = None, None, None
        trial = TrialResult(success, mis, test_acc, plan.y_target, plan.true_class,
                            planted, plan.alphas, first, rho, target_prob,
                            {}, result.trace, 0.0, density=plan.density,
                            planner_rehearsals=plan.n_rehearsals,
                            vetted=plan.vetted, plan=plan, params=result.params)
    else:
        trial = TrialResult(False, False, test_acc, None, None, planted,
                            None, None, None, None, {}, result.trace, 0.0,
                            params=result.params)

    trial.defense_results = _run_defenses(
        cfg, bundle.unlabeled_x, result.trace, planted)
    trial.wall_time = time.monotonic() - start

    if cfg.outdir is not None:
        _write_artifacts(cfg, bundle, plan, trial)
    return trial


def _write_artifacts(cfg, bundle, plan, trial):
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    data.save_bundle(bundle, out / "dataset.txt")
    if plan is not None:
        data.save_poison_set(plan.points, out / "poison.txt", bundle.dim,
                             bundle.n_classes, seed=cfg.attack.attack_seed)
    if trial.trace is not None:
        trial.trace.save(out / "trace.txt")
    (out / "result.json").write_text(
        json.dumps(trial.summary_dict(), indent=2, sort_keys=True) + "\n")
    (out / "meta.json").write_text(json.dumps(
        {"wall_time_s": trial.wall_time, "written_at": time.time()}) + "\n")


def clean_and_retrain(cfg: TrialConfig, flagged,
                      plan: AttackPlan | None = None) -> TrialResult:
    """Drop the flagged unlabeled examples and rerun the same trial.

    Flag indices refer to the merged unlabeled set of the original run.
    Defenses are not rerun on the cleaned data.  A plan from the original
    run skips the (deterministic) planner.
    """
    bundle = dataclasses.replace(cfg.dataset, seed=cfg.seed).build()
    trainer = dataclasses.replace(cfg.trainer, seed=cfg.seed)
    if cfg.attack is not None:
        if plan is None:
            plan = plan_attack(bundle, cfg.attack, trainer)
        merged_x = np.concatenate([bundle.unlabeled_x, plan.points])
        merged_truth = np.concatenate(
            [bundle.unlabeled_truth, np.full(len(plan.points), -1, dtype=int)])
    else:
        plan = None
        merged_x, merged_truth = bundle.unlabeled_x, bundle.unlabeled_truth
    keep = np.setdiff1d(np.arange(len(merged_x)), np.asarray(flagged, dtype=int))
    bundle = bundle.with_unlabeled(merged_x[keep], merged_truth[keep])

    result = methods.train(bundle.train_view(), trainer)
    probs_test = nn.forward_batch(result.params, bundle.test_x)
    test_acc = float((probs_test.argmax(axis=1) == bundle.test_y).mean())
    if plan is not None:
        p_tgt = nn.forward(result.params, plan.x_target)
        success = int(p_tgt.argmax()) == plan.y_target
        mis = int(p_tgt.argmax()) != plan.true_class
        return TrialResult(success, mis, test_acc, plan.y_target, plan.true_class,
                           np.arange(0), None, None, None, None, {}, None, 0.0,
                           params=result.params)
    return TrialResult(False, False, test_acc, None, None, np.arange(0),
                       None, None, None, None, {}, None, 0.0,
                       params=result.params)


def paired_trials(base: TrialConfig, n: int = 8) -> list[tuple[TrialConfig, TrialConfig]]:
    """(poisoned, control) config pairs sharing seeds; the attack pair is
    fixed by the base config's attack_seed, as in the paired-seed protocol."""
    if base.attack is None:
        raise ConfigError("paired trials need an attack in the base config")
    out = []
    for i in range(n):
        poisoned = dataclasses.replace(base, seed=base.seed + i)
        control = dataclasses.replace(poisoned, attack=None)
        out.append((poisoned, control))
    return out


@dataclass
class MatrixResult:
    results: list                       # TrialResult or error string, grid order
    cells: dict                         # cell -> (successes, trials, failures)

    def table(self) -> str:
        lines = ["cell success/trials"]
        for cell, (k, n, errs) in sorted(self.cells.items()):
            note = f"  ({errs} failed)" if errs else ""
            lines.append(f"{cell or '-'} {k}/{n}{note}")
        return "\n".join(lines) + "\n"


def _trial_worker(raw: dict):
    try:
        return run_trial(TrialConfig.from_dict(raw))
    except Exception as exc:  # per-cell failures must not kill the matrix
        return f"error: {type(exc).__name__}: {exc}"


def run_matrix(grid: list[TrialConfig], parallelism: int = 1) -> MatrixResult:
    """Run every config, never aborting on per-trial failures."""
    if not grid:
        raise ConfigError("empty trial grid")
    raws = [cfg.to_dict() for cfg in grid]
    if parallelism <= 1:
        results = [_trial_worker(raw) for raw in raws]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_trial_worker, raws))
    cells: dict = {}
    for cfg, res in zip(grid, results):
        k, n, errs = cells.get(cfg.cell, (0, 0, 0))
        if isinstance(res, str):
            cells[cfg.cell] = (k, n + 1, errs + 1)
        else:
            cells[cfg.cell] = (k + int(res.attack_success), n + 1, errs)
    return MatrixResult(results, cells)


# ---------------------------------------------------------------------------
# run-directory reports


_REPORT_COLUMNS = ("run", "cell", "seed", "method", "dataset", "density",
                   "attack_success", "test_acc", "spearman")


@dataclass(frozen=True)
class RunReport:
    """Aggregated view over saved run directories."""

    rows: list                 # one dict per run, _REPORT_COLUMNS keys

    def table(self) -> str:
        """Success counts per cell, like a live matrix."""
        cells: dict = {}
        for row in self.rows:
            k, n = cells.get(row["cell"], (0, 0))
            cells[row["cell"]] = (k + int(row["attack_success"]), n + 1)
        lines = ["cell success/trials"]
        for cell, (k, n) in sorted(cells.items()):
            lines.append(f"{cell or '-'} {k}/{n}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = [",".join(_REPORT_COLUMNS)]
        for row in self.rows:
            lines.append(",".join("" if row[c] is None else str(row[c])
                                  for c in _REPORT_COLUMNS))
        return "\n".join(lines) + "\n"


def summarize_runs(run_dirs) -> RunReport:
    """Collect result.json/config.json pairs from run directories."""
    rows = []
    for raw_dir in run_dirs:
        run = Path(raw_dir)
        result_path = run / "result.json"
        config_path = run / "config.json"
        if not result_path.exists():
            raise ConfigError(f"{run}: no result.json (not a run directory?)")
        result = json.loads(result_path.read_text())
        config = (json.loads(config_path.read_text())
                  if config_path.exists() else {})
        rows.append({
            "run": run.name,
            "cell": config.get("cell", ""),
            "seed": config.get("seed"),
            "method": config.get("trainer", {}).get("method"),
            "dataset": config.get("dataset", {}).get("kind"),
            "density": result.get("density"),
            "attack_success": bool(result.get("attack_success", False)),
            "test_acc": result.get("test_acc"),
            "spearman": result.get("spearman"),
        })
    rows.sort(key=lambda r: (r["cell"], r["seed"] if r["seed"] is not None else -1,
                             r["run"]))
    return RunReport(rows)
