"""Dataset-cleaning defenses against interpolation-bridge poisoning.

Three detectors over the merged unlabeled set:

- ``detect_collinear``: geometric scan for runs of points lying on a common
  line segment.  Catches exact bridges; degrades once per-point jitter
  exceeds the tolerance.
- ``agglomerative_filter``: average-linkage clustering; a dense bridge
  condenses into the largest cluster, which becomes the removal candidate.
- ``influence_report``: training-dynamics monitor.  Bridge points drag each
  other's predictions along, so a poisoned example has some neighbor whose
  prediction trajectory anticipates its own almost exactly; benign examples
  do not.  Scored by the lag-one window distance, flagged below the largest
  gap in log-score space.

None of these read provenance tags; they see exactly what a defender would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage as scipy_linkage
from scipy.spatial.distance import pdist

from .errors import ConfigError

_REPORT_MAGIC = "poisonlab-influence-report 1"

# floor for log-score gap analysis; a score of exactly zero means a perfect
# trajectory twin and should land at the bottom of the scale, not at -inf
_SCORE_FLOOR = 1e-30


# ---------------------------------------------------------------------------
# collinearity scan


def _k_nearest(U: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors per row (blocked, exact)."""
    n = len(U)
    sq = (U * U).sum(axis=1)
    out = np.empty((n, k), dtype=int)
    for start in range(0, n, 512):
        stop = min(start + 512, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (U[start:stop] @ U.T)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.argpartition(d2, k, axis=1)[:, :k]
    return out


def _line_distances(U, a, b):
    """Distance of every row to the infinite line through a and b, plus the
    projection parameter t (t=0 at a, t=1 at b)."""
    v = b - a
    denom = float(v @ v)
    rel = U - a
    t = (rel @ v) / denom
    d2 = (rel * rel).sum(axis=1) - t * t * denom
    return np.sqrt(np.clip(d2, 0.0, None)), t


def _segment_hits(U, a, b, eps):
    dist, t = _line_distances(U, a, b)
    on = dist <= eps
    below = t < 0.0
    above = t > 1.0
    v = b - a
    if below.any():
        dist = np.where(below, np.linalg.norm(U - a, axis=1), dist)
    if above.any():
        dist = np.where(above, np.linalg.norm(U - b, axis=1), dist)
    return (dist <= eps), on


def _local_collinear_pairs(U, neighbors, eps):
    """Candidate (point, neighbor) pairs whose line already carries a third
    near-collinear point inside the neighborhood.

    A bridge interior point sits between its two bridge neighbors, so every
    interior point nominates its own segment here no matter how dense the
    benign background is.
    """
    candidates = []
    for u in range(len(U)):
        rel = U[neighbors[u]] - U[u]
        vv = (rel * rel).sum(axis=1)
        ok = vv > 0
        if not ok.any():
            continue
        dots = rel @ rel.T
        d2 = np.where(ok[None, :],
                      vv[:, None] - dots ** 2 / np.where(ok, vv, 1.0)[None, :],
                      np.inf)
        near_line = d2 <= eps * eps
        np.fill_diagonal(near_line, False)
        for j in np.flatnonzero(ok & (near_line.sum(axis=0) >= 1)):
            candidates.append((u, int(neighbors[u, j])))
    return candidates


def _grow_and_test(U, i, j, eps, m, flagged):
    a, b = U[i], U[j]
    if not (a - b).any():
        return
    # grow to the extremes of the collinear run (distance to the line, not
    # the segment, so an adjacent seed pair still expands to the full bridge)
    for _ in range(8):
        dist, t = _line_distances(U, a, b)
        on = dist <= eps
        if on.sum() < 2:
            break
        ts = t[on]
        idx = np.flatnonzero(on)
        na, nb = U[idx[ts.argmin()]], U[idx[ts.argmax()]]
        if np.array_equal(na, a) and np.array_equal(nb, b):
            break
        a, b = na, nb
    hits, _ = _segment_hits(U, a, b, eps)
    if hits.sum() >= m:
        flagged |= hits


def detect_collinear(U: np.ndarray, eps: float = 1e-4, m: int = 4,
                     trials: int = 200, seed: int = 0) -> np.ndarray:
    """Flag points lying on a shared segment with at least m members.

    Scan policy: each point screens its 24 nearest neighbors for a locally
    collinear triple and nominates the matching segments (this finds a
    planted bridge deterministically whenever a few bridge points appear in
    each other's neighborhoods), plus ``trials`` uniformly random pairs for
    anything sparser.  Each nominated segment grows along its line to the
    extreme collinear points before the run-length test, so a short seed
    recovers the whole bridge.
    """
    U = np.asarray(U, dtype=float)
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    if m < 3:
        raise ConfigError("min-run m must be >= 3")
    n = len(U)
    flagged = np.zeros(n, dtype=bool)
    if n < m:
        return np.flatnonzero(flagged)
    rng = np.random.default_rng(seed)
    neighbors = _k_nearest(U, min(24, n - 1))

    seen = set()
    for i, j in _local_collinear_pairs(U, neighbors, eps):
        key = (i, j) if i < j else (j, i)
        if key in seen:
            continue
        seen.add(key)
        _grow_and_test(U, i, j, eps, m, flagged)
    for _ in range(trials):
        i, j = rng.choice(n, size=2, replace=False)
        _grow_and_test(U, int(i), int(j), eps, m, flagged)
    return np.flatnonzero(flagged)


# ---------------------------------------------------------------------------
# agglomerative filter


@dataclass(frozen=True)
class ClusterReport:
    labels: np.ndarray        # cluster id per example, 1-based
    threshold: float
    removed_cluster: int      # id of the largest cluster (removal candidate)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max())

    @property
    def removed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == self.removed_cluster)


def agglomerative_filter(U: np.ndarray, linkage: str = "average",
                         stop_threshold: float = 0.1) -> ClusterReport:
    """Bottom-up average-linkage clustering until the merge distance exceeds
    the stop threshold; the largest cluster is the removal candidate."""
    U = np.asarray(U, dtype=float)
    if len(U) < 2:
        raise ConfigError("need at least 2 examples to cluster")
    if linkage != "average":
        raise ConfigError("only average linkage is supported")
    if stop_threshold < 0:
        raise ConfigError("stop threshold must be >= 0")
    Z = scipy_linkage(pdist(U), method="average")
    labels = fcluster(Z, t=stop_threshold, criterion="distance")
    sizes = np.bincount(labels)
    removed = int(sizes[1:].argmax()) + 1
    return ClusterReport(labels, stop_threshold, removed)


# ---------------------------------------------------------------------------
# training-dynamics influence


def _as_probs(trace) -> np.ndarray:
    probs = getattr(trace, "probs", trace)
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 3:
        raise ConfigError("trace must have shape (epochs, examples, classes)")
    return probs


def prediction_deltas(trace) -> np.ndarray:
    """Per-epoch prediction differences, shape (K-1, |U|, C)."""
    probs = _as_probs(trace)
    if probs.shape[0] < 2:
        raise ConfigError("need at least 2 epochs for deltas")
    return np.diff(probs, axis=0)


def _window_matrices(probs):
    """Lag-one trajectory windows as flat rows.

    Row i of A is [df_0(u_i), ..., df_{K-3}(u_i), f_{K-2}(u_i)]; row j of B is
    the same window one epoch later.  Both have length (K-1) * C.
    """
    K, n, C = probs.shape
    if K < 3:
        raise ConfigError("need at least 3 epochs for influence windows")
    deltas = np.diff(probs, axis=0)
    A = np.concatenate(
        [deltas[:K - 2].transpose(1, 0, 2).reshape(n, -1), probs[K - 2]], axis=1)
    B = np.concatenate(
        [deltas[1:K - 1].transpose(1, 0, 2).reshape(n, -1), probs[K - 1]], axis=1)
    return A, B


def influence(trace, i: int, j: int) -> float:
    """Squared distance between u_i's window and u_j's lag-one window.

    Small values mean u_j's predictions retrace u_i's one epoch later, the
    signature of label propagation down a bridge.
    """
    probs = _as_probs(trace)
    K, n, _ = probs.shape
    if not (0 <= i < n and 0 <= j < n):
        raise ConfigError("example index out of range")
    if K < 3:
        raise ConfigError("need at least 3 epochs for influence windows")
    mu_i = [probs[t + 1, i] - probs[t, i] for t in range(K - 2)] + [probs[K - 2, i]]
    mu_j = [probs[t + 1, j] - probs[t, j] for t in range(1, K - 1)] + [probs[K - 1, j]]
    diff = np.concatenate(mu_i) - np.concatenate(mu_j)
    return float(diff @ diff)


@dataclass(frozen=True)
class InfluenceReport:
    scores: np.ndarray       # avg influence per example, nonnegative
    flagged: np.ndarray      # sorted indices below the threshold
    threshold: float         # score cut (nan when nothing was flagged)
    k: int

    def save(self, path) -> None:
        lines = [_REPORT_MAGIC,
                 f"examples {len(self.scores)}",
                 f"k {self.k}",
                 f"threshold {self.threshold!r}",
                 f"flagged {len(self.flagged)}",
                 "---"]
        flag_set = set(self.flagged.tolist())
        for idx, score in enumerate(self.scores.tolist()):
            lines.append(f"{idx} {score!r} {1 if idx in flag_set else 0}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "InfluenceReport":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != _REPORT_MAGIC:
            raise ConfigError(f"{path}: not an influence report")
        header = {}
        i = 1
        while lines[i] != "---":
            key, _, value = lines[i].partition(" ")
            header[key] = value
            i += 1
        scores, flagged = [], []
        for line in lines[i + 1:]:
            if not line.strip():
                continue
            idx, score, bit = line.split()
            scores.append(float(score))
            if bit == "1":
                flagged.append(int(idx))
        return cls(np.array(scores), np.array(flagged, dtype=int),
                   float(header["threshold"]), int(header["k"]))


def influence_matrix(trace, block: int = 512) -> np.ndarray:
    """Full pairwise influence matrix, entry [i, j] = influence(trace, i, j).

    float32 output: rankings and decade-scale gaps survive the cast, and the
    |U| x |U| matrix stays affordable at the 10^4-example scale.  The diagonal
    (self-influence) is set to +inf so neighbor selection can skip it.
    """
    probs = _as_probs(trace)
    n = probs.shape[1]
    A, B = _window_matrices(probs)
    b_sq = (B * B).sum(axis=1)
    M = np.empty((n, n), dtype=np.float32)
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = ((A[start:stop] ** 2).sum(axis=1)[:, None] + b_sq[None, :]
                - 2.0 * A[start:stop] @ B.T)
        np.clip(rows, 0.0, None, out=rows)
        M[start:stop] = rows
    np.fill_diagonal(M, np.inf)
    return M


def influence_scores(trace, k: int = 5, block: int = 512, *,
                     matrix: np.ndarray | None = None) -> np.ndarray:
    """Mean influence to the k nearest (smallest-influence) neighbors.

    Pass a precomputed ``influence_matrix`` to amortize the pairwise pass
    when sweeping k.
    """
    probs = _as_probs(trace)
    n = probs.shape[1]
    if n <= k:
        raise ConfigError("need more examples than neighbors")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if matrix is not None:
        if matrix.shape != (n, n):
            raise ConfigError("matrix shape does not match the trace")
        part = np.partition(matrix, k - 1, axis=1)[:, :k]
        return part.mean(axis=1, dtype=np.float64)
    A, B = _window_matrices(probs)
    b_sq = (B * B).sum(axis=1)
    scores = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        M = ((A[start:stop] ** 2).sum(axis=1)[:, None] + b_sq[None, :]
             - 2.0 * A[start:stop] @ B.T)
        np.clip(M, 0.0, None, out=M)
        M[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.partition(M, k - 1, axis=1)[:, :k]
        scores[start:stop] = part.mean(axis=1)
    return scores


def influence_report(trace, k: int = 5, *,
                     matrix: np.ndarray | None = None) -> InfluenceReport:
    """Score every unlabeled example and flag the low outliers.

    Threshold: the largest gap between consecutive sorted log10 scores; a gap
    of at least one decade flags everything below it.  No gap that large
    means nothing is flagged.
    """
    scores = influence_scores(trace, k=k, matrix=matrix)
    order = np.argsort(scores, kind="stable")
    logs = np.log10(np.maximum(scores[order], _SCORE_FLOOR))
    gaps = logs[1:] - logs[:-1]
    best = int(gaps.argmax())
    if gaps[best] < 1.0:
        return InfluenceReport(scores, np.array([], dtype=int), math.nan, k)
    cut = best + 1
    threshold = 10.0 ** (0.5 * (logs[cut - 1] + logs[cut]))
    flagged = np.sort(order[:cut])
    return InfluenceReport(scores, flagged, float(threshold), k)


def detection_rates(flagged, planted, n_total: int) -> tuple[float, float]:
    """(true positive rate over planted, false positive rate over benign)."""
    flagged = set(np.asarray(flagged, dtype=int).tolist())
    planted = set(np.asarray(planted, dtype=int).tolist())
    benign = n_total - len(planted)
    tp = len(flagged & planted)
    fp = len(flagged - planted)
    tpr = tp / len(planted) if planted else 1.0
    fpr = fp / benign if benign else 0.0
    return tpr, fpr
