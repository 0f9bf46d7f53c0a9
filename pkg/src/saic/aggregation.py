"""Value-based observation aggregation and the quantities built on it.

The pipeline is: per-cell marginal value from a central Q-table, an exact
1-D k-median clustering of those values into at most ``2**R`` groups, and the
resulting deterministic message map.  Also here: the cost-uniformity radius
of a clustering, the return-gap bound it implies, entropy/compression-ratio
bookkeeping, and the weighted Lloyd quantizer used by the spatial baseline.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .gridworld import GridSpec


@dataclass(frozen=True)
class Partition:
    """A disjoint cover of the cells.

    ``assignment[o]`` is the cluster id of cell ``o`` (ids dense from 0);
    ``centers[j]`` is the representative of cluster ``j``: a scalar median
    for value clusterings, a (row, col) centroid for spatial ones.
    """

    assignment: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("assignment must be a non-empty 1-D array")
        ids = np.unique(a)
        if ids[0] != 0 or ids[-1] != len(ids) - 1:
            raise ValueError("cluster ids must be dense in [0, k-1]")
        if len(self.centers) != len(ids):
            raise ValueError("one center per cluster required")

    @property
    def k(self) -> int:
        return int(self.assignment.max()) + 1

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    @classmethod
    def identity(cls, n_points: int) -> "Partition":
        return cls(np.arange(n_points), np.arange(n_points, dtype=np.float64))

    @classmethod
    def single(cls, n_points: int) -> "Partition":
        return cls(np.zeros(n_points, dtype=np.int64), np.zeros(1))


def _check_dist(dist, n=None, name="distribution") -> np.ndarray:
    p = np.asarray(dist, dtype=np.float64)
    if p.ndim != 1 or (n is not None and p.size != n):
        raise ValueError(f"{name} must be a vector of length {n}")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative mass")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def reset_distribution(spec: GridSpec) -> np.ndarray:
    """Uniform over the non-goal cells (the start-of-episode distribution)."""
    p = np.full(spec.n_cells, 1.0 / (spec.n_cells - 1))
    p[spec.goal] = 0.0
    return p


def marginal_value(q: np.ndarray, obs_dist) -> np.ndarray:
    """``v[o_i] = sum_{o_j} max_{m1,m2} Q[o_i, o_j, m1, m2] * p(o_j)``."""
    q = np.asarray(q)
    p = _check_dist(obs_dist, q.shape[1], "obs_dist")
    joint = q.reshape(q.shape[0], q.shape[1], -1).max(axis=-1)
    return joint @ p


# --------------------------------------------------------------------------
# exact 1-D k-median


def _median(sorted_vals: np.ndarray) -> float:
    n = len(sorted_vals)
    mid = n // 2
    if n % 2:
        return float(sorted_vals[mid])
    return 0.5 * (float(sorted_vals[mid - 1]) + float(sorted_vals[mid]))


def kmedian_1d(values, k: int) -> Partition:
    """Globally optimal k-median clustering of scalars by dynamic programming.

    Optimal 1-D clusters are runs of the sorted values, so the DP runs over
    split points of the sorted sequence in O(k n^2).  Splits are only allowed
    between distinct values, hence equal values always share a cluster and
    fewer than ``k`` clusters come back when there are fewer distinct values.
    Among equal-cost solutions the one with the earliest split points wins.
    Cluster ids increase with value.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("values must be a non-empty vector")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = len(xs)
    prefix = np.concatenate([[0.0], np.cumsum(xs)])

    def seg_cost(i, j):  # xs[i:j], j exclusive
        length = j - i
        upper = prefix[j] - prefix[i + (length + 1) // 2]
        lower = prefix[i + length // 2] - prefix[i]
        return upper - lower

    # legal segment starts: 0 and every index where the value changes
    starts = [0] + [i for i in range(1, n) if xs[i] > xs[i - 1]]
    ends = starts[1:] + [n]
    m = len(starts)
    kk = min(k, m)

    inf = math.inf
    # best[c][e]: min cost covering runs 0..e (inclusive) with c+1 segments
    best = np.full((kk, m), inf)
    back = np.full((kk, m), -1, dtype=np.int64)
    for e in range(m):
        best[0, e] = seg_cost(0, ends[e])
    for c in range(1, kk):
        for e in range(c, m):
            hi = ends[e]
            for b in range(c, e + 1):  # first run of the last segment
                cand = best[c - 1, b - 1] + seg_cost(starts[b], hi)
                if cand < best[c, e]:
                    best[c, e] = cand
                    back[c, e] = b
    # more segments never cost more; keep the fewest that attain the optimum
    c_best = int(np.argmin(best[:, m - 1]))

    bounds = []
    e = m - 1
    c = c_best
    while c > 0:
        b = back[c, e]
        bounds.append(b)
        e = b - 1
        c -= 1
    bounds = [0] + bounds[::-1] + [m]

    labels_sorted = np.empty(n, dtype=np.int64)
    centers = []
    for j in range(len(bounds) - 1):
        lo, hi = starts[bounds[j]], ends[bounds[j + 1] - 1]
        labels_sorted[lo:hi] = j
        centers.append(_median(xs[lo:hi]))
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = labels_sorted
    return Partition(assignment, np.asarray(centers))


def kmedian_cost(values, partition: Partition) -> float:
    """Total absolute deviation of each value from its cluster's median."""
    x = np.asarray(values, dtype=np.float64)
    return float(sum(np.abs(x[partition.members(j)] - partition.centers[j]).sum()
                     for j in range(partition.k)))


def value_partition(values, rate_bits: int) -> Partition:
    """Cluster cell values into at most ``2**rate_bits`` groups."""
    if rate_bits < 0:
        raise ValueError("rate must be non-negative")
    return kmedian_1d(values, 2 ** rate_bits)


# --------------------------------------------------------------------------
# quantities derived from a clustering


def epsilon_of_partition(values, partition: Partition) -> float:
    """Twice the largest distance from any member's value to its cluster median."""
    x = np.asarray(values, dtype=np.float64)
    dev = np.abs(x - np.asarray(partition.centers, dtype=np.float64)[partition.assignment])
    return 2.0 * float(dev.max())


def return_gap_bound(epsilon: float, gamma: float) -> float:
    """Upper bound ``2 eps / (1 - gamma)^2`` on the loss against the centralized optimum."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return 2.0 * epsilon / (1.0 - gamma) ** 2


def entropy(dist) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = _check_dist(dist)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


def message_distribution(assignment, obs_dist) -> np.ndarray:
    """Push an observation distribution through a deterministic message map."""
    a = np.asarray(assignment)
    p = _check_dist(obs_dist, a.size, "obs_dist")
    return np.bincount(a, weights=p, minlength=int(a.max()) + 1)


def compression_ratio(obs_dist, msg_dist) -> tuple[int, int]:
    """``(ceil H(obs), ceil H(msg))``; format with :func:`format_ratio`."""
    # guard against 5.9999999 style round-off pushing ceil up or down
    h_obs = math.ceil(round(entropy(obs_dist), 9))
    h_msg = math.ceil(round(entropy(msg_dist), 9))
    return h_obs, h_msg


def format_ratio(ratio: tuple[int, int]) -> str:
    return f"{ratio[0]}:{ratio[1]}"


def conditional_from_marginal(assignment, obs_dist) -> np.ndarray:
    """``p(o | msg)`` as a ``(k, n_cells)`` array from a marginal over cells.

    A message whose preimage carries zero mass gets the uniform conditional
    over its preimage.
    """
    a = np.asarray(assignment)
    p = _check_dist(obs_dist, a.size, "obs_dist")
    k = int(a.max()) + 1
    cond = np.zeros((k, a.size))
    for c in range(k):
        pre = a == c
        mass = p[pre].sum()
        cond[c, pre] = p[pre] / mass if mass > 0 else 1.0 / pre.sum()
    return cond


def aggregated_value(v_joint, assignment, cond_dist) -> np.ndarray:
    """Value of (own cell, received message): the joint value averaged over
    the sender's cells given the message.  Shape ``(n_cells, k)``.
    """
    v = np.asarray(v_joint, dtype=np.float64)
    a = np.asarray(getattr(assignment, "table", assignment))
    cond = np.asarray(cond_dist, dtype=np.float64)
    k = int(a.max()) + 1
    if cond.shape != (k, v.shape[1]):
        raise ValueError(f"cond_dist must have shape {(k, v.shape[1])}")
    if np.any(cond < 0) or not np.allclose(cond.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("each conditional row must be a probability vector")
    outside = cond[a[None, :] != np.arange(k)[:, None]]
    if np.any(outside > 0):
        raise ValueError("conditional puts mass outside the message's preimage")
    return v @ cond.T


# --------------------------------------------------------------------------
# weighted Lloyd quantizer on grid coordinates


def grid_points(spec: GridSpec) -> np.ndarray:
    rows, cols = np.divmod(np.arange(spec.n_cells), spec.n)
    return np.stack([rows, cols], axis=1).astype(np.float64)


def lloyd_cost(points, weights, assignment, centroids) -> float:
    d = points - centroids[assignment]
    return float((weights * (d * d).sum(axis=1)).sum())


def _lloyd_once(points, w, k, rng, max_iter):
    support = np.flatnonzero(w > 0)
    k_eff = min(k, len(support))
    init = rng.choice(support, size=k_eff, replace=False, p=w[support] / w[support].sum())
    centroids = points[init].copy()
    assign = None
    history = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        history.append(lloyd_cost(points, w, new, centroids))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k_eff):
            mask = assign == j
            mass = w[mask].sum()
            if mass > 0:
                centroids[j] = (w[mask, None] * points[mask]).sum(axis=0) / mass
        history.append(lloyd_cost(points, w, assign, centroids))
    return assign, centroids, history


def lloyd_quantize(points, weights, k: int, rng: np.random.Generator,
                   max_iter: int = 100, restarts: int = 1, return_history: bool = False):
    """Weighted Lloyd (k-means) quantization of 2-D points.

    Initial centroids are ``k`` points drawn without replacement with
    probability proportional to weight.  Every point, including zero-weight
    ones, ends up in the cluster of its nearest centroid.  With several
    restarts the lowest-cost run is kept.  Cluster ids are renumbered densely
    in order of first appearance over the points.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = np.asarray(points, dtype=np.float64)
    w = _check_dist(weights, len(pts), "weights")
    best = None
    for _ in range(max(1, restarts)):
        assign, centroids, history = _lloyd_once(pts, w, k, rng, max_iter)
        cost = lloyd_cost(pts, w, assign, centroids)
        if best is None or cost < best[0]:
            best = (cost, assign, centroids, history)
    _, assign, centroids, history = best
    _, first = np.unique(assign, return_index=True)
    used = assign[np.sort(first)]
    remap = np.full(len(centroids), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    part = Partition(remap[assign], centroids[used])
    return (part, history) if return_history else part


# --------------------------------------------------------------------------
# CSV export


def partition_grid(assignment, spec: GridSpec) -> np.ndarray:
    """Cluster ids laid out as the grid is drawn: top row first."""
    return np.asarray(assignment).reshape(spec.n, spec.n)[::-1]


def write_grid_csv(path, grid_values, spec: GridSpec, fmt=None) -> None:
    """Write a per-cell vector as an n x n CSV, top grid row first."""
    grid = partition_grid(grid_values, spec)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([fmt(v) if fmt else v for v in row])


def read_grid_csv(path, dtype=float) -> np.ndarray:
    """Inverse of :func:`write_grid_csv`, back to a cell-indexed vector."""
    with open(path, newline="") as fh:
        rows = [[dtype(x) for x in row] for row in csv.reader(fh) if row]
    return np.asarray(rows)[::-1].ravel()
