"""Partitions of a task library, their cost functions, a greedy baseline and an exact oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .distances import DM, DV, DistanceMatrix, k_m

# Regret constant from the bandit learner's guarantee.
REGRET_CONSTANT = 2.63
BRUTE_FORCE_LIMIT = 10


class Clustering:
    """An immutable partition of task indices ``0..n-1``.

    Clusters are stored as sorted tuples, ordered by their smallest member,
    so two clusterings compare equal iff they are the same partition.
    """

    __slots__ = ("clusters", "n", "_hash")

    def __init__(self, clusters: Iterable[Iterable[int]], n: int | None = None):
        cl = [tuple(sorted(int(x) for x in c)) for c in clusters]
        cl = [c for c in cl if c]
        cl.sort(key=lambda c: c[0])
        members = [x for c in cl for x in c]
        if n is None:
            n = len(members)
        if sorted(members) != list(range(n)):
            raise ValueError(f"clusters do not partition 0..{n - 1}")
        self.clusters: tuple[tuple[int, ...], ...] = tuple(cl)
        self.n = n
        self._hash = hash(self.clusters)

    @classmethod
    def _trusted(cls, clusters: Sequence[tuple[int, ...]], n: int) -> "Clustering":
        """Build from sorted, nonempty, disjoint tuples covering 0..n-1 without re-checking."""
        obj = cls.__new__(cls)
        obj.clusters = tuple(sorted(clusters, key=lambda c: c[0]))
        obj.n = n
        obj._hash = hash(obj.clusters)
        return obj

    @classmethod
    def from_assignment(cls, assignment: Sequence[int]) -> "Clustering":
        groups: dict[int, list[int]] = {}
        for task, cid in enumerate(assignment):
            groups.setdefault(int(cid), []).append(task)
        return cls(groups.values(), len(assignment))

    @classmethod
    def singletons(cls, n: int) -> "Clustering":
        return cls(([i] for i in range(n)), n)

    @classmethod
    def single(cls, n: int) -> "Clustering":
        return cls([range(n)], n)

    @property
    def c(self) -> int:
        return len(self.clusters)

    @property
    def assignment(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for cid, members in enumerate(self.clusters):
            out[list(members)] = cid
        return out

    def __eq__(self, other):
        return isinstance(other, Clustering) and self.clusters == other.clusters

    def __hash__(self):
        return self._hash

    def __iter__(self):
        return iter(self.clusters)

    def __len__(self):
        return len(self.clusters)

    def __repr__(self):
        return f"Clustering({[list(c) for c in self.clusters]})"


@dataclass(frozen=True)
class CostParams:
    """Constants entering the clustering objectives.

    ``r_max`` feeds the model-distance envelope; ``t_horizon`` is the number of
    transfer episodes the clustering is optimised for.
    """

    delta_r: float
    gamma: float
    t_horizon: int
    r_max: float = 1.0

    def __post_init__(self):
        if self.delta_r <= 0:
            raise ValueError("delta_r must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.t_horizon < 1:
            raise ValueError("t_horizon must be >= 1")

    @classmethod
    def for_library(cls, library, t_horizon: int) -> "CostParams":
        lo = min(m.r_min for m in library)
        hi = max(m.r_max for m in library)
        return cls(hi - lo, library[0].gamma, t_horizon, max(abs(lo), abs(hi)))


def g_of_c(c: int, delta_r: float, gamma: float, t_horizon: int) -> float:
    """Per-episode regret term of a bandit over ``c`` source arms plus one learner arm."""
    if c < 1 or t_horizon < 1:
        raise ValueError("c and t_horizon must be >= 1")
    return delta_r / (1.0 - gamma) * REGRET_CONSTANT * math.sqrt((c + 1) * math.log(c + 1) / t_horizon)


def _g(c: int, p: CostParams) -> float:
    return g_of_c(c, p.delta_r, p.gamma, p.t_horizon)


def _block(dist: np.ndarray, members: Sequence[int]) -> np.ndarray:
    idx = list(members)
    return dist[np.ix_(idx, idx)]


def centroid(cluster: Sequence[int], dist: DistanceMatrix | np.ndarray) -> int:
    """Member minimising its maximum distance to the other members; ties go to the smallest index."""
    members = sorted(cluster)
    if not members:
        raise ValueError("empty cluster has no centroid")
    d = dist.values if isinstance(dist, DistanceMatrix) else np.asarray(dist)
    radii = _block(d, members).max(axis=1)
    return members[int(np.argmin(radii))]


def cluster_radius(cluster: Sequence[int], dist: np.ndarray) -> float:
    """Max distance from the centroid to any member."""
    return float(_block(dist, cluster).max(axis=1).min())


def cluster_mean_eccentricity_sum(cluster: Sequence[int], dist: np.ndarray) -> float:
    """Sum over members of each member's farthest in-cluster distance."""
    return float(_block(dist, cluster).max(axis=1).sum())


@dataclass
class ClusterSummary:
    c: int
    centroid_dv: list[int] | None
    centroid_dm: list[int] | None
    eps_i: list[float] | None
    eps_max_dm: float | None
    eps_bar: float | None
    eps_bar_m: float | None


def summarize(a: Clustering, dist_dv: DistanceMatrix | None = None,
              dist_dm: DistanceMatrix | None = None) -> ClusterSummary:
    s = ClusterSummary(a.c, None, None, None, None, None, None)
    if dist_dv is not None:
        d = dist_dv.values
        s.centroid_dv = [centroid(c, d) for c in a]
        s.eps_i = [cluster_radius(c, d) for c in a]
        s.eps_bar = sum(len(c) * e for c, e in zip(a, s.eps_i)) / a.n
        s.eps_bar_m = sum(cluster_mean_eccentricity_sum(c, d) for c in a) / a.n
    if dist_dm is not None:
        d = dist_dm.values
        s.centroid_dm = [centroid(c, d) for c in a]
        s.eps_max_dm = max(cluster_radius(c, d) for c in a)
    return s


def _expect(dist: DistanceMatrix, kind: str):
    if isinstance(dist, DistanceMatrix) and dist.kind != kind:
        raise ValueError(f"expected a {kind} matrix, got {dist.kind}")


def cost1(a: Clustering, dist_dm: DistanceMatrix, params: CostParams) -> float:
    _expect(dist_dm, DM)
    eps = max(cluster_radius(c, dist_dm.values) for c in a)
    return _g(a.c, params) + k_m(eps, params.gamma, params.r_max)


def cost2(a: Clustering, dist_dv: DistanceMatrix, params: CostParams) -> float:
    _expect(dist_dv, DV)
    d = dist_dv.values
    eps_bar = sum(len(c) * cluster_radius(c, d) for c in a) / a.n
    return _g(a.c, params) + eps_bar


def cost2m(a: Clustering, dist_dv: DistanceMatrix, params: CostParams) -> float:
    _expect(dist_dv, DV)
    d = dist_dv.values
    return _g(a.c, params) + sum(cluster_mean_eccentricity_sum(c, d) for c in a) / a.n


class CachedCost:
    """Memoising evaluator for one of the three objectives.

    Per-cluster statistics are cached by member tuple, which makes repeated
    evaluation inside a local search cheap: a move touches at most two
    clusters.
    """

    KINDS = ("cost1", "cost2", "cost2m")

    def __init__(self, kind: str, dist: DistanceMatrix, params: CostParams):
        if kind not in self.KINDS:
            raise ValueError(f"unknown cost {kind!r}")
        _expect(dist, DM if kind == "cost1" else DV)
        self.kind = kind
        self.dist = dist
        self.params = params
        self._d = dist.values
        self._memo: dict[tuple[int, ...], float] = {}
        self._g = [0.0] + [_g(c, params) for c in range(1, dist.n + 2)]
        self._stat = cluster_mean_eccentricity_sum if kind == "cost2m" else cluster_radius

    def _cluster(self, members: tuple[int, ...]) -> float:
        v = self._memo.get(members)
        if v is None:
            v = 0.0 if len(members) == 1 else self._stat(members, self._d)
            if len(self._memo) > 500_000:
                self._memo.clear()
            self._memo[members] = v
        return v

    def __call__(self, a: Clustering) -> float:
        if self.kind == "cost1":
            eps = max(self._cluster(c) for c in a)
            return self._g[a.c] + k_m(eps, self.params.gamma, self.params.r_max)
        if self.kind == "cost2":
            return self._g[a.c] + sum(len(c) * self._cluster(c) for c in a) / a.n
        return self._g[a.c] + sum(self._cluster(c) for c in a) / a.n


def make_cost(kind: str, dist: DistanceMatrix, params: CostParams) -> CachedCost:
    return CachedCost(kind, dist, params)


def greedy_cluster(dist: DistanceMatrix | np.ndarray, threshold: float) -> Clustering:
    """Seed with the lowest unassigned task and absorb every unassigned task within ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    d = dist.values if isinstance(dist, DistanceMatrix) else np.asarray(dist)
    n = d.shape[0]
    assigned = np.zeros(n, dtype=bool)
    clusters = []
    for seed in range(n):
        if assigned[seed]:
            continue
        members = [j for j in range(n) if not assigned[j] and (j == seed or d[seed, j] <= threshold)]
        assigned[members] = True
        clusters.append(members)
    return Clustering(clusters, n)


def greedy_thresholds(dist: DistanceMatrix | np.ndarray, count: int = 10) -> list[float]:
    """``count`` evenly spaced quantiles of the off-diagonal distances, from min to max."""
    d = dist.values if isinstance(dist, DistanceMatrix) else np.asarray(dist)
    n = d.shape[0]
    if n < 2:
        return [0.0]
    off = d[np.triu_indices(n, 1)]
    return [float(x) for x in np.quantile(off, np.linspace(0.0, 1.0, count))]


def best_greedy(dist: DistanceMatrix, cost_fn: Callable[[Clustering], float],
                thresholds: Sequence[float] | None = None) -> tuple[Clustering, float, float]:
    """Lowest-cost greedy clustering over ``thresholds``; returns ``(clustering, cost, threshold)``."""
    thresholds = greedy_thresholds(dist) if thresholds is None else thresholds
    best = None
    for th in thresholds:
        a = greedy_cluster(dist, th)
        cost = cost_fn(a)
        if best is None or cost < best[1]:
            best = (a, cost, float(th))
    return best


def set_partitions(n: int) -> Iterator[Clustering]:
    """All partitions of ``0..n-1`` in lexicographic order of restricted growth strings."""
    if n == 0:
        return
    rgs = [0] * n
    maxes = [0] * n  # maxes[i] = max(rgs[:i])
    while True:
        yield Clustering.from_assignment(rgs)
        i = n - 1
        while i > 0 and rgs[i] > maxes[i]:
            i -= 1
        if i == 0:
            return
        rgs[i] += 1
        for j in range(i + 1, n):
            rgs[j] = 0
            maxes[j] = max(maxes[j - 1], rgs[j - 1])


def bell_number(n: int) -> int:
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


class TooLargeError(ValueError):
    pass


def brute_force_best(dist: DistanceMatrix, cost_fn: Callable[[Clustering], float],
                     limit: int = BRUTE_FORCE_LIMIT, return_all: bool = False):
    """Exhaustive minimum over all set partitions.

    Returns ``(best, cost)``; with ``return_all`` also the full list of
    ``(clustering, cost)`` pairs in enumeration order.
    """
    n = dist.n if isinstance(dist, DistanceMatrix) else int(dist)
    if n > limit:
        raise TooLargeError(f"refusing to enumerate Bell({n}) partitions (limit N={limit})")
    best, best_cost, seen = None, math.inf, []
    for a in set_partitions(n):
        cost = cost_fn(a)
        if return_all:
            seen.append((a, cost))
        if cost < best_cost - 1e-12 * max(1.0, abs(best_cost) if math.isfinite(best_cost) else 1.0):
            best, best_cost = a, cost
    return (best, best_cost, seen) if return_all else (best, best_cost)


# -- clustering file --------------------------------------------------------------
#
#   <task_id> <cluster_id>        (one line per task)
#   # summary
#   c <int>
#   eps <float>            (max d_M radius, or "-" when unknown)
#   eps_bar <float>
#   eps_bar_m <float>
#   cost <float>


def dumps_clustering(a: Clustering, summary: ClusterSummary | None = None,
                     cost: float | None = None) -> str:
    lines = [f"{t} {cid}" for t, cid in enumerate(a.assignment.tolist())]
    lines.append("# summary")

    def fmt(x):
        return "-" if x is None else repr(float(x))

    s = summary or ClusterSummary(a.c, None, None, None, None, None, None)
    lines += [f"c {a.c}", f"eps {fmt(s.eps_max_dm)}", f"eps_bar {fmt(s.eps_bar)}",
              f"eps_bar_m {fmt(s.eps_bar_m)}", f"cost {fmt(cost)}"]
    return "\n".join(lines) + "\n"


def loads_clustering(text: str) -> tuple[Clustering, dict]:
    assignment, meta, in_summary = [], {}, False
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln:
            continue
        if ln.startswith("#"):
            in_summary = True
            continue
        key, val = ln.split()
        if in_summary:
            meta[key] = None if val == "-" else (int(val) if key == "c" else float(val))
        else:
            if int(key) != len(assignment):
                raise ValueError("task ids must be listed in order")
            assignment.append(int(val))
    return Clustering.from_assignment(assignment), meta


def save_clustering(path, a: Clustering, summary=None, cost=None):
    Path(path).write_text(dumps_clustering(a, summary, cost))


def load_clustering(path) -> tuple[Clustering, dict]:
    return loads_clustering(Path(path).read_text())
