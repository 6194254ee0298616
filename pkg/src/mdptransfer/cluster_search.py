"""Proposal kernel over set partitions and the annealed search for a low-cost clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .clustering import Clustering, CostParams, g_of_c, make_cost
from .distances import DistanceMatrix
from .mhav import LambdaLadder, MHAVResult, run_mhav

NEW = -1

BETWEEN_EXISTING = "BetweenExisting"
TO_NEW = "ToNew"
WHOLE_TO_EXISTING = "WholeToExisting"
WHOLE_TO_NEW = "WholeToNew"
CASES = (BETWEEN_EXISTING, TO_NEW, WHOLE_TO_EXISTING, WHOLE_TO_NEW)


def pe_truncated(k: int, support: int, theta1: float = 1.0) -> float:
    """Geometric law on ``1..support`` with ratio ``exp(-theta1)``, folded from the infinite tail."""
    if not 1 <= k <= support:
        raise ValueError(f"k={k} outside 1..{support}")
    if theta1 <= 0:
        raise ValueError("theta1 must be positive")
    q = math.exp(-theta1)
    return q ** k * (1.0 - q) / (q * (1.0 - q ** support))


def sample_pe(support: int, theta1: float, rng: np.random.Generator) -> int:
    if support == 1:
        return 1
    u = rng.random()
    acc = 0.0
    for k in range(1, support):
        acc += pe_truncated(k, support, theta1)
        if u < acc:
            return k
    return support


@dataclass(frozen=True)
class ClusterMove:
    """Move ``moved_members`` out of cluster ``source_cluster`` into ``dest_cluster``.

    Cluster ids are positions in the canonical order of the clustering the
    move applies to; ``dest_cluster == NEW`` opens a new cluster.
    """

    source_cluster: int
    dest_cluster: int
    moved_members: tuple[int, ...]
    case_tag: str


def classify(a: Clustering, source: int, dest: int, k: int) -> str:
    whole = k == len(a.clusters[source])
    if dest == NEW:
        return WHOLE_TO_NEW if whole else TO_NEW
    return WHOLE_TO_EXISTING if whole else BETWEEN_EXISTING


def apply_move(a: Clustering, move: ClusterMove) -> Clustering:
    src = a.clusters[move.source_cluster]
    moved = set(move.moved_members)
    if not moved or not moved <= set(src):
        raise ValueError("moved members must be a nonempty subset of the source cluster")
    if move.dest_cluster == move.source_cluster:
        raise ValueError("destination must differ from the source")
    rest = tuple(x for x in src if x not in moved)
    moved_t = tuple(sorted(moved))
    out = []
    for idx, cl in enumerate(a.clusters):
        if idx == move.source_cluster:
            if rest:
                out.append(rest)
        elif idx == move.dest_cluster:
            out.append(tuple(sorted(cl + moved_t)))
        else:
            out.append(cl)
    if move.dest_cluster == NEW:
        out.append(moved_t)
    return Clustering._trusted(out, a.n)


def move_density(a: Clustering, move: ClusterMove, theta1: float = 1.0) -> float:
    """Probability that the kernel proposes exactly ``move`` from ``a``."""
    n_clusters = a.c
    size = len(a.clusters[move.source_cluster])
    k = len(move.moved_members)
    return pe_truncated(k, size, theta1) / (n_clusters ** 2 * math.comb(size, k))


def _index_of(a: Clustering, member: int) -> int:
    for idx, cl in enumerate(a.clusters):
        if member in cl:
            return idx
    raise KeyError(member)


def inverse_move(a: Clustering, move: ClusterMove, b: Clustering) -> ClusterMove:
    """The move that carries ``b = apply_move(a, move)`` back to ``a``."""
    moved = move.moved_members
    src_after = _index_of(b, moved[0])
    rest = [x for x in a.clusters[move.source_cluster] if x not in set(moved)]
    if move.case_tag == WHOLE_TO_NEW:
        return ClusterMove(src_after, NEW, moved, WHOLE_TO_NEW)
    if move.case_tag == WHOLE_TO_EXISTING:
        return ClusterMove(src_after, NEW, moved, TO_NEW)
    dest_back = _index_of(b, rest[0])
    if move.case_tag == TO_NEW:
        return ClusterMove(src_after, dest_back, moved, WHOLE_TO_EXISTING)
    return ClusterMove(src_after, dest_back, moved, BETWEEN_EXISTING)


class ClusteringKernel:
    """Pick a cluster uniformly, a truncated-geometric number of its members
    uniformly, and a destination uniformly among the other clusters plus a new one.
    """

    def __init__(self, n_tasks: int, theta1: float = 1.0):
        if n_tasks < 1:
            raise ValueError("need at least one task")
        if theta1 <= 0:
            raise ValueError("theta1 must be positive")
        self.n = n_tasks
        self.theta1 = theta1

    def propose(self, a: Clustering, rng: np.random.Generator):
        """Returns ``(new_clustering, move, forward_density, reverse_density)``."""
        N = a.c
        i = int(rng.integers(N))
        src = a.clusters[i]
        size = len(src)
        k = sample_pe(size, self.theta1, rng)
        if k == size:
            moved = src
        else:
            pick = rng.choice(size, size=k, replace=False)
            moved = tuple(sorted(src[p] for p in pick))
        d = int(rng.integers(N))  # N-1 other clusters plus NEW
        dest = NEW if d == N - 1 else (d if d < i else d + 1)
        case = classify(a, i, dest, k)
        move = ClusterMove(i, dest, moved, case)
        th = self.theta1
        fwd = pe_truncated(k, size, th) / (N ** 2 * math.comb(size, k))
        if case == WHOLE_TO_NEW:
            return a, move, fwd, fwd
        b = apply_move(a, move)
        if case == BETWEEN_EXISTING:
            m = len(a.clusters[dest]) + k
            rev = pe_truncated(k, m, th) / (N ** 2 * math.comb(m, k))
        elif case == TO_NEW:
            rev = pe_truncated(k, k, th) / (N + 1) ** 2
        else:
            m = len(a.clusters[dest]) + size
            rev = pe_truncated(size, m, th) / ((N - 1) ** 2 * math.comb(m, size))
        return b, move, fwd, rev

    def sample(self, a: Clustering, rng: np.random.Generator):
        b, _, fwd, rev = self.propose(a, rng)
        return b, fwd, rev

    def random_point(self, rng: np.random.Generator) -> Clustering:
        """Uniform cluster count, then uniform labels (empty labels dropped)."""
        k = int(rng.integers(1, self.n + 1))
        return Clustering.from_assignment(rng.integers(k, size=self.n))


def cost_scaled_ladder(params: CostParams, n_tasks: int, nats: float = 10.0, ratio: float = 1.2,
                       n: int = 20, alpha_prime: float = 0.5) -> LambdaLadder:
    """Ladder whose lowest rung puts ``nats`` of log-odds on the smallest cluster-count step.

    With positive costs the ladder walk rarely leaves the lowest rung, so that
    rung sets the effective selection pressure. The smallest step of the
    regret term, ``g(N) - g(N-1)``, is the finest cost difference the search
    must resolve.
    """
    g = [g_of_c(c, params.delta_r, params.gamma, params.t_horizon) for c in (max(n_tasks - 1, 1), max(n_tasks, 2))]
    unit = g[1] - g[0]
    base = nats / unit
    return LambdaLadder(tuple(base * ratio ** i for i in range(n)), alpha_prime)


@dataclass
class SearchResult:
    clustering: Clustering
    cost: float
    mhav: MHAVResult


def search_clusterings(dist: DistanceMatrix, cost_fn: Callable[[Clustering], float] | str = "cost2",
                       params: CostParams | None = None, ladder: LambdaLadder | None = None,
                       t_m: int = 100_000, restarts: int = 20, theta1: float = 1.0, seed: int = 0,
                       alpha: float = 0.1, beta: float = 0.8, trace_every: int = 0) -> SearchResult:
    """Annealed search over partitions of the library indexed by ``dist``.

    ``cost_fn`` is a callable on clusterings or one of ``"cost1"``,
    ``"cost2"``, ``"cost2m"`` (then ``params`` is required). Without an
    explicit ladder, :func:`cost_scaled_ladder` is used when ``params`` is
    known and the generic geometric ladder otherwise.
    """
    if isinstance(cost_fn, str):
        if params is None:
            raise ValueError("params are required when the cost is named")
        cost_fn = make_cost(cost_fn, dist, params)
    if ladder is None:
        ladder = cost_scaled_ladder(params, dist.n) if params is not None else LambdaLadder.geometric()
    kernel = ClusteringKernel(dist.n, theta1)
    res = run_mhav(cost_fn, kernel, ladder, t_m, restarts, seed,
                   alpha, beta, trace_every=trace_every)
    return SearchResult(res.best_point, res.best_cost, res)
