"""Task generators: windy corridor, surveillance (block and graph variants), synthetic fixtures."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .mdp import TabularMDP

# Grid moves shared by all grid domains; the order is the action index order.
EAST, WEST, SOUTH, NORTH, SURVEIL = range(5)
_MOVES = {EAST: (0, 1), WEST: (0, -1), SOUTH: (-1, 0), NORTH: (1, 0)}


def _sparse_mdp(rows, cols, probs, reward, gamma, initial_state, bounds, terminal, name):
    S, A = reward.shape
    P = sp.csr_matrix((probs, (rows, cols)), shape=(S * A, S))
    P.sum_duplicates()
    return TabularMDP(P, reward, gamma, initial_state, bounds, terminal=terminal, name=name)


# -- windy corridor -------------------------------------------------------------
#
# Coordinates are (row, col); row 0 is the southern hall holding the start
# cell, row 1 is the windy strip in front of the corridor entrances, rows
# 2..corridor_length+1 are the corridors. Corridors are walled on both sides,
# so inside them only North/South moves change the cell. Every step costs 1;
# the goal at the far end of one corridor is terminal.

N_CORRIDORS = 10
CORRIDOR_LENGTH = 2
WINDY_START_COL = 4


def windy_corridor(goal: int, wind_level: int, gamma: float = 0.9,
                   n_corridors: int = N_CORRIDORS, corridor_length: int = CORRIDOR_LENGTH,
                   start_col: int = WINDY_START_COL) -> TabularMDP:
    if not 0 <= goal < n_corridors:
        raise ValueError(f"goal must lie in [0, {n_corridors})")
    if not 0 <= wind_level <= 9:
        raise ValueError("wind_level must lie in [0, 9]")
    n_rows = corridor_length + 2
    p_north = 0.1 * wind_level

    def idx(r, c):
        return r * n_corridors + c

    def move(r, c, a):
        dr, dc = _MOVES[a]
        if r >= 2 and dc != 0:
            return r, c
        nr, nc = r + dr, c + dc
        if not (0 <= nr < n_rows and 0 <= nc < n_corridors):
            return r, c
        return nr, nc

    S, A = n_rows * n_corridors, 4
    goal_state = idx(n_rows - 1, goal)
    rows, cols, probs = [], [], []
    reward = np.full((S, A), -1.0)
    for r in range(n_rows):
        for c in range(n_corridors):
            s = idx(r, c)
            for a in range(A):
                row = s * A + a
                if s == goal_state:
                    rows.append(row); cols.append(s); probs.append(1.0)
                    reward[s, a] = 0.0
                    continue
                intended = idx(*move(r, c, a))
                if r == 1 and p_north > 0 and a != NORTH:
                    rows += [row, row]
                    cols += [intended, idx(*move(r, c, NORTH))]
                    probs += [1.0 - p_north, p_north]
                else:
                    rows.append(row); cols.append(intended); probs.append(1.0)
    terminal = np.zeros(S, dtype=bool)
    terminal[goal_state] = True
    return _sparse_mdp(rows, cols, probs, reward, gamma, idx(0, start_col), (-1.0, 0.0),
                       terminal, f"windy-g{goal}-w{wind_level}")


def windy_corridor_family(gamma: float = 0.9) -> list[TabularMDP]:
    """All 100 (goal, wind) tasks ordered goal-major."""
    return [windy_corridor(g, w, gamma) for g in range(N_CORRIDORS) for w in range(10)]


# -- surveillance -----------------------------------------------------------------

STEP_REWARD = -1.0
WRONG_SURVEIL_REWARD = -10.0
CORRECT_REWARD = 200.0
SUBSTITUTE_REWARD = 190.0


@dataclass(frozen=True)
class SurveillanceLayout:
    """Grid plus the surveillable cells and which substitutions are acceptable.

    ``edges`` holds unordered pairs of v-location indices; surveilling a
    neighbour of the current target is an acceptable substitute.
    """

    grid: int
    vlocs: tuple[tuple[int, int], ...]
    edges: frozenset = field(default_factory=frozenset)
    start: tuple[int, int] | None = None
    groups: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        if len(set(self.vlocs)) != len(self.vlocs):
            raise ValueError("v-locations must be distinct cells")
        for r, c in self.vlocs:
            if not (0 <= r < self.grid and 0 <= c < self.grid):
                raise ValueError(f"v-location {(r, c)} lies outside the grid")
        for e in self.edges:
            i, j = tuple(e)
            if i == j or not (0 <= i < len(self.vlocs) and 0 <= j < len(self.vlocs)):
                raise ValueError(f"invalid edge {tuple(e)}")

    @property
    def start_cell(self) -> tuple[int, int]:
        return self.start if self.start is not None else (self.grid // 2, self.grid // 2)

    def adjacent(self, i: int, j: int) -> bool:
        return frozenset((i, j)) in self.edges

    def with_edges(self, edges: Iterable[tuple[int, int]]) -> "SurveillanceLayout":
        return SurveillanceLayout(self.grid, self.vlocs, frozenset(frozenset(e) for e in edges),
                                  self.start, self.groups)


def block_layout(grid: int = 12, blocks_per_side: int = 2) -> SurveillanceLayout:
    """``blocks_per_side**2`` blocks of 2x2 adjacent v-locations; block-mates are connected.

    ``block_layout(48, 4)`` gives the full 64-location layout.
    """
    spacing = grid // blocks_per_side
    offset = spacing // 2 - 1
    vlocs, groups, edges = [], [], set()
    for br in range(blocks_per_side):
        for bc in range(blocks_per_side):
            r0, c0 = offset + br * spacing, offset + bc * spacing
            members = []
            for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
                members.append(len(vlocs))
                vlocs.append((r0 + dr, c0 + dc))
            groups.append(tuple(members))
            edges.update(frozenset(p) for p in itertools.combinations(members, 2))
    return SurveillanceLayout(grid, tuple(vlocs), frozenset(edges), groups=tuple(groups))


def hub_spoke_layout(grid: int = 12, groups_per_side: int = 2) -> SurveillanceLayout:
    """Plus-shaped groups: a hub with four spokes (E, W, S, N of it); only hub-spoke edges.

    Within each group the hub comes first, then the spokes in action order.
    """
    spacing = grid // groups_per_side
    vlocs, groups, edges = [], [], set()
    for gr in range(groups_per_side):
        for gc in range(groups_per_side):
            hr, hc = spacing // 2 + gr * spacing, spacing // 2 + gc * spacing
            hub = len(vlocs)
            vlocs.append((hr, hc))
            members = [hub]
            for a in (EAST, WEST, SOUTH, NORTH):
                dr, dc = _MOVES[a]
                members.append(len(vlocs))
                vlocs.append((hr + dr, hc + dc))
                edges.add(frozenset((hub, members[-1])))
            groups.append(tuple(members))
    return SurveillanceLayout(grid, tuple(vlocs), frozenset(edges), groups=tuple(groups))


def _surveillance(layout: SurveillanceLayout, targets: Sequence[int], max_targets: int,
                  gamma: float, name: str) -> TabularMDP:
    targets = list(targets)
    if not 1 <= len(targets) <= max_targets:
        raise ValueError(f"need between 1 and {max_targets} targets")
    if len(set(targets)) != len(targets):
        raise ValueError("targets must be distinct")
    if any(not 0 <= t < len(layout.vlocs) for t in targets):
        raise ValueError("target index out of range")
    G = layout.grid
    n_pos = G * G
    S, A = n_pos * max_targets + 1, 5
    term = S - 1
    vloc_at = {r * G + c: i for i, (r, c) in enumerate(layout.vlocs)}

    pos = np.arange(n_pos)
    r, c = pos // G, pos % G
    nxt = np.empty((n_pos, 4), dtype=np.int64)
    for a, (dr, dc) in _MOVES.items():
        nr = np.clip(r + dr, 0, G - 1)
        nc = np.clip(c + dc, 0, G - 1)
        nxt[:, a] = nr * G + nc

    dest = np.full((S, A), term, dtype=np.int64)
    reward = np.zeros((S, A))
    for k in range(max_targets):
        base = k * n_pos
        block = slice(base, base + n_pos)
        if k >= len(targets):
            continue  # unreachable progress level; collapses to the terminal state
        dest[block, :4] = base + nxt
        reward[block, :4] = STEP_REWARD
        dest[block, SURVEIL] = base + pos
        reward[block, SURVEIL] = WRONG_SURVEIL_REWARD
        target = targets[k]
        for p, v in vloc_at.items():
            if v == target:
                gain = CORRECT_REWARD
            elif layout.adjacent(v, target):
                gain = SUBSTITUTE_REWARD
            else:
                continue
            reward[base + p, SURVEIL] = gain
            dest[base + p, SURVEIL] = term if k + 1 == len(targets) else base + n_pos + p
    rows = np.arange(S * A)
    terminal = np.zeros(S, dtype=bool)
    terminal[term] = True
    start = layout.start_cell
    return _sparse_mdp(rows, dest.ravel(), np.ones(S * A), reward, gamma, start[0] * G + start[1],
                       (WRONG_SURVEIL_REWARD, CORRECT_REWARD), terminal, name)


def surveillance(targets: Sequence[int], layout: SurveillanceLayout | None = None,
                 max_targets: int = 4, gamma: float = 0.9) -> TabularMDP:
    """Visit ``targets`` (v-location indices) in order, surveilling each.

    Surveilling a block-mate of the current target is accepted at a small
    discount; any other surveil is penalised and the agent must retry.
    ``max_targets`` fixes the state space shared by a task family.
    """
    layout = layout or block_layout()
    return _surveillance(layout, targets, max_targets, gamma,
                         "surv-" + "-".join(map(str, targets)))


def graph_surveillance(targets: Sequence[int], layout: SurveillanceLayout | None = None,
                       max_targets: int = 4, gamma: float = 0.9) -> TabularMDP:
    layout = layout or hub_spoke_layout()
    return _surveillance(layout, targets, max_targets, gamma,
                         "graph-" + "-".join(map(str, targets)))


def shortest_path_length(layout: SurveillanceLayout, a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


# -- synthetic fixtures -----------------------------------------------------------


def synthetic_singleton(rewards: Sequence[float], gamma: float = 0.0,
                        reward_bounds: tuple[float, float] | None = None) -> TabularMDP:
    """One self-looping state; action ``a`` pays ``rewards[a]`` forever."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 1 or rewards.size == 0:
        raise ValueError("rewards must be a nonempty vector")
    P = np.ones((1, rewards.size, 1))
    return TabularMDP(P, rewards[None, :], gamma, 0, reward_bounds)


def triangle_witness() -> list[TabularMDP]:
    """Three one-state tasks whose policy distances break the triangle inequality."""
    bounds = (-100.0, 100.0)
    return [
        synthetic_singleton([100, 90, -100], 0.0, bounds),
        synthetic_singleton([90, 100, 90], 0.0, bounds),
        synthetic_singleton([90, 90, 100], 0.0, bounds),
    ]


def bandit_mdp(means: Sequence[float], noise: float | Sequence[float] = 0.0,
               gamma: float = 0.9, reward_bounds: tuple[float, float] = (0.0, 1.0)) -> TabularMDP:
    """A one-decision episode: pick an arm, collect its reward, terminate.

    Returns are single rewards, so normalised payoffs equal
    ``(r - r_min/(1-gamma)) / (delta_r/(1-gamma))``.
    """
    means = np.asarray(means, dtype=float)
    k = means.size
    P = np.zeros((2, k, 2))
    P[:, :, 1] = 1.0
    R = np.zeros((2, k))
    R[0] = means
    W = np.zeros((2, k))
    W[0] = noise
    return TabularMDP(P, R, gamma, 0, reward_bounds, W, np.array([False, True]), name="bandit")


def clique_cover_library(n_vertices: int, edges: Iterable[tuple[int, int]], penalty: float,
                         bonus: float = 1.0, gamma: float = 0.0) -> list[TabularMDP]:
    """Single-state tasks, one action per vertex, encoding a graph.

    Task ``i`` pays ``bonus`` for action ``i``, 0 for actions of neighbours and
    ``-penalty`` otherwise. Adjacent tasks are then ``bonus`` apart under the
    policy distance and non-adjacent ones ``penalty + bonus`` apart, so
    low-radius clusters are exactly the cliques.
    """
    adj = np.zeros((n_vertices, n_vertices), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    bounds = (-penalty, bonus)
    return [synthetic_singleton(np.where(adj[i], 0.0, -penalty) + np.where(np.arange(n_vertices) == i,
                                                                            penalty + bonus, 0.0),
                                gamma, bounds)
            for i in range(n_vertices)]


def random_mdp(n_states: int, n_actions: int, rng, gamma: float = 0.9,
               reward_range: tuple[float, float] = (0.0, 1.0), sparsity: float = 0.0,
               reward_bounds: tuple[float, float] | None = None) -> TabularMDP:
    """Dirichlet transition rows and uniform rewards; optional random zeroing of successors."""
    rng = np.random.default_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        keep = rng.integers(n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(*reward_range, size=(n_states, n_actions))
    return TabularMDP(P, R, gamma, 0, reward_bounds or reward_range)


def perturb_mdp(mdp: TabularMDP, rng, reward_scale: float, transition_scale: float) -> TabularMDP:
    """A nearby task on the same spaces: jittered rewards and mixed-in transition noise."""
    rng = np.random.default_rng(rng)
    lo, hi = mdp.reward_bounds
    R = np.clip(mdp.reward + rng.uniform(-reward_scale, reward_scale, mdp.reward.shape), lo, hi)
    P = mdp.dense_transition()
    Q = rng.dirichlet(np.ones(mdp.n_states), size=(mdp.n_states, mdp.n_actions))
    P = (1 - transition_scale) * P + transition_scale * Q
    return TabularMDP(P, R, mdp.gamma, mdp.initial_state, mdp.reward_bounds)


# -- declarative specs --------------------------------------------------------------

DOMAIN_KINDS = ("windy", "surveillance", "graph", "synthetic")


@dataclass
class DomainSpec:
    """Family-level parameters; :meth:`make` builds one task from task-level parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    def layout(self) -> SurveillanceLayout:
        grid = int(self.params.get("grid", 12))
        if self.kind == "surveillance":
            return block_layout(grid, int(self.params.get("blocks_per_side", grid // 6)))
        lay = hub_spoke_layout(grid, int(self.params.get("groups_per_side", grid // 6)))
        if "edges" in self.params:
            lay = lay.with_edges(tuple(e) for e in self.params["edges"])
        return lay

    def make(self, task: dict) -> TabularMDP:
        gamma = float(self.params.get("gamma", 0.9))
        if self.kind == "windy":
            return windy_corridor(int(task["goal"]), int(task["wind"]), gamma)
        if self.kind in ("surveillance", "graph"):
            max_t = int(self.params.get("max_targets", 4))
            fn = surveillance if self.kind == "surveillance" else graph_surveillance
            return fn(task["targets"], self.layout(), max_t, gamma)
        return synthetic_singleton(task["rewards"], gamma)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(d["kind"], dict(d.get("params", {})))
