"""Policy-based and model-based distances between tasks on shared spaces."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdp import StationaryPolicy, TabularMDP, evaluate_policy, library_hash, solve_optimal

DV, DM = "DV", "DM"
KINDS = (DV, DM)


class SpaceMismatchError(ValueError):
    pass


def _check_spaces(m1: TabularMDP, m2: TabularMDP):
    if not m1.same_spaces(m2):
        raise SpaceMismatchError(
            f"tasks differ in (states, actions, start): "
            f"{(m1.n_states, m1.n_actions, m1.initial_state)} vs "
            f"{(m2.n_states, m2.n_actions, m2.initial_state)}")


@dataclass
class Solved:
    """A task with its canonical optimal policy and optimal start value."""

    mdp: TabularMDP
    policy: StationaryPolicy
    v_start: float

    @classmethod
    def of(cls, mdp: TabularMDP, tol: float = 1e-8) -> "Solved":
        pi, vf = solve_optimal(mdp, tol)
        return cls(mdp, pi, float(vf.v[mdp.initial_state]))


def cross_value(target: TabularMDP, pi: StationaryPolicy) -> float:
    """Value at the start state of ``target`` when following ``pi``."""
    return float(evaluate_policy(target, pi).v[target.initial_state])


def _dv_solved(a: Solved, b: Solved) -> float:
    gap_a = a.v_start - cross_value(a.mdp, b.policy)
    gap_b = b.v_start - cross_value(b.mdp, a.policy)
    return max(0.0, gap_a, gap_b)


def d_v(m1: TabularMDP | Solved, m2: TabularMDP | Solved) -> float:
    """Worse of the two start-state regrets when each task runs the other's optimal policy."""
    a = m1 if isinstance(m1, Solved) else Solved.of(m1)
    b = m2 if isinstance(m2, Solved) else Solved.of(m2)
    _check_spaces(a.mdp, b.mdp)
    if a.policy == b.policy:
        return 0.0
    return _dv_solved(a, b)


def model_deviations(m1: TabularMDP, m2: TabularMDP) -> tuple[float, float]:
    """(max reward gap, max L1 transition gap) over all state-action pairs."""
    _check_spaces(m1, m2)
    eps_r = float(np.max(np.abs(m1.reward - m2.reward)))
    diff = abs(m1.transition - m2.transition)
    eps_p = float(np.max(np.asarray(diff.sum(axis=1)).ravel())) if diff.nnz else 0.0
    return eps_r, eps_p


def d_m(m1: TabularMDP, m2: TabularMDP) -> float:
    return max(model_deviations(m1, m2))


def k_m(eps: float, gamma: float, r_max: float) -> float:
    """Envelope turning a model distance into a bound on the policy distance."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    return eps * (1.0 + gamma * r_max) / (1.0 - gamma) ** 2


def k_m_inverse(k: float, gamma: float, r_max: float) -> float:
    return k * (1.0 - gamma) ** 2 / (1.0 + gamma * r_max)


def simulation_bound(eps_r: float, eps_p: float, gamma: float, r_max: float) -> float:
    """Uniform bound on |V1^pi - V2^pi| from per-pair reward and transition gaps."""
    return (eps_r + gamma * r_max * eps_p) / (1.0 - gamma) ** 2


@dataclass
class DistanceMatrix:
    kind: str
    values: np.ndarray
    task_ids: list[int] = field(default_factory=list)
    library_hash: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distance kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.shape[0]
        if self.values.shape != (n, n):
            raise ValueError("distance matrix must be square")
        if not self.task_ids:
            self.task_ids = list(range(n))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, ij):
        return self.values[ij]

    def subset(self, idx: Sequence[int]) -> "DistanceMatrix":
        idx = list(idx)
        return DistanceMatrix(self.kind, self.values[np.ix_(idx, idx)],
                              [self.task_ids[i] for i in idx])

    def check(self, tol: float = 1e-9):
        v = self.values
        if np.any(np.diag(v) != 0):
            raise ValueError("nonzero diagonal")
        if np.any(v < 0):
            raise ValueError("negative distance")
        if np.max(np.abs(v - v.T), initial=0.0) > tol:
            raise ValueError("asymmetric distance matrix")

    # Matrix file: "kind N hash" header, then N rows of N values.
    def dumps(self) -> str:
        lines = [f"{self.kind} {self.n} {self.library_hash or '-'}"]
        lines += [" ".join(repr(float(x)) for x in row) for row in self.values]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "DistanceMatrix":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        kind, n, h = lines[0].split()
        n = int(n)
        if len(lines) != n + 1:
            raise ValueError(f"expected {n} matrix rows, got {len(lines) - 1}")
        values = np.array([[float(x) for x in ln.split()] for ln in lines[1:]]).reshape(n, n)
        return cls(kind, values, list(range(n)), "" if h == "-" else h)

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "DistanceMatrix":
        return cls.loads(Path(path).read_text())


def dv_matrix(solved: Sequence[Solved]) -> np.ndarray:
    n = len(solved)
    for s in solved[1:]:
        _check_spaces(solved[0].mdp, s.mdp)
    # cross[i, j] = value of task j's policy in task i at the start state
    cross = np.empty((n, n))
    for i, a in enumerate(solved):
        seen: dict[bytes, float] = {}
        for j, b in enumerate(solved):
            key = b.policy.action.tobytes()
            if key not in seen:
                seen[key] = a.v_start if key == a.policy.action.tobytes() else cross_value(a.mdp, b.policy)
            cross[i, j] = seen[key]
    v_star = np.array([s.v_start for s in solved])
    regret = v_star[:, None] - cross
    out = np.maximum(np.maximum(regret, regret.T), 0.0)
    np.fill_diagonal(out, 0.0)
    return out


def dm_matrix(library: Sequence[TabularMDP]) -> np.ndarray:
    n = len(library)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = d_m(library[i], library[j])
    return out


def distance_matrix(library: Sequence[TabularMDP | Solved], kind: str,
                    cache_dir: str | Path | None = None) -> DistanceMatrix:
    """Pairwise distances over a library, optionally cached on disk by content hash."""
    if kind not in KINDS:
        raise ValueError(f"unknown distance kind {kind!r}")
    mdps = [x.mdp if isinstance(x, Solved) else x for x in library]
    h = library_hash(mdps)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{kind.lower()}-{h[:24]}.txt"
        if path.exists():
            cached = DistanceMatrix.load(path)
            if cached.library_hash == h and cached.kind == kind:
                return cached
    if kind == DV:
        solved = [x if isinstance(x, Solved) else Solved.of(x) for x in library]
        values = dv_matrix(solved)
    else:
        values = dm_matrix(mdps)
    dm = DistanceMatrix(kind, values, list(range(len(mdps))), h)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(dm.dumps())
        tmp.replace(path)
    return dm
