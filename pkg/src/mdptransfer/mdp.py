"""Tabular MDPs: representation, exact solution, simulation and text I/O."""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# Above this many states linear solves go through scipy.sparse.
DENSE_SOLVE_LIMIT = 1500

# Action values within this (relative) gap count as ties.
TIE_TOL = 1e-9


class SolverError(RuntimeError):
    """Raised when an exact solve fails to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class MDPValidationError(ValueError):
    pass


@dataclass(eq=False)
class TabularMDP:
    """A finite MDP with a single initial state.

    ``transition`` is stored as a CSR matrix of shape ``(S*A, S)`` where row
    ``s*A + a`` is ``P(.|s, a)``. Dense ``(S, A, S)`` arrays are accepted and
    converted. Terminal states must be absorbing with zero reward; an episode
    ends as soon as one is entered.
    """

    transition: sp.csr_matrix
    reward: np.ndarray
    gamma: float
    initial_state: int = 0
    reward_bounds: tuple[float, float] | None = None
    reward_noise: np.ndarray | None = None
    terminal: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        reward = np.asarray(self.reward, dtype=float)
        if reward.ndim != 2:
            raise MDPValidationError("reward must have shape (n_states, n_actions)")
        n_states, n_actions = reward.shape
        self.reward = reward
        if sp.issparse(self.transition):
            P = sp.csr_matrix(self.transition, dtype=float)
        else:
            dense = np.asarray(self.transition, dtype=float)
            if dense.shape != (n_states, n_actions, n_states):
                raise MDPValidationError(
                    f"transition shape {dense.shape} != {(n_states, n_actions, n_states)}"
                )
            P = sp.csr_matrix(dense.reshape(n_states * n_actions, n_states))
        if P.shape != (n_states * n_actions, n_states):
            raise MDPValidationError(f"transition shape {P.shape} is inconsistent with reward")
        P.eliminate_zeros()
        P.sort_indices()
        self.transition = P

        if not 0.0 <= self.gamma < 1.0:
            raise MDPValidationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 <= self.initial_state < n_states:
            raise MDPValidationError("initial_state out of range")
        if P.data.size and P.data.min() < 0:
            raise MDPValidationError("negative transition probability")
        row_sums = np.asarray(P.sum(axis=1)).ravel()
        if np.max(np.abs(row_sums - 1.0)) > 1e-9:
            raise MDPValidationError("transition rows must sum to 1")

        if self.reward_noise is None:
            self.reward_noise = np.zeros_like(reward)
        else:
            self.reward_noise = np.asarray(self.reward_noise, dtype=float)
            if self.reward_noise.shape != reward.shape or np.any(self.reward_noise < 0):
                raise MDPValidationError("reward_noise must be a nonnegative (S, A) array")
        lo = float(np.min(reward - self.reward_noise))
        hi = float(np.max(reward + self.reward_noise))
        if self.reward_bounds is None:
            self.reward_bounds = (lo, hi)
        r_min, r_max = map(float, self.reward_bounds)
        if r_min > r_max:
            raise MDPValidationError("reward bounds reversed")
        # Noise is clipped to the bounds, so only the means must fit.
        if reward.min() < r_min - 1e-12 or reward.max() > r_max + 1e-12:
            raise MDPValidationError("expected rewards fall outside reward_bounds")
        self.reward_bounds = (r_min, r_max)

        if self.terminal is None:
            self.terminal = np.zeros(n_states, dtype=bool)
        else:
            self.terminal = np.asarray(self.terminal, dtype=bool)
            if self.terminal.shape != (n_states,):
                raise MDPValidationError("terminal mask has wrong length")
        for s in np.flatnonzero(self.terminal):
            rows = P[s * n_actions:(s + 1) * n_actions]
            if np.any(np.abs(rows[:, s].toarray().ravel() - 1.0) > 1e-12) or np.any(reward[s] != 0):
                raise MDPValidationError(f"terminal state {s} must be absorbing with zero reward")
        self._sampler = None

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def r_min(self) -> float:
        return self.reward_bounds[0]

    @property
    def r_max(self) -> float:
        return self.reward_bounds[1]

    @property
    def delta_r(self) -> float:
        return self.r_max - self.r_min

    def dense_transition(self) -> np.ndarray:
        return self.transition.toarray().reshape(self.n_states, self.n_actions, self.n_states)

    def same_spaces(self, other: "TabularMDP") -> bool:
        return (self.n_states, self.n_actions, self.initial_state) == (
            other.n_states, other.n_actions, other.initial_state)

    def content_hash(self) -> str:
        return hashlib.sha256(dumps_mdp(self).encode()).hexdigest()

    # -- sampling ---------------------------------------------------------

    def _build_sampler(self):
        P = self.transition
        det = np.full(P.shape[0], -1, dtype=np.int64)
        counts = np.diff(P.indptr)
        single = np.flatnonzero(counts == 1)
        det[single] = P.indices[P.indptr[single]]
        cdf = np.empty_like(P.data)
        for row in np.flatnonzero(counts > 1):
            lo, hi = P.indptr[row], P.indptr[row + 1]
            cdf[lo:hi] = np.cumsum(P.data[lo:hi])
            cdf[hi - 1] = 1.0 + 1e-12
        self._sampler = (det.tolist(), P.indptr.tolist(), P.indices, cdf)

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int:
        if self._sampler is None:
            self._build_sampler()
        det, indptr, indices, cdf = self._sampler
        row = s * self.n_actions + a
        nxt = det[row]
        if nxt >= 0:
            return nxt
        lo, hi = indptr[row], indptr[row + 1]
        k = int(np.searchsorted(cdf[lo:hi], rng.random(), side="right"))
        return int(indices[lo + k])

    def sample_reward(self, s: int, a: int, rng: np.random.Generator) -> float:
        r = float(self.reward[s, a])
        w = float(self.reward_noise[s, a])
        if w > 0:
            r = min(max(r + rng.uniform(-w, w), self.r_min), self.r_max)
        return r


@dataclass
class StationaryPolicy:
    """Deterministic state -> action map; also usable as an episodic actor."""

    action: np.ndarray

    def __post_init__(self):
        self.action = np.asarray(self.action, dtype=np.int64)
        self._lookup = self.action.tolist()

    def __len__(self):
        return len(self.action)

    def __eq__(self, other):
        return isinstance(other, StationaryPolicy) and np.array_equal(self.action, other.action)

    def validate(self, mdp: TabularMDP):
        if self.action.shape != (mdp.n_states,):
            raise ValueError("policy length does not match n_states")
        if self.action.min() < 0 or self.action.max() >= mdp.n_actions:
            raise ValueError("policy action out of range")

    def begin_episode(self):
        pass

    def act(self, state: int, rng: np.random.Generator) -> int:
        return self._lookup[state]

    def observe(self, state, action, reward, next_state, done):
        pass

    def end_episode(self):
        pass


@dataclass
class ValueFunction:
    v: np.ndarray
    q: np.ndarray | None = None

    def __getitem__(self, s):
        return self.v[s]


@dataclass
class EpisodeResult:
    discounted_return: float
    steps: int
    trajectory: list[tuple[int, int, float, int]] | None = None  # (s, a, r, s_next)


class EpisodicActor(Protocol):
    def begin_episode(self) -> None: ...
    def act(self, state: int, rng: np.random.Generator) -> int: ...
    def observe(self, state: int, action: int, reward: float, next_state: int, done: bool) -> None: ...
    def end_episode(self) -> None: ...


# -- exact solution -----------------------------------------------------------


def _policy_system(mdp: TabularMDP, actions: np.ndarray):
    rows = np.arange(mdp.n_states) * mdp.n_actions + actions
    P_pi = mdp.transition[rows]
    R_pi = mdp.reward[np.arange(mdp.n_states), actions]
    return P_pi, R_pi


def _solve_linear(mdp: TabularMDP, P_pi, R_pi) -> np.ndarray:
    n = mdp.n_states
    if n <= DENSE_SOLVE_LIMIT:
        A = np.eye(n) - mdp.gamma * P_pi.toarray()
        v = np.linalg.solve(A, R_pi)
    else:
        A = sp.identity(n, format="csc") - mdp.gamma * P_pi.tocsc()
        v = spla.spsolve(A, R_pi)
    if not np.all(np.isfinite(v)):
        raise SolverError("policy evaluation produced non-finite values", float("inf"))
    return v


def q_from_v(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    """One Bellman backup: ``Q(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) v(s')``."""
    return mdp.reward + mdp.gamma * (mdp.transition @ v).reshape(mdp.n_states, mdp.n_actions)


def greedy_actions(q: np.ndarray, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Lowest-index action among those within ``tie_tol`` (relative) of the max."""
    best = q.max(axis=1, keepdims=True)
    tol = tie_tol * np.maximum(1.0, np.abs(best))
    return np.argmax(q >= best - tol, axis=1)


def evaluate_policy(mdp: TabularMDP, pi: StationaryPolicy | np.ndarray) -> ValueFunction:
    """Exact V^pi from the linear system (I - gamma P_pi) V = R_pi."""
    actions = pi.action if isinstance(pi, StationaryPolicy) else np.asarray(pi, dtype=np.int64)
    StationaryPolicy(actions).validate(mdp)
    P_pi, R_pi = _policy_system(mdp, actions)
    v = _solve_linear(mdp, P_pi, R_pi)
    residual = np.max(np.abs(v - (R_pi + mdp.gamma * (P_pi @ v)))) if v.size else 0.0
    if residual > 1e-9 * max(1.0, np.max(np.abs(v))):
        raise SolverError("policy evaluation is numerically unstable", residual)
    return ValueFunction(v=v)


def solve_optimal(mdp: TabularMDP, tol: float = 1e-8, max_iter: int = 1000
                  ) -> tuple[StationaryPolicy, ValueFunction]:
    """Policy iteration with exact evaluation.

    The returned policy is the canonical (lexicographically first) optimal
    policy: in every state the lowest-index action whose Q* value ties the max.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    actions = np.zeros(mdp.n_states, dtype=np.int64)
    residual = float("inf")
    for _ in range(max_iter):
        v = evaluate_policy(mdp, actions).v
        q = q_from_v(mdp, v)
        current = q[np.arange(mdp.n_states), actions]
        best = q.max(axis=1)
        improve = best > current + TIE_TOL * np.maximum(1.0, np.abs(best))
        if not improve.any():
            residual = float(np.max(np.abs(v - best))) if v.size else 0.0
            break
        actions = np.where(improve, greedy_actions(q), actions)
    else:
        raise SolverError("policy iteration did not converge", residual)
    if residual >= tol * max(1.0, np.max(np.abs(v))):
        raise SolverError("Bellman residual above tolerance", residual)
    canonical = greedy_actions(q)
    return StationaryPolicy(canonical), ValueFunction(v=v, q=q)


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 100_000) -> ValueFunction:
    """Plain Bellman-optimality iteration; kept as an independent oracle."""
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = q_from_v(mdp, v)
        v_new = q.max(axis=1)
        if mdp.gamma == 0 or np.max(np.abs(v_new - v)) < tol * (1 - mdp.gamma):
            return ValueFunction(v=v_new, q=q_from_v(mdp, v_new))
        v = v_new
    raise SolverError("value iteration did not converge", float(np.max(np.abs(v_new - v))))


def iterative_policy_evaluation(mdp: TabularMDP, pi: StationaryPolicy, tol: float = 1e-12,
                                max_iter: int = 100_000) -> np.ndarray:
    P_pi, R_pi = _policy_system(mdp, pi.action)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        v_new = R_pi + mdp.gamma * (P_pi @ v)
        if np.max(np.abs(v_new - v)) < tol:
            return v_new
        v = v_new
    raise SolverError("iterative evaluation did not converge", float(np.max(np.abs(v_new - v))))


# -- simulation ---------------------------------------------------------------


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def run_episode(mdp: TabularMDP, agent: EpisodicActor, horizon: int = 200, rng=None,
                record: bool = False) -> EpisodeResult:
    """Run one episode from the initial state.

    The reward at 0-based step n is weighted gamma**n. The episode stops on
    entering a terminal state or after ``horizon`` steps.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = as_generator(rng)
    gamma = mdp.gamma
    terminal = mdp.terminal
    s = mdp.initial_state
    ret, disc, steps = 0.0, 1.0, 0
    traj = [] if record else None
    agent.begin_episode()
    while steps < horizon:
        a = agent.act(s, rng)
        r = mdp.sample_reward(s, a, rng)
        s2 = mdp.sample_next(s, a, rng)
        done = bool(terminal[s2])
        agent.observe(s, a, r, s2, done)
        if record:
            traj.append((s, a, r, s2))
        ret += disc * r
        disc *= gamma
        steps += 1
        s = s2
        if done:
            break
    agent.end_episode()
    return EpisodeResult(discounted_return=ret, steps=steps, trajectory=traj)


def reachable_states(mdp: TabularMDP, pi: StationaryPolicy | None = None) -> np.ndarray:
    """States reachable from the initial state (under ``pi`` if given)."""
    n, A = mdp.n_states, mdp.n_actions
    seen = np.zeros(n, dtype=bool)
    stack = [mdp.initial_state]
    seen[mdp.initial_state] = True
    P = mdp.transition
    while stack:
        s = stack.pop()
        acts = [int(pi.action[s])] if pi is not None else range(A)
        for a in acts:
            row = s * A + a
            for s2 in P.indices[P.indptr[row]:P.indptr[row + 1]]:
                if not seen[s2]:
                    seen[s2] = True
                    stack.append(int(s2))
    return np.flatnonzero(seen)


# -- text format --------------------------------------------------------------
#
#   tabular-mdp 1
#   <n_states> <n_actions> <gamma> <initial_state> <r_min> <r_max>
#   terminal <k> <s_1> ... <s_k>
#   <s> <a> <mean_reward> <noise_halfwidth> <p_0> ... <p_{S-1}>    (S*A lines)
#
# Floats are written with repr() so a round trip is exact.

_MAGIC = "tabular-mdp 1"


def dumps_mdp(mdp: TabularMDP) -> str:
    out = io.StringIO()
    out.write(_MAGIC + "\n")
    out.write(f"{mdp.n_states} {mdp.n_actions} {mdp.gamma!r} {mdp.initial_state} "
              f"{mdp.r_min!r} {mdp.r_max!r}\n")
    term = np.flatnonzero(mdp.terminal)
    out.write("terminal " + " ".join(str(x) for x in [len(term), *term.tolist()]) + "\n")
    P = mdp.transition
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = np.zeros(mdp.n_states)
            r = s * mdp.n_actions + a
            row[P.indices[P.indptr[r]:P.indptr[r + 1]]] = P.data[P.indptr[r]:P.indptr[r + 1]]
            vals = " ".join("0" if x == 0 else repr(float(x)) for x in row)
            out.write(f"{s} {a} {float(mdp.reward[s, a])!r} {float(mdp.reward_noise[s, a])!r} {vals}\n")
    return out.getvalue()


def loads_mdp(text: str, name: str = "") -> TabularMDP:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip() != _MAGIC:
        raise MDPValidationError("not a tabular-mdp file")
    head = lines[1].split()
    n_states, n_actions = int(head[0]), int(head[1])
    gamma, s0 = float(head[2]), int(head[3])
    bounds = (float(head[4]), float(head[5]))
    term_fields = lines[2].split()
    if term_fields[0] != "terminal":
        raise MDPValidationError("missing terminal line")
    terminal = np.zeros(n_states, dtype=bool)
    terminal[[int(x) for x in term_fields[2:2 + int(term_fields[1])]]] = True
    body = lines[3:]
    if len(body) != n_states * n_actions:
        raise MDPValidationError(f"expected {n_states * n_actions} (s,a) lines, got {len(body)}")
    P = np.zeros((n_states, n_actions, n_states))
    R = np.zeros((n_states, n_actions))
    W = np.zeros((n_states, n_actions))
    for ln in body:
        f = ln.split()
        s, a = int(f[0]), int(f[1])
        R[s, a], W[s, a] = float(f[2]), float(f[3])
        P[s, a] = [float(x) for x in f[4:]]
    return TabularMDP(P, R, gamma, s0, bounds, W, terminal, name=name)


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> TabularMDP:
    path = Path(path)
    return loads_mdp(path.read_text(), name=path.stem)


def library_hash(mdps: Sequence[TabularMDP]) -> str:
    h = hashlib.sha256()
    for m in mdps:
        h.update(m.content_hash().encode())
    return h.hexdigest()


# -- policy and value files: one entry per line, state order ----------------------

def save_policy(pi: StationaryPolicy, path) -> None:
    Path(path).write_text("".join(f"{int(a)}\n" for a in pi.action))


def load_policy(path) -> StationaryPolicy:
    try:
        return StationaryPolicy(np.array([int(x) for x in Path(path).read_text().split()], dtype=np.int64))
    except ValueError as exc:
        raise MDPValidationError(f"{path}: policy files hold one integer action per line") from exc


def save_values(v: np.ndarray, path) -> None:
    Path(path).write_text("".join(f"{float(x)!r}\n" for x in v))


def load_values(path) -> np.ndarray:
    return np.array([float(x) for x in Path(path).read_text().split()])
