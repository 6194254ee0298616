"""Metropolis-Hastings with an auxiliary inverse-temperature variable, for discrete minimisation.

The chain lives on pairs ``(lambda, y)`` and targets a density proportional
to ``lambda ** -f(y)``. Larger ``lambda`` values sharpen the target around
minimisers of ``f``; the ladder walk lets the chain heat up and cool down on
its own.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Hashable, Protocol, Sequence

import numpy as np


class DensityError(ValueError):
    """A proposal kernel reported a nonpositive density for a sampled move."""


@dataclass(frozen=True)
class LambdaLadder:
    """Strictly increasing positive ladder, stored as logarithms so huge values stay finite."""

    log_values: tuple[float, ...]
    alpha_prime: float = 0.5

    def __post_init__(self):
        logs = tuple(float(v) for v in self.log_values)
        object.__setattr__(self, "log_values", logs)
        if not logs:
            raise ValueError("ladder needs at least one value")
        if not all(math.isfinite(v) for v in logs):
            raise ValueError("ladder values must be positive and finite")
        if any(b <= a for a, b in zip(logs, logs[1:])):
            raise ValueError("ladder values must be strictly increasing")
        if not 0.0 < self.alpha_prime < 1.0:
            raise ValueError("alpha_prime must lie in (0, 1)")

    @classmethod
    def from_values(cls, values: Sequence[float], alpha_prime: float = 0.5) -> "LambdaLadder":
        if any(v <= 0 for v in values):
            raise ValueError("ladder values must be positive")
        return cls(tuple(math.log(v) for v in values), alpha_prime)

    @classmethod
    def geometric(cls, base: float = 1.05, ratio: float = 1.5, n: int = 20,
                  alpha_prime: float = 0.5) -> "LambdaLadder":
        """``base * ratio**i`` for ``i = 0..n-1``."""
        if base <= 0 or ratio <= 1 or n < 1:
            raise ValueError("need base > 0, ratio > 1, n >= 1")
        return cls(tuple(math.log(base) + i * math.log(ratio) for i in range(n)), alpha_prime)

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(math.exp(v) if v < 700 else math.inf for v in self.log_values)

    def __len__(self):
        return len(self.log_values)


def target_log_density(lam: float, cost: float) -> float:
    """Unnormalised log target: ``-cost * ln(lam)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return -cost * math.log(lam)


def phi_lambda_prob(i: int, j: int, ladder: LambdaLadder) -> float:
    """Probability that the ladder walk moves from index ``i`` to ``j``.

    Interior indices step up with probability ``alpha_prime`` and down
    otherwise; both ends reflect inward with probability one.
    """
    n = len(ladder)
    if n == 1:
        return 1.0 if i == j == 0 else 0.0
    if i == 0:
        return 1.0 if j == 1 else 0.0
    if i == n - 1:
        return 1.0 if j == n - 2 else 0.0
    if j == i + 1:
        return ladder.alpha_prime
    if j == i - 1:
        return 1.0 - ladder.alpha_prime
    return 0.0


def phi_lambda_step(idx: int, ladder: LambdaLadder, rng: np.random.Generator) -> tuple[int, float, float]:
    """Sample the next ladder index; returns ``(new_idx, forward_prob, reverse_prob)``."""
    n = len(ladder)
    if not 0 <= idx < n:
        raise IndexError("ladder index out of range")
    if n == 1:
        return idx, 1.0, 1.0
    if idx == 0:
        new = 1
    elif idx == n - 1:
        new = n - 2
    else:
        new = idx + 1 if rng.random() < ladder.alpha_prime else idx - 1
    return new, phi_lambda_prob(idx, new, ladder), phi_lambda_prob(new, idx, ladder)


class ProposalKernel(Protocol):
    def sample(self, point, rng: np.random.Generator) -> tuple[Any, float, float]:
        """Return ``(new_point, q(point -> new_point), q(new_point -> point))``."""

    def random_point(self, rng: np.random.Generator):
        ...


@dataclass
class ChainState:
    lambda_idx: int
    point: Any
    cost: float
    best_point: Any = None
    best_cost: float = math.inf

    def __post_init__(self):
        if self.best_point is None or self.cost < self.best_cost:
            self.best_point, self.best_cost = self.point, self.cost


@dataclass(frozen=True)
class MHAVParams:
    alpha: float = 0.1
    beta: float = 0.8
    t_m: int = 100_000
    restarts: int = 20

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.beta < 1 and self.alpha + self.beta < 1):
            raise ValueError("need alpha, beta in (0, 1) with alpha + beta < 1")
        if self.t_m < 1 or self.restarts < 1:
            raise ValueError("t_m and restarts must be >= 1")


def mhav_step(state: ChainState, ladder: LambdaLadder, kernel: ProposalKernel,
              cost_fn: Callable, alpha: float, beta: float, rng: np.random.Generator) -> tuple[ChainState, str, bool]:
    """Advance the chain one step in place.

    Returns ``(state, move, accepted)`` where ``move`` is one of
    ``"lambda"``, ``"point"`` or ``"stay"``.
    """
    u = rng.random()
    if u < alpha:
        j, fwd, rev = phi_lambda_step(state.lambda_idx, ladder, rng)
        if j == state.lambda_idx:
            return state, "lambda", True
        logs = ladder.log_values
        log_ratio = math.log(rev) - math.log(fwd) - state.cost * (logs[j] - logs[state.lambda_idx])
        if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
            state.lambda_idx = j
            return state, "lambda", True
        return state, "lambda", False
    if u < alpha + beta:
        new, fwd, rev = kernel.sample(state.point, rng)
        if not (fwd > 0 and rev > 0):
            raise DensityError(f"kernel densities must be positive (forward={fwd}, reverse={rev})")
        new_cost = cost_fn(new)
        log_lam = ladder.log_values[state.lambda_idx]
        log_ratio = math.log(rev) - math.log(fwd) - (new_cost - state.cost) * log_lam
        if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
            state.point, state.cost = new, new_cost
            if new_cost < state.best_cost:
                state.best_point, state.best_cost = new, new_cost
            return state, "point", True
        return state, "point", False
    return state, "stay", True


@dataclass
class MHAVResult:
    best_point: Any
    best_cost: float
    restart_best: list[float] = field(default_factory=list)
    trace: list[tuple] = field(default_factory=list)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "restart", "log_lambda", "cost", "accepted", "best_so_far"])
            w.writerows(self.trace)


def run_mhav(cost_fn: Callable, kernel: ProposalKernel, ladder: LambdaLadder | None = None,
             t_m: int = 100_000, restarts: int = 20, seed: int = 0, alpha: float = 0.1,
             beta: float = 0.8, init: Callable | None = None, trace_every: int = 0) -> MHAVResult:
    """Best point found over ``restarts`` independent chains of ``t_m`` steps each.

    Every restart begins at a fresh random point (``init(rng)`` if given,
    otherwise ``kernel.random_point(rng)``) at the lowest ladder index.
    ``trace_every > 0`` records every k-th step as
    ``(iteration, restart, log_lambda, cost, accepted, best_so_far)``.
    """
    MHAVParams(alpha, beta, t_m, restarts)
    ladder = ladder or LambdaLadder.geometric()
    make_point = init or kernel.random_point
    result = MHAVResult(None, math.inf)
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        rng = np.random.default_rng(child)
        p0 = make_point(rng)
        state = ChainState(0, p0, cost_fn(p0))
        for it in range(t_m):
            state, _, acc = mhav_step(state, ladder, kernel, cost_fn, alpha, beta, rng)
            if trace_every and it % trace_every == 0:
                result.trace.append((it, r, ladder.log_values[state.lambda_idx], state.cost,
                                     int(acc), min(state.best_cost, result.best_cost)))
        result.restart_best.append(state.best_cost)
        if state.best_cost < result.best_cost:
            result.best_point, result.best_cost = state.best_point, state.best_cost
    return result


# -- enumerable spaces ---------------------------------------------------------------


class EnumerableKernel:
    """A point kernel given as an explicit row-stochastic matrix over ``0..m-1``."""

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("kernel matrix must be square")
        if np.any(m < 0) or np.max(np.abs(m.sum(axis=1) - 1)) > 1e-12:
            raise ValueError("kernel matrix must be row-stochastic")
        self.matrix = m
        self._cdf = np.cumsum(m, axis=1)

    def sample(self, point: int, rng: np.random.Generator):
        j = int(np.searchsorted(self._cdf[point], rng.random() * self._cdf[point, -1], side="right"))
        j = min(j, self.matrix.shape[0] - 1)
        return j, self.matrix[point, j], self.matrix[j, point]

    def random_point(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.matrix.shape[0]))


MAX_ENUMERABLE = 1000


def exact_target(costs: Sequence[float], ladder: LambdaLadder) -> np.ndarray:
    """Normalised target over pairs, indexed ``lambda_idx * m + y``."""
    costs = np.asarray(costs, dtype=float)
    logp = -np.outer(ladder.log_values, costs).ravel()
    p = np.exp(logp - logp.max())
    return p / p.sum()


def mh_matrix(costs: Sequence[float], kernel_matrix: np.ndarray, ladder: LambdaLadder,
              alpha: float = 0.1, beta: float = 0.8) -> np.ndarray:
    """Explicit transition matrix of the full chain on an enumerable space."""
    costs = np.asarray(costs, dtype=float)
    K = np.asarray(kernel_matrix, dtype=float)
    m, n = len(costs), len(ladder)
    size = m * n
    if size > MAX_ENUMERABLE:
        raise ValueError(f"state space of {size} exceeds the enumeration limit {MAX_ENUMERABLE}")
    logs = np.array(ladder.log_values)
    P = np.zeros((size, size))
    for i in range(n):
        for y in range(m):
            x = i * m + y
            for j in range(n):
                q, qr = phi_lambda_prob(i, j, ladder), phi_lambda_prob(j, i, ladder)
                if j == i or q == 0:
                    continue
                ratio = qr / q * math.exp(-costs[y] * (logs[j] - logs[i]))
                P[x, j * m + y] += alpha * q * min(1.0, ratio)
            for y2 in range(m):
                q = K[y, y2]
                if y2 == y or q == 0:
                    continue
                ratio = K[y2, y] / q * math.exp(-(costs[y2] - costs[y]) * logs[i])
                P[x, i * m + y2] += beta * q * min(1.0, ratio)
            P[x, x] = 0.0
            P[x, x] = 1.0 - P[x].sum()
    return P


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class ChainDiagnostics:
    diameter: int
    delta: float
    target: np.ndarray

    def bound(self, n: int) -> float:
        return (1.0 - self.delta) ** (n / self.diameter)


def diagnostics_tv(P: np.ndarray, target: np.ndarray, max_power: int = 10_000) -> ChainDiagnostics:
    """Smallest power with all-positive entries, and the worst entry-to-target ratio there."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] > MAX_ENUMERABLE:
        raise ValueError("state space too large to enumerate")
    Pl = P.copy()
    for l in range(1, max_power + 1):
        if np.all(Pl > 0):
            delta = float(np.min(Pl / target[None, :]))
            return ChainDiagnostics(l, min(delta, 1.0), np.asarray(target))
        Pl = Pl @ P
    raise ValueError(f"chain not positive within {max_power} steps (reducible or periodic?)")


def tv_curve(P: np.ndarray, target: np.ndarray, steps: Sequence[int], start: int | None = None) -> list[float]:
    """Exact TV distance to the target after each step count, worst case over starts unless given."""
    out = []
    for n in steps:
        Pn = np.linalg.matrix_power(P, int(n))
        rows = Pn if start is None else Pn[start:start + 1]
        out.append(max(total_variation(r, target) for r in rows))
    return out


def empirical_distribution(P: np.ndarray, start: int, n_steps: int, n_chains: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Histogram of ``n_chains`` independent walks of ``n_steps`` from ``start``."""
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0 + 1e-12
    x = np.full(n_chains, start, dtype=np.int64)
    for _ in range(n_steps):
        u = rng.random(n_chains)
        x = (u[:, None] >= cdf[x]).sum(axis=1)
    return np.bincount(x, minlength=P.shape[0]) / n_chains
