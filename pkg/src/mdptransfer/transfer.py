"""Bandit-based policy reuse over source policies plus a Q-learning arm, and the baselines."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agents import QLearningAgent, QLearningParams
from .mdp import StationaryPolicy, TabularMDP, run_episode
from .seeding import child_rng

REGRET_CONSTANT = 2.63


def auto_beta(c: int, t_horizon: int) -> float:
    """Mixing rate that tunes the regret guarantee for ``c`` sources plus the learner arm."""
    k = c + 1
    return min(1.0, math.sqrt(k * math.log(k) / (t_horizon * (math.e - 1))))


def regret_bound(c: int, t_horizon: int, delta_r: float, gamma: float) -> float:
    """Bound on ``T * V(best source) - E[total return]`` in raw discounted-return units."""
    k = c + 1
    return REGRET_CONSTANT * delta_r / (1.0 - gamma) * math.sqrt(k * math.log(k) * t_horizon)


class ReturnNormalizer:
    """Maps discounted returns affinely onto [0, 1]; out-of-range inputs are clipped and counted."""

    def __init__(self, r_min: float, r_max: float, gamma: float):
        if r_max <= r_min:
            raise ValueError("need r_max > r_min")
        self.lo = r_min / (1.0 - gamma)
        self.span = (r_max - r_min) / (1.0 - gamma)
        self.clipped = 0

    @classmethod
    def for_mdp(cls, mdp: TabularMDP) -> "ReturnNormalizer":
        return cls(mdp.r_min, mdp.r_max, mdp.gamma)

    def __call__(self, raw: float) -> float:
        x = (raw - self.lo) / self.span
        if x < 0.0 or x > 1.0:
            if x < -1e-9 or x > 1.0 + 1e-9:
                self.clipped += 1
            x = min(max(x, 0.0), 1.0)
        return x


def normalize_return(raw: float, r_min: float, r_max: float, gamma: float) -> float:
    return ReturnNormalizer(r_min, r_max, gamma)(raw)


class Exp3Transfer:
    """Arm bookkeeping for EXP-3 over ``c`` stationary source arms plus one learner arm.

    Arm ids ``0..c-1`` are sources and ``c`` is the learner. Weights are kept
    in log space; only relative weights enter the probabilities.
    """

    def __init__(self, c: int, t_horizon: int, beta: float | None = None, delta: float = 0.1,
                 interval: int = 50):
        if c < 0:
            raise ValueError("c must be >= 0")
        if t_horizon < 1:
            raise ValueError("t_horizon must be >= 1")
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if interval < 1:
            raise ValueError("interval must be >= 1")
        self.c = c
        self.k = c + 1
        self.beta = auto_beta(c, t_horizon) if beta is None else float(beta)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.delta = delta
        self.interval = interval
        self.log_w = [0.0] * self.k
        self.active = [True] * self.k
        self.pulls = [0] * self.k
        self.z = [0.0] * self.k
        self.t = 0
        self._elim = math.sqrt(-math.log(delta / (2 * c)) / 2.0) if c > 0 else 0.0

    @property
    def weights(self) -> np.ndarray:
        return np.exp(np.array(self.log_w))

    @property
    def removed(self) -> set[int]:
        return {i for i, a in enumerate(self.active) if not a}

    @property
    def active_arms(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.active) if a)

    def probabilities(self) -> list[float]:
        act = self.active
        n_act = sum(act)
        top = max(lw for lw, a in zip(self.log_w, act) if a)
        w = [math.exp(lw - top) if a else 0.0 for lw, a in zip(self.log_w, act)]
        total = sum(w)
        mix = self.beta / n_act
        return [(1.0 - self.beta) * wi / total + mix if a else 0.0 for wi, a in zip(w, act)]

    def select(self, rng: np.random.Generator) -> tuple[int, float]:
        p = self.probabilities()
        u = rng.random()
        acc = 0.0
        last = 0
        for i, pi in enumerate(p):
            if pi > 0:
                last = i
                acc += pi
                if u < acc:
                    return i, pi
        return last, p[last]

    def update(self, arm: int, x: float, p: float):
        """Importance-weighted exponential update of the pulled arm; counts and sums for sources."""
        if not self.active[arm]:
            raise ValueError(f"arm {arm} has been removed")
        self.t += 1
        self.pulls[arm] += 1
        if arm < self.c:
            self.z[arm] += x
        self.log_w[arm] += self.beta * x / (p * self.k)
        if self.t % self.interval == 0:
            self.elimination_check()

    def elimination_check(self) -> set[int]:
        """Drop source arms that some other active source beats with high confidence."""
        dropped = set()
        thr = self._elim
        for k in range(self.c):
            if not self.active[k] or self.pulls[k] == 0:
                continue
            nk = self.pulls[k]
            mk = self.z[k] / nk
            bk = thr / math.sqrt(nk)
            for j in range(self.c):
                if j == k or not self.active[j] or self.pulls[j] == 0:
                    continue
                nj = self.pulls[j]
                half = (self.z[j] / nj - mk) / 2.0
                if half > 0 and half > thr / math.sqrt(nj) and half > bk:
                    self.active[k] = False
                    dropped.add(k)
                    break
        return dropped


@dataclass
class LearningRecord:
    episode: list[int] = field(default_factory=list)
    arm: list[int] = field(default_factory=list)
    raw_return: list[float] = field(default_factory=list)
    normalized_return: list[float] = field(default_factory=list)
    active_arms: list[tuple[int, ...]] = field(default_factory=list)
    clipped: int = 0

    HEADER = ("episode", "arm", "raw_return", "normalized_return", "active_arms",
              "cumulative_discounted_reward")

    def append(self, arm, raw, x, active):
        self.episode.append(len(self.episode))
        self.arm.append(arm)
        self.raw_return.append(raw)
        self.normalized_return.append(x)
        self.active_arms.append(active)

    def __len__(self):
        return len(self.episode)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.raw_return)

    @property
    def total(self) -> float:
        return float(np.sum(self.raw_return))

    @property
    def final(self) -> float:
        return float(self.raw_return[-1]) if self.raw_return else 0.0

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.HEADER)
        cum = 0.0
        for e, a, r, x, act in zip(self.episode, self.arm, self.raw_return, self.normalized_return,
                                   self.active_arms):
            cum += r
            w.writerow([e, a, repr(float(r)), repr(float(x)), ";".join(map(str, act)), repr(cum)])
        return out.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "LearningRecord":
        rec = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                act = tuple(int(x) for x in row["active_arms"].split(";") if x)
                rec.append(int(row["arm"]), float(row["raw_return"]), float(row["normalized_return"]), act)
        return rec


@dataclass
class TransferParams:
    t_horizon: int = 10_000
    beta: float | None = None
    delta: float = 0.1
    interval: int = 50
    horizon: int = 200
    q: QLearningParams = field(default_factory=QLearningParams)
    tau0: float = 0.05
    tau_decay: float = 0.995
    tau_min: float = 1e-3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransferParams":
        d = dict(d)
        if isinstance(d.get("q"), dict):
            d["q"] = QLearningParams(**d["q"])
        return cls(**d)


def exp3_loop(bandit: Exp3Transfer, play: Callable[[int], float], normalizer: Callable[[float], float],
              t_horizon: int, rng_select: np.random.Generator, record: LearningRecord | None = None
              ) -> LearningRecord:
    """Drive the bandit for ``t_horizon`` rounds; ``play(arm)`` runs one episode and returns its raw return."""
    record = record if record is not None else LearningRecord()
    active = bandit.active_arms
    for _ in range(t_horizon):
        arm, p = bandit.select(rng_select)
        raw = play(arm)
        x = normalizer(raw)
        bandit.update(arm, x, p)
        if bandit.t % bandit.interval == 0:
            active = bandit.active_arms
        record.append(arm, raw, x, active)
    return record


def exp3_transfer_run(target: TabularMDP, sources: Sequence[StationaryPolicy],
                      params: TransferParams | None = None, seed: int = 0) -> LearningRecord:
    """One run of the bandit learner on ``target``.

    Arm selection and episode simulation draw from separate child streams,
    so with no sources the episodes match a plain Q-learning run exactly.
    """
    params = params or TransferParams()
    for pi in sources:
        pi.validate(target)
    bandit = Exp3Transfer(len(sources), params.t_horizon, params.beta, params.delta, params.interval)
    agent = QLearningAgent.for_mdp(target, params.q)
    actors = list(sources) + [agent]
    rng_env = child_rng(seed, "episodes")
    rng_sel = child_rng(seed, "arm-select")
    norm = ReturnNormalizer.for_mdp(target)

    def play(arm):
        return run_episode(target, actors[arm], params.horizon, rng_env).discounted_return

    rec = exp3_loop(bandit, play, norm, params.t_horizon, rng_sel)
    rec.clipped = norm.clipped
    return rec


def q_learning_run(target: TabularMDP, params: TransferParams | None = None, seed: int = 0) -> LearningRecord:
    """Standalone Q-learning with the same episode stream as :func:`exp3_transfer_run`."""
    params = params or TransferParams()
    agent = QLearningAgent.for_mdp(target, params.q)
    rng_env = child_rng(seed, "episodes")
    norm = ReturnNormalizer.for_mdp(target)
    rec = LearningRecord()
    for _ in range(params.t_horizon):
        raw = run_episode(target, agent, params.horizon, rng_env).discounted_return
        rec.append(0, raw, norm(raw), (0,))
    rec.clipped = norm.clipped
    return rec


class _ReuseActor:
    """Follows a source policy, handing control to epsilon-greedy Q-learning with a
    probability that ramps linearly from 0 to 1 over the step budget. All
    transitions train the shared Q-table.
    """

    def __init__(self, source: StationaryPolicy, agent: QLearningAgent, horizon: int):
        self.source = source
        self.agent = agent
        self.horizon = horizon
        self.step = 0

    def begin_episode(self):
        self.step = 0

    def act(self, state, rng):
        psi = self.step / max(self.horizon - 1, 1)
        self.step += 1
        if rng.random() < psi:
            return self.agent.act(state, rng)
        return self.source.act(state, rng)

    def observe(self, state, action, reward, next_state, done):
        self.agent.observe(state, action, reward, next_state, done)

    def end_episode(self):
        pass


def softmax_probs(values: Sequence[float], tau: float) -> np.ndarray:
    v = np.asarray(values, dtype=float) / tau
    v -= v.max()
    e = np.exp(v)
    return e / e.sum()


def policy_reuse_run(target: TabularMDP, sources: Sequence[StationaryPolicy],
                     params: TransferParams | None = None, seed: int = 0) -> LearningRecord:
    """Softmax selection over sources plus Q-learning on mean normalised returns.

    Every option is tried once first. The temperature decays geometrically per
    episode; a chosen source is mixed with Q-learning inside the episode as in
    :class:`_ReuseActor`.
    """
    params = params or TransferParams()
    agent = QLearningAgent.for_mdp(target, params.q)
    reuse = [_ReuseActor(pi, agent, params.horizon) for pi in sources]
    actors = reuse + [agent]
    n = len(actors)
    sums = np.zeros(n)
    uses = np.zeros(n)
    rng_env = child_rng(seed, "episodes")
    rng_sel = child_rng(seed, "arm-select")
    norm = ReturnNormalizer.for_mdp(target)
    rec = LearningRecord()
    everyone = tuple(range(n))
    tau = params.tau0
    for _ in range(params.t_horizon):
        untried = np.flatnonzero(uses == 0)
        if untried.size:
            k = int(untried[0])
        else:
            means = np.divide(sums, uses, out=np.zeros(n), where=uses > 0)
            k = int(rng_sel.choice(n, p=softmax_probs(means, tau)))
        raw = run_episode(target, actors[k], params.horizon, rng_env).discounted_return
        x = norm(raw)
        sums[k] += x
        uses[k] += 1
        rec.append(k, raw, x, everyone)
        tau = max(params.tau_min, tau * params.tau_decay)
    rec.clipped = norm.clipped
    return rec
