"""Tabular Q-learning behind the episodic actor interface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import StationaryPolicy, TabularMDP


@dataclass(frozen=True)
class QLearningParams:
    alpha: float = 0.2
    epsilon: float = 0.2
    epsilon_decay: float = 0.999
    epsilon_min: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must lie in (0, 1]")
        if not 0.0 <= self.epsilon_min <= 1.0:
            raise ValueError("epsilon_min must lie in [0, 1]")


class QLearningAgent:
    """Epsilon-greedy Q-learning with a zero-initialised table.

    The table persists across episodes; epsilon is multiplied by
    ``epsilon_decay`` at the end of every episode (floored at ``epsilon_min``).
    Exploratory and greedy ties are resolved uniformly at random while acting;
    :meth:`greedy_policy` resolves ties toward the lowest action index.
    """

    def __init__(self, n_states: int, n_actions: int, gamma: float,
                 params: QLearningParams | None = None):
        self.params = params or QLearningParams()
        self.gamma = gamma
        self.n_actions = n_actions
        self.q = np.zeros((n_states, n_actions))
        self.epsilon = self.params.epsilon
        self.episodes = 0

    @classmethod
    def for_mdp(cls, mdp: TabularMDP, params: QLearningParams | None = None) -> "QLearningAgent":
        return cls(mdp.n_states, mdp.n_actions, mdp.gamma, params)

    def begin_episode(self):
        pass

    def greedy_action(self, state: int, rng: np.random.Generator) -> int:
        row = self.q[state]
        best = np.flatnonzero(row == row.max())
        if len(best) == 1:
            return int(best[0])
        return int(best[rng.integers(len(best))])

    def act(self, state: int, rng: np.random.Generator) -> int:
        if self.epsilon > 0 and rng.random() < self.epsilon:
            return int(rng.integers(self.n_actions))
        return self.greedy_action(state, rng)

    def observe(self, state, action, reward, next_state, done):
        target = reward if done else reward + self.gamma * self.q[next_state].max()
        self.q[state, action] += self.params.alpha * (target - self.q[state, action])

    def end_episode(self):
        self.episodes += 1
        self.epsilon = max(self.params.epsilon_min, self.epsilon * self.params.epsilon_decay)

    def greedy_policy(self) -> StationaryPolicy:
        return StationaryPolicy(np.argmax(self.q, axis=1))


def q_learning_actor(mdp: TabularMDP, alpha: float = 0.2, epsilon: float = 0.2,
                     decay: float = 0.999, epsilon_min: float = 0.01) -> QLearningAgent:
    return QLearningAgent.for_mdp(mdp, QLearningParams(alpha, epsilon, decay, epsilon_min))
