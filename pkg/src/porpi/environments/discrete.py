"""Small tabular POMDPs: verification targets for the tabular lab and the
particle filter, plus a bandit used by the tree-search tests."""
from __future__ import annotations

import numpy as np

from ..core import PomdpModel

_ROW_TOL = 1e-12


class DiscretePomdp(PomdpModel):
    """Fully tabular POMDP with enumerable states, actions and observations.

    States, actions and observations are integer indices. Tables:
    ``transition_table[a, s, s']``, ``observation_table[a, s', o]``,
    ``reward_table[s, a]``.
    """

    def __init__(
        self,
        transition_table: np.ndarray,
        observation_table: np.ndarray,
        reward_table: np.ndarray,
        discount: float,
        initial_belief: np.ndarray,
        state_names: list[str] | None = None,
        action_names: list[str] | None = None,
        observation_names: list[str] | None = None,
        name: str = "discrete",
    ) -> None:
        T = np.asarray(transition_table, dtype=float)
        Z = np.asarray(observation_table, dtype=float)
        R = np.asarray(reward_table, dtype=float)
        b0 = np.asarray(initial_belief, dtype=float)
        n_a, n_s, _ = T.shape
        n_o = Z.shape[2]
        if T.shape != (n_a, n_s, n_s) or Z.shape != (n_a, n_s, n_o) or R.shape != (n_s, n_a):
            raise ValueError("inconsistent table shapes")
        if np.max(np.abs(T.sum(axis=2) - 1.0)) > _ROW_TOL:
            raise ValueError("transition rows must sum to 1")
        if np.max(np.abs(Z.sum(axis=2) - 1.0)) > _ROW_TOL:
            raise ValueError("observation rows must sum to 1")
        if abs(b0.sum() - 1.0) > _ROW_TOL or np.any(b0 < 0):
            raise ValueError("initial belief must be a distribution")
        if not 0.0 < discount < 1.0:
            raise ValueError("discount must be strictly inside (0, 1)")
        self.transition_table = T
        self.observation_table = Z
        self.reward_table = R
        self._discount = float(discount)
        self.initial_belief = b0
        self._rmax = float(np.max(np.abs(R)))
        self.state_names = state_names or [f"s{i}" for i in range(n_s)]
        self.action_names = action_names or [f"a{i}" for i in range(n_a)]
        self.observation_names = observation_names or [f"o{i}" for i in range(n_o)]
        self.name = name

    @property
    def discount(self) -> float:
        return self._discount

    @property
    def rmax(self) -> float:
        return self._rmax

    @property
    def n_states(self) -> int:
        return self.transition_table.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition_table.shape[0]

    @property
    def n_observations(self) -> int:
        return self.observation_table.shape[2]

    def sample_transition(self, s: int, a: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.transition_table[a, s]))

    def sample_observation(self, s_next: int, a: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_observations, p=self.observation_table[a, s_next]))

    def reward(self, s: int, a: int, s_next: int) -> float:
        return float(self.reward_table[s, a])

    def sample_initial_state(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.initial_belief))

    def sample_random_action(self, s: int, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_actions))

    # Exact belief machinery used by the tabular lab.
    def obs_probs(self, b: np.ndarray, a: int) -> np.ndarray:
        """Vector of P(o | a, b) over all observations."""
        return (b @ self.transition_table[a]) @ self.observation_table[a]

    def tau(self, b: np.ndarray, a: int, o: int) -> np.ndarray:
        """Exact Bayes belief update; raises on zero-probability observations."""
        pushed = b @ self.transition_table[a]
        unnorm = pushed * self.observation_table[a][:, o]
        z = unnorm.sum()
        if z <= 0.0:
            raise ValueError(f"observation {o} has zero probability under (b, a={a})")
        return unnorm / z


def tiger(
    accuracy: float = 0.85,
    r_listen: float = -1.0,
    r_correct: float = 10.0,
    r_wrong: float = -100.0,
    discount: float = 0.95,
) -> DiscretePomdp:
    """Classic two-door tiger problem; opening a door resets the tiger."""
    # states: 0 = tiger-left, 1 = tiger-right
    # actions: 0 = listen, 1 = open-left, 2 = open-right
    # observations: 0 = hear-left, 1 = hear-right
    T = np.array(
        [
            [[1.0, 0.0], [0.0, 1.0]],
            [[0.5, 0.5], [0.5, 0.5]],
            [[0.5, 0.5], [0.5, 0.5]],
        ]
    )
    Z = np.array(
        [
            [[accuracy, 1.0 - accuracy], [1.0 - accuracy, accuracy]],
            [[0.5, 0.5], [0.5, 0.5]],
            [[0.5, 0.5], [0.5, 0.5]],
        ]
    )
    R = np.array(
        [
            [r_listen, r_wrong, r_correct],
            [r_listen, r_correct, r_wrong],
        ]
    )
    return DiscretePomdp(
        T, Z, R, discount, np.array([0.5, 0.5]),
        state_names=["tiger-left", "tiger-right"],
        action_names=["listen", "open-left", "open-right"],
        observation_names=["hear-left", "hear-right"],
        name="tiger",
    )


def absorbing_toy(rewards: tuple = (1.0, 0.0), discount: float = 0.5) -> DiscretePomdp:
    """One state, two actions, one observation: the smallest problem with a
    nontrivial softmax policy. Q* is (r1, r2) + discount * max / (1 - discount)."""
    T = np.ones((2, 1, 1))
    Z = np.ones((2, 1, 1))
    R = np.array([[rewards[0], rewards[1]]])
    return DiscretePomdp(
        T, Z, R, discount, np.array([1.0]),
        state_names=["only"],
        action_names=["a1", "a2"],
        name="absorbing_toy",
    )


def noisy_chain_3(discount: float = 0.9) -> DiscretePomdp:
    """Three-state corridor with noisy position readings. Moving right from
    the end cell pays off, moving right elsewhere costs a little."""
    stay = 0.1
    T = np.zeros((2, 3, 3))
    for s in range(3):
        left = max(s - 1, 0)
        right = min(s + 1, 2)
        T[0, s, left] += 1.0 - stay
        T[0, s, s] += stay
        T[1, s, right] += 1.0 - stay
        T[1, s, s] += stay
    acc = 0.8
    Z = np.zeros((2, 3, 3))
    for a in range(2):
        for s in range(3):
            for o in range(3):
                Z[a, s, o] = acc if o == s else (1.0 - acc) / 2.0
    R = np.array([[-1.0, -1.0], [-1.0, -1.0], [-1.0, 5.0]])
    return DiscretePomdp(
        T, Z, R, discount, np.array([1.0, 0.0, 0.0]),
        state_names=["left", "mid", "right"],
        action_names=["go-left", "go-right"],
        observation_names=["see-left", "see-mid", "see-right"],
        name="noisy_chain_3",
    )


DISCRETE_SUITE = {
    "tiger": tiger,
    "absorbing_toy": absorbing_toy,
    "noisy_chain_3": noisy_chain_3,
}


class BernoulliBandit(PomdpModel):
    """Episodic multi-armed bandit as a degenerate POMDP: one decision, then
    terminal. Arm ``a`` pays 1 with probability ``probs[a]``."""

    def __init__(self, probs: tuple, discount: float = 0.5) -> None:
        self.probs = tuple(float(p) for p in probs)
        self._discount = float(discount)

    @property
    def discount(self) -> float:
        return self._discount

    @property
    def rmax(self) -> float:
        return 1.0

    def is_terminal(self, s: int) -> bool:
        return s != 0

    def sample_transition(self, s: int, a: int, rng: np.random.Generator) -> int:
        return 1 if rng.random() < self.probs[a] else 2

    def sample_observation(self, s_next: int, a: int, rng: np.random.Generator) -> int:
        return 0

    def reward(self, s: int, a: int, s_next: int) -> float:
        return 1.0 if s_next == 1 else 0.0

    def sample_random_action(self, s: int, rng: np.random.Generator) -> int:
        return int(rng.integers(len(self.probs)))
