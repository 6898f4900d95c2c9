"""Generative POMDP interface, particle beliefs and macro-action primitives.

Everything downstream (tree planners, baselines, the tabular lab) talks to
models through this module: a model supplies sampled transitions,
observations and rewards, and the functions here compose them into macro
steps and particle-filter belief updates.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

State = Any
Action = Any
Observation = Any


class ModelContractError(Exception):
    """A model produced something outside its declared contract."""


class ParticleDepletionError(Exception):
    """Rejection resampling found no particle consistent with an observation."""


class UnsupportedOperationError(Exception):
    """Operation requires structure (e.g. enumerable states) the model lacks."""


NULL_OBSERVATION = ("__null__",)
"""Distinguished no-reading symbol, distinct from any real observation."""


class PomdpModel(abc.ABC):
    """Generative POMDP: sampled transitions/observations plus reward bounds.

    Subclasses fix a state, action and observation representation and must
    keep every sampled reward within ``[-rmax, rmax]``. Terminal states
    absorb: stepping from one returns the same state, zero reward and the
    null observation.
    """

    @property
    @abc.abstractmethod
    def discount(self) -> float:
        """Discount factor, strictly inside (0, 1)."""

    @property
    @abc.abstractmethod
    def rmax(self) -> float:
        """Finite bound on the magnitude of a single-step reward."""

    @property
    def vmax(self) -> float:
        """Value bound rmax / (1 - discount)."""
        return self.rmax / (1.0 - self.discount)

    @abc.abstractmethod
    def sample_transition(self, s: State, a: Action, rng: np.random.Generator) -> State:
        ...

    @abc.abstractmethod
    def sample_observation(self, s_next: State, a: Action, rng: np.random.Generator) -> Observation:
        ...

    @abc.abstractmethod
    def reward(self, s: State, a: Action, s_next: State) -> float:
        """Realised reward of the transition (s, a) -> s_next."""

    def is_terminal(self, s: State) -> bool:
        return False

    def is_success(self, s: State) -> bool:
        """Whether ``s`` counts as mission success for reporting purposes."""
        return False

    # Keys discretise continuous actions/observations so they can be
    # deduplicated and used to index tree children.
    def action_key(self, a: Action) -> Hashable:
        return a

    def observation_key(self, o: Observation) -> Hashable:
        return o

    def macro_observation_key(self, observations: Sequence[Observation]) -> Hashable:
        """Key under which a whole macro observation is compared for equality."""
        return tuple(self.observation_key(o) for o in observations)

    def sample_random_action(self, s: State, rng: np.random.Generator) -> Action:
        """Fallback primitive action, used when a heuristic sampler fails."""
        raise UnsupportedOperationError(f"{type(self).__name__} has no random-action fallback")


@dataclass
class MacroAction:
    """Open-loop sequence of primitive actions executed as one planning action."""

    primitives: tuple
    key: Hashable = None

    def __post_init__(self) -> None:
        self.primitives = tuple(self.primitives)
        if len(self.primitives) < 1:
            raise ValueError("macro action needs at least one primitive")

    def __len__(self) -> int:
        return len(self.primitives)

    @staticmethod
    def from_primitives(primitives: Iterable[Action], model: PomdpModel) -> "MacroAction":
        prims = tuple(primitives)
        return MacroAction(prims, key=tuple(model.action_key(a) for a in prims))


@dataclass
class MacroObservation:
    """Primitive observations received along a macro action, plus their key."""

    primitives: tuple
    key: Hashable

    def __len__(self) -> int:
        return len(self.primitives)


@dataclass
class MacroOutcome:
    """Everything a generative macro rollout produced."""

    state: State
    observation: MacroObservation
    rewards: tuple
    discounted_reward: float
    steps_survived: int
    terminal: bool


class BeliefParticleSet:
    """Unweighted collection of state particles; sampling is uniform."""

    __slots__ = ("particles", "capacity", "provenance")

    def __init__(self, particles: Iterable[State], capacity: int, provenance: str = "") -> None:
        self.particles: list = list(particles)
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.provenance = provenance

    def __len__(self) -> int:
        return len(self.particles)

    def sample(self, rng: np.random.Generator) -> State:
        if not self.particles:
            raise ModelContractError("sampling from an empty particle set")
        n = len(self.particles)
        idx = int(rng.random() * n)
        return self.particles[idx if idx < n else n - 1]

    def add(self, s: State) -> None:
        self.particles.append(s)

    def extend(self, states: Iterable[State]) -> None:
        self.particles.extend(states)


def generative_step(
    model: PomdpModel, s: State, a: Action, rng: np.random.Generator
) -> tuple[State, Observation, float]:
    """One primitive step of the generative model, with terminal absorption."""
    if model.is_terminal(s):
        return s, NULL_OBSERVATION, 0.0
    s_next = model.sample_transition(s, a, rng)
    o = model.sample_observation(s_next, a, rng)
    r = model.reward(s, a, s_next)
    if not math.isfinite(r) or abs(r) > model.rmax + 1e-9:
        raise ModelContractError(f"reward {r} violates |r| <= rmax = {model.rmax}")
    return s_next, o, r


def macro_step(
    model: PomdpModel,
    s: State,
    macro: MacroAction,
    rng: np.random.Generator,
    gamma: float | None = None,
) -> MacroOutcome:
    """Roll a macro action through the generative model.

    The discounted reward is sum_t gamma^t r_t over the steps actually
    survived; the macro observation is truncated at terminal entry.
    """
    if gamma is None:
        gamma = model.discount
    rollout = getattr(model, "rollout_macro", None)
    if rollout is not None:
        s, observations, rewards, disc, steps, terminal = rollout(s, macro.primitives, gamma, rng)
    else:
        rewards = []
        observations = []
        disc = 0.0
        scale = 1.0
        steps = 0
        for a in macro.primitives:
            s, o, r = generative_step(model, s, a, rng)
            rewards.append(r)
            observations.append(o)
            disc += scale * r
            scale *= gamma
            steps += 1
            if model.is_terminal(s):
                break
        terminal = model.is_terminal(s)
    mo = MacroObservation(tuple(observations), key=model.macro_observation_key(observations))
    return MacroOutcome(
        state=s,
        observation=mo,
        rewards=tuple(rewards),
        discounted_reward=disc,
        steps_survived=steps,
        terminal=terminal,
    )


def _propagate_consistent(
    model: PomdpModel,
    s: State,
    macro: MacroAction,
    mo: MacroObservation,
    rng: np.random.Generator,
) -> State | None:
    """Propagate one particle through ``macro``; None unless every primitive
    observation key matches ``mo`` and the particle survives all of it."""
    n = len(mo)
    obs = []
    for t in range(n):
        s, o, _ = generative_step(model, s, macro.primitives[t], rng)
        obs.append(o)
        if model.is_terminal(s):
            if t < n - 1:
                return None
    if model.is_terminal(s):
        # The episode continued in reality, so terminal particles have
        # zero posterior mass.
        return None
    if model.macro_observation_key(obs) != mo.key:
        return None
    return s


def belief_update(
    b: BeliefParticleSet,
    macro: MacroAction,
    mo: MacroObservation,
    model: PomdpModel,
    rng: np.random.Generator,
    target_count: int,
    retry_factor: int = 10,
) -> BeliefParticleSet:
    """Particle-filter update: rejection resampling against the realised
    macro observation, replenished to ``target_count``.

    Raises :class:`ParticleDepletionError` when the retry budget produces no
    consistent particle; the caller is expected to fall back to
    :func:`transition_prior_particles` and flag the episode.
    """
    if len(b) == 0:
        raise ModelContractError("belief_update on empty particle set")
    accepted: list = []
    budget = retry_factor * target_count
    attempts = 0
    while len(accepted) < target_count and attempts < budget:
        attempts += 1
        s = b.sample(rng)
        s_final = _propagate_consistent(model, s, macro, mo, rng)
        if s_final is not None:
            accepted.append(s_final)
    if not accepted:
        raise ParticleDepletionError(
            f"no particle consistent with macro observation after {attempts} attempts"
        )
    while len(accepted) < target_count:
        accepted.append(accepted[rng.integers(len(accepted))])
    return BeliefParticleSet(accepted, capacity=target_count, provenance="belief_update")


def transition_prior_particles(
    b: BeliefParticleSet,
    macro: MacroAction,
    model: PomdpModel,
    rng: np.random.Generator,
    target_count: int,
) -> BeliefParticleSet:
    """Depletion fallback: propagate through the macro ignoring observations."""
    out: list = []
    attempts = 0
    while len(out) < target_count and attempts < 10 * target_count:
        attempts += 1
        s = b.sample(rng)
        outcome = macro_step(model, s, macro, rng)
        if not outcome.terminal:
            out.append(outcome.state)
    if not out:
        # Everything terminates; keep raw propagated states so the planner
        # can at least keep running.
        for _ in range(target_count):
            out.append(macro_step(model, b.sample(rng), macro, rng).state)
    while len(out) < target_count:
        out.append(out[rng.integers(len(out))])
    return BeliefParticleSet(out, capacity=target_count, provenance="transition_prior_fallback")


def expected_immediate_reward(
    b: "BeliefParticleSet | np.ndarray", a: Action, model: PomdpModel
) -> float:
    """Expected one-step reward under a belief.

    Particle sets give the Monte-Carlo mean of the tabular reward; finite
    belief vectors over a discrete model are summed exactly.
    """
    table = getattr(model, "reward_table", None)
    if isinstance(b, np.ndarray):
        if table is None:
            raise UnsupportedOperationError("exact expected reward needs a tabular model")
        return float(b @ table[:, a])
    if table is not None:
        return float(np.mean([table[s, a] for s in b.particles]))
    raise UnsupportedOperationError("expected_immediate_reward needs a tabular reward")


def observation_likelihood(
    b: "BeliefParticleSet | np.ndarray", a: Action, o: Observation, model: PomdpModel
) -> float:
    """P(o | a, b) for discrete models: sum_{s'} Z(o|s',a) sum_s T(s'|a,s) b(s)."""
    T = getattr(model, "transition_table", None)
    Z = getattr(model, "observation_table", None)
    if T is None or Z is None:
        raise UnsupportedOperationError("observation_likelihood needs enumerable S, O")
    if not isinstance(b, np.ndarray):
        vec = np.zeros(T.shape[1])
        for s in b.particles:
            vec[s] += 1.0
        vec /= vec.sum()
        b = vec
    pushed = b @ T[a]
    return float(pushed @ Z[a][:, o])
