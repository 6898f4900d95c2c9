"""Anytime online planner: a preference-carrying belief tree over macro
actions, grown by progressive widening, explored by softmax action sampling
and backed up with log-sum-exp values.

One search tree is owned and mutated by exactly one episode; independent
episodes can run concurrently.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    BeliefParticleSet,
    MacroAction,
    ParticleDepletionError,
    PomdpModel,
    belief_update,
    macro_step,
    transition_prior_particles,
)


@dataclass
class PlannerConfig:
    """Search parameters. ``kappa``/``alpha`` gate progressive widening,
    ``d_max`` bounds depth in primitive steps, ``eta`` is the softmax
    temperature."""

    kappa: float = 1.0
    alpha: float = 0.5
    d_max: int = 30
    eta: float = 0.01
    max_macro_len: int = 6
    num_sims: int | None = 2000
    time_budget_s: float | None = None
    particle_target: int = 200

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be strictly inside (0, 1)")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.max_macro_len < 1:
            raise ValueError("max_macro_len must be >= 1")
        if self.num_sims is None and self.time_budget_s is None:
            raise ValueError("need a simulation-count or wall-clock budget")
        if self.particle_target < 1:
            raise ValueError("particle_target must be >= 1")


class ActionEdge:
    """Per-macro statistics hanging off a history node."""

    __slots__ = ("macro", "visits", "mean_reward", "mean_descendant", "preference", "children")

    def __init__(self, macro: MacroAction) -> None:
        self.macro = macro
        self.visits = 0
        self.mean_reward = 0.0
        self.mean_descendant = 0.0
        self.preference = 0.0
        self.children: dict = {}

    def child(self, obs_key, particle_capacity: int) -> "HistoryNode":
        node = self.children.get(obs_key)
        if node is None:
            node = HistoryNode(BeliefParticleSet([], particle_capacity, "tree"))
            self.children[obs_key] = node
        return node


class HistoryNode:
    """Belief node: visit count, log-sum-exp value, particles and edges."""

    __slots__ = ("visits", "value", "particles", "edges", "edge_keys")

    def __init__(self, particles: BeliefParticleSet) -> None:
        self.visits = 0
        self.value = 0.0
        self.particles = particles
        self.edges: list[ActionEdge] = []
        self.edge_keys: dict = {}

    def add_edge(self, macro: MacroAction) -> ActionEdge | None:
        """Append an edge unless a macro with the same key exists."""
        if macro.key in self.edge_keys:
            return None
        edge = ActionEdge(macro)
        self.edge_keys[macro.key] = edge
        self.edges.append(edge)
        return edge

    def best_edge(self) -> ActionEdge:
        """Highest preference; ties go to the earliest-added macro."""
        best = self.edges[0]
        for e in self.edges[1:]:
            if e.preference > best.preference:
                best = e
        return best


class SamplerFailure(Exception):
    """Raised by action samplers that could not produce a candidate."""


class ZeroHeuristic:
    """Leaf estimate that always returns 0."""

    def value(self, node, state) -> float:
        return 0.0


def logsumexp_value(node_or_prefs, eta: float) -> float:
    """(1/eta) log sum exp(eta * preferences), max-shift stabilised."""
    if isinstance(node_or_prefs, HistoryNode):
        prefs = [e.preference for e in node_or_prefs.edges]
    else:
        prefs = list(node_or_prefs)
    if not prefs:
        raise ValueError("log-sum-exp needs at least one preference")
    m = max(eta * p for p in prefs)
    acc = 0.0
    for p in prefs:
        acc += math.exp(eta * p - m)
    return (m + math.log(acc)) / eta


def sample_pref_softmax(node: HistoryNode, eta: float, rng: np.random.Generator) -> int:
    """Index of a child sampled with probability proportional to
    exp(eta * preference)."""
    edges = node.edges
    if not edges:
        raise ValueError("softmax sampling on a node with no children")
    if len(edges) == 1:
        return 0
    m = max(eta * e.preference for e in edges)
    weights = [math.exp(eta * e.preference - m) for e in edges]
    u = rng.random() * sum(weights)
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u <= acc:
            return i
    return len(edges) - 1


def softmax_probs(node: HistoryNode, eta: float) -> list:
    m = max(eta * e.preference for e in node.edges)
    w = [math.exp(eta * e.preference - m) for e in node.edges]
    z = sum(w)
    return [x / z for x in w]


def progressive_widen(
    node: HistoryNode,
    config: PlannerConfig,
    sampler,
    state,
    rng: np.random.Generator,
) -> MacroAction | None:
    """Query the sampler for a candidate macro when the child count is under
    kappa * N^alpha; returns the macro actually added (None when at the
    threshold, on sampler failure, or when the candidate was a duplicate)."""
    if len(node.edges) >= config.kappa * node.visits**config.alpha:
        return None
    try:
        macro = sampler.sample(node, state, rng)
    except SamplerFailure:
        return None
    if macro is None:
        return None
    return None if node.add_edge(macro) is None else macro


class PorpiPlanner:
    """Owns one search tree per episode and exposes the plan/advance loop."""

    name = "porpi"

    def __init__(self, config: PlannerConfig, sampler, heuristic=None) -> None:
        self.config = config
        self.sampler = sampler
        self.heuristic = heuristic if heuristic is not None else ZeroHeuristic()
        self.root: HistoryNode | None = None

    def reset(self, particles: BeliefParticleSet) -> None:
        self.root = HistoryNode(particles)

    def belief_particles(self) -> list:
        return self.root.particles.particles if self.root is not None else []

    # -- search ----------------------------------------------------------
    def simulate(self, node: HistoryNode, state, depth: int, model: PomdpModel,
                 rng: np.random.Generator) -> float:
        cfg = self.config
        if model.is_terminal(state):
            return 0.0
        if depth > cfg.d_max:
            return self.heuristic.value(node, state)
        if depth > 0:
            node.particles.add(state)
        node.visits += 1
        progressive_widen(node, cfg, self.sampler, state, rng)
        if not node.edges:
            # softmax sampling needs a child; fall back to a short random macro
            node.add_edge(self._random_macro(model, state, rng))
        idx = sample_pref_softmax(node, cfg.eta, rng)
        edge = node.edges[idx]
        resampled = node.particles.sample(rng)
        outcome = macro_step(model, resampled, edge.macro, rng)
        child = edge.child(outcome.observation.key, cfg.particle_target)
        edge.visits += 1
        edge.mean_reward += (outcome.discounted_reward - edge.mean_reward) / edge.visits
        if outcome.terminal:
            descendant = 0.0
        else:
            descendant = self.simulate(
                child, outcome.state, depth + outcome.steps_survived, model, rng
            )
        edge.mean_descendant += (descendant - edge.mean_descendant) / edge.visits
        self._update_preference(node, edge, model.discount**outcome.steps_survived)
        node.value = logsumexp_value(node, cfg.eta)
        return node.value

    def _update_preference(self, node: HistoryNode, edge: ActionEdge, gamma_pow: float) -> None:
        edge.preference = (
            edge.preference - node.value + edge.mean_reward + gamma_pow * edge.mean_descendant
        )

    def _random_macro(self, model: PomdpModel, state, rng: np.random.Generator) -> MacroAction:
        length = min(3, self.config.max_macro_len)
        a = model.sample_random_action(state, rng)
        return MacroAction.from_primitives([a] * length, model)

    # -- episode interface -------------------------------------------------
    def plan(self, model: PomdpModel, rng: np.random.Generator) -> tuple[MacroAction, dict]:
        cfg = self.config
        root = self.root
        start = time.perf_counter()
        sims = 0
        while True:
            if cfg.num_sims is not None and sims >= cfg.num_sims:
                break
            if cfg.time_budget_s is not None and time.perf_counter() - start > cfg.time_budget_s:
                break
            s = root.particles.sample(rng)
            self.simulate(root, s, 0, model, rng)
            sims += 1
        if not root.edges:
            # budget produced nothing usable (e.g. all-terminal particles):
            # force a single widening so there is something to execute
            try:
                macro = self.sampler.sample(root, root.particles.sample(rng), rng)
            except SamplerFailure:
                macro = None
            if macro is None:
                macro = self._random_macro(model, root.particles.sample(rng), rng)
            root.add_edge(macro)
        stats = {
            "n_sims": sims,
            "plan_time_s": time.perf_counter() - start,
            "tree_nodes": count_nodes(root),
        }
        return root.best_edge().macro, stats

    def advance(self, macro: MacroAction, mo, model: PomdpModel, rng: np.random.Generator) -> dict:
        """Move the root to the executed child and replenish its belief."""
        cfg = self.config
        edge = self.root.edge_keys[macro.key]
        child = edge.child(mo.key, cfg.particle_target)
        depleted = False
        try:
            fresh = belief_update(self.root.particles, macro, mo, model, rng, cfg.particle_target)
        except ParticleDepletionError:
            fresh = transition_prior_particles(
                self.root.particles, macro, model, rng, cfg.particle_target
            )
            depleted = True
        child.particles.extend(fresh.particles)
        self.root = child
        return {"depletion_fallback": depleted}


def count_nodes(root: HistoryNode) -> int:
    n = 0
    stack = [root]
    while stack:
        node = stack.pop()
        n += 1
        for edge in node.edges:
            stack.extend(edge.children.values())
    return n


def audit_tree(root: HistoryNode, config: PlannerConfig, tol: float = 1e-12) -> list:
    """Check every node for the two structural invariants: value equals the
    log-sum-exp of its preferences (0 for childless nodes) and the widening
    bound |children| <= kappa * N^alpha + 1. Returns violation strings."""
    problems = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.edges:
            expect = logsumexp_value(node, config.eta)
            if abs(node.value - expect) > tol:
                problems.append(f"value {node.value!r} != log-sum-exp {expect!r}")
            visit_sum = sum(e.visits for e in node.edges)
            if node.visits != visit_sum:
                problems.append(f"visits {node.visits} != sum of child visits {visit_sum}")
        elif node.value != 0.0:
            problems.append(f"childless node has value {node.value!r}")
        bound = config.kappa * node.visits**config.alpha + 1.0
        if len(node.edges) > bound + 1e-9:
            problems.append(f"{len(node.edges)} children exceeds widening bound {bound}")
        for edge in node.edges:
            stack.extend(edge.children.values())
    return problems


def plan_and_execute(root, env, config: PlannerConfig, sampler, heuristic, rng):
    """Run the full plan/execute/observe loop from a prepared root node.

    Convenience wrapper over :func:`porpi.runtime.run_episode` with this
    module's planner; returns the episode trace.
    """
    from .runtime import run_episode

    planner = PorpiPlanner(config, sampler, heuristic)
    planner.reset(root.particles if isinstance(root, HistoryNode) else root)
    return run_episode(planner, env, rng)
