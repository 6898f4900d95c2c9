"""Comparison planners: the bare heuristic policy, a fixed-reference
tree solver, and UCT over a fixed fan of direction macros."""
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
from .planner import PlannerConfig, PorpiPlanner, SamplerFailure


class _FlatBeliefMixin:
    """Belief tracking shared by planners that keep no tree across steps."""

    particle_target: int

    def reset(self, particles: BeliefParticleSet) -> None:
        self.particles = particles

    def belief_particles(self) -> list:
        return self.particles.particles

    def advance(self, macro, mo, model, rng) -> dict:
        depleted = False
        try:
            self.particles = belief_update(
                self.particles, macro, mo, model, rng, self.particle_target
            )
        except ParticleDepletionError:
            self.particles = transition_prior_particles(
                self.particles, macro, model, rng, self.particle_target
            )
            depleted = True
        return {"depletion_fallback": depleted}


def refpol_step(b: BeliefParticleSet, sampler, rng: np.random.Generator) -> MacroAction:
    """Sample one particle and return the heuristic sampler's macro verbatim."""
    s = b.sample(rng)
    try:
        macro = sampler.sample(None, s, rng)
    except SamplerFailure:
        macro = None
    if macro is None:
        model = sampler.model
        a = model.sample_random_action(s, rng)
        macro = MacroAction.from_primitives([a] * min(3, sampler.max_macro_len), model)
    return macro


class RefPolPlanner(_FlatBeliefMixin):
    """No POMDP planning at all: execute whatever the sampler proposes."""

    name = "refpol"

    def __init__(self, sampler, particle_target: int = 200) -> None:
        self.sampler = sampler
        self.particle_target = particle_target
        self.particles: BeliefParticleSet | None = None

    def plan(self, model: PomdpModel, rng: np.random.Generator):
        macro = refpol_step(self.particles, self.sampler, rng)
        return macro, {"n_sims": 0, "plan_time_s": 0.0, "tree_nodes": 0}


class RefSolverPlanner(PorpiPlanner):
    """Same tree skeleton as the main planner, but preferences come from a
    fixed reference policy (uniform over the node's sampled candidates by
    default) instead of iterative reference replacement."""

    name = "refsolver"

    def __init__(self, config: PlannerConfig, sampler, heuristic=None, reference_logprob=None) -> None:
        super().__init__(config, sampler, heuristic)
        self._reference_logprob = reference_logprob

    def _update_preference(self, node, edge, gamma_pow: float) -> None:
        if self._reference_logprob is not None:
            lp = self._reference_logprob(node, edge)
        else:
            lp = -math.log(len(node.edges))
        edge.preference = (
            lp / self.config.eta + edge.mean_reward + gamma_pow * edge.mean_descendant
        )


def refsolver_plan(root, config: PlannerConfig, sampler, model: PomdpModel,
                   rng: np.random.Generator, heuristic=None) -> MacroAction:
    """One planning call of the fixed-reference solver from a prepared root."""
    planner = RefSolverPlanner(config, sampler, heuristic)
    planner.root = root
    macro, _ = planner.plan(model, rng)
    return macro


# -- POMCP ----------------------------------------------------------------

@dataclass
class PomcpConfig:
    num_sims: int | None = 2000
    time_budget_s: float | None = None
    exploration: float | None = None  # default Rmax, set at plan time
    d_max: int = 30
    max_macro_len: int = 6
    n_directions: int = 16
    particle_target: int = 200
    rollout_macros: int | None = None  # rollout length cap, None = to d_max


class UctEdge:
    __slots__ = ("macro", "visits", "q_mean", "children")

    def __init__(self, macro: MacroAction) -> None:
        self.macro = macro
        self.visits = 0
        self.q_mean = 0.0
        self.children: dict = {}

    def child(self, obs_key) -> "UctNode":
        node = self.children.get(obs_key)
        if node is None:
            node = UctNode()
            self.children[obs_key] = node
        return node


class UctNode:
    """UCT tree node: visit count, per-action mean returns, particles."""

    __slots__ = ("visits", "edges", "particles")

    def __init__(self) -> None:
        self.visits = 0
        self.edges: list[UctEdge] | None = None
        self.particles: list = []


def fibonacci_sphere_directions(n: int) -> list:
    """n approximately equally spaced unit vectors in 3D."""
    out = []
    golden = math.pi * (3.0 - math.sqrt(5.0))
    for i in range(n):
        z = 1.0 - 2.0 * (i + 0.5) / n
        r = math.sqrt(max(0.0, 1.0 - z * z))
        th = golden * i
        out.append((r * math.cos(th), r * math.sin(th), z))
    return out


def fixed_macro_set(model: PomdpModel, config: PomcpConfig) -> list:
    """The fixed fan POMCP enumerates: equally spaced azimuths in 2D, a
    Fibonacci-sphere layout in 3D, each repeated to the macro length;
    discrete models just enumerate their primitive actions."""
    n_actions = getattr(model, "n_actions", None)
    if n_actions is not None:
        return [MacroAction.from_primitives([a], model) for a in range(n_actions)]
    probs = getattr(model, "probs", None)
    if probs is not None:
        return [MacroAction.from_primitives([a], model) for a in range(len(probs))]
    dim = model.scenario.dim
    n = config.n_directions
    if dim == 2:
        dirs = [
            (math.cos(2.0 * math.pi * i / n), math.sin(2.0 * math.pi * i / n))
            for i in range(n)
        ]
    else:
        dirs = fibonacci_sphere_directions(n)
    return [
        MacroAction.from_primitives([d] * config.max_macro_len, model) for d in dirs
    ]


class PomcpPlanner(_FlatBeliefMixin):
    """POMCP: UCB1 selection over the fixed macro fan, random-rollout leaf
    evaluation, mean-return backups; a fresh tree every planning call."""

    name = "pomcp"

    def __init__(self, config: PomcpConfig) -> None:
        self.config = config
        self.particle_target = config.particle_target
        self.particles: BeliefParticleSet | None = None
        self.last_root: UctNode | None = None

    def plan(self, model: PomdpModel, rng: np.random.Generator):
        root = UctNode()
        root.particles = list(self.particles.particles)
        start = time.perf_counter()
        sims = 0
        cfg = self.config
        macro_set = fixed_macro_set(model, cfg)
        c = cfg.exploration if cfg.exploration is not None else model.rmax
        while True:
            if cfg.num_sims is not None and sims >= cfg.num_sims:
                break
            if cfg.time_budget_s is not None and time.perf_counter() - start > cfg.time_budget_s:
                break
            s = root.particles[rng.integers(len(root.particles))]
            _uct_simulate(root, s, 0, model, cfg, macro_set, c, rng)
            sims += 1
        self.last_root = root
        macro = pomcp_best_macro(root, macro_set)
        stats = {
            "n_sims": sims,
            "plan_time_s": time.perf_counter() - start,
            "tree_nodes": _count_uct_nodes(root),
        }
        return macro, stats


def pomcp_best_macro(root: UctNode, macro_set: list) -> MacroAction:
    """Argmax-visit action; unexpanded roots fall back to the first macro."""
    if not root.edges:
        return macro_set[0]
    best = root.edges[0]
    for e in root.edges[1:]:
        if e.visits > best.visits:
            best = e
    return best.macro


def _count_uct_nodes(root: UctNode) -> int:
    n = 0
    stack = [root]
    while stack:
        node = stack.pop()
        n += 1
        for e in node.edges or []:
            stack.extend(e.children.values())
    return n


def _uct_rollout(s, depth: int, model: PomdpModel, cfg: PomcpConfig, macro_set: list,
                 rng: np.random.Generator) -> float:
    total = 0.0
    scale = 1.0
    gamma = model.discount
    macros_left = cfg.rollout_macros if cfg.rollout_macros is not None else float("inf")
    while depth <= cfg.d_max and macros_left > 0 and not model.is_terminal(s):
        macro = macro_set[rng.integers(len(macro_set))]
        outcome = macro_step(model, s, macro, rng)
        total += scale * outcome.discounted_reward
        scale *= gamma**outcome.steps_survived
        depth += outcome.steps_survived
        macros_left -= 1
        s = outcome.state
        if outcome.terminal:
            break
    return total


def _uct_simulate(node: UctNode, s, depth: int, model: PomdpModel, cfg: PomcpConfig,
                  macro_set: list, c: float, rng: np.random.Generator) -> float:
    if model.is_terminal(s) or depth > cfg.d_max:
        return 0.0
    if node.edges is None:
        node.edges = [UctEdge(m) for m in macro_set]
        return _uct_rollout(s, depth, model, cfg, macro_set, rng)
    node.particles.append(s)
    node.visits += 1
    edge = None
    for e in node.edges:
        if e.visits == 0:
            edge = e
            break
    if edge is None:
        log_n = math.log(node.visits)
        best_score = -math.inf
        for e in node.edges:
            score = e.q_mean + c * math.sqrt(log_n / e.visits)
            if score > best_score:
                best_score = score
                edge = e
    outcome = macro_step(model, s, edge.macro, rng)
    if outcome.terminal:
        cont = 0.0
    else:
        child = edge.child(outcome.observation.key)
        cont = _uct_simulate(
            child, outcome.state, depth + outcome.steps_survived, model, cfg, macro_set, c, rng
        )
    g = outcome.discounted_reward + model.discount**outcome.steps_survived * cont
    vmax = model.vmax
    g = min(max(g, -vmax), vmax)
    edge.visits += 1
    edge.q_mean += (g - edge.q_mean) / edge.visits
    return g


def pomcp_plan(root: UctNode, config: PomcpConfig, model: PomdpModel,
               rng: np.random.Generator) -> MacroAction:
    """Run a budgeted UCT search from a prepared root (particles already
    attached) and return the argmax-visit macro."""
    macro_set = fixed_macro_set(model, config)
    c = config.exploration if config.exploration is not None else model.rmax
    start = time.perf_counter()
    sims = 0
    while True:
        if config.num_sims is not None and sims >= config.num_sims:
            break
        if config.time_budget_s is not None and time.perf_counter() - start > config.time_budget_s:
            break
        s = root.particles[rng.integers(len(root.particles))]
        _uct_simulate(root, s, 0, model, config, macro_set, c, rng)
        sims += 1
    return pomcp_best_macro(root, macro_set)
