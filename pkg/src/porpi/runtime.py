"""Episode execution: true-state environment stepping, the plan/execute
loop shared by every planner, and line-delimited JSON trace files with an
independent return audit."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import BeliefParticleSet, MacroAction, MacroObservation, generative_step

TRACE_FORMAT = "porpi-trace-1"


@dataclass
class StepOutcome:
    observation: MacroObservation
    rewards: tuple
    positions: tuple
    nfz_flags: tuple
    steps: int
    terminal: bool
    success: bool


class Environment:
    """Holds the true (hidden) state and advances it macro by macro.

    For scenarios with an NFZ schedule the executed dynamics always use the
    active set at the current primitive step, while :meth:`planning_model`
    exposes only the currently-active snapshot (the agent has no model of
    future activations).
    """

    def __init__(self, scenario, rng: np.random.Generator) -> None:
        self.scenario = scenario
        self.rng = rng
        self.step_index = 0
        self._models: dict = {}
        model = self.planning_model()
        self.model = model
        self.state = model.sample_initial_state(rng)

    def _schedule_phase(self, step: int):
        schedule = getattr(self.scenario, "nfz_schedule", None)
        if not schedule:
            return None
        phase = None
        for i, (at, _) in enumerate(schedule):
            if step >= at:
                phase = i
        return phase

    def model_at_step(self, step: int):
        phase = self._schedule_phase(step)
        if phase not in self._models:
            if phase is None:
                self._models[phase] = self.scenario.model()
            else:
                self._models[phase] = self.scenario.model(
                    self.scenario.nfz_schedule[phase][1]
                )
        return self._models[phase]

    def planning_model(self):
        return self.model_at_step(self.step_index)

    @property
    def terminal(self) -> bool:
        return self.model_at_step(self.step_index).is_terminal(self.state)

    def initial_particles(self, n: int, rng: np.random.Generator) -> BeliefParticleSet:
        model = self.planning_model()
        return BeliefParticleSet(model.initial_states(n, rng), capacity=n, provenance="spawn")

    def execute_macro(self, macro: MacroAction) -> StepOutcome:
        """Step the true state through the macro, using this environment's
        own rng stream so different planners share identical randomness."""
        rewards = []
        observations = []
        positions = []
        nfz_flags = []
        schedule = getattr(self.scenario, "nfz_schedule", None)
        model = None
        for a in macro.primitives:
            model = self.model_at_step(self.step_index)
            self.state, o, r = generative_step(model, self.state, a, self.rng)
            self.step_index += 1
            rewards.append(r)
            observations.append(o)
            pos = model.position(self.state) if hasattr(model, "position") else self.state
            positions.append(tuple(pos) if isinstance(pos, tuple) else pos)
            if schedule:
                active = self.scenario.active_nfzs_at(self.step_index - 1)
                nfz_flags.append(any(b.contains(positions[-1]) for b in active))
            else:
                nfz_flags.append(False)
            if model.is_terminal(self.state):
                break
        mo = MacroObservation(
            tuple(observations), key=model.macro_observation_key(observations)
        )
        return StepOutcome(
            observation=mo,
            rewards=tuple(rewards),
            positions=tuple(positions),
            nfz_flags=tuple(nfz_flags),
            steps=len(rewards),
            terminal=model.is_terminal(self.state),
            success=model.is_success(self.state),
        )


@dataclass
class StepRecord:
    step: int
    t_start: int
    macro: list
    observation: list
    rewards: list
    r_disc: float
    r_undisc: float
    cum_disc: float
    cum_undisc: float
    positions: list
    nfz_flags: list
    terminal: bool
    plan_time_s: float
    n_sims: int
    tree_nodes: int
    belief: dict
    depletion_fallback: bool


@dataclass
class EpisodeTrace:
    scenario: str
    planner: str
    discount: float
    seed: int | None
    steps: list = field(default_factory=list)
    total_undiscounted: float = 0.0
    total_discounted: float = 0.0
    primitive_steps: int = 0
    success: bool = False
    terminal: bool = False


def _encode_obs(o):
    if isinstance(o, tuple):
        return list(o)
    return o


def run_episode(
    planner,
    env: Environment,
    rng: np.random.Generator,
    max_primitive_steps: int = 200,
    particle_target: int | None = None,
    seed: int | None = None,
) -> EpisodeTrace:
    """Plan/execute/observe until terminal entry or the step budget."""
    model0 = env.planning_model()
    if particle_target is not None:
        target = particle_target
    else:
        cfg = getattr(planner, "config", None)
        target = cfg.particle_target if cfg is not None else 200
    planner.reset(env.initial_particles(target, rng))
    trace = EpisodeTrace(
        scenario=getattr(env.scenario, "name", "?"),
        planner=getattr(planner, "name", type(planner).__name__),
        discount=model0.discount,
        seed=seed,
    )
    gamma = model0.discount
    step = 0
    while env.step_index < max_primitive_steps and not env.terminal:
        model = env.planning_model()
        macro, stats = planner.plan(model, rng)
        t_start = env.step_index
        outcome = env.execute_macro(macro)
        r_disc = 0.0
        for i, r in enumerate(outcome.rewards):
            r_disc += (gamma**i) * r
        r_undisc = float(sum(outcome.rewards))
        trace.total_undiscounted += r_undisc
        trace.total_discounted += (gamma**t_start) * r_disc
        particles = planner.belief_particles() if hasattr(planner, "belief_particles") else []
        belief = (
            model.state_summary(particles)
            if particles and hasattr(model, "state_summary")
            else {"n": len(particles)}
        )
        advance_stats = {"depletion_fallback": False}
        if not outcome.terminal and env.step_index < max_primitive_steps:
            advance_stats = planner.advance(macro, outcome.observation, model, rng)
        trace.steps.append(
            StepRecord(
                step=step,
                t_start=t_start,
                macro=[list(a) if isinstance(a, tuple) else a for a in macro.primitives],
                observation=[_encode_obs(o) for o in outcome.observation.primitives],
                rewards=[float(r) for r in outcome.rewards],
                r_disc=float(r_disc),
                r_undisc=r_undisc,
                cum_disc=float(trace.total_discounted),
                cum_undisc=float(trace.total_undiscounted),
                positions=[list(p) if isinstance(p, tuple) else p for p in outcome.positions],
                nfz_flags=list(outcome.nfz_flags),
                terminal=outcome.terminal,
                plan_time_s=float(stats.get("plan_time_s", 0.0)),
                n_sims=int(stats.get("n_sims", 0)),
                tree_nodes=int(stats.get("tree_nodes", 0)),
                belief=belief,
                depletion_fallback=bool(advance_stats.get("depletion_fallback", False)),
            )
        )
        step += 1
        if outcome.terminal:
            trace.terminal = True
            trace.success = outcome.success
            break
    trace.primitive_steps = env.step_index
    return trace


def write_trace(trace: EpisodeTrace, path) -> None:
    """Line-delimited JSON: a header line, one line per step, a summary line."""
    with open(path, "w") as fh:
        header = {
            "type": "header",
            "format": TRACE_FORMAT,
            "scenario": trace.scenario,
            "planner": trace.planner,
            "discount": trace.discount,
            "seed": trace.seed,
        }
        fh.write(json.dumps(header) + "\n")
        for rec in trace.steps:
            d = asdict(rec)
            d["type"] = "step"
            fh.write(json.dumps(d) + "\n")
        summary = {
            "type": "summary",
            "total_undiscounted": trace.total_undiscounted,
            "total_discounted": trace.total_discounted,
            "primitive_steps": trace.primitive_steps,
            "success": trace.success,
            "terminal": trace.terminal,
        }
        fh.write(json.dumps(summary) + "\n")


def read_trace(path) -> dict:
    header = None
    steps = []
    summary = None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.pop("type")
        if kind == "header":
            header = rec
        elif kind == "step":
            steps.append(rec)
        elif kind == "summary":
            summary = rec
    if header is None or summary is None:
        raise ValueError(f"trace {path} is missing header or summary")
    return {"header": header, "steps": steps, "summary": summary}


def audit_trace(trace_doc: dict, tol: float = 1e-9, scenario=None) -> list:
    """Recompute returns from the per-step reward lists and compare against
    every recorded cumulative figure. With a scenario, additionally check
    that NFZ penalty flags coincide with schedule-active containment."""
    problems = []
    gamma = trace_doc["header"]["discount"]
    cum_disc = 0.0
    cum_undisc = 0.0
    t = 0
    for rec in trace_doc["steps"]:
        if rec["t_start"] != t:
            problems.append(f"step {rec['step']}: t_start {rec['t_start']} != {t}")
        r_disc = sum((gamma**i) * r for i, r in enumerate(rec["rewards"]))
        r_undisc = sum(rec["rewards"])
        if abs(r_disc - rec["r_disc"]) > tol:
            problems.append(f"step {rec['step']}: r_disc mismatch {r_disc} vs {rec['r_disc']}")
        if abs(r_undisc - rec["r_undisc"]) > tol:
            problems.append(f"step {rec['step']}: r_undisc mismatch")
        cum_disc += (gamma ** rec["t_start"]) * r_disc
        cum_undisc += r_undisc
        if abs(cum_disc - rec["cum_disc"]) > tol:
            problems.append(f"step {rec['step']}: cum_disc mismatch")
        if abs(cum_undisc - rec["cum_undisc"]) > tol:
            problems.append(f"step {rec['step']}: cum_undisc mismatch")
        t += len(rec["rewards"])
        if scenario is not None and getattr(scenario, "nfz_schedule", None):
            for i, (pos, flag) in enumerate(zip(rec["positions"], rec["nfz_flags"])):
                active = scenario.active_nfzs_at(rec["t_start"] + i)
                inside = any(b.contains(pos) for b in active)
                if inside != flag:
                    problems.append(
                        f"step {rec['step']}.{i}: NFZ flag {flag} but containment {inside}"
                    )
    summary = trace_doc["summary"]
    if abs(cum_undisc - summary["total_undiscounted"]) > tol:
        problems.append("summary total_undiscounted mismatch")
    if abs(cum_disc - summary["total_discounted"]) > tol:
        problems.append("summary total_discounted mismatch")
    if t != summary["primitive_steps"]:
        problems.append(f"summary primitive_steps {summary['primitive_steps']} != {t}")
    return problems
