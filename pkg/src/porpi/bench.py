"""Benchmark harness: seeded experiment grids over scenarios x planners x
budgets with CSV/trace emission, plus convergence studies for the tabular
schemes."""
from __future__ import annotations

import csv
import hashlib
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from . import exact_lab
from .baselines import PomcpConfig, PomcpPlanner, RefPolPlanner, RefSolverPlanner
from .environments.discrete import DISCRETE_SUITE
from .environments.loader import load_scenario
from .planner import PlannerConfig, PorpiPlanner
from .prm import PrmActionSampler, PrmValueHeuristic, Roadmap, build_prm
from .runtime import Environment, audit_trace, read_trace, run_episode, write_trace

PLANNER_IDS = ("porpi", "refsolver", "pomcp", "refpol")

# Desk-scale defaults per shipped scenario; spec files can override any of it.
# eta/kappa/alpha/d_max were fixed by sweeps on the mini maze (see README).
SCENARIO_DEFAULTS = {
    "mini_maze2d": {"max_steps": 60, "max_macro_len": 5, "d_max": 20},
    "maze3d": {"max_steps": 100, "max_macro_len": 10, "d_max": 50},
    "rescue": {"max_steps": 150, "max_macro_len": 15, "d_max": 60, "prm_clearance": 5.0},
}
BASE_PARAMS = {
    "eta": 0.002,
    "kappa": 1.0,
    "alpha": 0.3,
    "d_max": 30,
    "max_macro_len": 6,
    "particle_target": 64,
    "pomcp_exploration": None,
    "pomcp_rollout_macros": 2,
    "prm_nodes": 250,
    "prm_neighbors": 8,
    "prm_seed": 7,
    "prm_clearance": None,
    "max_steps": 200,
}


def default_params(scenario_name: str) -> dict:
    params = dict(BASE_PARAMS)
    params.update(SCENARIO_DEFAULTS.get(scenario_name, {}))
    return params


@dataclass
class ExperimentSpec:
    scenario: str
    planners: list
    budgets: list
    runs: int
    base_seed: int = 0
    output_dir: str = "bench_out"
    params: dict = field(default_factory=dict)
    max_steps: int | None = None
    workers: int = 1
    keep_traces: bool = True

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.budgets:
            raise ValueError("budgets must be nonempty")
        for p in self.planners:
            if p not in PLANNER_IDS:
                raise ValueError(f"unknown planner id {p!r}; expected one of {PLANNER_IDS}")

    @staticmethod
    def from_file(path) -> "ExperimentSpec":
        cfg = json.loads(Path(path).read_text())
        return ExperimentSpec(**cfg)


def derive_seed(base_seed: int, planner: str, budget, run: int) -> int:
    """Stable episode seed: sha256 over the cell coordinates."""
    key = f"{base_seed}:{planner}:{budget}:{run}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


# Per-process caches so pool workers build scenario and roadmap once.
_SCENARIO_CACHE: dict = {}


def _get_scenario_and_roadmap(scenario_src: str, params: dict):
    key = (
        scenario_src,
        params["prm_nodes"],
        params["prm_neighbors"],
        params["prm_seed"],
        params["prm_clearance"],
    )
    hit = _SCENARIO_CACHE.get(key)
    if hit is not None:
        return hit
    scenario = load_scenario(scenario_src)
    roadmap = build_prm(
        scenario,
        n_nodes=params["prm_nodes"],
        k_neighbors=params["prm_neighbors"],
        seed=params["prm_seed"],
        clearance=params["prm_clearance"],
    )
    _SCENARIO_CACHE[key] = (scenario, roadmap)
    return scenario, roadmap


def build_planner(planner_id: str, scenario, roadmap, model, budget, params: dict):
    sampler = PrmActionSampler(roadmap, scenario, model, params["max_macro_len"])
    if planner_id == "refpol":
        return RefPolPlanner(sampler, particle_target=params["particle_target"])
    if planner_id == "pomcp":
        cfg = PomcpConfig(
            num_sims=int(budget),
            exploration=params["pomcp_exploration"],
            d_max=params["d_max"],
            max_macro_len=params["max_macro_len"],
            particle_target=params["particle_target"],
            rollout_macros=params["pomcp_rollout_macros"],
        )
        return PomcpPlanner(cfg)
    cfg = PlannerConfig(
        kappa=params["kappa"],
        alpha=params["alpha"],
        d_max=params["d_max"],
        eta=params["eta"],
        max_macro_len=params["max_macro_len"],
        num_sims=int(budget),
        particle_target=params["particle_target"],
    )
    heuristic = PrmValueHeuristic(roadmap, scenario, model)
    if planner_id == "refsolver":
        return RefSolverPlanner(cfg, sampler, heuristic)
    return PorpiPlanner(cfg, sampler, heuristic)


def run_cell_episode(job: dict) -> dict:
    """One seeded episode; returns its summary row (never raises: crashes
    become failure rows so the grid keeps going)."""
    try:
        params = dict(BASE_PARAMS)
        params.update(job["params"])
        scenario, roadmap = _get_scenario_and_roadmap(job["scenario"], params)
        seed = derive_seed(job["base_seed"], job["planner"], job["budget"], job["run"])
        env_rng = np.random.default_rng([seed, 0])
        plan_rng = np.random.default_rng([seed, 1])
        env = Environment(scenario, env_rng)
        model = env.planning_model()
        planner = build_planner(job["planner"], scenario, roadmap, model, job["budget"], params)
        trace = run_episode(
            planner,
            env,
            plan_rng,
            max_primitive_steps=job["max_steps"],
            seed=seed,
        )
        row = {
            "scenario": trace.scenario,
            "planner": job["planner"],
            "budget": job["budget"],
            "run": job["run"],
            "seed": seed,
            "success": int(trace.success),
            "total_undiscounted": trace.total_undiscounted,
            "total_discounted": trace.total_discounted,
            "primitive_steps": trace.primitive_steps,
            "macro_steps": len(trace.steps),
            "depletions": sum(1 for s in trace.steps if s.depletion_fallback),
            "failed": 0,
            "error": "",
        }
        if job.get("trace_path"):
            write_trace(trace, job["trace_path"])
        return row
    except Exception:
        return {
            "scenario": job["scenario"],
            "planner": job["planner"],
            "budget": job["budget"],
            "run": job["run"],
            "seed": derive_seed(job["base_seed"], job["planner"], job["budget"], job["run"]),
            "success": 0,
            "total_undiscounted": float("nan"),
            "total_discounted": float("nan"),
            "primitive_steps": 0,
            "macro_steps": 0,
            "depletions": 0,
            "failed": 1,
            "error": traceback.format_exc(limit=3),
        }


def mean_ci95(values) -> tuple:
    """Sample mean and 95% confidence half-width (Student t)."""
    arr = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if len(arr) == 0:
        return float("nan"), float("nan")
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    sd = float(arr.std(ddof=1))
    if sd == 0.0:
        return mean, 0.0
    half = float(sstats.t.ppf(0.975, len(arr) - 1) * sd / np.sqrt(len(arr)))
    return mean, half


def aggregate(rows: list) -> list:
    cells: dict = {}
    for row in rows:
        cells.setdefault((row["planner"], row["budget"]), []).append(row)
    table = []
    for (planner, budget), cell_rows in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        ok = [r for r in cell_rows if not r["failed"]]
        mean, half = mean_ci95([r["total_undiscounted"] for r in ok])
        mean_disc, _ = mean_ci95([r["total_discounted"] for r in ok])
        table.append(
            {
                "planner": planner,
                "budget": budget,
                "runs": len(cell_rows),
                "failures": sum(r["failed"] for r in cell_rows),
                "success_rate": float(np.mean([r["success"] for r in ok])) if ok else float("nan"),
                "mean_total_reward": mean,
                "ci95_half_width": half,
                "mean_discounted_reward": mean_disc,
            }
        )
    return table


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run the full grid; returns {"rows", "table", "output_dir"} and writes
    episodes.csv, results.csv, manifest.json and per-episode traces."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces_dir = out / "traces"
    if spec.keep_traces:
        traces_dir.mkdir(exist_ok=True)
    scenario_probe = load_scenario(spec.scenario)
    params = default_params(getattr(scenario_probe, "name", spec.scenario))
    params.update(spec.params)
    max_steps = spec.max_steps if spec.max_steps is not None else params["max_steps"]
    jobs = []
    for planner in spec.planners:
        for budget in spec.budgets:
            for run in range(spec.runs):
                trace_path = (
                    str(traces_dir / f"{planner}_b{budget}_r{run}.ndjson")
                    if spec.keep_traces
                    else None
                )
                jobs.append(
                    {
                        "scenario": spec.scenario,
                        "planner": planner,
                        "budget": budget,
                        "run": run,
                        "base_seed": spec.base_seed,
                        "params": params,
                        "max_steps": max_steps,
                        "trace_path": trace_path,
                    }
                )
    start = time.perf_counter()
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(run_cell_episode, jobs, chunksize=1))
    else:
        rows = [run_cell_episode(j) for j in jobs]
    table = aggregate(rows)
    _write_csv(out / "episodes.csv", rows)
    _write_csv(out / "results.csv", table)
    manifest = {
        "spec": {
            "scenario": spec.scenario,
            "planners": spec.planners,
            "budgets": spec.budgets,
            "runs": spec.runs,
            "base_seed": spec.base_seed,
            "max_steps": max_steps,
            "params": params,
        },
        "metric_notes": {
            "mean_total_reward": "undiscounted episode return, averaged over runs",
            "ci95_half_width": "Student-t 95% confidence half-width of the mean",
        },
        "seed_rule": "sha256(base_seed:planner:budget:run), first 8 bytes",
        "wall_time_s": time.perf_counter() - start,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return {"rows": rows, "table": table, "output_dir": str(out)}


def _write_csv(path, rows: list) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def run_convergence_study(
    model_id: str,
    delta: float,
    eta: float,
    k_max: int,
    scheme: str = "exact",
    out_path=None,
    seed: int = 0,
    eval_every: int = 1,
) -> list:
    """Convergence-vs-bounds study on a discrete-suite model; emits a CSV
    with per-k error and bound columns when ``out_path`` is given."""
    if model_id not in DISCRETE_SUITE:
        raise ValueError(f"unknown model {model_id!r}; expected one of {sorted(DISCRETE_SUITE)}")
    model = DISCRETE_SUITE[model_id]()
    rows = exact_lab.convergence_run(
        model,
        delta=delta,
        eta=eta,
        k_max=k_max,
        scheme=scheme,
        rng=np.random.default_rng(seed),
        eval_every=eval_every,
    )
    if out_path is not None:
        _write_csv(out_path, rows)
    return rows


def audit_trace_file(path, scenario_id: str | None = None) -> list:
    doc = read_trace(path)
    scenario = None
    if scenario_id is None:
        scenario_id = doc["header"].get("scenario")
    try:
        scenario = load_scenario(scenario_id)
    except Exception:
        scenario = None
    return audit_trace(doc, scenario=scenario)
