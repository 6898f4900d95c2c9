"""Scenario config loading and validation.

Scenario files are JSON documents (see ``docs/scenario-format.md``); shipped
instances live under ``porpi/configs`` and can be referenced by id.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Box, Terrain
from .maze import MazeScenario
from .rescue import Ball, RescueScenario

SHIPPED = {
    "maze3d": "maze3d.cfg",
    "rescue": "rescue.cfg",
    "mini_maze2d": "mini_maze2d.cfg",
}


class ScenarioLoadError(Exception):
    """Config failed validation; message carries the offending field path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.field_path = path


def _fail(path: str, message: str):
    raise ScenarioLoadError(path, message)


def _require(cfg: dict, key: str, path: str):
    if key not in cfg:
        _fail(f"{path}{key}", "missing required field")
    return cfg[key]


def _box(spec: dict, path: str, dim: int) -> Box:
    lo = _require(spec, "lo", f"{path}.")
    hi = _require(spec, "hi", f"{path}.")
    if len(lo) != dim or len(hi) != dim:
        _fail(path, f"expected {dim}-dimensional box")
    try:
        return Box(tuple(lo), tuple(hi))
    except ValueError as e:
        _fail(path, str(e))


def _boxes(cfg: dict, key: str, path: str, dim: int) -> list:
    out = []
    for i, spec in enumerate(cfg.get(key, [])):
        out.append(_box(spec, f"{path}{key}[{i}]", dim))
    return out


def _common_checks(cfg: dict, path: str = "") -> None:
    speed = cfg.get("speed", 1.0)
    if not speed > 0:
        _fail(f"{path}speed", f"must be positive, got {speed}")
    discount = cfg.get("discount", 0.99)
    if not 0.0 < discount < 1.0:
        _fail(f"{path}discount", f"must be strictly inside (0, 1), got {discount}")


def _load_maze(cfg: dict) -> MazeScenario:
    _common_checks(cfg)
    bounds_spec = _require(cfg, "bounds", "")
    dim = len(_require(bounds_spec, "lo", "bounds."))
    if dim not in (2, 3):
        _fail("bounds.lo", "mazes must be 2- or 3-dimensional")
    bounds = _box(bounds_spec, "bounds", dim)
    walls = _boxes(cfg, "walls", "", dim)
    dangers = _boxes(cfg, "dangers", "", dim)
    landmarks = _boxes(cfg, "landmarks", "", dim)
    goals = _boxes(cfg, "goals", "", dim)
    if not goals:
        _fail("goals", "at least one goal region is required")
    for gi, g in enumerate(goals):
        for di, d in enumerate(dangers):
            if g.overlaps(d):
                _fail(f"goals[{gi}]", f"overlaps dangers[{di}]")
    spawns = _require(cfg, "spawns", "")
    if not spawns:
        _fail("spawns", "at least one spawn point is required")
    spawns = [tuple(float(x) for x in p) for p in spawns]
    for i, p in enumerate(spawns):
        if len(p) != dim:
            _fail(f"spawns[{i}]", f"expected {dim} coordinates")
        if not bounds.contains(p):
            _fail(f"spawns[{i}]", "outside environment bounds")
        if any(w.contains(p) for w in walls):
            _fail(f"spawns[{i}]", "inside a wall")
    prior = cfg.get("spawn_prior", [1.0 / len(spawns)] * len(spawns))
    if len(prior) != len(spawns):
        _fail("spawn_prior", "length must match spawns")
    if abs(sum(prior) - 1.0) > 1e-9 or any(p < 0 for p in prior):
        _fail("spawn_prior", "must be a probability vector")
    rewards = cfg.get("rewards", {})
    return MazeScenario(
        bounds=bounds,
        walls=walls,
        dangers=dangers,
        landmarks=landmarks,
        goals=goals,
        spawns=spawns,
        spawn_prior=tuple(prior),
        speed=float(cfg.get("speed", 1.0)),
        transition_noise=float(cfg.get("transition_noise", 0.02)),
        reward_goal=float(rewards.get("goal", 2000.0)),
        reward_danger=float(rewards.get("danger", -500.0)),
        reward_step=float(rewards.get("step", -5.0)),
        discount=float(cfg.get("discount", 0.99)),
        observation_grid=float(cfg.get("observation_grid", 1.0)),
        action_grid=float(cfg.get("action_grid", 0.125)),
        name=cfg.get("name", "maze"),
    )


def _load_terrain(spec: dict, bounds: Box) -> Terrain:
    x0, y0 = bounds.lo[0], bounds.lo[1]
    x1, y1 = bounds.hi[0], bounds.hi[1]
    if "csv" in spec:
        p = Path(spec["csv"])
        if not p.exists():
            _fail("terrain.csv", f"heightmap file not found: {p}")
        return Terrain.from_csv(str(p), x0, y0, x1, y1)
    if "procedural" in spec:
        proc = spec["procedural"]
        return Terrain.procedural(
            nx=int(proc.get("nx", 40)),
            ny=int(proc.get("ny", 40)),
            x0=x0, y0=y0, x1=x1, y1=y1,
            base=float(proc.get("base", 0.0)),
            hills=proc.get("hills", []),
        )
    _fail("terrain", "needs either 'csv' or 'procedural'")


def _load_rescue(cfg: dict) -> RescueScenario:
    _common_checks(cfg)
    bounds = _box(_require(cfg, "bounds", ""), "bounds", 3)
    terrain = _load_terrain(_require(cfg, "terrain", ""), bounds)
    start = tuple(float(x) for x in _require(cfg, "start", ""))
    if len(start) != 3:
        _fail("start", "expected 3 coordinates")
    if not bounds.contains(start):
        _fail("start", "outside environment bounds")
    if terrain.clearance(start) <= 0:
        _fail("start", "below terrain")
    objectives = []
    for i, spec in enumerate(cfg.get("objectives", [])):
        center = tuple(float(x) for x in _require(spec, "center", f"objectives[{i}]."))
        radius = float(_require(spec, "radius", f"objectives[{i}]."))
        if radius <= 0:
            _fail(f"objectives[{i}].radius", "must be positive")
        if terrain.clearance(center) <= 0:
            _fail(f"objectives[{i}].center", "below terrain")
        objectives.append(Ball(center, radius))
    if not objectives:
        _fail("objectives", "at least one objective is required")
    schedule = []
    last_step = -1
    for i, entry in enumerate(cfg.get("nfz_schedule", [])):
        step = _require(entry, "step", f"nfz_schedule[{i}].")
        if not isinstance(step, int) or step < 0:
            _fail(f"nfz_schedule[{i}].step", "must be a non-negative integer")
        if step <= last_step:
            _fail(f"nfz_schedule[{i}].step", "schedule must be strictly increasing")
        last_step = step
        boxes = _boxes(entry, "boxes", f"nfz_schedule[{i}].", 3)
        schedule.append((step, boxes))
    rewards = cfg.get("rewards", {})
    return RescueScenario(
        bounds=bounds,
        terrain=terrain,
        start=start,
        objectives=objectives,
        nfz_schedule=schedule,
        speed=float(cfg.get("speed", 2.0)),
        transition_noise=float(cfg.get("transition_noise", 0.25)),
        observation_noise=float(cfg.get("observation_noise", 0.2)),
        reward_objective=float(rewards.get("objective", 2000.0)),
        reward_mission=float(rewards.get("mission", 20000.0)),
        reward_collision=float(rewards.get("collision", -2000.0)),
        reward_nfz=float(rewards.get("nfz", -20.0)),
        reward_step=float(rewards.get("step", -5.0)),
        discount=float(cfg.get("discount", 0.99)),
        observation_grid=float(cfg.get("observation_grid", 6.0)),
        action_grid=float(cfg.get("action_grid", 0.125)),
        name=cfg.get("name", "rescue"),
    )


def load_scenario(source):
    """Build a scenario from a shipped id, a file path, or a parsed dict."""
    if isinstance(source, dict):
        cfg = source
    else:
        if str(source) in SHIPPED:
            text = resources.files("porpi.configs").joinpath(SHIPPED[str(source)]).read_text()
        else:
            p = Path(source)
            if not p.exists():
                raise ScenarioLoadError("<file>", f"no shipped scenario or file named {source!r}")
            text = p.read_text()
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioLoadError("<file>", f"not valid JSON: {e}") from e
    kind = _require(cfg, "type", "")
    if kind == "maze":
        return _load_maze(cfg)
    if kind == "rescue":
        return _load_rescue(cfg)
    _fail("type", f"unknown scenario type {kind!r}")
