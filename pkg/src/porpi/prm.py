"""Probabilistic roadmap over free configuration space, queried online for
macro actions that head toward sampled objectives, plus the path-rollout
leaf heuristic derived from the same roadmap."""
from __future__ import annotations

import heapq
import json
import math
from pathlib import Path

import numpy as np

from .core import MacroAction, PomdpModel

PRM_CACHE_VERSION = "prm-1"


class RoadmapBuildError(Exception):
    """Free-space sampling or connection failed."""


_RING_CACHE: dict = {}


def _ring_offsets(dim: int):
    def offsets(radius: int) -> list:
        cached = _RING_CACHE.get((dim, radius))
        if cached is None:
            if radius == 0:
                cached = [(0,) * dim]
            else:
                import itertools as _it

                cached = [
                    offs
                    for offs in _it.product(range(-radius, radius + 1), repeat=dim)
                    if max(abs(o) for o in offs) == radius
                ]
            _RING_CACHE[(dim, radius)] = cached
        return cached

    return offsets


def _ring_offsets_2d(radius: int) -> list:
    cached = _RING_CACHE.get((2, radius))
    if cached is None:
        if radius == 0:
            cached = [(0, 0)]
        else:
            cached = []
            for dx in range(-radius, radius + 1):
                for dy in range(-radius, radius + 1):
                    if max(abs(dx), abs(dy)) == radius:
                        cached.append((dx, dy))
        _RING_CACHE[(2, radius)] = cached
    return cached


_RING_OFFSETS_2D = _ring_offsets_2d


class Roadmap:
    """Undirected graph of collision-free points with edge lengths."""

    def __init__(self, nodes: np.ndarray, adjacency: list, objectives: dict, meta: dict) -> None:
        self.nodes = np.asarray(nodes, dtype=float)
        self.node_points = [tuple(p) for p in self.nodes.tolist()]
        self.adjacency = adjacency  # adjacency[i] = [(j, length), ...]
        self.objectives = objectives  # point tuple -> node index
        self.meta = meta
        self._sssp_cache: dict = {}
        self._grid: dict = {}
        self._cell = 0.0
        if len(self.node_points) > 1:
            span = float(np.max(self.nodes.max(axis=0) - self.nodes.min(axis=0)))
            self._cell = max(span / max(len(self.node_points) ** (1.0 / self.nodes.shape[1]), 1.0), 1e-6)
            for i, p in enumerate(self.node_points):
                self._grid.setdefault(self._cell_key(p), []).append(i)

    def _cell_key(self, p) -> tuple:
        c = self._cell
        return tuple(int(x // c) for x in p)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def nearest_node(self, p) -> int:
        """Exact nearest node via expanding ring search over the cell grid:
        after scanning the ring at Chebyshev cell distance r, anything
        unscanned is at least r * cell away, so the best-so-far is final
        once it beats that bound."""
        if not self._grid:
            d = np.sum((self.nodes - np.asarray(p, dtype=float)) ** 2, axis=1)
            return int(np.argmin(d))
        pts = self.node_points
        grid = self._grid
        key = self._cell_key(p)
        dim = len(key)
        cell = self._cell
        best = -1
        best_d2 = math.inf
        offsets_by_radius = _RING_OFFSETS_2D if dim == 2 else _ring_offsets(dim)
        for radius in range(0, 64):
            for offs in offsets_by_radius(radius):
                idxs = grid.get(tuple(k + o for k, o in zip(key, offs)))
                if idxs is None:
                    continue
                for i in idxs:
                    q = pts[i]
                    d2 = 0.0
                    for k in range(dim):
                        g = q[k] - p[k]
                        d2 += g * g
                    if d2 < best_d2:
                        best_d2 = d2
                        best = i
            if best >= 0 and best_d2 <= (radius * cell) ** 2:
                return best
        if best >= 0:
            return best
        d = np.sum((self.nodes - np.asarray(p, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d))

    def nearest_visible_node(self, p, scenario, k: int = 5, margin: float = 0.0) -> int:
        """Nearest node reachable by a straight collision-checked segment;
        falls back to the plain nearest node when none of the k closest is."""
        resolution = scenario.speed / 4.0
        first = self.nearest_node(p)
        if scenario.segment_free(p, self.node_points[first], margin, resolution):
            return first
        d = np.sum((self.nodes - np.asarray(p, dtype=float)) ** 2, axis=1)
        order = np.argsort(d)[:k]
        for j in order:
            if scenario.segment_free(p, self.node_points[int(j)], margin, resolution):
                return int(j)
        return int(order[0])

    def sssp(self, source: int) -> tuple:
        """Dijkstra distances and next-hop-toward-source parents, cached."""
        if source in self._sssp_cache:
            return self._sssp_cache[source]
        n = self.n_nodes
        dist = np.full(n, np.inf)
        parent = np.full(n, -1, dtype=int)
        dist[source] = 0.0
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, w in self.adjacency[u]:
                nd = d + w
                if nd < dist[v]:
                    dist[v] = nd
                    parent[v] = u
                    heapq.heappush(heap, (nd, v))
        self._sssp_cache[source] = (dist, parent)
        return dist, parent

    def distance(self, i: int, j: int) -> float:
        return float(self.sssp(j)[0][i])

    def path(self, start: int, goal: int, max_length: float | None = None) -> list | None:
        """Node-index path start -> goal (shortest on the graph), or None.
        With ``max_length`` the walk stops once that much length is covered
        (enough for a truncated macro)."""
        dist, parent = self.sssp(goal)
        start_d = dist[start]
        if not np.isfinite(start_d):
            return None
        out = [start]
        u = start
        while u != goal:
            u = int(parent[u])
            out.append(u)
            if max_length is not None and start_d - dist[u] >= max_length:
                break
        return out

    def connected(self, i: int, j: int) -> bool:
        return np.isfinite(self.sssp(j)[0][i])

    @property
    def fully_connected(self) -> bool:
        """Whether every pair of mandatory objective nodes is connected."""
        idxs = list(self.objectives.values())
        return all(self.connected(i, idxs[0]) for i in idxs[1:]) if len(idxs) > 1 else True

    def to_dict(self) -> dict:
        return {
            "version": PRM_CACHE_VERSION,
            "meta": self.meta,
            "nodes": self.nodes.tolist(),
            "edges": [[i, j, w] for i, adj in enumerate(self.adjacency) for j, w in adj if i < j],
            "objectives": [[list(k), v] for k, v in self.objectives.items()],
        }

    @staticmethod
    def from_dict(d: dict) -> "Roadmap":
        if d.get("version") != PRM_CACHE_VERSION:
            raise RoadmapBuildError(f"cache version mismatch: {d.get('version')}")
        nodes = np.asarray(d["nodes"], dtype=float)
        adjacency: list = [[] for _ in range(len(nodes))]
        for i, j, w in d["edges"]:
            adjacency[i].append((j, w))
            adjacency[j].append((i, w))
        objectives = {tuple(k): int(v) for k, v in d["objectives"]}
        return Roadmap(nodes, adjacency, objectives, d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @staticmethod
    def load(path) -> "Roadmap":
        return Roadmap.from_dict(json.loads(Path(path).read_text()))


def build_prm(
    scenario,
    n_nodes: int = 300,
    k_neighbors: int = 8,
    rng: np.random.Generator | None = None,
    clearance: float | None = None,
    seed: int | None = None,
) -> Roadmap:
    """Sample a roadmap over the scenario's free space.

    Objective points (landmark/goal/victim centers, plus the start where the
    scenario declares one) are mandatory nodes. Edges connect k-nearest
    pairs whose segments pass collision checks at resolution speed/4.
    """
    if rng is None:
        rng = np.random.default_rng(seed if seed is not None else 0)
    clearance = scenario.speed if clearance is None else clearance
    resolution = scenario.speed / 4.0
    lo = np.asarray(scenario.bounds.lo)
    hi = np.asarray(scenario.bounds.hi)

    mandatory = [tuple(float(x) for x in p) for p in scenario.objective_points()]
    pts = [np.asarray(p) for p in mandatory]
    attempts = 0
    budget = 50 * n_nodes
    while len(pts) < n_nodes + len(mandatory):
        if attempts > budget:
            raise RoadmapBuildError(
                f"could not sample {n_nodes} free points in {budget} attempts"
            )
        attempts += 1
        p = lo + rng.random(len(lo)) * (hi - lo)
        if scenario.free_point(tuple(p), clearance):
            pts.append(p)
    nodes = np.vstack(pts)

    n = len(nodes)
    adjacency: list = [[] for _ in range(n)]
    seen = set()
    k = min(k_neighbors, n - 1)
    for i in range(n):
        d2 = np.sum((nodes - nodes[i]) ** 2, axis=1)
        order = np.argsort(d2)
        for j in order[1 : k + 1]:
            j = int(j)
            key = (min(i, j), max(i, j))
            if key in seen:
                continue
            seen.add(key)
            if scenario.segment_free(nodes[i], nodes[j], clearance, resolution):
                w = float(np.linalg.norm(nodes[i] - nodes[j]))
                adjacency[i].append((j, w))
                adjacency[j].append((i, w))

    objectives = {mandatory[i]: i for i in range(len(mandatory))}
    meta = {
        "n_nodes": n_nodes,
        "k_neighbors": k_neighbors,
        "clearance": clearance,
        "scenario": getattr(scenario, "name", "?"),
        "seed": seed,
    }
    return Roadmap(nodes, adjacency, objectives, meta)


def _macro_from_path(pos, waypoints: list, speed: float, max_len: int, model: PomdpModel) -> MacroAction:
    """Trace the polyline with unit steps of magnitude ``speed``, truncated
    at ``max_len`` primitives; the final step heads at the live waypoint."""
    prims = []
    cur = list(pos)
    dim = len(cur)
    wp_i = 0
    while len(prims) < max_len and wp_i < len(waypoints):
        target = waypoints[wp_i]
        d2 = 0.0
        for i in range(dim):
            g = target[i] - cur[i]
            d2 += g * g
        d = math.sqrt(d2)
        if d < 1e-9:
            wp_i += 1
            continue
        step_dir = tuple((target[i] - cur[i]) / d for i in range(dim))
        prims.append(step_dir)
        for i in range(dim):
            cur[i] += speed * step_dir[i]
        if d <= speed:
            wp_i += 1
    if not prims:
        # Already on top of the objective: nudge toward it anyway so the
        # macro is never empty.
        target = waypoints[-1]
        d = math.sqrt(sum((target[i] - pos[i]) ** 2 for i in range(dim)))
        if d > 1e-9:
            step_dir = tuple((target[i] - pos[i]) / d for i in range(dim))
        else:
            step_dir = tuple(1.0 if i == 0 else 0.0 for i in range(dim))
        prims.append(step_dir)
    return MacroAction.from_primitives(prims, model)


def _random_short_macro(model: PomdpModel, state, rng: np.random.Generator, max_len: int) -> MacroAction:
    length = min(3, max_len)
    a = model.sample_random_action(state, rng)
    return MacroAction.from_primitives([a] * length, model)


def sample_candidate_action(
    h,
    state,
    roadmap: Roadmap,
    scenario,
    model: PomdpModel,
    rng: np.random.Generator,
    max_len: int,
) -> MacroAction:
    """Propose a macro: pick an objective per the scenario rule, take the
    roadmap shortest path there from the state's position, convert to
    fixed-magnitude primitives and truncate at ``max_len``."""
    pos = model.position(state)
    candidates = scenario.sampler_objectives(state)
    start = roadmap.nearest_visible_node(pos, scenario)
    budget = (max_len + 2) * scenario.speed
    for attempt in range(2):
        objective = candidates[rng.integers(len(candidates))]
        key = tuple(float(x) for x in objective)
        goal_idx = roadmap.objectives.get(key)
        if goal_idx is None:
            goal_idx = roadmap.nearest_node(objective)
        node_path = roadmap.path(start, goal_idx, max_length=budget)
        if node_path is not None:
            waypoints = [roadmap.node_points[i] for i in node_path]
            if node_path[-1] == goal_idx:
                waypoints.append(key)
            return _macro_from_path(pos, waypoints, scenario.speed, max_len, model)
    return _random_short_macro(model, state, rng, max_len)


class PrmActionSampler:
    """Bundles roadmap + scenario into the planner's sampler interface."""

    def __init__(self, roadmap: Roadmap, scenario, model: PomdpModel, max_macro_len: int) -> None:
        self.roadmap = roadmap
        self.scenario = scenario
        self.model = model
        self.max_macro_len = max_macro_len

    def sample(self, node, state, rng: np.random.Generator) -> MacroAction:
        return sample_candidate_action(
            node, state, self.roadmap, self.scenario, self.model, rng, self.max_macro_len
        )


class PrmValueHeuristic:
    """Leaf estimate: discounted reward-to-go of marching the roadmap
    shortest path through the remaining objectives, clipped to +-vmax."""

    def __init__(self, roadmap: Roadmap, scenario, model: PomdpModel) -> None:
        self.roadmap = roadmap
        self.scenario = scenario
        self.model = model

    def _leg_steps(self, pos, target) -> int:
        start = self.roadmap.nearest_node(pos)
        key = tuple(float(x) for x in target)
        goal_idx = self.roadmap.objectives.get(key)
        if goal_idx is None:
            goal_idx = self.roadmap.nearest_node(target)
        hop = float(np.linalg.norm(np.asarray(pos, dtype=float) - self.roadmap.nodes[start]))
        through = self.roadmap.distance(start, goal_idx)
        if not math.isfinite(through):
            length = float(
                np.linalg.norm(np.asarray(pos, dtype=float) - np.asarray(target, dtype=float))
            )
        else:
            length = hop + through
        return max(1, math.ceil(length / self.scenario.speed - 1e-9))

    def value(self, node, state) -> float:
        model = self.model
        if model.is_terminal(state):
            return 0.0
        sc = self.scenario
        if hasattr(sc, "heuristic_itinerary"):
            legs = sc.heuristic_itinerary(state)
        else:
            pos = model.position(state)
            goals = sc.goal_points()
            nearest = min(goals, key=lambda g: sum((a - b) ** 2 for a, b in zip(pos, g)))
            legs = [(nearest, sc.reward_goal)]
        gamma = model.discount
        step_r = sc.reward_step
        total = 0.0
        scale = 1.0
        cur = model.position(state)
        for target, bonus in legs:
            n = self._leg_steps(cur, target)
            if n > 1:
                # steps 0 .. n-2 pay the step penalty, arrival collects the bonus
                total += scale * step_r * (1.0 - gamma ** (n - 1)) / (1.0 - gamma)
            total += scale * gamma ** (n - 1) * bonus
            scale *= gamma**n
            cur = target
        vmax = model.vmax
        return float(min(max(total, -vmax), vmax))
