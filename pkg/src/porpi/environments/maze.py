"""Closed-box maze with poor localisation: the agent only learns its
position by touching a landmark, and must reach a goal region while dodging
terminal danger zones."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import NULL_OBSERVATION, PomdpModel
from .geometry import Box, point_in_any, segment_clear

ALIVE, AT_GOAL, DEAD = 0, 1, 2

# Maze state: (position tuple, status flag).


@dataclass
class MazeScenario:
    """Geometry and reward parameters for a maze instance."""

    bounds: Box
    walls: list = field(default_factory=list)
    dangers: list = field(default_factory=list)
    landmarks: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    spawns: list = field(default_factory=list)
    spawn_prior: tuple = (0.5, 0.5)
    speed: float = 1.0
    transition_noise: float = 0.02
    reward_goal: float = 2000.0
    reward_danger: float = -500.0
    reward_step: float = -5.0
    discount: float = 0.99
    observation_grid: float = 1.0
    action_grid: float = 0.125
    name: str = "maze"

    @property
    def dim(self) -> int:
        return self.bounds.dim

    def model(self) -> "MazeModel":
        return MazeModel(self)

    # Hooks consumed by the roadmap builder and the heuristic sampler.
    def free_point(self, p, clearance: float = 0.0) -> bool:
        if not self.bounds.contains(p):
            return False
        if clearance > 0.0:
            return not any(w.inflated(clearance).contains(p) for w in self.walls)
        return not point_in_any(p, self.walls)

    def segment_free(self, a, b, clearance: float, resolution: float) -> bool:
        obstacles = [w.inflated(clearance) for w in self.walls] if clearance > 0 else self.walls
        return segment_clear(a, b, obstacles, resolution)

    def objective_points(self) -> list:
        """Mandatory roadmap targets: landmark and goal centers."""
        return [b.center for b in self.landmarks] + [b.center for b in self.goals]

    def sampler_objectives(self, state) -> list:
        return self.objective_points()

    def goal_points(self) -> list:
        return [b.center for b in self.goals]


class MazeModel(PomdpModel):
    """Generative model over (position, status) states."""

    def __init__(self, scenario: MazeScenario) -> None:
        self.scenario = scenario
        sc = scenario
        self._noise_std = math.sqrt(sc.transition_noise * sc.speed)
        self._rmax = max(abs(sc.reward_goal), abs(sc.reward_danger), abs(sc.reward_step))
        # flat geometry for the hot rollout path
        self._dim = sc.dim
        self._walls = [(w.lo, w.hi) for w in sc.walls]
        self._dangers = [(b.lo, b.hi) for b in sc.dangers]
        self._goals = [(b.lo, b.hi) for b in sc.goals]
        self._landmarks = [(b.lo, b.hi) for b in sc.landmarks]
        self._lo = sc.bounds.lo
        self._hi = sc.bounds.hi

    @property
    def discount(self) -> float:
        return self.scenario.discount

    @property
    def rmax(self) -> float:
        return self._rmax

    def is_terminal(self, s) -> bool:
        return s[1] != ALIVE

    def is_success(self, s) -> bool:
        return s[1] == AT_GOAL

    def position(self, s) -> tuple:
        return s[0]

    def _in_any(self, p, flat_boxes) -> bool:
        if self._dim == 2:
            x, y = p
            for lo, hi in flat_boxes:
                if lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1]:
                    return True
            return False
        if self._dim == 3:
            x, y, z = p
            for lo, hi in flat_boxes:
                if lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1] and lo[2] <= z <= hi[2]:
                    return True
            return False
        for lo, hi in flat_boxes:
            for i in range(self._dim):
                if not lo[i] <= p[i] <= hi[i]:
                    break
            else:
                return True
        return False

    def _slide(self, p, delta) -> tuple:
        """Per-axis sliding against walls, clamped to bounds (see
        geometry.slide_move; inlined over flat tuples for speed)."""
        eps = 1e-9
        cur = list(p)
        for axis in range(self._dim):
            d = delta[axis]
            if d == 0.0:
                continue
            target = cur[axis] + d
            lo_b, hi_b = self._lo[axis], self._hi[axis]
            if target < lo_b + eps:
                target = lo_b + eps
            elif target > hi_b - eps:
                target = hi_b - eps
            prev = cur[axis]
            cur[axis] = target
            blocked = False
            for lo, hi in self._walls:
                for i in range(self._dim):
                    if not lo[i] <= cur[i] <= hi[i]:
                        break
                else:
                    target = lo[axis] - eps if d > 0 else hi[axis] + eps
                    cur[axis] = target
                    if self._in_any(cur, self._walls):
                        blocked = True
                    break
            if blocked:
                cur[axis] = prev
        return tuple(cur)

    def _advance(self, pos, delta) -> tuple:
        new_pos = self._slide(pos, delta)
        if self._in_any(new_pos, self._dangers):
            return (new_pos, DEAD)
        if self._in_any(new_pos, self._goals):
            return (new_pos, AT_GOAL)
        return (new_pos, ALIVE)

    def sample_transition(self, s, a, rng: np.random.Generator):
        noise = rng.normal(0.0, self._noise_std, size=self._dim)
        v = self.scenario.speed
        delta = tuple(v * ai + ni for ai, ni in zip(a, noise))
        return self._advance(s[0], delta)

    def rollout_macro(self, s, primitives, gamma: float, rng: np.random.Generator):
        """Whole-macro generative rollout (one noise draw, flat geometry);
        semantics identical to stepping :func:`porpi.core.generative_step`."""
        pos, status = s
        if status != ALIVE:
            return s, (NULL_OBSERVATION,), (0.0,), 0.0, 1, True
        n = len(primitives)
        noise = rng.normal(0.0, self._noise_std, size=(n, self._dim)).tolist()
        sc = self.scenario
        v = sc.speed
        no_walls = not self._walls
        lo_b, hi_b = self._lo, self._hi
        eps = 1e-9
        dim = self._dim
        rewards = []
        observations = []
        disc = 0.0
        scale = 1.0
        steps = 0
        for t in range(n):
            a = primitives[t]
            nz = noise[t]
            if no_walls:
                pos = tuple(
                    min(max(pos[i] + v * a[i] + nz[i], lo_b[i] + eps), hi_b[i] - eps)
                    for i in range(dim)
                )
                if self._in_any(pos, self._dangers):
                    status = DEAD
                elif self._in_any(pos, self._goals):
                    status = AT_GOAL
            else:
                delta = tuple(v * a[i] + nz[i] for i in range(dim))
                pos, status = self._advance(pos, delta)
            if status == AT_GOAL:
                r = sc.reward_goal
            elif status == DEAD:
                r = sc.reward_danger
            else:
                r = sc.reward_step
            rewards.append(r)
            observations.append(pos if self._in_any(pos, self._landmarks) else NULL_OBSERVATION)
            disc += scale * r
            scale *= gamma
            steps += 1
            if status != ALIVE:
                break
        return (pos, status), tuple(observations), tuple(rewards), disc, steps, status != ALIVE

    def sample_observation(self, s_next, a, rng: np.random.Generator):
        if self._in_any(s_next[0], self._landmarks):
            return s_next[0]
        return NULL_OBSERVATION

    def reward(self, s, a, s_next) -> float:
        if s_next[1] == AT_GOAL:
            return self.scenario.reward_goal
        if s_next[1] == DEAD:
            return self.scenario.reward_danger
        return self.scenario.reward_step

    def observation_key(self, o):
        if o == NULL_OBSERVATION:
            return o
        g = self.scenario.observation_grid
        return tuple(math.floor(x / g) for x in o)

    def action_key(self, a):
        g = self.scenario.action_grid
        return tuple(round(x / g) for x in a)

    def sample_random_action(self, s, rng: np.random.Generator):
        v = rng.normal(size=self.scenario.dim)
        n = float(np.linalg.norm(v))
        if n < 1e-12:
            v = np.zeros(self.scenario.dim)
            v[0] = 1.0
            n = 1.0
        return tuple(float(x / n) for x in v)

    def sample_initial_state(self, rng: np.random.Generator):
        sc = self.scenario
        idx = int(rng.choice(len(sc.spawns), p=np.asarray(sc.spawn_prior)))
        return (tuple(sc.spawns[idx]), ALIVE)

    def initial_states(self, n: int, rng: np.random.Generator) -> list:
        return [self.sample_initial_state(rng) for _ in range(n)]

    def spawn_index(self, s) -> int:
        """Index of the spawn point a particle originated from (by proximity)."""
        dists = [sum((a - b) ** 2 for a, b in zip(s[0], sp)) for sp in self.scenario.spawns]
        return int(np.argmin(dists))

    def state_summary(self, particles) -> dict:
        pos = np.array([p[0] for p in particles])
        return {
            "n": len(particles),
            "mean": [round(float(x), 4) for x in pos.mean(axis=0)],
            "spread": round(float(pos.std(axis=0).max()), 4),
        }
