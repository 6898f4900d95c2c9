"""Helicopter rescue over procedural terrain: two unordered objectives,
terminal terrain collisions, and no-fly zones that activate on a schedule
the agent cannot predict."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import NULL_OBSERVATION, PomdpModel
from .geometry import Box, Terrain, clamp

ALIVE, DONE, CRASHED = 0, 1, 2

# Rescue state: (position tuple, visited flags tuple, status flag).


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, p) -> bool:
        return sum((a - b) ** 2 for a, b in zip(p, self.center)) <= self.radius**2


@dataclass
class RescueScenario:
    """Terrain, objectives, NFZ schedule and rewards for a rescue mission."""

    bounds: Box
    terrain: Terrain
    start: tuple = (0.0, 0.0, 0.0)
    objectives: list = field(default_factory=list)
    nfz_schedule: list = field(default_factory=list)  # sorted [(step, [Box, ...]), ...]
    speed: float = 2.0
    transition_noise: float = 0.25
    observation_noise: float = 0.2
    reward_objective: float = 2000.0
    reward_mission: float = 20000.0
    reward_collision: float = -2000.0
    reward_nfz: float = -20.0
    reward_step: float = -5.0
    discount: float = 0.99
    observation_grid: float = 6.0
    action_grid: float = 0.125
    name: str = "rescue"

    @property
    def dim(self) -> int:
        return 3

    def active_nfzs_at(self, step: int) -> list:
        active: list = []
        for at, boxes in self.nfz_schedule:
            if step >= at:
                active = boxes
        return active

    def model(self, active_nfzs: list | None = None) -> "RescueModel":
        return RescueModel(self, active_nfzs if active_nfzs is not None else self.active_nfzs_at(0))

    def free_point(self, p, clearance: float = 0.0) -> bool:
        if not self.bounds.contains(p):
            return False
        return self.terrain.clearance(p) >= clearance

    def segment_free(self, a, b, clearance: float, resolution: float) -> bool:
        return self.terrain.segment_above(a, b, resolution, margin=clearance)

    def objective_points(self) -> list:
        return [o.center for o in self.objectives] + [tuple(self.start)]

    def sampler_objectives(self, state) -> list:
        """Unvisited victim locations, per the flags carried in the state."""
        if state is None:
            return [o.center for o in self.objectives]
        visited = state[1]
        pts = [o.center for i, o in enumerate(self.objectives) if not visited[i]]
        return pts or [o.center for o in self.objectives]

    def goal_points(self) -> list:
        return [o.center for o in self.objectives]

    def heuristic_itinerary(self, state) -> list:
        """Legs for the leaf heuristic: sweep the unvisited objectives,
        nearest first, collecting the mission bonus on the last one."""
        visited = state[1]
        pos = state[0]
        remaining = [o.center for i, o in enumerate(self.objectives) if not visited[i]]
        legs = []
        cur = pos
        while remaining:
            nearest = min(remaining, key=lambda c: sum((a - b) ** 2 for a, b in zip(cur, c)))
            remaining.remove(nearest)
            bonus = self.reward_objective + (self.reward_mission if not remaining else 0.0)
            legs.append((nearest, bonus))
            cur = nearest
        return legs


class RescueModel(PomdpModel):
    """Generative model for a fixed snapshot of active NFZs.

    The true environment swaps the active set as the schedule fires; the
    planner only ever sees the snapshot for the step it is planning at.
    """

    def __init__(self, scenario: RescueScenario, active_nfzs: list) -> None:
        self.scenario = scenario
        self.active_nfzs = list(active_nfzs)
        sc = scenario
        self._noise_std = math.sqrt(sc.transition_noise * sc.speed)
        self._obs_std = math.sqrt(sc.observation_noise)
        self._rmax = (
            len(sc.objectives) * abs(sc.reward_objective)
            + abs(sc.reward_mission)
            + abs(sc.reward_collision)
            + abs(sc.reward_nfz)
            + abs(sc.reward_step)
        )
        self._collision_resolution = sc.speed / 4.0
        # flat geometry for the hot rollout path
        self._nfzs = [(b.lo, b.hi) for b in self.active_nfzs]
        self._objs = [(o.center, o.radius * o.radius) for o in sc.objectives]
        self._lo = sc.bounds.lo
        self._hi = sc.bounds.hi

    def _in_nfz(self, p) -> bool:
        x, y, z = p
        for lo, hi in self._nfzs:
            if lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1] and lo[2] <= z <= hi[2]:
                return True
        return False

    @property
    def discount(self) -> float:
        return self.scenario.discount

    @property
    def rmax(self) -> float:
        return self._rmax

    def is_terminal(self, s) -> bool:
        return s[2] != ALIVE

    def is_success(self, s) -> bool:
        return s[2] == DONE

    def position(self, s) -> tuple:
        return s[0]

    def sample_transition(self, s, a, rng: np.random.Generator):
        sc = self.scenario
        noise = rng.normal(0.0, self._noise_std, size=3)
        raw = tuple(p + sc.speed * ai + ni for p, ai, ni in zip(s[0], a, noise))
        pos = clamp(raw, sc.bounds.lo, sc.bounds.hi)
        if not sc.terrain.segment_above(s[0], pos, self._collision_resolution):
            return (pos, s[1], CRASHED)
        visited = s[1]
        hit = [
            (not visited[i]) and obj.contains(pos)
            for i, obj in enumerate(sc.objectives)
        ]
        if any(hit):
            visited = tuple(v or h for v, h in zip(visited, hit))
        status = DONE if all(visited) else ALIVE
        return (pos, visited, status)

    def rollout_macro(self, s, primitives, gamma: float, rng: np.random.Generator):
        """Whole-macro generative rollout (batched noise, scalar terrain
        checks); semantics identical to stepping the primitive model."""
        pos, visited, status = s
        if status != ALIVE:
            return s, (NULL_OBSERVATION,), (0.0,), 0.0, 1, True
        sc = self.scenario
        n = len(primitives)
        # one interleaved draw per step keeps the stream identical to the
        # stepped generative path (transition noise then observation noise)
        z = rng.standard_normal((n, 6)).tolist()
        st, so = self._noise_std, self._obs_std
        v = sc.speed
        lo, hi = self._lo, self._hi
        terrain = sc.terrain
        res = self._collision_resolution
        rewards = []
        observations = []
        disc = 0.0
        scale = 1.0
        steps = 0
        for t in range(n):
            a = primitives[t]
            zt = z[t]
            new_pos = (
                min(max(pos[0] + v * a[0] + st * zt[0], lo[0]), hi[0]),
                min(max(pos[1] + v * a[1] + st * zt[1], lo[1]), hi[1]),
                min(max(pos[2] + v * a[2] + st * zt[2], lo[2]), hi[2]),
            )
            if not terrain.segment_above(pos, new_pos, res):
                status = CRASHED
                pos = new_pos
                r = sc.reward_step + sc.reward_collision
                if self._in_nfz(pos):
                    r += sc.reward_nfz
            else:
                pos = new_pos
                r = sc.reward_step
                if self._in_nfz(pos):
                    r += sc.reward_nfz
                hit = False
                for i, (center, rad2) in enumerate(self._objs):
                    if not visited[i]:
                        dx = pos[0] - center[0]
                        dy = pos[1] - center[1]
                        dz = pos[2] - center[2]
                        if dx * dx + dy * dy + dz * dz <= rad2:
                            if not hit:
                                visited = list(visited)
                                hit = True
                            visited[i] = True
                            r += sc.reward_objective
                if hit:
                    visited = tuple(visited)
                    if all(visited):
                        status = DONE
                        r += sc.reward_mission
            observations.append(
                (pos[0] + so * zt[3], pos[1] + so * zt[4], pos[2] + so * zt[5])
            )
            rewards.append(r)
            disc += scale * r
            scale *= gamma
            steps += 1
            if status != ALIVE:
                break
        return (
            (pos, visited, status),
            tuple(observations),
            tuple(rewards),
            disc,
            steps,
            status != ALIVE,
        )

    def sample_observation(self, s_next, a, rng: np.random.Generator):
        noise = rng.normal(0.0, self._obs_std, size=3)
        return tuple(p + n for p, n in zip(s_next[0], noise))

    def reward(self, s, a, s_next) -> float:
        sc = self.scenario
        r = sc.reward_step
        if self._in_nfz(s_next[0]):
            r += sc.reward_nfz
        if s_next[2] == CRASHED:
            return r + sc.reward_collision
        newly = sum(1 for before, after in zip(s[1], s_next[1]) if after and not before)
        r += newly * sc.reward_objective
        if s_next[2] == DONE:
            r += sc.reward_mission
        return r

    def observation_key(self, o):
        g = self.scenario.observation_grid
        return tuple(math.floor(x / g) for x in o)

    def macro_observation_key(self, observations) -> tuple:
        # Noisy continuous readings: keying every primitive would make
        # rejection resampling hopeless, so macros are compared by length
        # and final reading cell.
        if not observations:
            return (0,)
        return (len(observations), self.observation_key(observations[-1]))

    def action_key(self, a):
        g = self.scenario.action_grid
        return tuple(round(x / g) for x in a)

    def sample_random_action(self, s, rng: np.random.Generator):
        v = rng.normal(size=3)
        n = float(np.linalg.norm(v))
        if n < 1e-12:
            return (1.0, 0.0, 0.0)
        return tuple(float(x / n) for x in v)

    def sample_initial_state(self, rng: np.random.Generator):
        sc = self.scenario
        return (tuple(sc.start), tuple(False for _ in sc.objectives), ALIVE)

    def initial_states(self, n: int, rng: np.random.Generator) -> list:
        return [self.sample_initial_state(rng) for _ in range(n)]

    def state_summary(self, particles) -> dict:
        pos = np.array([p[0] for p in particles])
        visited = np.array([[float(v) for v in p[1]] for p in particles])
        return {
            "n": len(particles),
            "mean": [round(float(x), 4) for x in pos.mean(axis=0)],
            "visited_frac": [round(float(x), 3) for x in visited.mean(axis=0)],
        }


def nfz_reward(s, step_index: int, schedule: list, penalty: float = -20.0) -> float:
    """Penalty contribution at a step: ``penalty`` iff the state's position is
    inside an NFZ active at ``step_index``, else 0."""
    active: list = []
    for at, boxes in schedule:
        if step_index >= at:
            active = boxes
    pos = s[0] if isinstance(s, tuple) and isinstance(s[0], tuple) else s
    return penalty if any(b.contains(pos) for b in active) else 0.0
