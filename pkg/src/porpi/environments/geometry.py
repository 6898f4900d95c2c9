"""Axis-aligned boxes, sliding collision response and heightmap terrain."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Sliding backs positions off wall faces by this much so a clipped point is
# never inside the (closed) box it slid along.
WALL_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box; boundary points count as inside."""

    lo: tuple
    hi: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("box lo/hi dimension mismatch")
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box has lo > hi: {self.lo} / {self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> tuple:
        return tuple(0.5 * (l + h) for l, h in zip(self.lo, self.hi))

    def contains(self, p: Sequence[float]) -> bool:
        return all(l <= x <= h for x, l, h in zip(p, self.lo, self.hi))

    def contains_open(self, p: Sequence[float]) -> bool:
        return all(l < x < h for x, l, h in zip(p, self.lo, self.hi))

    def inflated(self, margin: float) -> "Box":
        return Box(
            tuple(l - margin for l in self.lo),
            tuple(h + margin for h in self.hi),
        )

    def overlaps(self, other: "Box") -> bool:
        return all(
            l <= oh and ol <= h
            for l, h, ol, oh in zip(self.lo, self.hi, other.lo, other.hi)
        )


def point_in_any(p: Sequence[float], boxes: Sequence[Box]) -> bool:
    return any(b.contains(p) for b in boxes)


def clamp(p: Sequence[float], lo: Sequence[float], hi: Sequence[float]) -> tuple:
    return tuple(min(max(x, l), h) for x, l, h in zip(p, lo, hi))


def slide_move(
    p: Sequence[float],
    delta: Sequence[float],
    walls: Sequence[Box],
    bounds: Box,
) -> tuple:
    """Move ``p`` by ``delta`` conforming to walls: blocked axes clip to the
    wall face (minus WALL_EPS) while free axes keep moving, one axis at a
    time. The result is always inside ``bounds`` and never inside a wall.
    """
    cur = list(p)
    for axis in range(len(cur)):
        d = delta[axis]
        if d == 0.0:
            continue
        target = cur[axis] + d
        lo, hi = bounds.lo[axis], bounds.hi[axis]
        target = min(max(target, lo + WALL_EPS), hi - WALL_EPS)
        trial = list(cur)
        trial[axis] = target
        for w in walls:
            if w.contains(trial):
                if d > 0:
                    target = min(target, w.lo[axis] - WALL_EPS)
                else:
                    target = max(target, w.hi[axis] + WALL_EPS)
                trial[axis] = target
        # A second wall can still capture the clipped point (e.g. touching
        # corners); give up on this axis if so.
        if any(w.contains(trial) for w in walls):
            continue
        cur[axis] = target
    return tuple(cur)


def segment_clear(
    a: Sequence[float],
    b: Sequence[float],
    obstacles: Sequence[Box],
    resolution: float,
) -> bool:
    """Sample the segment a->b at ``resolution`` spacing; True when no
    sample point lies inside any obstacle box."""
    if not obstacles:
        return True
    dim = len(a)
    deltas = [float(b[i]) - float(a[i]) for i in range(dim)]
    length = math.sqrt(sum(d * d for d in deltas))
    n = max(1, math.ceil(length / max(resolution, 1e-9)))
    boxes = [(box.lo, box.hi) for box in obstacles]
    for k in range(n + 1):
        t = k / n
        p = [a[i] + t * deltas[i] for i in range(dim)]
        for lo, hi in boxes:
            for i in range(dim):
                if not lo[i] <= p[i] <= hi[i]:
                    break
            else:
                return False
    return True


class Terrain:
    """Single-channel heightmap over a rectangular footprint, bilinearly
    interpolated between grid samples."""

    def __init__(self, heights: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> None:
        heights = np.asarray(heights, dtype=float)
        if heights.ndim != 2 or heights.shape[0] < 2 or heights.shape[1] < 2:
            raise ValueError("heightmap needs at least a 2x2 grid")
        self.heights = heights
        self._rows = heights.tolist()
        self._hmax = float(heights.max())
        self._nx = heights.shape[0]
        self._ny = heights.shape[1]
        self.x0, self.y0, self.x1, self.y1 = float(x0), float(y0), float(x1), float(y1)
        self._dx = (self.x1 - self.x0) / (heights.shape[0] - 1)
        self._dy = (self.y1 - self.y0) / (heights.shape[1] - 1)

    def height(self, x: float, y: float) -> float:
        if x < self.x0:
            x = self.x0
        elif x > self.x1:
            x = self.x1
        if y < self.y0:
            y = self.y0
        elif y > self.y1:
            y = self.y1
        gx = (x - self.x0) / self._dx
        gy = (y - self.y0) / self._dy
        i0 = int(gx)
        if i0 > self._nx - 2:
            i0 = self._nx - 2
        j0 = int(gy)
        if j0 > self._ny - 2:
            j0 = self._ny - 2
        fx = gx - i0
        fy = gy - j0
        r0 = self._rows[i0]
        r1 = self._rows[i0 + 1]
        return (
            r0[j0] * (1 - fx) * (1 - fy)
            + r1[j0] * fx * (1 - fy)
            + r0[j0 + 1] * (1 - fx) * fy
            + r1[j0 + 1] * fx * fy
        )

    def clearance(self, p: Sequence[float]) -> float:
        """Height of the point above the terrain surface (negative = below)."""
        return float(p[2]) - self.height(p[0], p[1])

    def segment_above(self, a: Sequence[float], b: Sequence[float], resolution: float,
                      margin: float = 0.0) -> bool:
        ax, ay, az = float(a[0]), float(a[1]), float(a[2])
        bz = float(b[2])
        # quick reject: the whole segment is above the terrain's maximum
        if az - margin >= self._hmax and bz - margin >= self._hmax:
            return True
        dx, dy, dz = float(b[0]) - ax, float(b[1]) - ay, bz - az
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        n = max(1, math.ceil(length / max(resolution, 1e-9)))
        for k in range(n + 1):
            t = k / n
            if az + t * dz - margin < self.height(ax + t * dx, ay + t * dy):
                return False
        return True

    @staticmethod
    def procedural(
        nx: int,
        ny: int,
        x0: float,
        y0: float,
        x1: float,
        y1: float,
        base: float = 0.0,
        hills: Sequence[dict] = (),
    ) -> "Terrain":
        """Base plane plus Gaussian hills/ridges, each given as
        {"center": [x, y], "height": h, "sigma": s} (anisotropic sigma as
        [sx, sy] builds a ridge)."""
        xs = np.linspace(x0, x1, nx)
        ys = np.linspace(y0, y1, ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        h = np.full_like(gx, float(base))
        for hill in hills:
            cx, cy = hill["center"]
            sig = hill.get("sigma", 1.0)
            sx, sy = (sig, sig) if np.isscalar(sig) else (sig[0], sig[1])
            h += hill["height"] * np.exp(
                -0.5 * (((gx - cx) / sx) ** 2 + ((gy - cy) / sy) ** 2)
            )
        return Terrain(h, x0, y0, x1, y1)

    @staticmethod
    def from_csv(path: str, x0: float, y0: float, x1: float, y1: float) -> "Terrain":
        return Terrain(np.loadtxt(path, delimiter=","), x0, y0, x1, y1)
