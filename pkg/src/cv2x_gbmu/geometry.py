"""Road grid, vehicle placement and kinematics.

Roads are modelled as centerlines: ``rows`` horizontal and ``cols`` vertical
roads crossing a square region of interest. Each road is two-way; the sign of
a vehicle's velocity along the road gives its direction of travel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

ON_ROAD_TOL = 1e-6


@dataclass(frozen=True)
class Position2D:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Velocity2D:
    vx: float
    vy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy], dtype=float)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class RoadGrid:
    roi_side: float = 450.0
    rows: int = 4
    cols: int = 4
    lane_offset: float = 0.0

    def __post_init__(self):
        if self.roi_side <= 0 or self.rows < 1 or self.cols < 1:
            raise ValueError("road grid needs a positive side and at least one row and column")

    @property
    def road_y(self) -> np.ndarray:
        """Centerline y coordinates of the horizontal roads."""
        return (np.arange(self.rows) + 0.5) * self.roi_side / self.rows + self.lane_offset

    @property
    def road_x(self) -> np.ndarray:
        """Centerline x coordinates of the vertical roads."""
        return (np.arange(self.cols) + 0.5) * self.roi_side / self.cols + self.lane_offset

    @property
    def diagonal(self) -> float:
        return self.roi_side * math.sqrt(2.0)

    def on_road(self, pos, tol: float = ON_ROAD_TOL) -> bool:
        x, y = _xy(pos)
        if not (-tol <= x <= self.roi_side + tol and -tol <= y <= self.roi_side + tol):
            return False
        return bool(np.any(np.abs(self.road_y - y) <= tol) or np.any(np.abs(self.road_x - x) <= tol))

    def snap(self, pos) -> Position2D:
        """Project a point onto the nearest road centerline inside the RoI."""
        x, y = _xy(pos)
        x = min(max(x, 0.0), self.roi_side)
        y = min(max(y, 0.0), self.roi_side)
        iy = int(np.argmin(np.abs(self.road_y - y)))
        ix = int(np.argmin(np.abs(self.road_x - x)))
        if abs(self.road_y[iy] - y) <= abs(self.road_x[ix] - x):
            return Position2D(x, float(self.road_y[iy]))
        return Position2D(float(self.road_x[ix]), y)


@dataclass(frozen=True)
class Vehicle:
    id: int
    pos: Position2D
    vel: Velocity2D
    tx_power_dbm: float = 26.0


def _xy(p) -> tuple[float, float]:
    if isinstance(p, Position2D):
        return p.x, p.y
    return float(p[0]), float(p[1])


def distance(a, b) -> float:
    ax, ay = _xy(a)
    bx, by = _xy(b)
    return math.hypot(ax - bx, ay - by)


def relative_speed(a, b) -> float:
    if isinstance(a, Velocity2D):
        a = (a.vx, a.vy)
    if isinstance(b, Velocity2D):
        b = (b.vx, b.vy)
    return math.hypot(float(a[0]) - float(b[0]), float(a[1]) - float(b[1]))


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def drop_vehicles(
    grid: RoadGrid,
    n: int,
    rng_seed=None,
    v_min: float = 5.0,
    v_max: float = 15.0,
    tx_power_dbm: float = 26.0,
) -> list[Vehicle]:
    """Drop ``n`` vehicles uniformly over the road network.

    Every road has the same length, so a road is picked uniformly and the
    vehicle is placed uniformly along it. Speed is uniform on ``[v_min, v_max]``
    with a random direction sign.
    """
    if n < 1:
        raise ValueError("need at least one vehicle")
    if not 0 <= v_min <= v_max:
        raise ValueError("speed range must satisfy 0 <= v_min <= v_max")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n_roads = grid.rows + grid.cols
    road = rng.integers(n_roads, size=n)
    along = rng.uniform(0.0, grid.roi_side, size=n)
    speed = rng.uniform(v_min, v_max, size=n)
    sign = rng.choice([-1.0, 1.0], size=n)
    vehicles = []
    for i in range(n):
        if road[i] < grid.rows:
            pos = Position2D(float(along[i]), float(grid.road_y[road[i]]))
            vel = Velocity2D(float(sign[i] * speed[i]), 0.0)
        else:
            pos = Position2D(float(grid.road_x[road[i] - grid.rows]), float(along[i]))
            vel = Velocity2D(0.0, float(sign[i] * speed[i]))
        vehicles.append(Vehicle(i, pos, vel, tx_power_dbm))
    return vehicles


def vehicles_to_arrays(vehicles: Sequence[Vehicle]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([[v.pos.x, v.pos.y] for v in vehicles], dtype=float)
    vel = np.array([[v.vel.vx, v.vel.vy] for v in vehicles], dtype=float)
    return pos, vel


def advance_arrays(
    pos: np.ndarray,
    vel: np.ndarray,
    dt: float,
    grid: RoadGrid,
    rng: np.random.Generator,
    boundary: str = "uturn",
) -> tuple[np.ndarray, np.ndarray]:
    """Move vehicles by ``vel * dt`` along the road network.

    A vehicle that passes an intersection picks one of the continuing
    directions (straight, left, right) uniformly and spends the remaining
    travel on the new road. At the RoI edge it either U-turns or wraps to the
    opposite side, depending on ``boundary``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if boundary not in ("uturn", "wrap"):
        raise ValueError(f"unknown boundary policy {boundary!r}")
    new_pos = pos + vel * dt
    new_vel = vel.copy()
    side = grid.roi_side
    xs, ys = grid.road_x, grid.road_y
    for i in range(len(pos)):
        vx, vy = vel[i]
        if vx == 0.0 and vy == 0.0:
            continue
        horizontal = vx != 0.0
        a0 = pos[i, 0] if horizontal else pos[i, 1]
        a1 = new_pos[i, 0] if horizontal else new_pos[i, 1]
        cross = xs if horizontal else ys
        lo, hi = min(a0, a1), max(a0, a1)
        # strict on the start so a vehicle leaving an intersection does not re-trigger
        hit = cross[(cross > lo) & (cross <= hi)] if a1 > a0 else cross[(cross >= lo) & (cross < hi)]
        inside = 0.0 <= a1 <= side
        if hit.size == 0 and inside:
            continue
        new_pos[i], new_vel[i] = _walk(pos[i].copy(), vel[i].copy(), dt, grid, rng, boundary)
    return new_pos, new_vel


def _walk(p, v, dt, grid, rng, boundary):
    side = grid.roi_side
    remaining = float(np.hypot(*v)) * dt
    speed = float(np.hypot(*v))
    for _ in range(10_000):
        if remaining <= 0.0:
            break
        axis = 0 if v[0] != 0.0 else 1
        sgn = math.copysign(1.0, v[axis])
        cross = grid.road_x if axis == 0 else grid.road_y
        a = p[axis]
        ahead = cross[(cross - a) * sgn > ON_ROAD_TOL]
        next_x = ahead.min() if sgn > 0 and ahead.size else (ahead.max() if ahead.size else None)
        edge = side if sgn > 0 else 0.0
        stop = next_x if next_x is not None else edge
        gap = abs(stop - a)
        if gap >= remaining:
            p[axis] = a + sgn * remaining
            break
        p[axis] = stop
        remaining -= gap
        if next_x is not None:
            choice = rng.integers(3)
            if choice == 1:
                v = np.zeros(2)
                v[1 - axis] = speed
            elif choice == 2:
                v = np.zeros(2)
                v[1 - axis] = -speed
        elif boundary == "uturn":
            v = -v
        else:
            p[axis] = side - edge
    return p, v


def advance(
    vehicles: Sequence[Vehicle],
    dt: float,
    grid: RoadGrid,
    rng: np.random.Generator,
    boundary: str = "uturn",
) -> list[Vehicle]:
    pos, vel = vehicles_to_arrays(vehicles)
    pos, vel = advance_arrays(pos, vel, dt, grid, rng, boundary)
    return [
        replace(v, pos=Position2D(*map(float, p)), vel=Velocity2D(*map(float, u)))
        for v, p, u in zip(vehicles, pos, vel)
    ]
