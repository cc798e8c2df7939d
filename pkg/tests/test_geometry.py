import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cv2x_gbmu.geometry import (
    Position2D,
    RoadGrid,
    Vehicle,
    Velocity2D,
    advance,
    distance,
    drop_vehicles,
    relative_speed,
)

coord = st.floats(-1e4, 1e4, allow_nan=False)
point = st.tuples(coord, coord)


def test_distance_examples():
    assert distance(Position2D(0, 0), Position2D(3, 4)) == 5.0
    assert distance(Position2D(7.5, -2), Position2D(7.5, -2)) == 0.0
    assert distance(Position2D(10, 20), Position2D(-5, 8)) == pytest.approx(19.209, abs=5e-4)
    assert distance((10, 20), (-5, 8)) == pytest.approx(math.sqrt(369))


def test_relative_speed_examples():
    assert relative_speed(Velocity2D(4, -1), Velocity2D(4, -1)) == 0.0
    assert relative_speed(Velocity2D(10, 0), Velocity2D(-10, 0)) == 20.0
    assert relative_speed(Velocity2D(3, 4), Velocity2D(0, 0)) == 5.0


@given(point, point)
def test_distance_and_speed_symmetric(a, b):
    assert distance(a, b) == distance(b, a)
    assert relative_speed(a, b) == relative_speed(b, a)


@given(point, point, point)
def test_triangle_inequality(a, b, c):
    assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9


def test_drop_vehicles_default():
    grid = RoadGrid()
    cars = drop_vehicles(grid, 21, 7)
    assert len(cars) == 21
    assert all(grid.on_road(v.pos) for v in cars)
    assert all(5 <= v.vel.speed <= 15 for v in cars)
    assert cars == drop_vehicles(grid, 21, 7)


def test_drop_single_and_invalid():
    grid = RoadGrid()
    (v,) = drop_vehicles(grid, 1, 3)
    assert 0 <= v.pos.x <= grid.roi_side and 0 <= v.pos.y <= grid.roi_side
    with pytest.raises(ValueError):
        drop_vehicles(grid, 0, 3)


def test_advance_stationary_and_straight(rng):
    grid = RoadGrid()
    y = float(grid.road_y[0])
    still = Vehicle(0, Position2D(20.0, y), Velocity2D(0, 0))
    mover = Vehicle(1, Position2D(60.0, y), Velocity2D(10, 0))  # next crossing at x=56.25+112.5
    a, b = advance([still, mover], 1.0, grid, rng)
    assert a.pos == still.pos
    assert b.pos.x == pytest.approx(70.0) and b.pos.y == y


def test_advance_uturn_at_boundary(rng):
    grid = RoadGrid()
    y = float(grid.road_y[1])
    v = Vehicle(0, Position2D(445.0, y), Velocity2D(10, 0))
    (out,) = advance([v], 1.0, grid, rng, boundary="uturn")
    assert out.vel.vx == -10.0
    assert out.pos.x == pytest.approx(445.0)


def test_advance_wrap(rng):
    grid = RoadGrid()
    y = float(grid.road_y[1])
    (out,) = advance([Vehicle(0, Position2D(445.0, y), Velocity2D(10, 0))], 1.0, grid, rng, boundary="wrap")
    assert out.vel.vx == 10.0
    assert out.pos.x == pytest.approx(5.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.sampled_from(["uturn", "wrap"]),
       st.floats(0.01, 5.0))
def test_vehicles_stay_on_roads(seed, steps, boundary, dt):
    grid = RoadGrid()
    rng = np.random.default_rng(seed)
    cars = drop_vehicles(grid, 12, rng)
    for _ in range(steps):
        cars = advance(cars, dt, grid, rng, boundary)
        for v in cars:
            assert grid.on_road(v.pos, tol=1e-6)
            assert -1e-9 <= v.pos.x <= grid.roi_side + 1e-9
            assert -1e-9 <= v.pos.y <= grid.roi_side + 1e-9
