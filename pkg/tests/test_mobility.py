import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from femtosim.errors import InvalidParameterError
from femtosim.mobility import MobilityParams, MobilityState, estimate_dwell_time, initial_state, step
from femtosim.model import Fap, Point2D, Ue

from oracles import dwell_numeric

BOUNDS = (-100.0, -100.0, 100.0, 100.0)


def test_stationary_ue_stays_put():
    ue = Ue(0, Point2D(3, 4))
    state = MobilityState(Point2D(50, 50), 0.0)
    ue2, _ = step(ue, state, 1.0, BOUNDS, np.random.default_rng(0))
    assert ue2.position == ue.position


def test_paused_ue_stays_put():
    ue = Ue(0, Point2D(3, 4))
    state = MobilityState(Point2D(50, 50), 2.0, pause_remaining=5.0)
    ue2, st2 = step(ue, state, 1.0, BOUNDS, np.random.default_rng(0))
    assert ue2.position == ue.position and st2.pause_remaining == pytest.approx(4.0)


def test_straight_segment_displacement():
    ue = Ue(0, Point2D(0, 0))
    state = MobilityState(Point2D(60, 80), 1.5)
    ue2, _ = step(ue, state, 0.01, BOUNDS, np.random.default_rng(0))
    assert math.dist((0, 0), (ue2.position.x, ue2.position.y)) == pytest.approx(0.015, abs=1e-9)
    assert ue2.speed == pytest.approx(1.5)


def test_multiple_legs_in_one_step():
    params = MobilityParams(1.0, 1.0, 0.0)
    ue = Ue(0, Point2D(0, 0))
    state = MobilityState(Point2D(1, 0), 1.0)
    rng = np.random.default_rng(1)
    ue2, st2 = step(ue, state, 5.0, BOUNDS, rng, params)
    assert st2.waypoint != Point2D(1, 0)


def test_ten_thousand_steps_stay_in_bounds():
    rng = np.random.default_rng(2)
    params = MobilityParams(0.5, 30.0, 1.0)
    ue = Ue(0, Point2D(0, 0))
    state = initial_state(ue, BOUNDS, rng, params)
    for _ in range(10_000):
        ue, state = step(ue, state, 0.7, BOUNDS, rng, params)
        x, y = ue.position.x, ue.position.y
        assert BOUNDS[0] <= x <= BOUNDS[2] and BOUNDS[1] <= y <= BOUNDS[3]
        assert ue.speed <= params.v_max + 1e-9


def test_step_is_pure():
    ue = Ue(0, Point2D(0, 0))
    state = MobilityState(Point2D(10, 0), 1.0)
    a = step(ue, state, 0.5, BOUNDS, np.random.default_rng(5))
    b = step(ue, state, 0.5, BOUNDS, np.random.default_rng(5))
    assert a[0].position == b[0].position and a[1] == b[1]
    assert ue.position == Point2D(0, 0)


def test_bad_parameters():
    with pytest.raises(InvalidParameterError):
        MobilityParams(3.0, 1.0)
    with pytest.raises(InvalidParameterError):
        step(Ue(0, Point2D(0, 0)), MobilityState(Point2D(1, 1), 1.0), 0.0, BOUNDS,
             np.random.default_rng(0))


def _fap(x=0.0, y=0.0):
    return Fap(0, Point2D(x, y), None, None, 10.0)


def test_dwell_through_centre():
    ue = Ue(0, Point2D(-20, 0), velocity=(2.0, 0.0))
    assert estimate_dwell_time(ue, _fap(), 20.0) == pytest.approx(20.0)


def test_dwell_miss_and_stationary():
    assert estimate_dwell_time(Ue(0, Point2D(-50, 30), velocity=(1.0, 0.0)), _fap(), 20.0) == 0.0
    assert estimate_dwell_time(Ue(0, Point2D(50, 0), velocity=(1.0, 0.0)), _fap(), 20.0) == 0.0
    assert math.isinf(estimate_dwell_time(Ue(0, Point2D(5, 0)), _fap(), 20.0))


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-60, 60), y=st.floats(-60, 60), ang=st.floats(0, 2 * math.pi),
       v=st.floats(0.5, 15))
def test_dwell_matches_numeric_integration(x, y, ang, v):
    vel = (v * math.cos(ang), v * math.sin(ang))
    ue = Ue(0, Point2D(x, y), velocity=vel)
    expect = dwell_numeric((x, y), vel, (0.0, 0.0), 20.0)
    assert estimate_dwell_time(ue, _fap(), 20.0) == pytest.approx(expect, abs=3e-3)
