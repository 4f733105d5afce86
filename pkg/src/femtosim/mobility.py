"""Random-waypoint mobility and straight-line dwell-time estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameterError
from .model import Point2D, Ue


@dataclass(frozen=True)
class MobilityParams:
    v_min: float = 0.5
    v_max: float = 2.0
    pause_s: float = 5.0

    def __post_init__(self):
        if not 0 <= self.v_min <= self.v_max:
            raise InvalidParameterError("need 0 <= v_min <= v_max")
        if self.pause_s < 0:
            raise InvalidParameterError("pause_s must be >= 0")


@dataclass(frozen=True)
class MobilityState:
    waypoint: Point2D
    speed: float
    pause_remaining: float = 0.0

    def __post_init__(self):
        if self.speed < 0:
            raise InvalidParameterError("speed must be >= 0")


def _draw_leg(rng, bounds, params):
    xmin, ymin, xmax, ymax = bounds
    wp = Point2D(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)))
    return wp, float(rng.uniform(params.v_min, params.v_max))


def initial_state(ue: Ue, bounds, rng: np.random.Generator, params: MobilityParams) -> MobilityState:
    wp, v = _draw_leg(rng, bounds, params)
    return MobilityState(wp, v, 0.0)


def _heading(pos: Point2D, state: MobilityState):
    if state.pause_remaining > 0 or state.speed == 0:
        return (0.0, 0.0)
    dx, dy = state.waypoint.x - pos.x, state.waypoint.y - pos.y
    d = math.hypot(dx, dy)
    if d == 0:
        return (0.0, 0.0)
    return (dx / d * state.speed, dy / d * state.speed)


def step(ue: Ue, state: MobilityState, dt: float, bounds, rng: np.random.Generator,
         params: MobilityParams = MobilityParams()):
    """Advance one UE by ``dt`` seconds; returns the updated ``(ue, state)``.

    Motion heads straight for the waypoint. On arrival the UE pauses for
    ``pause_s`` and then draws a new waypoint inside ``bounds`` and a new
    speed in ``[v_min, v_max]``. Several legs may complete within one ``dt``.
    """
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    x, y = ue.position.x, ue.position.y
    left = dt
    while left > 0:
        if state.pause_remaining > 0:
            used = min(left, state.pause_remaining)
            left -= used
            state = replace(state, pause_remaining=state.pause_remaining - used)
            if state.pause_remaining > 0:
                break
            wp, v = _draw_leg(rng, bounds, params)
            state = MobilityState(wp, v, 0.0)
            continue
        if state.speed == 0:
            break
        dx, dy = state.waypoint.x - x, state.waypoint.y - y
        dist = math.hypot(dx, dy)
        if state.speed * left < dist:
            f = state.speed * left / dist
            x, y = x + dx * f, y + dy * f
            left = 0.0
        else:
            left -= dist / state.speed
            x, y = state.waypoint.x, state.waypoint.y
            if params.pause_s > 0:
                state = replace(state, pause_remaining=params.pause_s)
            else:
                wp, v = _draw_leg(rng, bounds, params)
                state = MobilityState(wp, v, 0.0)
    xmin, ymin, xmax, ymax = bounds
    pos = Point2D(min(max(x, xmin), xmax), min(max(y, ymin), ymax))
    return replace(ue, position=pos, velocity=_heading(pos, state)), state


def estimate_dwell_time(ue: Ue, fap, fap_radius: float) -> float:
    """Time the UE's current straight-line path stays inside the FAP's coverage disc.

    Only the forward part of the trajectory counts. A stationary UE yields
    ``inf``; a path missing the disc yields 0.
    """
    speed = ue.speed
    if speed == 0:
        return math.inf
    ux, uy = ue.velocity[0] / speed, ue.velocity[1] / speed
    cx, cy = fap.position.x - ue.position.x, fap.position.y - ue.position.y
    along = cx * ux + cy * uy
    perp2 = (cx * cx + cy * cy) - along * along
    r2 = fap_radius * fap_radius
    if perp2 >= r2:
        return 0.0
    half = math.sqrt(r2 - perp2)
    enter, leave = along - half, along + half
    if leave <= 0:
        return 0.0
    return (leave - max(enter, 0.0)) / speed
