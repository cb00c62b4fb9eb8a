"""Kinematic bicycle model and a dead-beat reference tracker.

The tracker is the hot loop of scene generation.  It is compiled with numba
when available and ``MAAD_NUMBA`` is not disabled; otherwise the identical
pure-Python/numpy implementation runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._accel import USE_NUMBA, njit
from ..core import DT

WHEELBASE = 2.5
A_MAX = 4.0
STEER_MAX = 0.5
V_MAX = 20.0


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self):
        if not self.speed >= 0.0:
            raise ValueError(f"speed must be non-negative, got {self.speed}")
        if not -math.pi < self.heading <= math.pi:
            raise ValueError(f"heading {self.heading} outside (-pi, pi]")


@dataclass(frozen=True)
class ControlCommand:
    accel: float
    steer: float


def step_kinematics(state: VehicleState, cmd: ControlCommand, dt=DT, wheelbase=WHEELBASE,
                    a_max=A_MAX, steer_max=STEER_MAX) -> VehicleState:
    """One explicit Euler step; commands are clipped to the limits."""
    a = min(max(cmd.accel, -a_max), a_max)
    d = min(max(cmd.steer, -steer_max), steer_max)
    x = state.x + state.speed * math.cos(state.heading) * dt
    y = state.y + state.speed * math.sin(state.heading) * dt
    h = wrap_angle(state.heading + state.speed / wheelbase * math.tan(d) * dt)
    v = max(0.0, state.speed + a * dt)
    return VehicleState(x, y, h, v)


def wrap_angle(a):
    """Map to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


def _track_py(ref, v_max, a_max, steer_max, wheelbase, dt):
    n = ref.shape[0]
    states = np.zeros((n, 4))
    cmds = np.zeros((max(n - 1, 0), 2))
    x, y = ref[0, 0], ref[0, 1]
    dx, dy = ref[1, 0] - x, ref[1, 1] - y
    v = min(math.sqrt(dx * dx + dy * dy) / dt, v_max)
    h = 0.0
    for k in range(n - 1):
        ex, ey = ref[k + 1, 0] - ref[k, 0], ref[k + 1, 1] - ref[k, 1]
        if ex * ex + ey * ey > 1e-18:
            h = math.atan2(ey, ex)
            break
    for k in range(n - 1):
        states[k, 0] = x
        states[k, 1] = y
        states[k, 2] = h
        states[k, 3] = v
        # position at k+1 is already fixed by the current state
        x1 = x + v * math.cos(h) * dt
        y1 = y + v * math.sin(h) * dt
        if k + 2 < n:
            wx, wy = ref[k + 2, 0] - x1, ref[k + 2, 1] - y1
            dist = math.sqrt(wx * wx + wy * wy)
            v_des = dist / dt
            h_des = math.atan2(wy, wx) if dist > 1e-9 else h
        else:
            v_des = v
            h_des = h
        v_des = min(v_des, v_max)
        a = min(max((v_des - v) / dt, -a_max), a_max)
        steer = 0.0
        if v > 1e-9:
            dh = (h_des - h + math.pi) % (2.0 * math.pi) - math.pi
            steer = math.atan(dh * wheelbase / (v * dt))
            steer = min(max(steer, -steer_max), steer_max)
        cmds[k, 0] = a
        cmds[k, 1] = steer
        h = h + v / wheelbase * math.tan(steer) * dt
        h = math.pi - (math.pi - h) % (2.0 * math.pi)
        v = max(0.0, v + a * dt)
        x, y = x1, y1
    states[n - 1, 0] = x
    states[n - 1, 1] = y
    states[n - 1, 2] = h
    states[n - 1, 3] = v
    return states, cmds


_track_jit = njit(_track_py)


def track_reference(ref, v_max=V_MAX, a_max=A_MAX, steer_max=STEER_MAX, wheelbase=WHEELBASE,
                    dt=DT, use_numba=None):
    """Roll the bicycle model along reference positions ``ref`` (L, 2).

    Each step picks the command that makes the position two frames ahead hit
    the reference, clipped to the acceleration and steering limits.  The
    initial position and speed come from the first two reference frames.
    Returns states (L, 4) as [x, y, heading, speed] and commands (L-1, 2).
    """
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[0] < 2 or ref.shape[1] != 2:
        raise ValueError("reference must be (L>=2, 2)")
    fn = _track_jit if (USE_NUMBA if use_numba is None else use_numba) else _track_py
    return fn(ref, float(v_max), float(a_max), float(steer_max), float(wheelbase), float(dt))
