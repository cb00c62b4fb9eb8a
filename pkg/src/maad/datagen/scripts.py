"""Maneuver scripts for every taxonomy subclass and scene rendering.

A scene is planned in two parts.  :class:`WorldSpec` fixes the road, the
target's route and start, the companion agents a maneuver needs (lead,
follower, side) and the rigid transform.  :class:`ManeuverScript` fixes the
target's longitudinal and lateral motion.  ``generate_scene`` samples the
background traffic from ``seed`` alone, so scripts that share a world spec
and seed see identical background agents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import (
    ABNORMAL_CLASSES,
    DT,
    NORMAL_CLASSES,
    TAXONOMY,
    Category,
    FrameLabel,
    Role,
    Scene,
    Trajectory,
)
from ..errors import InfeasibleScript
from .geometry import Path
from .kinematics import A_MAX, V_MAX, track_reference
from .worlds import HALF, LANE_WIDTH, TEMPLATES, RigidTransform, RoadTemplate, road_template, transform_graph

IGNORE_MARGIN = 3
CAR_LENGTH = 4.5
MIN_FRAMES = 17
MAX_FRAMES = 101
PLAN_ATTEMPTS = 25
TRACK_TOLERANCE = 0.3
# junction anomalies need an approach, the manoeuvre and its aftermath on screen
CLASS_MIN_FRAMES = {"cancel_turn": 60, "last_minute_turn": 60, "enter_wrong_lane": 60}

_LANE2 = ("straight", "curved")
_JUNC = ("t_junction", "four_way")
COMPATIBLE = {
    "straight": TEMPLATES,
    "turn_left": _JUNC,
    "turn_right": _JUNC,
    "following": TEMPLATES,
    "side_by_side": _LANE2,
    "lane_change_left": _LANE2,
    "lane_change_right": _LANE2,
    "brake": TEMPLATES,
    "accelerate": TEMPLATES,
    "ghost_driver": TEMPLATES,
    "leave_road": TEMPLATES,
    "thwarting": TEMPLATES,
    "cancel_turn": _JUNC,
    "last_minute_turn": _JUNC,
    "enter_wrong_lane": _JUNC,
    "staggering": TEMPLATES,
    "pushing_away": _LANE2,
    "swerving_left": TEMPLATES,
    "swerving_right": TEMPLATES,
    "tailgating": TEMPLATES,
    "aggressive_shearing_left": _LANE2,
    "aggressive_shearing_right": _LANE2,
}
# label used for the frames of an abnormal scene outside the anomaly
_BASE = {
    "tailgating": "following",
    "thwarting": "straight",
    "pushing_away": "side_by_side",
    "aggressive_shearing_left": "side_by_side",
    "aggressive_shearing_right": "side_by_side",
}


@dataclass(frozen=True)
class Companion:
    """Lane-following agent placed relative to the target's start.

    ``kind`` is ``lead`` / ``follower`` (same route, ``offset`` metres ahead
    or behind) or ``side_left`` / ``side_right`` (neighbour lane, ``offset``
    metres along the road relative to the target).
    """

    kind: str
    offset: float
    speed: float


@dataclass(frozen=True)
class WorldSpec:
    template: str
    route: tuple
    start_s: float
    frames: int
    companions: tuple = ()
    n_background: int = 3
    transform: RigidTransform = field(default_factory=RigidTransform)


@dataclass(frozen=True)
class ManeuverScript:
    subclass: str
    params: tuple = ()

    def __post_init__(self):
        if self.subclass not in TAXONOMY:
            raise InfeasibleScript(f"unknown subclass {self.subclass!r}")
        object.__setattr__(self, "params", tuple(sorted(dict(self.params).items())))

    @classmethod
    def make(cls, subclass, **params):
        return cls(subclass, tuple(params.items()))

    def get(self, key, default=None):
        return dict(self.params).get(key, default)

    def __getitem__(self, key):
        p = dict(self.params)
        if key not in p:
            raise InfeasibleScript(f"{self.subclass}: missing parameter {key!r}")
        return p[key]

    @property
    def abnormal(self) -> bool:
        return self.subclass in ABNORMAL_CLASSES

    def label_intervals(self, frames):
        """Disjoint (start, stop, Category) runs covering ``range(frames)``."""
        labels = label_frames(frames, self.get("abnormal", ()) if self.abnormal else (), "straight", self.subclass)
        runs, start = [], 0
        for k in range(1, frames + 1):
            if k == frames or labels[k].category is not labels[start].category:
                runs.append((start, k, labels[start].category))
                start = k
        return runs


# --------------------------------------------------------------------- profiles


def ramp(t, t0, duration):
    """Quintic smooth step from 0 (t <= t0) to 1 (t >= t0 + duration)."""
    u = np.clip((np.asarray(t, float) - t0) / max(duration, 1e-9), 0.0, 1.0)
    return u**3 * (10 - 15 * u + 6 * u * u)


def phase_speeds(n, v0, phases, dt=DT):
    """Speeds per frame; each phase (t_start, v_goal, accel) takes over at t_start."""
    phases = sorted(phases)
    v = np.empty(n)
    cur, goal, acc, j = float(v0), float(v0), 0.0, 0
    for k in range(n):
        while j < len(phases) and phases[j][0] <= k * dt + 1e-9:
            _, goal, acc = phases[j]
            j += 1
        v[k] = cur
        step = acc * dt
        cur = cur + min(max(goal - cur, -step), step)
    return v


def follow_speeds(n, v0, lead_s, lead_v, desired_gap, a_up, a_down, dt=DT):
    """Gap-keeping speed profile behind a lead at arc lengths ``lead_s``.

    ``desired_gap(k, v)`` is the target centre distance at frame k.
    """
    v = np.empty(n)
    s, cur = 0.0, float(v0)
    for k in range(n):
        v[k] = cur
        gap = lead_s[k] - s
        a = 0.5 * (gap - desired_gap(k, cur)) + 1.0 * (lead_v - cur)
        a = min(max(a, -a_down), a_up)
        s += cur * dt
        cur = max(0.0, cur + a * dt)
    return v


def distances(v, dt=DT):
    """Arc length travelled at each frame (starting at 0)."""
    return np.concatenate([[0.0], np.cumsum(v[:-1] * dt)])


def frame_of_distance(s_rel, d):
    k = int(np.searchsorted(s_rel, d))
    return min(k, len(s_rel) - 1)


# ---------------------------------------------------------------------- planning


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _choose(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def lane_routes(tpl: RoadTemplate):
    if tpl.name in _LANE2:
        return [("E1",), ("E2",), ("W1",), ("W2",)]
    return [r for r in tpl.routes if r[1].endswith("_thru")]


def _route_len(tpl, route):
    return tpl.route_path(route).length


def _entry_s(tpl, route):
    return tpl.route_path(route[:1]).length


def _place_on_lane(rng, tpl, route, travel, ahead=0.0, behind=0.0):
    """Random start arc length that keeps the whole motion on the route."""
    total = _route_len(tpl, route)
    lo = 5.0 + behind
    hi = total - travel - ahead - 5.0
    if hi <= lo:
        raise InfeasibleScript(f"route {route} too short for {travel:.0f} m of travel")
    return _u(rng, lo, hi)


def _frames_for(duration_s):
    return int(min(MAX_FRAMES, max(MIN_FRAMES, round(duration_s / DT))))


def _truncate(frames, end_frame, rng):
    """Scene ends shortly after a finite anomaly."""
    return int(min(frames, max(MIN_FRAMES, end_frame + int(rng.integers(0, 9)))))


def plan_scene(subclass, rng, duration_s=5.0, template="auto", n_background=None, overrides=None):
    """Sample a (WorldSpec, ManeuverScript) pair for ``subclass``."""
    if subclass not in TAXONOMY:
        raise InfeasibleScript(f"unknown subclass {subclass!r}")
    if template in (None, "auto"):
        template = _choose(rng, COMPATIBLE[subclass])
    elif template not in COMPATIBLE[subclass]:
        raise InfeasibleScript(f"{subclass} cannot be scripted on a {template} road")
    tpl = road_template(template)
    n = max(_frames_for(duration_s), CLASS_MIN_FRAMES.get(subclass, MIN_FRAMES))
    p = dict(overrides or {})
    planner = _PLANNERS[subclass]
    for _ in range(PLAN_ATTEMPTS):
        q = dict(p)
        route, start_s, frames, comps, params = planner(rng, tpl, n, q)
        params = {**params, **q}
        nb = int(rng.integers(2, 7)) if n_background is None else int(n_background)
        ws = WorldSpec(template, tuple(route), float(start_s), int(frames), tuple(comps), nb, RigidTransform.random(rng))
        script = ManeuverScript.make(subclass, **params)
        if script.abnormal and not _enough_abnormal(script, ws.frames):
            continue
        if tracking_error(tpl, ws, script) <= TRACK_TOLERANCE:
            return ws, script
    raise InfeasibleScript(f"{subclass}: no trackable plan in {PLAN_ATTEMPTS} attempts")


def _enough_abnormal(script, frames, least=5):
    runs = script.label_intervals(frames)
    return sum(b - a for a, b, c in runs if c is Category.ABNORMAL) >= least


def tracking_error(tpl, ws, script, v_max=V_MAX, a_max=A_MAX):
    """Largest distance between the scripted reference and the rolled-out vehicle."""
    ref = target_reference(tpl, ws, script, None)
    states, _ = track_reference(ref, v_max=v_max, a_max=a_max)
    return float(np.max(np.linalg.norm(states[:, :2] - ref, axis=1)))


# usable path curvature: tan(steer limit) / wheelbase, with a safety factor
_KAPPA = 0.7 * math.tan(0.5) / 2.5


def _min_duration(peak_acc_per_amp, amp, v):
    """Shortest lateral manoeuvre whose peak curvature stays tracked.

    ``peak_acc_per_amp`` is the peak lateral acceleration of the unit-length,
    unit-amplitude profile.
    """
    return math.sqrt(peak_acc_per_amp * abs(amp) / (_KAPPA * max(v, 1.0) ** 2))


def _onset(rng, n, min_len=15):
    """Onset frame of an anomaly: after the first scored frame, leaving room."""
    lo = 20 if n >= 20 + min_len else max(4, n - min_len - 1)
    hi = max(lo + 1, min(40, n - min_len))
    return int(rng.integers(lo, hi))


def _plan_lane_motion(rng, tpl, n, route=None, v0=None, routes=None):
    route = route or _choose(rng, routes or lane_routes(tpl))
    v0 = _u(rng, 8.0, 13.0) if v0 is None else v0
    return route, v0


def _p_straight(rng, tpl, n, p):
    route, v0 = _plan_lane_motion(rng, tpl, n)
    dv = _u(rng, -1.0, 1.0)
    phases = [(_u(rng, 0.5, n * DT), v0 + dv, _u(rng, 0.2, 0.6))]
    v = phase_speeds(n, v0, phases)
    start = _place_on_lane(rng, tpl, route, distances(v)[-1])
    return route, start, n, (), dict(v0=v0, phases=tuple(phases))


def _turn_route(rng, tpl, kind, entries=None):
    keys = [k for k in tpl.turns if k[1] == kind and (entries is None or k[0] in entries)]
    if not keys:
        raise InfeasibleScript(f"{tpl.name} has no {kind} turn")
    return tpl.turns[_choose(rng, keys)]


def _anchor_start(tpl, route, v, k_anchor):
    """Start arc length that puts the junction entry at frame ``k_anchor``."""
    return _entry_s(tpl, route) - distances(v)[k_anchor]


def _turn_phases(rng, n, k_e, v0, v_turn, a_brake, a_go):
    t_e = k_e * DT
    t_b = max(0.0, t_e - (v0 - v_turn) / a_brake - 0.3)
    return [(t_b, v_turn, a_brake), (t_e + 2.2, v0, a_go)]


def _p_turn(kind):
    def plan(rng, tpl, n, p):
        route = _turn_route(rng, tpl, kind.split("_")[1])
        v0, v_turn = _u(rng, 8.0, 11.0), _u(rng, 4.0, 6.5)
        a_b = _u(rng, 1.5, 3.0)
        brake_time = (v0 - v_turn) / a_b
        lo = int(math.ceil(brake_time / DT)) + 5
        k_e = int(rng.integers(min(lo, n - 12), max(min(lo, n - 12) + 1, n - 12)))
        phases = _turn_phases(rng, n, k_e, v0, v_turn, a_b, _u(rng, 1.0, 2.0))
        v = phase_speeds(n, v0, phases)
        return route, _anchor_start(tpl, route, v, k_e), n, (), dict(v0=v0, phases=tuple(phases))

    return plan


def _p_following(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    v_lead = _u(rng, 7.0, 12.0)
    gap0 = _u(rng, 15.0, 30.0)
    tau = _u(rng, 1.2, 2.2)
    v0 = v_lead + _u(rng, -1.0, 2.0)
    start = _place_on_lane(rng, tpl, route, v_lead * n * DT, ahead=gap0 + 10)
    return route, start, n, (Companion("lead", gap0, v_lead),), dict(v0=v0, tau=tau)


def _neighbour_side(route, toward):
    """Side of the neighbour lane the maneuver involves (2x2 roads only)."""
    lane = route[0]
    if toward == "left":
        return lane[0] + "1" if lane.endswith("2") else None
    return lane[0] + "2" if lane.endswith("1") else None


def _p_side_by_side(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    side = "side_left" if route[0].endswith("2") else "side_right"
    v0 = _u(rng, 8.0, 13.0)
    comp = Companion(side, _u(rng, -3.0, 3.0), v0 + _u(rng, -0.3, 0.3))
    start = _place_on_lane(rng, tpl, route, v0 * n * DT + 10, ahead=10, behind=10)
    return route, start, n, (comp,), dict(v0=v0, phases=())


def _p_lane_change(direction):
    def plan(rng, tpl, n, p):
        route = ("E2",) if rng.random() < 0.5 else ("W2",)
        if direction == "right":
            route = (route[0][0] + "1",)
        v0 = _u(rng, 9.0, 13.0)
        dur = _u(rng, 3.0, 5.0)
        t0 = _u(rng, 0.5, max(0.6, n * DT - dur - 0.3))
        start = _place_on_lane(rng, tpl, route, v0 * n * DT)
        sign = 1.0 if direction == "left" else -1.0
        return route, start, n, (), dict(v0=v0, phases=(), lateral=(("shift", t0, dur, sign * LANE_WIDTH),))

    return plan


def _p_brake(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    v0 = _u(rng, 9.0, 13.0)
    phases = [(_u(rng, 0.5, max(0.6, n * DT - 2.0)), _u(rng, 0.0, v0 - 4.0), _u(rng, 1.5, 3.5))]
    v = phase_speeds(n, v0, phases)
    return route, _place_on_lane(rng, tpl, route, distances(v)[-1]), n, (), dict(v0=v0, phases=tuple(phases))


def _p_accelerate(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    v0 = _u(rng, 2.0, 8.0)
    phases = [(_u(rng, 0.5, max(0.6, n * DT - 2.0)), _u(rng, v0 + 4.0, 15.0), _u(rng, 1.0, 2.5))]
    v = phase_speeds(n, v0, phases)
    return route, _place_on_lane(rng, tpl, route, distances(v)[-1]), n, (), dict(v0=v0, phases=tuple(phases))


def _p_ghost(rng, tpl, n, p):
    routes = [r for r in lane_routes(tpl) if not r[0].endswith("2")]
    route = _choose(rng, routes)
    v0 = _u(rng, 8.0, 12.0)
    k_on = _onset(rng, n)
    dur = _u(rng, 1.5, 2.5)
    # short scenes: start earlier (possibly mid-shift) so the crossing is on screen
    k_on = min(k_on, n - 6 - int(math.ceil(0.65 * dur / DT)))
    start = _place_on_lane(rng, tpl, route, v0 * n * DT)
    # abnormal once the target is clearly inside the oncoming lane
    shift = LANE_WIDTH * ramp(np.arange(n) * DT, k_on * DT, dur)
    k_cross = int(np.argmax(shift >= 0.5 * LANE_WIDTH + 0.5))
    return route, start, n, (), dict(
        v0=v0, phases=(), lateral=(("shift", k_on * DT, dur, LANE_WIDTH),), abnormal=((k_cross, n),)
    )


def _p_leave_road(rng, tpl, n, p):
    routes = [r for r in lane_routes(tpl) if not r[0].endswith("1")]
    route = _choose(rng, routes)
    v0 = _u(rng, 8.0, 12.0)
    k_on = _onset(rng, n)
    dur = _u(rng, 2.0, 3.5)
    phases = ((k_on * DT, _u(rng, 2.0, v0 - 2.0), _u(rng, 1.0, 3.0)),)
    start = _place_on_lane(rng, tpl, route, v0 * n * DT)
    return route, start, n, (), dict(
        v0=v0, phases=phases, lateral=(("shift", k_on * DT, dur, -(HALF + 3.0)),), abnormal=((k_on, n),)
    )


def _p_thwarting(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    v0 = _u(rng, 9.0, 13.0)
    gap = _u(rng, 18.0, 25.0)
    k_on = _onset(rng, n, 25)
    phases, t = [], k_on * DT
    for _ in range(2):
        drop, a_b, a_go = _u(rng, 3.0, 5.0), _u(rng, 3.0, 4.0), _u(rng, 2.0, 3.0)
        phases += [(t, v0 - drop, a_b), (t + drop / a_b, v0, a_go)]
        t += drop / a_b + drop / a_go + _u(rng, 0.2, 0.6)
    k_end = int(math.ceil(t / DT))
    frames = _truncate(n, k_end, rng)
    start = _place_on_lane(rng, tpl, route, v0 * frames * DT, behind=gap + 5)
    return route, start, frames, (Companion("follower", -gap, v0),), dict(
        v0=v0, phases=tuple(phases), abnormal=((k_on, min(k_end, frames)),)
    )


def _p_cancel_turn(rng, tpl, n, p):
    """Start pulling toward the turn, then straighten back onto the through lane."""
    kind = _choose(rng, ("left", "right"))
    entries = [k[0] for k in tpl.turns if k[1] == "thru"]
    if not any((e, kind) in tpl.turns for e in entries):
        kind = "right" if kind == "left" else "left"
    thru = tpl.turns[(_choose(rng, [e for e in entries if (e, kind) in tpl.turns]), "thru")]
    v0, v_turn, a_b = _u(rng, 8.0, 11.0), _u(rng, 4.0, 6.0), _u(rng, 2.0, 3.0)
    k_e = max(_onset(rng, n, 30), int(math.ceil((v0 - v_turn) / a_b / DT)) + 5)
    t_e = k_e * DT
    amp = _u(rng, 1.2, 2.2) * (1.0 if kind == "left" else -1.0)
    go = max(_u(rng, 0.8, 1.2), _min_duration(5.78, amp, v_turn))
    hold = _u(rng, 0.0, 0.3)
    back = max(_u(rng, 1.0, 1.4), _min_duration(5.78, amp, v_turn))
    phases = [(max(0.0, t_e - (v0 - v_turn) / a_b - 0.3), v_turn, a_b), (t_e + go + hold, v0, _u(rng, 1.0, 2.0))]
    k_end = int(math.ceil((t_e + go + hold + back) / DT))
    frames = _truncate(n, k_end + 10, rng)
    v = phase_speeds(frames, v0, phases)
    return thru, _anchor_start(tpl, thru, v, k_e), frames, (), dict(
        v0=v0,
        phases=tuple(phases),
        lateral=(("push", t_e, (go, hold, back), amp),),
        base="straight",
        abnormal=((k_e, min(k_end + 10, frames)),),
    )


def _p_last_minute(rng, tpl, n, p):
    kind = _choose(rng, ("left", "right"))
    route = _turn_route(rng, tpl, kind)
    v0, v_turn, a_b = _u(rng, 9.5, 12.0), _u(rng, 6.0, 7.5), _u(rng, 3.0, A_MAX)
    k_e = _onset(rng, n, 30) + int(math.ceil((v0 - v_turn) / a_b / DT)) + 2
    t_e = k_e * DT
    t_b = t_e - (v0 - v_turn) / a_b - 0.2
    phases = [(t_b, v_turn, a_b), (t_e + 1.8, v0, _u(rng, 1.5, 2.5))]
    v = phase_speeds(n, v0, phases)
    conn = _route_len(tpl, route[:2]) - _entry_s(tpl, route)
    k_exit = k_e + int(math.ceil(conn / v_turn / DT))
    frames = _truncate(n, k_exit + 5, rng)
    k_b = int(math.floor(t_b / DT))
    return route, _anchor_start(tpl, route, v, k_e), frames, (), dict(
        v0=v0, phases=tuple(phases), base="straight", abnormal=((k_b, min(k_exit + 5, frames)),)
    )


def _p_wrong_lane(rng, tpl, n, p):
    kind = _choose(rng, ("left", "right"))
    route = _turn_route(rng, tpl, kind)
    v0, v_turn, a_b = _u(rng, 8.0, 11.0), _u(rng, 4.0, 6.5), _u(rng, 1.5, 3.0)
    k_e = max(_onset(rng, n, 30) - 8, int(math.ceil((v0 - v_turn) / a_b / DT)) + 5)
    phases = _turn_phases(rng, n, k_e, v0, v_turn, a_b, _u(rng, 1.0, 2.0))
    v = phase_speeds(n, v0, phases)
    start = _anchor_start(tpl, route, v, k_e)
    conn_end = _route_len(tpl, route[:2])
    k_shift = frame_of_distance(start + distances(v), conn_end - 3.0)
    v_shift = float(v[min(k_shift, n - 1)])
    dur = max(_u(rng, 1.2, 2.0), _min_duration(5.78, LANE_WIDTH, v_shift))
    return route, start, n, (), dict(
        v0=v0,
        phases=tuple(phases),
        lateral=(("shift", k_shift * DT, dur, LANE_WIDTH),),
        base="turn_" + kind,
        abnormal=((k_shift, n),),
    )


def _p_staggering(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    v0 = float(p.pop("v0", _u(rng, 7.0, 12.0)))
    k_on = _onset(rng, n)
    amp = float(p.pop("amplitude", _u(rng, 0.6, 1.3)))
    if "period" in p:
        period = float(p.pop("period"))
    else:
        period = max(_u(rng, 1.4, 2.6), _min_duration(4 * math.pi**2, amp, v0))
    start = _place_on_lane(rng, tpl, route, v0 * n * DT)
    return route, start, n, (), dict(
        v0=v0, phases=(), lateral=(("wave", k_on * DT, period, amp),), abnormal=((k_on, n),)
    )


def _p_pushing(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    toward = "left" if route[0].endswith("2") else "right"
    v0 = _u(rng, 8.0, 12.0)
    k_on = _onset(rng, n, 30)
    go, hold, back = _u(rng, 0.8, 1.2), _u(rng, 1.0, 2.0), _u(rng, 1.2, 1.8)
    amp = _u(rng, 1.0, 1.4) * (1.0 if toward == "left" else -1.0)
    k_end = int(math.ceil((k_on * DT + go + hold + back) / DT))
    frames = _truncate(n, k_end, rng)
    comp = Companion("side_" + toward, _u(rng, -1.5, 1.5), v0)
    start = _place_on_lane(rng, tpl, route, v0 * frames * DT + 10, ahead=10, behind=10)
    return route, start, frames, (comp,), dict(
        v0=v0, phases=(), lateral=(("push", k_on * DT, (go, hold, back), amp),), abnormal=((k_on, min(k_end, frames)),)
    )


def _p_swerving(direction):
    def plan(rng, tpl, n, p):
        route = _choose(rng, lane_routes(tpl))
        v0 = _u(rng, 8.0, 13.0)
        k_on = _onset(rng, n, 25)
        amp = _u(rng, 1.5, 2.5)
        dur = max(_u(rng, 1.2, 2.0), _min_duration(2 * math.pi**2, amp, v0))
        k_end = int(math.ceil((k_on * DT + dur) / DT))
        frames = _truncate(n, k_end, rng)
        sign = 1.0 if direction == "left" else -1.0
        start = _place_on_lane(rng, tpl, route, v0 * frames * DT)
        return route, start, frames, (), dict(
            v0=v0, phases=(), lateral=(("bump", k_on * DT, dur, sign * amp),), abnormal=((k_on, min(k_end, frames)),)
        )

    return plan


def _p_tailgating(rng, tpl, n, p):
    route = _choose(rng, lane_routes(tpl))
    v_lead = _u(rng, 8.0, 12.0)
    tau = _u(rng, 1.5, 2.2)
    gap0 = tau * v_lead + 5.0 + _u(rng, -2.0, 2.0)
    k_on = _onset(rng, n)
    start = _place_on_lane(rng, tpl, route, v_lead * n * DT + 10, ahead=gap0 + 10)
    return route, start, n, (Companion("lead", gap0, v_lead),), dict(
        v0=v_lead, tau=tau, close_gap=CAR_LENGTH + 2.0, onset=k_on, a_up=_u(rng, 2.0, 3.0), abnormal=((k_on, n),)
    )


def _p_shearing(direction):
    def plan(rng, tpl, n, p):
        lane = ("E" if rng.random() < 0.5 else "W") + ("2" if direction == "left" else "1")
        route = (lane,)
        v0 = _u(rng, 9.0, 13.0)
        k_on = _onset(rng, n, 25)
        dur = max(_u(rng, 1.0, 1.6), _min_duration(5.78, LANE_WIDTH, v0))
        k_end = int(math.ceil((k_on * DT + dur + 0.5) / DT))
        frames = _truncate(n, k_end, rng)
        sign = 1.0 if direction == "left" else -1.0
        # the agent being cut off drives in the destination lane just behind
        comp = Companion("side_" + direction, -_u(rng, 5.0, 9.0), v0 + _u(rng, 0.0, 1.0))
        start = _place_on_lane(rng, tpl, route, v0 * frames * DT + 10, ahead=10, behind=15)
        return route, start, frames, (comp,), dict(
            v0=v0, phases=(), lateral=(("shift", k_on * DT, dur, sign * LANE_WIDTH),), abnormal=((k_on, min(k_end, frames)),)
        )

    return plan


_PLANNERS = {
    "straight": _p_straight,
    "turn_left": _p_turn("turn_left"),
    "turn_right": _p_turn("turn_right"),
    "following": _p_following,
    "side_by_side": _p_side_by_side,
    "lane_change_left": _p_lane_change("left"),
    "lane_change_right": _p_lane_change("right"),
    "brake": _p_brake,
    "accelerate": _p_accelerate,
    "ghost_driver": _p_ghost,
    "leave_road": _p_leave_road,
    "thwarting": _p_thwarting,
    "cancel_turn": _p_cancel_turn,
    "last_minute_turn": _p_last_minute,
    "enter_wrong_lane": _p_wrong_lane,
    "staggering": _p_staggering,
    "pushing_away": _p_pushing,
    "swerving_left": _p_swerving("left"),
    "swerving_right": _p_swerving("right"),
    "tailgating": _p_tailgating,
    "aggressive_shearing_left": _p_shearing("left"),
    "aggressive_shearing_right": _p_shearing("right"),
}
assert set(_PLANNERS) == set(NORMAL_CLASSES + ABNORMAL_CLASSES)


# --------------------------------------------------------------------- rendering


def lateral_offset(t, terms):
    d = np.zeros_like(t)
    for kind, t0, dur, amp in terms:
        if kind == "shift":
            d += amp * ramp(t, t0, dur)
        elif kind == "bump":
            u = np.clip((t - t0) / dur, 0.0, 1.0)
            d += amp * np.sin(np.pi * u) ** 2
        elif kind == "wave":
            d += np.where(t >= t0, amp * np.sin(2 * np.pi * (t - t0) / dur), 0.0)
        elif kind == "push":
            go, hold, back = dur
            d += amp * (ramp(t, t0, go) - ramp(t, t0 + go + hold, back))
        else:
            raise InfeasibleScript(f"unknown lateral term {kind!r}")
    return d


def _companion_track(tpl, ws, comp: Companion, n):
    t = np.arange(n) * DT
    if comp.kind in ("lead", "follower"):
        path = tpl.route_path(ws.route)
        return path.point(ws.start_s + comp.offset + comp.speed * t)
    side = comp.kind.split("_")[1]
    lane_id = _neighbour_side(ws.route, side)
    if lane_id is None or lane_id not in tpl.lanes:
        raise InfeasibleScript(f"no {side} neighbour lane next to {ws.route[0]}")
    own = tpl.route_path(ws.route)
    path = tpl.route_path((lane_id,))
    s0, _ = path.project(own.point(ws.start_s))
    return path.point(s0 + comp.offset + comp.speed * t)


def _check_feasible(tpl: RoadTemplate, ws: WorldSpec, script: ManeuverScript):
    if ws.template not in COMPATIBLE[script.subclass]:
        raise InfeasibleScript(f"{script.subclass} cannot be scripted on a {ws.template} road")
    for lid in ws.route:
        if lid not in tpl.lanes:
            raise InfeasibleScript(f"lane {lid!r} does not exist on a {ws.template} road")
    kinds = {c.kind for c in ws.companions}
    need = {"following": "lead", "tailgating": "lead", "thwarting": "follower"}.get(script.subclass)
    if need and need not in kinds:
        raise InfeasibleScript(f"{script.subclass} needs a {need} agent in the world spec")
    if ws.frames < MIN_FRAMES or ws.frames > MAX_FRAMES:
        raise InfeasibleScript(f"{ws.frames} frames outside [{MIN_FRAMES}, {MAX_FRAMES}]")


def target_reference(tpl: RoadTemplate, ws: WorldSpec, script: ManeuverScript, companions):
    """Reference positions (L, 2) of the target in the canonical frame."""
    n = ws.frames
    t = np.arange(n) * DT
    v0 = float(script["v0"])
    if script.subclass in ("following", "tailgating"):
        lead = next(c for c in ws.companions if c.kind == "lead")
        lead_s = lead.offset + lead.speed * t
        tau = float(script["tau"])
        onset = script.get("onset")
        close = script.get("close_gap", 0.0)

        def gap(k, v):
            if onset is not None and k >= onset:
                return close
            return tau * v + 5.0

        v = follow_speeds(n, v0, lead_s, lead.speed, gap, script.get("a_up", 2.0), A_MAX)
    else:
        v = phase_speeds(n, v0, script.get("phases", ()))
    s = ws.start_s + distances(v)
    path = tpl.route_path(ws.route)
    d = lateral_offset(t, script.get("lateral", ()))
    return path.offset_point(s, d)


def _background(tpl: RoadTemplate, ws: WorldSpec, rng, n):
    """Constant-speed lane followers on routes that avoid the target's lanes."""
    used = set(ws.route)
    for lid in ws.route:
        lane = tpl.lanes[lid]
        used.update(x for x in (lane.left_neighbor, lane.right_neighbor) if x)
    routes = [r for r in tpl.routes if not used.intersection(r)] or list(tpl.routes)
    t = np.arange(n) * DT
    out = []
    for i in range(ws.n_background):
        route = routes[int(rng.integers(len(routes)))]
        path = tpl.route_path(route)
        speed = float(rng.uniform(4.0, 13.0))
        travel = speed * n * DT
        s0 = float(rng.uniform(0.0, max(1.0, path.length - travel)))
        xy = path.point(s0 + speed * t)
        valid = np.ones(n, dtype=bool)
        if i > 0:
            if rng.random() < 0.25:
                valid[: int(rng.integers(1, max(2, n // 2)))] = False
            if rng.random() < 0.2:
                valid[int(rng.integers(n // 2, n - 1)) + 1 :] = False
        out.append((f"bg{i:02d}", Role.EGO if i == 0 else Role.OTHER, xy, valid))
    return out


def label_frames(n, intervals, base, abnormal_class):
    """Per-frame labels with IGNORE around every NORMAL/ABNORMAL transition."""
    cat = np.zeros(n, dtype=bool)
    for lo, hi in intervals:
        cat[max(0, lo) : min(n, hi)] = True
    ignore = np.zeros(n, dtype=bool)
    for b in np.flatnonzero(cat[1:] != cat[:-1]) + 1:
        ignore[max(0, b - IGNORE_MARGIN) : min(n, b + IGNORE_MARGIN)] = True
    labels = []
    for k in range(n):
        if ignore[k]:
            labels.append(FrameLabel(k, Category.IGNORE, ""))
        elif cat[k]:
            labels.append(FrameLabel(k, Category.ABNORMAL, abnormal_class))
        else:
            labels.append(FrameLabel(k, Category.NORMAL, base))
    return tuple(labels)


def generate_scene(world_spec: WorldSpec, script: ManeuverScript, seed: int, scene_id=None,
                   v_max=V_MAX, a_max=A_MAX, city="SYN") -> Scene:
    """Render one labelled scene.  Deterministic in (world_spec, script, seed)."""
    tpl = road_template(world_spec.template)
    _check_feasible(tpl, world_spec, script)
    n = world_spec.frames
    rng = np.random.default_rng(seed)
    background = _background(tpl, world_spec, rng, n)
    comps = [(f"{c.kind}", _companion_track(tpl, world_spec, c, n)) for c in world_spec.companions]
    ref = target_reference(tpl, world_spec, script, comps)
    states, _ = track_reference(ref, v_max=v_max, a_max=a_max)
    tf = world_spec.transform
    trajs = [Trajectory("target", tf.apply(states[:, :2]), np.ones(n, bool), Role.TARGET)]
    for name, xy in comps:
        trajs.append(Trajectory(name, tf.apply(xy), np.ones(n, bool), Role.OTHER))
    for aid, role, xy, valid in background:
        trajs.append(Trajectory(aid, tf.apply(xy), valid, role))
    # order of first appearance, which is also the order a CSV reader recovers
    trajs.sort(key=lambda tr: int(np.argmax(tr.valid)))
    if script.abnormal:
        base = script.get("base") or _BASE.get(script.subclass) or _route_kind(world_spec.route)
        labels = label_frames(n, script.get("abnormal", ()), base, script.subclass)
    else:
        labels = label_frames(n, (), script.subclass, None)
    sid = scene_id if scene_id is not None else f"{script.subclass}-{seed}"
    return Scene(sid, tuple(trajs), transform_graph(tpl.graph(), tf), labels, np.arange(n) * DT, city)


def _route_kind(route):
    kind = route[1].split("_")[1] if len(route) > 1 else "thru"
    return {"left": "turn_left", "right": "turn_right"}.get(kind, "straight")
