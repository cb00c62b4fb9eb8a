"""Road templates: straight, curved, T-junction and four-way crossing.

Geometry is built in a canonical frame (right-hand traffic, lane width 3.5 m)
and moved by a random rigid transform when a scene is rendered.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import Lane, LaneGraph, rotation
from .geometry import Path, arc, connector, line

LANE_WIDTH = 3.5
HALF = LANE_WIDTH / 2
TEMPLATES = ("straight", "curved", "t_junction", "four_way")

# half-size of the junction box
_J = 7.0
_ROAD = 150.0
_CURVE_R = 80.0
_CURVE_SPAN = 1.2
_CURVE_LEAD = 60.0


@dataclass
class RoadTemplate:
    name: str
    lanes: dict  # id -> Lane
    routes: list  # lane id tuples that background traffic may drive
    opposite: dict = field(default_factory=dict)  # lane id -> lane of the oncoming direction
    turns: dict = field(default_factory=dict)  # (entry lane, kind) -> route tuple

    def graph(self) -> LaneGraph:
        return LaneGraph(tuple(self.lanes.values()))

    def route_path(self, route) -> Path:
        pts = [self.lanes[route[0]].centerline]
        for lid in route[1:]:
            pts.append(self.lanes[lid].centerline[1:])
        return Path(np.concatenate(pts))


def _lane(lid, pts, suc=(), pre=(), left=None, right=None):
    return Lane(lid, np.asarray(pts, float), tuple(suc), tuple(pre), left, right)


def _two_by_two(name, east1, east2, west1, west2):
    lanes = {
        "E1": _lane("E1", east1, right="E2"),
        "E2": _lane("E2", east2, left="E1"),
        "W1": _lane("W1", west1, right="W2"),
        "W2": _lane("W2", west2, left="W1"),
    }
    return RoadTemplate(
        name,
        lanes,
        routes=[("E1",), ("E2",), ("W1",), ("W2",)],
        opposite={"E1": "W1", "E2": "W1", "W1": "E1", "W2": "E1"},
    )


def straight_road():
    return _two_by_two(
        "straight",
        line((-_ROAD, -HALF), (_ROAD, -HALF)),
        line((-_ROAD, -3 * HALF), (_ROAD, -3 * HALF)),
        line((_ROAD, HALF), (-_ROAD, HALF)),
        line((_ROAD, 3 * HALF), (-_ROAD, 3 * HALF)),
    )


def _curve_lane(radius, reverse):
    a0, a1 = -math.pi / 2, -math.pi / 2 + _CURVE_SPAN
    body = arc((0.0, _CURVE_R), radius, a0, a1)
    # tangent lead-in and lead-out so the road also has straight parts
    t0 = np.array([1.0, 0.0])
    t1 = np.array([-math.sin(a1), math.cos(a1)])
    lead_in = line(body[0] - _CURVE_LEAD * t0, body[0])[:-1]
    lead_out = line(body[-1], body[-1] + _CURVE_LEAD * t1)[1:]
    pts = np.concatenate([lead_in, body, lead_out])
    return pts[::-1].copy() if reverse else pts


def curved_road():
    # counter-clockwise travel has the oncoming lanes (smaller radius) on its left
    return _two_by_two(
        "curved",
        _curve_lane(_CURVE_R + HALF, False),
        _curve_lane(_CURVE_R + 3 * HALF, False),
        _curve_lane(_CURVE_R - HALF, True),
        _curve_lane(_CURVE_R - 3 * HALF, True),
    )


def _junction(four_way: bool):
    E, N, W, S = 0.0, math.pi / 2, math.pi, -math.pi / 2
    pts = {
        # entries into the box and exits out of it
        "E_in": ((-_ROAD, -HALF), (-_J, -HALF), E),
        "E_out": ((_J, -HALF), (_ROAD, -HALF), E),
        "W_in": ((_ROAD, HALF), (_J, HALF), W),
        "W_out": ((-_J, HALF), (-_ROAD, HALF), W),
        "N_in": ((HALF, -_ROAD), (HALF, -_J), N),
        "S_out": ((-HALF, -_J), (-HALF, -_ROAD), S),
    }
    if four_way:
        pts["N_out"] = ((HALF, _J), (HALF, _ROAD), N)
        pts["S_in"] = ((-HALF, _ROAD), (-HALF, _J), S)
    conns = {
        "E_thru": ("E_in", "E_out"),
        "W_thru": ("W_in", "W_out"),
        "E_right": ("E_in", "S_out"),
        "W_left": ("W_in", "S_out"),
        "N_right": ("N_in", "E_out"),
        "N_left": ("N_in", "W_out"),
    }
    if four_way:
        conns.update(
            N_thru=("N_in", "N_out"),
            S_thru=("S_in", "S_out"),
            S_left=("S_in", "E_out"),
            S_right=("S_in", "W_out"),
            E_left=("E_in", "N_out"),
            W_right=("W_in", "N_out"),
        )
    suc = {k: [] for k in pts}
    pre = {k: [] for k in pts}
    lanes = {}
    for cid, (a, b) in conns.items():
        suc[a].append(cid)
        pre[b].append(cid)
    for lid, (p0, p1, _) in pts.items():
        lanes[lid] = _lane(lid, line(p0, p1), suc=suc[lid], pre=pre[lid])
    for cid, (a, b) in conns.items():
        p0, h0 = pts[a][1], pts[a][2]
        p1, h1 = pts[b][0], pts[b][2]
        lanes[cid] = _lane(cid, connector(p0, h0, p1, h1), suc=[b], pre=[a])
    routes = [(a, cid, b) for cid, (a, b) in conns.items()]
    turns = {}
    for cid, (a, b) in conns.items():
        kind = cid.split("_")[1]
        turns[(a, kind)] = (a, cid, b)
    opposite = {"E_out": "W_in", "W_out": "E_in", "S_out": "N_in", "E_in": "W_out", "W_in": "E_out", "N_in": "S_out"}
    if four_way:
        opposite.update({"N_out": "S_in", "S_in": "N_out"})
    return RoadTemplate("four_way" if four_way else "t_junction", lanes, routes, opposite, turns)


def t_junction():
    return _junction(False)


def four_way():
    return _junction(True)


_BUILDERS = {"straight": straight_road, "curved": curved_road, "t_junction": t_junction, "four_way": four_way}


def road_template(name) -> RoadTemplate:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown world template {name!r}") from None


@dataclass(frozen=True)
class RigidTransform:
    angle: float = 0.0
    offset: tuple = (0.0, 0.0)

    def apply(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ rotation(self.angle).T + np.asarray(self.offset)

    @classmethod
    def random(cls, rng):
        return cls(float(rng.uniform(-math.pi, math.pi)), tuple(float(v) for v in rng.uniform(-2000, 2000, 2)))


def transform_graph(graph: LaneGraph, tf: RigidTransform) -> LaneGraph:
    return LaneGraph(
        tuple(
            Lane(l.id, tf.apply(l.centerline), l.successors, l.predecessors, l.left_neighbor, l.right_neighbor)
            for l in graph.lanes
        )
    )
