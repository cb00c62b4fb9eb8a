"""Turn lists of windows into the dense arrays the networks consume."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..core import LaneGraph, Window, rotation, to_displacements
from ..errors import EmptyMap
from .networks import LANE_RADIUS, LANE_RELATIONS, distance_adjacency_row

NODE_SPACING = 5.0


@dataclass(frozen=True)
class NormStats:
    scale: float = 10.0
    disp_scale: float = 1.0

    def to_dict(self):
        return {"scale": self.scale, "disp_scale": self.disp_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), float(d["disp_scale"]))


def fit_norm_stats(windows) -> NormStats:
    """RMS radius of target positions and RMS target step length."""
    pos = np.stack([w.target for w in windows])
    disp = np.diff(pos, axis=1)
    scale = math.sqrt(np.mean(np.sum(pos * pos, axis=-1)))
    disp_scale = math.sqrt(np.mean(np.sum(disp * disp, axis=-1)))
    return NormStats(scale if scale > 1e-6 else 1.0, disp_scale if disp_scale > 1e-6 else 1.0)


@dataclass(frozen=True)
class LaneNodes:
    """Lane centerlines cut into short segments (world frame)."""

    center: np.ndarray  # (M, 2)
    direction: np.ndarray  # (M, 2) unit vectors
    relations: np.ndarray  # (R, M, M) 0/1

    def __len__(self):
        return len(self.center)


def lane_nodes(graph: LaneGraph, spacing=NODE_SPACING) -> LaneNodes:
    centers, dirs, spans = [], [], {}
    for lane in graph.lanes:
        start = len(centers)
        cl = lane.centerline
        for a, b in zip(cl[:-1], cl[1:]):
            seg = b - a
            length = float(np.hypot(*seg))
            if length < 1e-9:
                continue
            pieces = max(1, math.ceil(length / spacing - 1e-9))
            u = seg / length
            for k in range(pieces):
                centers.append(a + seg * (k + 0.5) / pieces)
                dirs.append(u)
        spans[lane.id] = (start, len(centers))
    m = len(centers)
    rel = np.zeros((len(LANE_RELATIONS), m, m))
    pre, suc, left, right = range(4)
    center = np.array(centers).reshape(-1, 2)
    for lane in graph.lanes:
        lo, hi = spans[lane.id]
        if hi == lo:
            continue
        for k in range(lo, hi - 1):
            rel[suc, k, k + 1] = 1.0
            rel[pre, k + 1, k] = 1.0
        for s_id in lane.successors:
            s_lo, s_hi = spans[s_id]
            if s_hi > s_lo:
                rel[suc, hi - 1, s_lo] = 1.0
                rel[pre, s_lo, hi - 1] = 1.0
        for side, nb in ((left, lane.left_neighbor), (right, lane.right_neighbor)):
            if nb is None:
                continue
            n_lo, n_hi = spans[nb]
            if n_hi == n_lo:
                continue
            for k in range(lo, hi):
                d = np.linalg.norm(center[n_lo:n_hi] - center[k], axis=1)
                rel[side, k, n_lo + int(np.argmin(d))] = 1.0
    return LaneNodes(center, np.array(dirs).reshape(-1, 2), rel)


def _ordered(window: Window):
    """Agent order with the target first."""
    ti = window.target_index
    return [ti] + [i for i in range(window.n_agents) if i != ti]


def prepare_batch(architecture, windows, norm: NormStats, nodes=None) -> dict:
    """Dense batch for ``architecture``.

    ``nodes`` is a list (one per window) of :class:`LaneNodes` or None, only
    used by ``lanegcn_ae``.
    """
    b = len(windows)
    steps = windows[0].frames.shape[1]
    target_m = np.stack([w.target for w in windows])
    batch = {"target_m": target_m, "target": target_m / norm.scale}
    if architecture in ("seq2seq", "cvm", "lti"):
        return batch
    n = max(w.n_agents for w in windows)
    agents = np.zeros((b, n, steps, 2))
    valid = np.zeros((b, n, steps), dtype=bool)
    for k, w in enumerate(windows):
        order = _ordered(w)
        agents[k, : len(order)] = w.frames[order]
        valid[k, : len(order)] = w.valid[order]
    if architecture == "stgae":
        pos_t = np.swapaxes(agents, 1, 2)  # (B, T, N, 2)
        batch["agents"] = pos_t / norm.scale
        batch["adj_row"] = distance_adjacency_row(pos_t, np.swapaxes(valid, 1, 2))
        return batch
    if architecture != "lanegcn_ae":
        raise ValueError(f"unknown architecture {architecture!r}")

    disp = np.zeros((b, n, steps - 1, 2))
    for k, w in enumerate(windows):
        disp[k, : w.n_agents] = to_displacements(w)[_ordered(w)]
    batch["disp"] = disp / norm.disp_scale
    present = valid[:, :, -1]
    pos0 = agents[:, :, -1]
    batch["a2a_row"] = distance_adjacency_row(pos0, present)

    local = []
    for k, w in enumerate(windows):
        ln = nodes[k] if nodes is not None else None
        if ln is None or len(ln) == 0:
            local.append((np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((len(LANE_RELATIONS), 0, 0))))
            warnings.warn(EmptyMap(f"{w.scene_id}@{w.frame_of_score}: no lane graph"), stacklevel=2)
            continue
        ctr = w.pose.to_local(ln.center)
        direc = ln.direction @ rotation(w.pose.heading)
        p = pos0[k][present[k]]
        dist = np.linalg.norm(ctr[:, None, :] - p[None, :, :], axis=-1)
        near = np.any(dist <= LANE_RADIUS, axis=1)
        if not np.any(np.linalg.norm(ctr, axis=1) <= LANE_RADIUS):
            warnings.warn(EmptyMap(f"{w.scene_id}@{w.frame_of_score}: no lane within {LANE_RADIUS} m"), stacklevel=2)
        # one graph-conv hop: near nodes read from their related nodes
        hop = near | np.any(ln.relations[:, near, :], axis=(0, 1))
        idx = np.flatnonzero(hop)
        local.append((ctr[idx], direc[idx], ln.relations[:, idx][:, :, idx]))
    m = max(1, max(len(c) for c, _, _ in local))
    node_feat = np.zeros((b, m, 4))
    node_mask = np.zeros((b, m))
    rel = np.zeros((b, len(LANE_RELATIONS), m, m))
    relpos = np.zeros((b, n, m, 2))
    l2a = np.zeros((b, n, m), dtype=bool)
    for k, (ctr, direc, r) in enumerate(local):
        mk = len(ctr)
        if mk == 0:
            continue
        node_feat[k, :mk, :2] = ctr / LANE_RADIUS
        node_feat[k, :mk, 2:] = direc
        node_mask[k, :mk] = 1.0
        rel[k, :, :mk, :mk] = r
        diff = ctr[None, :, :] - pos0[k][:, None, :]
        relpos[k, :, :mk] = diff / LANE_RADIUS
        l2a[k, :, :mk] = (np.linalg.norm(diff, axis=-1) <= LANE_RADIUS) & present[k][:, None]
    batch.update(node_feat=node_feat, node_mask=node_mask, node_rel=rel, node_relpos=relpos, l2a_mask=l2a)
    return batch
