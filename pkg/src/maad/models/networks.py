"""Seq2Seq, STGAE and simplified LaneGCN auto-encoders on the diffcalc engine.

All networks consume a prepared batch dict (see :mod:`maad.models.batching`)
and return ``(z, recon)``: the latent target feature (B, F) and the target
reconstruction (B, T, 2) in normalised units.
"""
from __future__ import annotations

import numpy as np

from .. import diffcalc as dc

EMBED = 8
HIDDEN = 16
LATENT = 16
EPS_D = 0.1
LANE_RADIUS = 30.0
LANE_RELATIONS = ("pre", "suc", "left", "right")


class Network:
    architecture = ""

    def __init__(self):
        self.params: dict[str, dc.Parameter] = {}

    def _add(self, name, p):
        p.name = name
        self.params[name] = p
        return p

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
            p.step = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward(self, batch):
        raise NotImplementedError


def _lstm(net, rng, prefix, d_in, hidden):
    return (
        net._add(f"{prefix}.w_x", dc.init_uniform(rng, d_in, (d_in, 4 * hidden))),
        net._add(f"{prefix}.w_h", dc.init_uniform(rng, hidden, (hidden, 4 * hidden))),
        net._add(f"{prefix}.b", _forget_bias(hidden)),
    )


def _forget_bias(hidden):
    b = dc.zeros(4 * hidden)
    b.data[hidden : 2 * hidden] = 1.0
    return b


def _dense(net, rng, prefix, d_in, d_out, bias=True):
    w = net._add(f"{prefix}.w", dc.init_uniform(rng, d_in, (d_in, d_out)))
    b = net._add(f"{prefix}.b", dc.zeros(d_out)) if bias else None
    return w, b


def run_lstm(params, seq, hidden):
    """Unroll ``params`` over seq (B, T, D); returns the final (h, c)."""
    batch = seq.shape[0]
    h = dc.Tensor(np.zeros((batch, hidden)))
    c = dc.Tensor(np.zeros((batch, hidden)))
    for t in range(seq.shape[1]):
        h, c = dc.lstm_cell(seq[:, t, :], h, c, params)
    return h, c


class Seq2SeqCore:
    """LSTM encoder/decoder pair shared by Seq2Seq and STGAE.

    The decoder starts from (z, 0), feeds back its own previous output and
    emits the sequence last-step-first; the result is returned in time order.
    """

    def __init__(self, net: Network, rng, d_in=EMBED, embed=EMBED, hidden=HIDDEN):
        self.hidden = hidden
        self.enc = _lstm(net, rng, "enc", d_in, hidden)
        self.dec_embed = _dense(net, rng, "dec_embed", 2, embed)
        self.dec = _lstm(net, rng, "dec", embed, hidden)
        self.head = _dense(net, rng, "head", hidden, 2)

    def encode(self, features):
        h, _ = run_lstm(self.enc, features, self.hidden)
        return h

    def decode(self, z, steps):
        batch = z.shape[0]
        h = z
        c = dc.Tensor(np.zeros((batch, self.hidden)))
        prev = dc.Tensor(np.zeros((batch, 2)))
        out = []
        for _ in range(steps):
            inp = dc.tanh(dc.linear(prev, *self.dec_embed))
            h, c = dc.lstm_cell(inp, h, c, self.dec)
            prev = prev + dc.linear(h, *self.head)
            out.append(prev)
        return dc.stack(out[::-1], axis=1)


class Seq2Seq(Network):
    architecture = "seq2seq"

    def __init__(self, rng, embed=EMBED, hidden=HIDDEN):
        super().__init__()
        self.embed = _dense(self, rng, "embed", 2, embed)
        self.core = Seq2SeqCore(self, rng, embed, embed, hidden)

    def features(self, batch):
        return dc.tanh(dc.linear(dc.Tensor(batch["target"]), *self.embed))

    def forward(self, batch):
        z = self.core.encode(self.features(batch))
        return z, self.core.decode(z, batch["target"].shape[1])


def distance_adjacency_row(pos, valid, row=0, eps=EPS_D):
    """Row ``row`` of D^-1/2 (A + I) D^-1/2 with A_jk = 1/(d_jk + eps).

    ``pos`` (..., N, 2) in metres, ``valid`` (..., N).  Edges touching an
    invalid node are dropped; every node keeps its self loop.
    """
    diff = pos[..., :, None, :] - pos[..., None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    adj = 1.0 / (d + eps)
    n = pos.shape[-2]
    eye = np.eye(n, dtype=bool)
    ok = valid[..., :, None] & valid[..., None, :] & ~eye
    adj = np.where(ok, adj, 0.0) + eye
    deg = adj.sum(axis=-1)
    return adj[..., row, :] / np.sqrt(deg[..., row : row + 1] * deg)


class STGAE(Network):
    """Per-step distance graph convolution with a linear residual, then Seq2Seq."""

    architecture = "stgae"

    def __init__(self, rng, embed=EMBED, hidden=HIDDEN):
        super().__init__()
        self.embed = _dense(self, rng, "embed", 2, embed)
        self.w_graph = self._add("graph.w", dc.init_uniform(rng, embed, (embed, embed)))
        self.w_res = self._add("graph.res", dc.init_uniform(rng, embed, (embed, embed)))
        self.core = Seq2SeqCore(self, rng, embed, embed, hidden)

    def features(self, batch):
        # agents (B, T, N, 2), target first
        x = dc.Tensor(batch["agents"])
        e = dc.tanh(dc.linear(x, *self.embed))
        row = batch["adj_row"]  # (B, T, N)
        agg = dc.matmul(dc.Tensor(row[:, :, None, :]), dc.matmul(e, self.w_graph))
        agg = dc.reshape(agg, (row.shape[0], row.shape[1], -1))
        return dc.relu(agg) + dc.matmul(e[:, :, 0, :], self.w_res)

    def forward(self, batch):
        z = self.core.encode(self.features(batch))
        return z, self.core.decode(z, batch["target"].shape[1])


class LaneGCNAE(Network):
    """Actor LSTM, lane-graph conv, lane-to-actor and actor-to-actor fusion, linear head.

    The head predicts T-1 displacements that are integrated backwards from
    the target's position at t=0 (the origin).
    """

    architecture = "lanegcn_ae"

    def __init__(self, rng, embed=EMBED, hidden=HIDDEN, latent=LATENT, steps=16):
        super().__init__()
        self.hidden = hidden
        self.steps = steps
        self.actor_embed = _dense(self, rng, "actor.embed", 2, embed)
        self.actor_lstm = _lstm(self, rng, "actor.lstm", embed, latent)
        self.lane_enc = _dense(self, rng, "lane.enc", 4, latent)
        self.lane_self = self._add("lane.self.w", dc.init_uniform(rng, latent, (latent, latent)))
        self.lane_rel = [
            self._add(f"lane.{r}.w", dc.init_uniform(rng, latent, (latent, latent))) for r in LANE_RELATIONS
        ]
        self.lane_b = self._add("lane.b", dc.zeros(latent))
        self.l2a_feat = self._add("l2a.feat.w", dc.init_uniform(rng, latent + 2, (latent, latent)))
        self.l2a_pos = self._add("l2a.pos.w", dc.init_uniform(rng, latent + 2, (2, latent)))
        self.l2a_b = self._add("l2a.b", dc.zeros(latent))
        self.update = _dense(self, rng, "actor.update", latent, latent)
        self.a2a = self._add("a2a.w", dc.init_uniform(rng, latent, (latent, latent)))
        self.a2a_res = self._add("a2a.res", dc.init_uniform(rng, latent, (latent, latent)))
        self.head = _dense(self, rng, "head", latent, 2 * (steps - 1))
        n = steps
        integ = np.zeros((n, n - 1))
        for t in range(n - 1):
            integ[t, t:] = -1.0
        self._integrate = integ

    def actor_features(self, batch):
        disp = batch["disp"]  # (B, N, T-1, 2)
        b, n, s, _ = disp.shape
        e = dc.tanh(dc.linear(dc.Tensor(disp.reshape(b * n, s, 2)), *self.actor_embed))
        h, _ = run_lstm(self.actor_lstm, e, self.actor_lstm[1].shape[0])
        return dc.reshape(h, (b, n, -1))

    def map_messages(self, batch):
        """Lane-graph convolution then radius-limited lane-to-actor sums, (B, N, F)."""
        node_in = dc.Tensor(batch["node_feat"])  # (B, M, 4)
        h = dc.relu(dc.linear(node_in, *self.lane_enc))
        acc = dc.matmul(h, self.lane_self)
        rel = batch["node_rel"]  # (B, R, M, M)
        for r, w in enumerate(self.lane_rel):
            acc = acc + dc.matmul(dc.Tensor(rel[:, r]), dc.matmul(h, w))
        h2 = dc.relu(acc + self.lane_b)
        h2 = h2 * batch["node_mask"][..., None]
        msg = dc.matmul(h2, self.l2a_feat)  # (B, M, F)
        rp = dc.matmul(dc.Tensor(batch["node_relpos"]), self.l2a_pos)  # (B, N, M, F)
        b, n, m = batch["l2a_mask"].shape
        msg = dc.relu(dc.reshape(msg, (b, 1, m, -1)) + rp + self.l2a_b)
        weights = dc.Tensor(batch["l2a_mask"][:, :, None, :].astype(np.float64))  # (B, N, 1, M)
        return dc.reshape(dc.matmul(weights, msg), (b, n, -1))

    def fuse(self, actors, messages, batch):
        a1 = dc.relu(dc.linear(actors, *self.update) + messages)
        row = batch["a2a_row"]  # (B, N)
        agg = dc.matmul(dc.Tensor(row[:, None, :]), dc.matmul(a1, self.a2a))
        agg = dc.reshape(agg, (row.shape[0], -1))
        return dc.relu(agg) + dc.matmul(a1[:, 0, :], self.a2a_res)

    def decode(self, z):
        d = dc.reshape(dc.linear(z, *self.head), (z.shape[0], self.steps - 1, 2))
        return dc.matmul(dc.Tensor(self._integrate), d)

    def forward(self, batch):
        z = self.fuse(self.actor_features(batch), self.map_messages(batch), batch)
        return z, self.decode(z)


ARCHITECTURES = {cls.architecture: cls for cls in (Seq2Seq, STGAE, LaneGCNAE)}


def build_network(architecture, seed, embed=EMBED, hidden=HIDDEN):
    rng = np.random.default_rng(seed)
    return ARCHITECTURES[architecture](rng, embed=embed, hidden=hidden)
