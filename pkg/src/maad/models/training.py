"""Model descriptors, training loop, hypersphere center and scoring."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import diffcalc as dc
from ..core import WINDOW, to_target_frame
from ..errors import EmptyTrainingSet
from .batching import LaneNodes, NormStats, fit_norm_stats, lane_nodes, prepare_batch
from .linear import cvm_scores, lti_scores
from .networks import EMBED, HIDDEN, LATENT, Network, build_network
from .objectives import dsvdd_loss, dsvdd_score, recon_loss

log = logging.getLogger(__name__)

LINEAR = ("cvm", "lti")
DEEP = ("seq2seq", "stgae", "lanegcn_ae")
OBJECTIVES = ("recon", "dsvdd")
EPOCHS = 36
BATCH_SIZE = 32
LR = 1e-3
LR_LATE = 1e-4
DECAY_AFTER = 32
CENTER_SAMPLES = 10_000
EVAL_BATCH = 256


@dataclass
class ModelDescriptor:
    architecture: str
    objective: str = "recon"
    embed: int = EMBED
    hidden: int = HIDDEN
    latent: int = LATENT
    dsvdd_center: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.architecture not in LINEAR + DEEP:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.architecture in LINEAR and self.objective != "recon":
            raise ValueError(f"{self.architecture} only supports the recon objective")
        if self.dsvdd_center is not None:
            if self.objective != "dsvdd":
                raise ValueError("a hypersphere center requires the dsvdd objective")
            self.dsvdd_center = np.asarray(self.dsvdd_center, dtype=np.float64)

    @property
    def dims(self):
        return {"embed": self.embed, "hidden": self.hidden, "latent": self.latent}


@dataclass
class TrainedModel:
    descriptor: ModelDescriptor
    network: Optional[Network]
    norm: NormStats = field(default_factory=NormStats)
    history: list = field(default_factory=list)
    best_epoch: int = 0
    snapshots: Optional[list] = None

    @property
    def architecture(self):
        return self.descriptor.architecture

    def _batches(self, windows, nodes):
        for lo in range(0, len(windows), EVAL_BATCH):
            ws = windows[lo : lo + EVAL_BATCH]
            ns = None if nodes is None else nodes[lo : lo + EVAL_BATCH]
            yield prepare_batch(self.architecture, ws, self.norm, ns)

    def forward(self, windows, nodes=None):
        """Latents (B, F) and reconstructions in metres (B, T, 2)."""
        zs, recs = [], []
        with dc.no_grad():
            for batch in self._batches(windows, nodes):
                z, rec = self.network.forward(batch)
                zs.append(z.data)
                recs.append(rec.data * self.norm.scale)
        return np.concatenate(zs), np.concatenate(recs)

    def encode(self, windows, nodes=None):
        return self.forward(windows, nodes)[0]

    def score_windows(self, windows, nodes=None) -> np.ndarray:
        if not windows:
            return np.zeros(0)
        if self.architecture in LINEAR:
            targets = np.stack([w.target for w in windows])
            return cvm_scores(targets) if self.architecture == "cvm" else lti_scores(targets)
        z, rec = self.forward(windows, nodes)
        if self.descriptor.objective == "dsvdd":
            return np.atleast_1d(dsvdd_score(z, self.descriptor.dsvdd_center))
        targets = np.stack([w.target for w in windows])
        return np.mean(np.linalg.norm(targets - rec, axis=-1), axis=1)


def linear_model(architecture) -> TrainedModel:
    return TrainedModel(ModelDescriptor(architecture), None)


class LaneCache:
    """Lane nodes per scene, built lazily."""

    def __init__(self):
        self._cache = {}

    def __call__(self, scene) -> LaneNodes:
        key = id(scene)
        if key not in self._cache:
            self._cache[key] = (scene, lane_nodes(scene.lane_graph))
        return self._cache[key][1]


def scene_windows(scene, stride=1):
    return [to_target_frame(scene, end) for end in range(WINDOW - 1, scene.length, stride)]


def draw_clips(scenes, rng):
    """One random window per scene."""
    out = []
    for s in scenes:
        end = int(rng.integers(WINDOW - 1, s.length))
        out.append(to_target_frame(s, end))
    return out


def _nodes_for(arch, scenes, cache):
    if arch != "lanegcn_ae":
        return None
    return [cache(s) for s in scenes]


def init_center(model: TrainedModel, windows, nodes=None, seed=0, max_samples=CENTER_SAMPLES) -> np.ndarray:
    """Mean latent over ``windows`` (uniform subsample when larger than ``max_samples``)."""
    if len(windows) == 0:
        raise EmptyTrainingSet("cannot initialise the center from an empty training set")
    if len(windows) > max_samples:
        idx = np.sort(np.random.default_rng(seed).choice(len(windows), max_samples, replace=False))
        windows = [windows[i] for i in idx]
        nodes = None if nodes is None else [nodes[i] for i in idx]
    z = model.encode(windows, nodes)
    return z.mean(axis=0)


def _batch_loss(model: TrainedModel, batch):
    z, rec = model.network.forward(batch)
    l_r = recon_loss(batch["target"], rec)
    if model.descriptor.objective == "dsvdd":
        l_a = dsvdd_loss(z, model.descriptor.dsvdd_center)
        return l_r + l_a, l_r, l_a
    return l_r, l_r, None


def evaluate_loss(model: TrainedModel, windows, nodes=None):
    """Mean (L, L_r, L_a) over ``windows``."""
    tot = np.zeros(3)
    with dc.no_grad():
        for lo in range(0, len(windows), EVAL_BATCH):
            ws = windows[lo : lo + EVAL_BATCH]
            ns = None if nodes is None else nodes[lo : lo + EVAL_BATCH]
            loss, l_r, l_a = _batch_loss(model, prepare_batch(model.architecture, ws, model.norm, ns))
            tot += len(ws) * np.array([loss.item(), l_r.item(), 0.0 if l_a is None else l_a.item()])
    return tot / max(1, len(windows))


def train(
    descriptor: ModelDescriptor,
    train_scenes,
    val_scenes,
    seed: int,
    epochs: int = EPOCHS,
    batch_size: int = BATCH_SIZE,
    lr: float = LR,
    lr_late: float = LR_LATE,
    decay_after: int = DECAY_AFTER,
    keep_snapshots: bool = False,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainedModel:
    """Adam training with one fresh random clip per scene and epoch.

    Returns the model restored to the epoch with the lowest validation loss.
    """
    if descriptor.architecture in LINEAR:
        raise ValueError(f"{descriptor.architecture} requires no training")
    train_scenes = list(train_scenes)
    val_scenes = list(val_scenes)
    if not train_scenes:
        raise EmptyTrainingSet("no training scenes")
    init_ss, clip_ss, val_ss, center_ss = np.random.SeedSequence(seed).spawn(4)
    arch = descriptor.architecture
    cache = LaneCache()

    norm_windows = [w for s in train_scenes for w in scene_windows(s, stride=4)]
    norm = fit_norm_stats(norm_windows)
    network = build_network(arch, init_ss, embed=descriptor.embed, hidden=descriptor.hidden)
    model = TrainedModel(descriptor, network, norm, snapshots=[] if keep_snapshots else None)

    if descriptor.objective == "dsvdd":
        all_windows, all_nodes = [], [] if arch == "lanegcn_ae" else None
        for s in train_scenes:
            ws = scene_windows(s)
            all_windows.extend(ws)
            if all_nodes is not None:
                all_nodes.extend([cache(s)] * len(ws))
        descriptor.dsvdd_center = init_center(model, all_windows, all_nodes, seed=center_ss)
        log.info("hypersphere center initialised from %d windows", len(all_windows))

    val_rng = np.random.default_rng(val_ss)
    val_windows = draw_clips(val_scenes, val_rng) if val_scenes else []
    val_nodes = _nodes_for(arch, val_scenes, cache)
    clip_rng = np.random.default_rng(clip_ss)

    best = (np.inf, 0, network.state_dict())
    params = network.parameters()
    for epoch in range(1, epochs + 1):
        rate = lr if epoch <= decay_after else lr_late
        clips = draw_clips(train_scenes, clip_rng)
        order = clip_rng.permutation(len(clips))
        sums = np.zeros(3)
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size]
            ws = [clips[i] for i in idx]
            ns = None if arch != "lanegcn_ae" else [cache(train_scenes[i]) for i in idx]
            batch = prepare_batch(arch, ws, norm, ns)
            network.zero_grad()
            loss, l_r, l_a = _batch_loss(model, batch)
            loss.backward()
            dc.adam_step(params, rate)
            sums += len(idx) * np.array([loss.item(), l_r.item(), 0.0 if l_a is None else l_a.item()])
        train_l, train_r, train_a = sums / len(order)
        if val_windows:
            val_l, val_r, val_a = evaluate_loss(model, val_windows, val_nodes)
        else:
            val_l, val_r, val_a = train_l, train_r, train_a
        row = {
            "epoch": epoch,
            "lr": rate,
            "loss": train_l,
            "recon": train_r,
            "dsvdd": train_a,
            "val_loss": val_l,
            "val_recon": val_r,
            "val_dsvdd": val_a,
        }
        model.history.append(row)
        if keep_snapshots:
            model.snapshots.append(network.state_dict())
        if val_l < best[0]:
            best = (val_l, epoch, network.state_dict())
        log.info("epoch %d lr %.0e loss %.6f (recon %.6f) val %.6f", epoch, rate, train_l, train_r, val_l)
        if on_epoch is not None:
            on_epoch(row)
    network.load_state_dict(best[2])
    model.best_epoch = best[1]
    return model
