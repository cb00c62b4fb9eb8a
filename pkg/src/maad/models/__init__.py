"""Baseline anomaly detectors: linear reconstructions and deep auto-encoders."""
from .batching import LaneNodes, NormStats, lane_nodes, prepare_batch
from .linear import cvm_reconstruct, lti_reconstruct, mean_step_error
from .networks import LaneGCNAE, Seq2Seq, STGAE, build_network
from .objectives import dsvdd_loss, dsvdd_score, recon_loss
from .training import (
    ModelDescriptor,
    TrainedModel,
    init_center,
    linear_model,
    scene_windows,
    train,
)


def _single(network, architecture, window, norm, nodes=None):
    from .. import diffcalc as dc

    norm = norm or NormStats()
    with dc.no_grad():
        z, rec = network.forward(prepare_batch(architecture, [window], norm, [nodes] if nodes is not None else None))
    return z.data[0], rec.data[0] * norm.scale


def seq2seq_forward(window, params: Seq2Seq, norm=None):
    """Latent and reconstruction (metres) for one window's target."""
    return _single(params, "seq2seq", window, norm)


def stgae_forward(window, params: STGAE, norm=None):
    return _single(params, "stgae", window, norm)


def lanegcn_ae_forward(window, lane_graph, params: LaneGCNAE, norm=None):
    nodes = lane_graph if isinstance(lane_graph, LaneNodes) else lane_nodes(lane_graph)
    return _single(params, "lanegcn_ae", window, norm, nodes)


__all__ = [
    "LaneGCNAE",
    "LaneNodes",
    "ModelDescriptor",
    "NormStats",
    "STGAE",
    "Seq2Seq",
    "TrainedModel",
    "build_network",
    "cvm_reconstruct",
    "dsvdd_loss",
    "dsvdd_score",
    "init_center",
    "lane_nodes",
    "lanegcn_ae_forward",
    "linear_model",
    "lti_reconstruct",
    "mean_step_error",
    "prepare_batch",
    "recon_loss",
    "scene_windows",
    "seq2seq_forward",
    "stgae_forward",
    "train",
]
