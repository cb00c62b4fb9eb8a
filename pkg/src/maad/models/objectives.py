"""Reconstruction and hypersphere objectives."""
import numpy as np

from .. import diffcalc as dc
from ..errors import CenterUninitialized


def recon_loss(states, reconstruction):
    """Mean over time of the squared per-step error.

    Works on numpy arrays or Tensors of shape (..., T, 2); leading axes are
    averaged too, so a batch yields its mean window loss.
    """
    if isinstance(states, dc.Tensor) or isinstance(reconstruction, dc.Tensor):
        return dc.mean(dc.squared_euclidean(reconstruction, states))
    d = np.asarray(states, dtype=np.float64) - np.asarray(reconstruction, dtype=np.float64)
    return float(np.mean(np.sum(d * d, axis=-1)))


def _check_center(c):
    if c is None:
        raise CenterUninitialized("hypersphere center has not been initialised")


def dsvdd_loss(z, c):
    """Mean squared distance of a (B, F) latent batch from the center."""
    _check_center(c)
    if isinstance(z, dc.Tensor):
        return dc.mean(dc.squared_euclidean(z, np.asarray(c)))
    d = np.asarray(z, dtype=np.float64) - np.asarray(c, dtype=np.float64)
    return float(np.mean(np.sum(d * d, axis=-1)))


def dsvdd_score(z, c):
    """Euclidean distance ``||z - c||`` (per row for 2-D input)."""
    _check_center(c)
    z = np.asarray(z.data if isinstance(z, dc.Tensor) else z, dtype=np.float64)
    d = z - np.asarray(c, dtype=np.float64)
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if out.ndim == 0 else out
