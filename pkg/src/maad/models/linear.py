"""Constant-velocity and linear-interpolation reconstructions."""
import numpy as np


def _positions(window):
    return np.asarray(window.target if hasattr(window, "target") else window, dtype=np.float64)


def mean_step_error(states, reconstruction) -> float:
    """Anomaly score: mean over time of the per-step Euclidean error."""
    d = np.asarray(states, dtype=np.float64) - np.asarray(reconstruction, dtype=np.float64)
    return float(np.mean(np.hypot(d[..., 0], d[..., 1])))


def cvm_reconstruct(window):
    """Extrapolate the first step's velocity from the first state.

    Accepts a :class:`~maad.core.Window` (target agent) or a (T, 2) array.
    Returns ``(reconstruction, score)``.
    """
    s = _positions(window)
    t = np.arange(len(s))[:, None]
    recon = s[0] + t * (s[1] - s[0])
    return recon, mean_step_error(s, recon)


def lti_reconstruct(window):
    """Equidistant points on the segment from the first to the last state."""
    s = _positions(window)
    n = len(s)
    frac = (np.arange(n) / (n - 1))[:, None]
    recon = s[0] + frac * (s[-1] - s[0])
    recon[-1] = s[-1]
    return recon, mean_step_error(s, recon)


def cvm_scores(targets: np.ndarray) -> np.ndarray:
    """Vectorised CVM scores for a (B, T, 2) batch."""
    t = np.arange(targets.shape[1])[None, :, None]
    recon = targets[:, :1] + t * (targets[:, 1:2] - targets[:, :1])
    return np.mean(np.linalg.norm(targets - recon, axis=-1), axis=1)


def lti_scores(targets: np.ndarray) -> np.ndarray:
    n = targets.shape[1]
    frac = (np.arange(n) / (n - 1))[None, :, None]
    recon = targets[:, :1] + frac * (targets[:, -1:] - targets[:, :1])
    recon[:, -1] = targets[:, -1]
    return np.mean(np.linalg.norm(targets - recon, axis=-1), axis=1)
