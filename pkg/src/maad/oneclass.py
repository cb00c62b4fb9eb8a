"""Gaussian-kernel one-class SVM on frozen latent features, with grid search.

The dual  min 1/2 a'Ka  s.t.  0 <= a_i <= 1/(nu n),  sum a = 1  is solved
by two-coordinate (SMO) updates on the maximal violating pair.  Scores are
``rho - sum_j a_j k(sv_j, x)``: positive outside the boundary.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._accel import USE_NUMBA, njit
from .errors import DegenerateLabels, SolverDivergence

log = logging.getLogger(__name__)

TOL = 1e-6
MAX_ITER = 100_000
DEFAULT_GAMMAS = tuple(2.0**-k for k in range(10, 0, -1))
DEFAULT_NUS = (0.01, 0.1)
SUBSET_FRAC = 0.2
MAX_TRAIN = 3000


def gaussian_kernel(u, v, gamma) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    d = u - v
    return math.exp(-gamma * float(d @ d))


def kernel_matrix(a, b, gamma) -> np.ndarray:
    """exp(-gamma ||a_i - b_j||^2) for row sets a (n, d) and b (m, d)."""
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
    return np.exp(-gamma * d2)


@dataclass
class OcSvmModel:
    support_vectors: np.ndarray  # standardised, (S, d)
    dual_coeffs: np.ndarray  # (S,)
    rho: float
    gamma: float
    nu: float
    mean: np.ndarray
    std: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def decision(self, x) -> np.ndarray:
        """sum_j a_j k(sv_j, x) for rows of standardised ``x``."""
        return kernel_matrix(x, self.support_vectors, self.gamma) @ self.dual_coeffs


def _smo(K, alpha, C, tol, max_iter):
    n = K.shape[0]
    G = K @ alpha
    it = 0
    gap = 0.0
    while it < max_iter:
        # i may grow (a_i < C), j may shrink (a_j > 0); optimal when G_j - G_i <= tol
        i = -1
        j = -1
        g_i = np.inf
        g_j = -np.inf
        for k in range(n):
            if alpha[k] < C and G[k] < g_i:
                g_i = G[k]
                i = k
            if alpha[k] > 0.0 and G[k] > g_j:
                g_j = G[k]
                j = k
        gap = g_j - g_i
        if i < 0 or j < 0 or gap <= tol:
            break
        curv = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if curv < 1e-12:
            curv = 1e-12
        t = gap / curv
        room_i = C - alpha[i]
        room_j = alpha[j]
        if t >= room_i and room_i <= room_j:
            t = room_i
            alpha[i] = C
            alpha[j] -= t
        elif t >= room_j:
            t = room_j
            alpha[i] += t
            alpha[j] = 0.0
        else:
            alpha[i] += t
            alpha[j] -= t
        for k in range(n):
            G[k] += t * (K[i, k] - K[j, k])
        it += 1
    return alpha, G, it, gap


def _smo_numpy(K, alpha, C, tol, max_iter):
    G = K @ alpha
    it = 0
    gap = 0.0
    while it < max_iter:
        up = np.where(alpha < C, G, np.inf)
        down = np.where(alpha > 0.0, G, -np.inf)
        i = int(np.argmin(up))
        j = int(np.argmax(down))
        gap = down[j] - up[i]
        if not np.isfinite(gap) or gap <= tol:
            break
        curv = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        t = gap / curv
        room_i, room_j = C - alpha[i], alpha[j]
        if t >= room_i and room_i <= room_j:
            t = room_i
            alpha[i] = C
            alpha[j] -= t
        elif t >= room_j:
            t = room_j
            alpha[i] += t
            alpha[j] = 0.0
        else:
            alpha[i] += t
            alpha[j] -= t
        G += t * (K[i] - K[j])
        it += 1
    return alpha, G, it, gap


_smo_jit = njit(_smo)


def initial_alpha(n, C) -> np.ndarray:
    """Feasible start: the first floor(1/C) points at the bound, the rest of the mass on the next."""
    alpha = np.zeros(n)
    full = min(int(math.floor(1.0 / C + 1e-12)), n)
    alpha[:full] = C
    rest = 1.0 - C * full
    if full < n and rest > 0:
        alpha[full] = rest
    return alpha


def fit_ocsvm(features, gamma, nu, tol=TOL, max_iter=MAX_ITER, standardize=True, use_numba=None) -> OcSvmModel:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise ValueError("features must be a non-empty (n, d) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    if not gamma > 0 or not 0 < nu <= 1:
        raise ValueError("need gamma > 0 and 0 < nu <= 1")
    n = len(x)
    if standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
    else:
        mean, std = np.zeros(x.shape[1]), np.ones(x.shape[1])
    z = (x - mean) / std
    if n == 1:
        # a single point carries all the mass and sits on the boundary
        return OcSvmModel(z.copy(), np.ones(1), 1.0, float(gamma), float(nu), mean, std)
    C = 1.0 / (nu * n)
    K = kernel_matrix(z, z, gamma)
    solver = _smo_jit if (USE_NUMBA if use_numba is None else use_numba) else _smo_numpy
    alpha, G, it, gap = solver(K, initial_alpha(n, C), C, float(tol), int(max_iter))
    if gap > tol:
        raise SolverDivergence(it, float(gap))
    free = (alpha > 0.0) & (alpha < C)
    if np.any(free):
        rho = float(np.mean(G[free]))
    else:
        lo = G[alpha >= C].max() if np.any(alpha >= C) else G.min()
        hi = G[alpha <= 0.0].min() if np.any(alpha <= 0.0) else G.max()
        rho = 0.5 * float(lo + hi)
    sv = alpha > 0.0
    log.debug("ocsvm gamma=%g nu=%g: %d iterations, %d SVs, gap %.2e", gamma, nu, it, int(sv.sum()), gap)
    return OcSvmModel(z[sv].copy(), alpha[sv].copy(), rho, float(gamma), float(nu), mean, std, int(it), float(gap))


def score_ocsvm(model: OcSvmModel, feature):
    """rho - sum_j a_j k(sv_j, x); a scalar for one vector, an array for rows."""
    x = np.asarray(feature, dtype=np.float64)
    single = x.ndim == 1
    z = model.standardize(np.atleast_2d(x))
    out = model.rho - model.decision(z)
    return float(out[0]) if single else out


class OcSvmDetector:
    """Frozen deep encoder followed by an OC-SVM on its latent features."""

    architecture = "ocsvm"

    def __init__(self, encoder, svm: OcSvmModel):
        self.encoder = encoder
        self.svm = svm

    @property
    def input_architecture(self):
        return self.encoder.architecture

    def score_windows(self, windows, nodes=None) -> np.ndarray:
        if not windows:
            return np.zeros(0)
        return score_ocsvm(self.svm, self.encoder.encode(windows, nodes))


def subsample(n, cap, seed) -> np.ndarray:
    """Sorted uniform subset of ``range(n)`` of size min(n, cap)."""
    if n <= cap:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, cap, replace=False))


def select_subset(n, frac=SUBSET_FRAC, seed=0) -> np.ndarray:
    """Seeded labelled subset: round(frac * n) indices (at least one), sorted."""
    if not 0 < frac <= 1:
        raise ValueError("subset fraction must lie in (0, 1]")
    k = max(1, int(round(frac * n)))
    return np.sort(np.random.default_rng(seed).choice(n, k, replace=False))


class GridResult(NamedTuple):
    gamma: float
    nu: float
    aupr: float
    table: list  # (gamma, nu, aupr) per candidate, grid order


def grid_search(features_train, subset_features, subset_labels, gammas=DEFAULT_GAMMAS, nus=DEFAULT_NUS,
                jobs=1, use_numba=None) -> GridResult:
    """Fit every (gamma, nu) and keep the best AUPR on the labelled subset.

    Ties go to the smaller gamma, then the smaller nu.
    """
    from .eval import aupr

    labels = np.asarray(subset_labels, dtype=bool)
    if labels.all() or not labels.any():
        raise DegenerateLabels("the labelled subset must contain normal and abnormal frames")
    grid = [(float(g), float(v)) for g in sorted(gammas) for v in sorted(nus)]

    def run(cand):
        m = fit_ocsvm(features_train, cand[0], cand[1], use_numba=use_numba)
        return aupr(score_ocsvm(m, subset_features), labels)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(run, grid))
    else:
        scores = [run(c) for c in grid]
    table = [(g, v, float(s)) for (g, v), s in zip(grid, scores)]
    best = table[0]
    for row in table[1:]:
        if row[2] > best[2]:
            best = row
    return GridResult(best[0], best[1], best[2], table)
