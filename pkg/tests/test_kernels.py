"""The numba and pure paths of each hot kernel must agree.

The solver only does arithmetic, so its paths match to rounding.  The tracker
calls atan2/tan/sin, whose compiled versions can differ from libm in the last
ulp, so it is held to 1e-9.
"""
import os
import subprocess
import sys

import numpy as np
import pytest

from maad.datagen.kinematics import track_reference
from maad.oneclass import _smo_jit, _smo_numpy, initial_alpha, kernel_matrix


@pytest.mark.parametrize("n,nu", [(30, 0.5), (150, 0.1), (400, 0.02)])
def test_smo_paths_identical(n, nu):
    x = np.random.default_rng(n).normal(size=(n, 6))
    K = kernel_matrix(x, x, 0.2)
    C = 1.0 / (nu * n)
    a = _smo_jit(K, initial_alpha(n, C), C, 1e-9, 100_000)
    b = _smo_numpy(K, initial_alpha(n, C), C, 1e-9, 100_000)
    assert a[2] == b[2]
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-12)
    assert np.allclose(a[1], b[1], rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_tracker_paths_agree(seed):
    rng = np.random.default_rng(seed)
    s = np.cumsum(rng.uniform(0.2, 2.0, 90))
    ref = np.column_stack([s, 2.0 * np.sin(s / 12.0) + rng.normal(scale=0.05, size=90)])
    a = track_reference(ref, use_numba=True)
    b = track_reference(ref, use_numba=False)
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-9) and np.allclose(a[1], b[1], rtol=0, atol=1e-9)


def test_env_switch_disables_numba():
    code = "import maad._accel as a; print(a.USE_NUMBA)"
    env = {**os.environ, "MAAD_NUMBA": "0"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "maad", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("maad ")
