#!/usr/bin/env python3
"""Compare the numba and pure numpy/Python paths of the two hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Kernels: the SMO dual solver (OC-SVM fit) and the dead-beat tracker that
rolls the bicycle model along a reference.  Compilation happens in a warm-up
call and is excluded from the timings.  The script checks that both paths
agree before timing: the solver bit for bit, the tracker to 1e-9 (compiled
transcendentals may differ from libm in the last ulp).
"""
import argparse
import time

import numpy as np

from maad.datagen.kinematics import track_reference
from maad.oneclass import fit_ocsvm, initial_alpha, kernel_matrix, _smo_jit, _smo_numpy


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def smo_case(n, seed=0):
    x = np.random.default_rng(seed).normal(size=(n, 16))
    x = (x - x.mean(0)) / x.std(0)
    K = kernel_matrix(x, x, 2.0**-4)
    C = 1.0 / (0.1 * n)
    return K, C


def track_case(n_frames, seed=0):
    rng = np.random.default_rng(seed)
    s = np.cumsum(np.full(n_frames, 1.2))
    y = 1.5 * np.sin(s / 15.0) + 0.01 * rng.normal(size=n_frames)
    return np.column_stack([s, y])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print(f"{'kernel':28s} {'numpy (s)':>10s} {'numba (s)':>10s} {'speedup':>8s}")
    for n in (200, 1000, 3000):
        K, C = smo_case(n)
        a_jit = _smo_jit(K, initial_alpha(n, C), C, 1e-6, 100_000)
        a_py = _smo_numpy(K, initial_alpha(n, C), C, 1e-6, 100_000)
        assert np.allclose(a_jit[0], a_py[0], rtol=0, atol=1e-12) and a_jit[2] == a_py[2]
        t_py = best_of(lambda: _smo_numpy(K, initial_alpha(n, C), C, 1e-6, 100_000), args.repeat)
        t_jit = best_of(lambda: _smo_jit(K, initial_alpha(n, C), C, 1e-6, 100_000), args.repeat)
        print(f"{f'smo n={n} ({a_py[2]} it)':28s} {t_py:10.4f} {t_jit:10.4f} {t_py / t_jit:8.1f}")

    for frames in (101, 1000):
        ref = track_case(frames)
        s_jit, _ = track_reference(ref, use_numba=True)
        s_py, _ = track_reference(ref, use_numba=False)
        assert np.allclose(s_jit, s_py, rtol=0, atol=1e-9)
        reps = max(1, 20000 // frames)

        def run(flag):
            for _ in range(reps):
                track_reference(ref, use_numba=flag)

        t_py = best_of(lambda: run(False), args.repeat)
        t_jit = best_of(lambda: run(True), args.repeat)
        print(f"{f'track {frames} frames x{reps}':28s} {t_py:10.4f} {t_jit:10.4f} {t_py / t_jit:8.1f}")

    # end to end: one OC-SVM fit including the kernel matrix
    x = np.random.default_rng(1).normal(size=(2000, 16))
    fit_ocsvm(x, 2.0**-4, 0.1, use_numba=True)
    t_py = best_of(lambda: fit_ocsvm(x, 2.0**-4, 0.1, use_numba=False), args.repeat)
    t_jit = best_of(lambda: fit_ocsvm(x, 2.0**-4, 0.1, use_numba=True), args.repeat)
    print(f"{'fit_ocsvm n=2000':28s} {t_py:10.4f} {t_jit:10.4f} {t_py / t_jit:8.1f}")


if __name__ == "__main__":
    main()
