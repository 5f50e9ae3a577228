"""Compare the numba and pure-numpy kernel paths.

Run ``python3 benchmarks/bench_kernels.py``.  Each kernel is called once to
trigger compilation, then timed as the best of ``--repeat`` runs.  The
maximum absolute difference between the two paths is printed alongside.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from conjlab import kernels
from conjlab._accel import HAVE_NUMBA
from conjlab.presets import LORENZ_X0, lorenz1, lorenz2


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b) if isinstance(x, np.ndarray))
    return float(np.max(np.abs(a - b)))


def cases(steps):
    code, p, A, b = lorenz1()._packed()
    x0 = np.array(LORENZ_X0)
    dt = 0.01
    X, _ = kernels.integrate_builtin_numpy(code, p, A, b, x0, dt, steps, kernels.RK4)
    code2, p2, A2, b2 = lorenz2()._packed()
    Y, _ = kernels.integrate_builtin_numpy(code2, p2, A2, b2, x0, dt, steps, kernels.RK4)
    rng = np.random.default_rng(0)
    Ks = rng.standard_normal((steps // 4, 3, 3))
    Xa = np.column_stack([X, dt * np.arange(steps + 1)])
    Ya = np.column_stack([Y, dt * np.arange(steps + 1)])
    lo, step = np.array([-1.0, -1.0]), np.array([0.01, 0.01])
    shape = np.array([201, 201], dtype=np.int64)
    vals = rng.standard_normal((201, 201, 2))
    pts = rng.uniform(-1.2, 1.2, (steps * 20, 2))
    return {
        "integrate_builtin": ((code, p, A, b, x0, dt, steps, kernels.RK4), ()),
        "candidate_costs": ((Ks, X[1:], Y[1:]), ()),
        "segment_maps": ((Xa, Ya), ()),
        "multilinear": ((lo, step, shape, vals, pts), ()),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=3000, help="trajectory length")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; only the numpy path can be timed")
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, (call_args, _) in cases(args.steps).items():
        np_fn = getattr(kernels, f"{name}_numpy")
        t_np, out_np = best_of(lambda: np_fn(*call_args), args.repeat)
        if HAVE_NUMBA:
            nb_fn = getattr(kernels, f"{name}_numba")
            t_nb, out_nb = best_of(lambda: nb_fn(*call_args), args.repeat)
            print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}"
                  f"{t_np / t_nb:>10.1f}{_diff(out_np, out_nb):>12.2e}")
        else:
            print(f"{name:<20}{1e3 * t_np:>12.2f}{'-':>12}{'-':>10}{'-':>12}")


if __name__ == "__main__":
    main()
