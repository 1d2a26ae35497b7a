"""Timing comparison of the NumPy and Cython kernel backends.

Runs each kernel at several batch sizes plus a short end-to-end training
burst, and prints a table of best-of-N wall times.  Usage:

    python3 benchmarks/compare_backends.py [--reps 7] [--epochs 20]
"""

import argparse
import time

import numpy as np

from releaseflow import backend
from releaseflow.classical import ClassicalModel, ModelKind, predict
from releaseflow.dataset import FilmType, ReleaseCurve
from releaseflow.nnengine import MlpArchitecture, init_params
from releaseflow.pinn import PinnConfig, train


def best_of(fn, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=7, help="repetitions per timing")
    ap.add_argument("--epochs", type=int, default=20, help="epochs for the training burst")
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 1818, 10000],
                    help="batch sizes to time")
    args = ap.parse_args()

    if "cython" not in backend.available():
        raise SystemExit("compiled extension not built; nothing to compare")

    from releaseflow import _fastcore, _slowcore

    arch = MlpArchitecture(2, 5, 20, 1)
    dims = arch.dims
    theta = init_params(arch, seed=3).values
    rng = np.random.default_rng(0)

    print(f"{'kernel':14s} {'n':>6s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for n in args.sizes:
        X = rng.random((n, 2))
        adj = rng.standard_normal((n, 1))
        rows = [
            ("forward", lambda m: m.forward(theta, dims, X, None)),
            ("forward_ext", lambda m: m.forward_ext(theta, dims, X, None)),
            ("backprop", lambda m: m.backprop(theta, dims, X, None, adj)),
            ("pde_value_grad", lambda m: m.pde_value_grad(theta, dims, X, 0.01, None)),
        ]
        for label, call in rows:
            t_py = best_of(lambda: call(_slowcore), args.reps)
            t_cy = best_of(lambda: call(_fastcore), args.reps)
            print(f"{label:14s} {n:6d} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:7.2f}x")

    # end-to-end: one training burst per backend on a synthetic Fick curve
    times = np.linspace(0.0, 1.0, 16)
    curve = ReleaseCurve(
        FilmType.Flat, times, predict(ClassicalModel(ModelKind.FickSeries, [0.05]), times)
    )
    cfg = PinnConfig(epochs=args.epochs, n_collocation=10000, seed=0)
    print()
    original = backend.name()
    try:
        for which in ("python", "cython"):
            backend.use(which)
            t0 = time.perf_counter()
            result = train(cfg, curve)
            el = time.perf_counter() - t0
            print(
                f"train {args.epochs} epochs [{which:6s}]: {el:6.2f} s"
                f"  ({el / args.epochs * 1e3:6.1f} ms/epoch)"
                f"  final loss {result.loss_history[-1, 0]:.6f}"
            )
    finally:
        backend.use(original)


if __name__ == "__main__":
    main()
