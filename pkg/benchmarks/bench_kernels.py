"""Time the numba and pure-numpy LSTM kernels, plus a full training step and inference on each backend.

Usage::

    python benchmarks/bench_kernels.py [--repeats 20]

Kernel shapes are ``(T, B, H)``: frames per buffer, batch size, hidden units.
"""

import argparse
import time

import numpy as np

from soisep import _accel
from soisep.blstm import (
    Batch,
    NetworkConfig,
    NetworkWeights,
    RMSPropState,
    kernels,
    predict_proba,
    train_step,
)

SHAPES = [(65, 1, 200), (65, 16, 64), (65, 64, 64), (33, 16, 32), (65, 16, 200)]


def best_of(fn, repeats):
    fn()  # warm-up (includes JIT compilation on first call)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    print(f"{'T':>4} {'B':>4} {'H':>4} | {'fwd numpy':>10} {'fwd numba':>10} {'x':>5} |"
          f" {'bwd numpy':>10} {'bwd numba':>10} {'x':>5}")
    for T, B, H in SHAPES:
        gx = rng.standard_normal((T, B, 4 * H))
        wh = rng.standard_normal((H, 4 * H)) * 0.1
        dh = rng.standard_normal((T, B, H))
        _, cs, acts = kernels.lstm_forward_py(gx, wh)
        fp = best_of(lambda: kernels.lstm_forward_py(gx, wh), repeats)
        fj = best_of(lambda: kernels.lstm_forward_jit(gx, wh), repeats)
        bp = best_of(lambda: kernels.lstm_backward_py(dh, cs, acts, wh), repeats)
        bj = best_of(lambda: kernels.lstm_backward_jit(dh, cs, acts, wh), repeats)
        print(f"{T:>4} {B:>4} {H:>4} | {fp * 1e3:>8.2f}ms {fj * 1e3:>8.2f}ms {fp / fj:>5.2f} |"
              f" {bp * 1e3:>8.2f}ms {bj * 1e3:>8.2f}ms {bp / bj:>5.2f}")


def bench_end_to_end(repeats):
    rng = np.random.default_rng(1)
    print("\nend to end (best of runs)")
    cases = [("train step L=2 H=64 B=16", NetworkConfig(layers=2, hidden=64), 16),
             ("inference L=3 H=200 B=1", NetworkConfig(), 1)]
    for label, cfg, batch in cases:
        T, F = cfg.n_frames, cfg.n_freq
        data = Batch(rng.standard_normal((batch, T, 2 * F)), rng.random((batch, T, F)) > 0.5,
                     rng.random((batch, T, F)), np.ones((batch, T, F), bool))
        w = NetworkWeights.for_config(cfg)
        state = RMSPropState.zeros_like(w)
        timings = {}
        for backend in (False, True):
            _accel.USE_NUMBA = backend
            if batch > 1:
                timings[backend] = best_of(lambda: train_step(data, w, state, cfg), max(3, repeats // 4))
            else:
                timings[backend] = best_of(lambda: predict_proba(data.features[0], w), max(3, repeats // 4))
        print(f"  {label:<26} numpy {timings[False] * 1e3:8.1f}ms  numba {timings[True] * 1e3:8.1f}ms"
              f"  x{timings[False] / timings[True]:.2f}")
    _accel.USE_NUMBA = _accel.numba_enabled()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    bench_kernels(args.repeats)
    bench_end_to_end(args.repeats)


if __name__ == "__main__":
    main()
