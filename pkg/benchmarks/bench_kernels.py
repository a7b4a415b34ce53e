"""Benchmark the JIT-compiled kernels against the pure-numpy backend.

Run: python benchmarks/bench_kernels.py

Times every kernel exposed by glucast.kernels on problem sizes matching
the real workloads (2-hour windows batched for training, week-long
series for ARMA fitting).  Both backends are imported directly, so the
GLUCAST_BACKEND environment variable does not affect this script.
"""

from __future__ import annotations

import time

import numpy as np

from glucast.kernels import numpy_backend

try:
    from glucast.kernels import numba_backend
except ImportError:
    numba_backend = None

N_WARMUP = 2
N_RUNS = 5


def _time(fn, args) -> float:
    """Best-of-N_RUNS wall time in milliseconds."""
    for _ in range(N_WARMUP):
        fn(*args)
    best = float("inf")
    for _ in range(N_RUNS):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def _row(name: str, args) -> None:
    t_numpy = _time(getattr(numpy_backend, name), args)
    t_numba = _time(getattr(numba_backend, name), args)
    speedup = t_numpy / t_numba if t_numba > 0 else float("inf")
    print(f"{name:20s} numpy {t_numpy:9.3f} ms   numba {t_numba:9.3f} ms   x{speedup:6.1f}")


def main() -> None:
    if numba_backend is None:
        print("numba is not importable; nothing to compare.")
        return

    rng = np.random.default_rng(0)

    # LSTM sequence kernels: one training chunk of 2-hour windows with
    # prefix packing (T steps, N chains, scalar inputs, H hidden units).
    T, N, D, H = 24, 256, 1, 64
    X = rng.normal(size=(T, N, D))
    W = rng.normal(size=(D, 4 * H)) * 0.1
    U = rng.normal(size=(H, 4 * H)) * 0.1
    b = np.zeros(4 * H)
    counts = np.full(T, N, dtype=np.int64)
    h_all, gates, cells = numpy_backend.lstm_seq_forward(X, W, U, b, counts)
    dh_out = rng.normal(size=(T, N, H))

    print(f"LSTM chain batch: T={T} N={N} D={D} H={H}")
    _row("lstm_seq_forward", (X, W, U, b, counts))
    _row("lstm_seq_forward_h", (X, W, U, b, counts))
    _row("lstm_seq_backward", (X, W, U, counts, h_all, gates, cells, dh_out))

    # ARMA kernels: a differenced week of 5-minute samples, ARMA(2,2).
    n = 2016
    w = rng.normal(size=n)
    phi = np.array([0.5, -0.2])
    theta = np.array([0.3, 0.1])
    eps = rng.normal(size=n)

    print(f"\nARMA recursions: n={n} p={len(phi)} q={len(theta)}")
    _row("css_loss", (w, 0.1, phi, theta))
    _row("css_loss_grad", (w, 0.1, phi, theta))
    _row("css_residuals", (w, 0.1, phi, theta))
    _row("arma_simulate", (0.1, phi, theta, eps))


if __name__ == "__main__":
    main()
