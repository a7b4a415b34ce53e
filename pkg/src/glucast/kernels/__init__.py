"""Backend selection for the numeric kernels.

The package ships two interchangeable kernel sets: `numba_backend`
(JIT-compiled) and `numpy_backend` (pure numpy, always available).  The
environment variable GLUCAST_BACKEND picks one at import time:

    GLUCAST_BACKEND=numba   require numba, fail loudly if unavailable
    GLUCAST_BACKEND=numpy   force the pure-numpy kernels
    GLUCAST_BACKEND=auto    numba when importable, else numpy (default)

`BACKEND` records the active choice.  Both backends implement the same
functions with the same operation order; see benchmarks/bench_kernels.py
for a speed comparison on this machine.
"""

from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("GLUCAST_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"GLUCAST_BACKEND must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl  # noqa: F401

        BACKEND = "numba"
    except ImportError as exc:
        if _requested == "numba":
            raise RuntimeError(
                "GLUCAST_BACKEND=numba but numba is not importable"
            ) from exc
        _impl = numpy_backend
        BACKEND = "numpy"

lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_forward_h = _impl.lstm_seq_forward_h
lstm_seq_backward = _impl.lstm_seq_backward
css_loss = _impl.css_loss
css_loss_grad = _impl.css_loss_grad
css_residuals = _impl.css_residuals
arma_simulate = _impl.arma_simulate

__all__ = [
    "BACKEND",
    "lstm_seq_forward",
    "lstm_seq_forward_h",
    "lstm_seq_backward",
    "css_loss",
    "css_loss_grad",
    "css_residuals",
    "arma_simulate",
]
