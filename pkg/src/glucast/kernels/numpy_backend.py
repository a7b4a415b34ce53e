"""Pure-numpy implementations of the hot numeric kernels.

This module is the reference backend: `numba_backend` mirrors every
function here with the same operation order, so the two backends agree
to rounding error and either can serve the rest of the package.

LSTM sequence kernels operate on a batch of chains.  A chain is one
independent recurrence (one window, or one window prefix).  Chains are
packed along axis 1 of the input block and `counts[t]` says how many of
them are active at step t, always as a leading slice.  Active sets must
be nested in time (only grow, or only shrink); rows outside the active
slice are never read or written, which is what makes prefix batching
cheap.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow to inf for very negative inputs; 1/(1+inf) -> 0 is
    # the value we want, so silence only the overflow warning.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def lstm_seq_forward(
    X: np.ndarray,
    W: np.ndarray,
    U: np.ndarray,
    b: np.ndarray,
    counts: np.ndarray,
):
    """Run an LSTM over a packed chain batch, keeping caches for backprop.

    Args:
        X: (T, N, D) inputs, chain-major along axis 1.
        W: (D, 4H) input weights, gate order [i, f, g, o].
        U: (H, 4H) recurrent weights.
        b: (4H,) bias.
        counts: (T,) active-chain count per step (leading slice of axis 1).

    Returns:
        h_all: (T, N, H) hidden states (zeros where inactive).
        gates: (T, N, 4H) post-activation gate values.
        cells: (T, N, H) cell states.
    """
    T, N, _ = X.shape
    H = U.shape[0]
    h_all = np.zeros((T, N, H))
    gates = np.zeros((T, N, 4 * H))
    cells = np.zeros((T, N, H))
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    for t in range(T):
        n = int(counts[t])
        a = np.dot(X[t, :n], W) + np.dot(h[:n], U) + b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = _sigmoid(a[:, 3 * H :])
        c_new = f * c[:n] + i * g
        h_new = o * np.tanh(c_new)
        h[:n] = h_new
        c[:n] = c_new
        h_all[t, :n] = h_new
        cells[t, :n] = c_new
        gates[t, :n, :H] = i
        gates[t, :n, H : 2 * H] = f
        gates[t, :n, 2 * H : 3 * H] = g
        gates[t, :n, 3 * H :] = o
    return h_all, gates, cells


def lstm_seq_forward_h(
    X: np.ndarray,
    W: np.ndarray,
    U: np.ndarray,
    b: np.ndarray,
    counts: np.ndarray,
) -> np.ndarray:
    """Forward pass only; returns h_all without gate/cell caches."""
    T, N, _ = X.shape
    H = U.shape[0]
    h_all = np.zeros((T, N, H))
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    for t in range(T):
        n = int(counts[t])
        a = np.dot(X[t, :n], W) + np.dot(h[:n], U) + b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = _sigmoid(a[:, 3 * H :])
        c_new = f * c[:n] + i * g
        h_new = o * np.tanh(c_new)
        h[:n] = h_new
        c[:n] = c_new
        h_all[t, :n] = h_new
    return h_all


def lstm_seq_backward(
    X: np.ndarray,
    W: np.ndarray,
    U: np.ndarray,
    counts: np.ndarray,
    h_all: np.ndarray,
    gates: np.ndarray,
    cells: np.ndarray,
    dh_out: np.ndarray,
):
    """Backprop through `lstm_seq_forward`.

    `dh_out[t]` is the loss gradient injected into h at step t (zeros for
    steps/chains that feed no readout).  Returns (dX, dW, dU, db).
    """
    T, N, D = X.shape
    H = U.shape[0]
    da_all = np.zeros((T, N, 4 * H))
    dh_carry = np.zeros((N, H))
    dc_carry = np.zeros((N, H))
    Ut = np.ascontiguousarray(U.T)
    for t in range(T - 1, -1, -1):
        n = int(counts[t])
        i = gates[t, :n, :H]
        f = gates[t, :n, H : 2 * H]
        g = gates[t, :n, 2 * H : 3 * H]
        o = gates[t, :n, 3 * H :]
        c = cells[t, :n]
        # Chains inactive at t-1 were never written there, so the slice
        # reads the zero initial state exactly when it should.
        c_prev = cells[t - 1, :n] if t > 0 else np.zeros((n, H))
        tc = np.tanh(c)
        dh = dh_out[t, :n] + dh_carry[:n]
        dc = dc_carry[:n] + dh * o * (1.0 - tc * tc)
        da = np.empty((n, 4 * H))
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        da[:, 3 * H :] = dh * tc * o * (1.0 - o)
        da_all[t, :n] = da
        dh_carry[:n] = np.dot(da, Ut)
        dc_carry[:n] = dc * f
    da2 = da_all.reshape(T * N, 4 * H)
    X2 = X.reshape(T * N, D)
    dW = np.dot(np.ascontiguousarray(X2.T), da2)
    db = da2.sum(axis=0)
    dX = np.dot(da2, np.ascontiguousarray(W.T)).reshape(T, N, D)
    if T > 1:
        # h_prev at step 0 is zero, so step 0 contributes nothing to dU.
        hp = h_all[: T - 1].reshape((T - 1) * N, H)
        dU = np.dot(np.ascontiguousarray(hp.T), da_all[1:].reshape((T - 1) * N, 4 * H))
    else:
        dU = np.zeros((H, 4 * H))
    return dX, dW, dU, db


def css_loss(w: np.ndarray, c: float, phi: np.ndarray, theta: np.ndarray) -> float:
    """Conditional sum of squares of an ARMA model on `w`.

    Residuals are built recursively with pre-sample residuals fixed at
    zero and the sum taken from index max(p, q) onward.
    """
    m = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q)
    wl = w.tolist()
    phil = phi.tolist()
    thetal = theta.tolist()
    eps = [0.0] * m
    loss = 0.0
    for t in range(r, m):
        e = wl[t] - c
        for i in range(p):
            e -= phil[i] * wl[t - 1 - i]
        for j in range(q):
            e -= thetal[j] * eps[t - 1 - j]
        eps[t] = e
        loss += e * e
    return loss


def css_loss_grad(w: np.ndarray, c: float, phi: np.ndarray, theta: np.ndarray):
    """CSS loss and its analytic gradient in (c, phi, theta).

    Residual derivatives follow the same recursion as the residuals:
    d eps_t = -d pred_t - sum_j theta_j * d eps_{t-j}, with pre-sample
    derivatives zero.  Returns (loss, grad) with grad laid out as
    [c, phi_1..phi_p, theta_1..theta_q].
    """
    m = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q)
    npar = 1 + p + q
    wl = w.tolist()
    phil = phi.tolist()
    thetal = theta.tolist()
    eps = [0.0] * m
    deps = [[0.0] * npar for _ in range(m)]
    loss = 0.0
    grad = [0.0] * npar
    for t in range(r, m):
        e = wl[t] - c
        for i in range(p):
            e -= phil[i] * wl[t - 1 - i]
        for j in range(q):
            e -= thetal[j] * eps[t - 1 - j]
        eps[t] = e
        dt = deps[t]
        dt[0] = -1.0
        for i in range(p):
            dt[1 + i] = -wl[t - 1 - i]
        for k in range(q):
            dt[1 + p + k] = -eps[t - 1 - k]
        for j in range(q):
            th = thetal[j]
            dprev = deps[t - 1 - j]
            for a in range(npar):
                dt[a] -= th * dprev[a]
        loss += e * e
        for a in range(npar):
            grad[a] += 2.0 * e * dt[a]
    return loss, np.asarray(grad)


def css_residuals(
    w: np.ndarray, c: float, phi: np.ndarray, theta: np.ndarray
) -> np.ndarray:
    """Full residual sequence of the CSS recursion (zeros before max(p, q))."""
    m = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q)
    wl = w.tolist()
    phil = phi.tolist()
    thetal = theta.tolist()
    eps = [0.0] * m
    for t in range(r, m):
        e = wl[t] - c
        for i in range(p):
            e -= phil[i] * wl[t - 1 - i]
        for j in range(q):
            e -= thetal[j] * eps[t - 1 - j]
        eps[t] = e
    return np.asarray(eps)


def arma_simulate(
    c: float, phi: np.ndarray, theta: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    """Drive an ARMA recursion with the given innovation sequence.

    x_t = c + sum_i phi_i x_{t-i} + eps_t + sum_j theta_j eps_{t-j},
    with pre-sample x and eps treated as zero.  Callers discard their own
    burn-in.
    """
    n = eps.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    phil = phi.tolist()
    thetal = theta.tolist()
    epsl = eps.tolist()
    x = [0.0] * n
    for t in range(n):
        v = c + epsl[t]
        for i in range(p):
            if t - 1 - i >= 0:
                v += phil[i] * x[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                v += thetal[j] * epsl[t - 1 - j]
        x[t] = v
    return np.asarray(x)
