"""Numba-compiled twins of the kernels in `numpy_backend`.

Every function keeps the exact operation order of its numpy twin (same
gemm shapes, same elementwise formulas) so results agree to rounding
error; only the scheduling differs.  fastmath stays off on purpose: it
buys nothing on the gemm-bound LSTM kernels and would break the
cross-backend agreement the tests rely on.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def lstm_seq_forward(X, W, U, b, counts):
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
        for r in range(n):
            for k in range(H):
                i = 1.0 / (1.0 + np.exp(-a[r, k]))
                f = 1.0 / (1.0 + np.exp(-a[r, H + k]))
                g = np.tanh(a[r, 2 * H + k])
                o = 1.0 / (1.0 + np.exp(-a[r, 3 * H + k]))
                cn = f * c[r, k] + i * g
                hn = o * np.tanh(cn)
                h[r, k] = hn
                c[r, k] = cn
                h_all[t, r, k] = hn
                cells[t, r, k] = cn
                gates[t, r, k] = i
                gates[t, r, H + k] = f
                gates[t, r, 2 * H + k] = g
                gates[t, r, 3 * H + k] = o
    return h_all, gates, cells


@njit(**_JIT)
def lstm_seq_forward_h(X, W, U, b, counts):
    T, N, _ = X.shape
    H = U.shape[0]
    h_all = np.zeros((T, N, H))
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    for t in range(T):
        n = int(counts[t])
        a = np.dot(X[t, :n], W) + np.dot(h[:n], U) + b
        for r in range(n):
            for k in range(H):
                i = 1.0 / (1.0 + np.exp(-a[r, k]))
                f = 1.0 / (1.0 + np.exp(-a[r, H + k]))
                g = np.tanh(a[r, 2 * H + k])
                o = 1.0 / (1.0 + np.exp(-a[r, 3 * H + k]))
                cn = f * c[r, k] + i * g
                hn = o * np.tanh(cn)
                h[r, k] = hn
                c[r, k] = cn
                h_all[t, r, k] = hn
    return h_all


@njit(**_JIT)
def lstm_seq_backward(X, W, U, counts, h_all, gates, cells, dh_out):
    T, N, D = X.shape
    H = U.shape[0]
    da_all = np.zeros((T, N, 4 * H))
    dh_carry = np.zeros((N, H))
    dc_carry = np.zeros((N, H))
    Ut = np.ascontiguousarray(U.T)
    for t in range(T - 1, -1, -1):
        n = int(counts[t])
        da = np.empty((n, 4 * H))
        for r in range(n):
            for k in range(H):
                i = gates[t, r, k]
                f = gates[t, r, H + k]
                g = gates[t, r, 2 * H + k]
                o = gates[t, r, 3 * H + k]
                c_prev = cells[t - 1, r, k] if t > 0 else 0.0
                tc = np.tanh(cells[t, r, k])
                dh = dh_out[t, r, k] + dh_carry[r, k]
                dc = dc_carry[r, k] + dh * o * (1.0 - tc * tc)
                da[r, k] = dc * g * i * (1.0 - i)
                da[r, H + k] = dc * c_prev * f * (1.0 - f)
                da[r, 2 * H + k] = dc * i * (1.0 - g * g)
                da[r, 3 * H + k] = dh * tc * o * (1.0 - o)
                dc_carry[r, k] = dc * f
        da_all[t, :n] = da
        dhc = np.dot(da, Ut)
        dh_carry[:n] = dhc
    da2 = da_all.reshape(T * N, 4 * H)
    X2 = X.reshape(T * N, D)
    dW = np.dot(np.ascontiguousarray(X2.T), da2)
    db = np.zeros(4 * H)
    for r in range(T * N):
        for k in range(4 * H):
            db[k] += da2[r, k]
    dX = np.dot(da2, np.ascontiguousarray(W.T)).reshape(T, N, D)
    if T > 1:
        hp = h_all[: T - 1].reshape((T - 1) * N, H)
        dU = np.dot(
            np.ascontiguousarray(hp.T), da_all[1:].reshape((T - 1) * N, 4 * H)
        )
    else:
        dU = np.zeros((H, 4 * H))
    return dX, dW, dU, db


@njit(**_JIT)
def css_loss(w, c, phi, theta):
    m = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q)
    eps = np.zeros(m)
    loss = 0.0
    for t in range(r, m):
        e = w[t] - c
        for i in range(p):
            e -= phi[i] * w[t - 1 - i]
        for j in range(q):
            e -= theta[j] * eps[t - 1 - j]
        eps[t] = e
        loss += e * e
    return loss


@njit(**_JIT)
def css_loss_grad(w, c, phi, theta):
    m = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q)
    npar = 1 + p + q
    eps = np.zeros(m)
    deps = np.zeros((m, npar))
    loss = 0.0
    grad = np.zeros(npar)
    for t in range(r, m):
        e = w[t] - c
        for i in range(p):
            e -= phi[i] * w[t - 1 - i]
        for j in range(q):
            e -= theta[j] * eps[t - 1 - j]
        eps[t] = e
        deps[t, 0] = -1.0
        for i in range(p):
            deps[t, 1 + i] = -w[t - 1 - i]
        for k in range(q):
            deps[t, 1 + p + k] = -eps[t - 1 - k]
        for j in range(q):
            th = theta[j]
            for a in range(npar):
                deps[t, a] -= th * deps[t - 1 - j, a]
        loss += e * e
        for a in range(npar):
            grad[a] += 2.0 * e * deps[t, a]
    return loss, grad


@njit(**_JIT)
def css_residuals(w, c, phi, theta):
    m = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    r = max(p, q)
    eps = np.zeros(m)
    for t in range(r, m):
        e = w[t] - c
        for i in range(p):
            e -= phi[i] * w[t - 1 - i]
        for j in range(q):
            e -= theta[j] * eps[t - 1 - j]
        eps[t] = e
    return eps


@njit(**_JIT)
def arma_simulate(c, phi, theta, eps):
    n = eps.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    x = np.zeros(n)
    for t in range(n):
        v = c + eps[t]
        for i in range(p):
            if t - 1 - i >= 0:
                v += phi[i] * x[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                v += theta[j] * eps[t - 1 - j]
        x[t] = v
    return x
