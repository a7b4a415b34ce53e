"""Bidirectional stacked LSTM forecaster over fixed glucose windows.

Architecture: one or two bidirectional LSTM layers, a single ReLU MLP
layer on the concatenated direction states, and a linear head with no
bias.  The network reads a window of k standardized glucose values and
emits one value, the estimate for the sample that follows the window.

Training uses every prefix of a window as its own example: the estimate
after reading x_1..x_t is compared against x_{t+1} (and the estimate
after the full window against the value at the origin slot).  The
backward direction of each layer runs over the prefix only, so the
prediction at position t never sees inputs beyond t.  All prefixes of a
batch are packed into one chain batch per direction (see
`kernels.numpy_backend` for the packing contract), which turns the
nominally quadratic prefix work into a handful of gemm-backed kernel
calls.

Multi-step forecasts come from an autoregressive rollout: predict one
step, shift it into the window, repeat.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import kernels

_MAGIC = b"GLSTM001"
_FORMAT_VERSION = 1

# Gate order inside the packed 4H axis.  Slices i/f/g/o in this order.
GATE_ORDER = ("input", "forget", "cell", "output")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    window is the input length k in 5-minute samples (24 = 2 hours).
    dropout is the drop probability on the MLP hidden layer during
    training; 0 disables it.
    """

    n_layers: int = 2
    hidden: int = 64
    mlp_hidden: int = 64
    window: int = 24
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.n_layers not in (1, 2):
            raise ValueError("n_layers must be 1 or 2")
        if min(self.hidden, self.mlp_hidden, self.window) < 1:
            raise ValueError("hidden sizes and window must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class CellParams:
    """One LSTM direction: input weights W (D, 4H), recurrent U (H, 4H), bias b (4H,)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray


@dataclass
class BiLayerParams:
    fwd: CellParams
    bwd: CellParams


@dataclass
class NetworkParams:
    config: NetworkConfig
    layers: list[BiLayerParams]
    mlp_w: np.ndarray
    mlp_b: np.ndarray
    head_w: np.ndarray

    def tensors(self) -> Iterator[np.ndarray]:
        """All parameter tensors in a fixed, documented order."""
        for layer in self.layers:
            for cell in (layer.fwd, layer.bwd):
                yield cell.W
                yield cell.U
                yield cell.b
        yield self.mlp_w
        yield self.mlp_b
        yield self.head_w

    def tensor_names(self) -> Iterator[str]:
        for li in range(len(self.layers)):
            for d in ("fwd", "bwd"):
                for t in ("W", "U", "b"):
                    yield f"layer{li}.{d}.{t}"
        yield "mlp_w"
        yield "mlp_b"
        yield "head_w"

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            config=self.config,
            layers=[
                BiLayerParams(
                    fwd=CellParams(l.fwd.W.copy(), l.fwd.U.copy(), l.fwd.b.copy()),
                    bwd=CellParams(l.bwd.W.copy(), l.bwd.U.copy(), l.bwd.b.copy()),
                )
                for l in self.layers
            ],
            mlp_w=self.mlp_w.copy(),
            mlp_b=self.mlp_b.copy(),
            head_w=self.head_w.copy(),
        )

    def zeros_like(self) -> "NetworkParams":
        out = self.copy()
        for t in out.tensors():
            t[...] = 0.0
        return out

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors())


def layer_input_dim(config: NetworkConfig, layer_index: int) -> int:
    """Input width of a layer: raw value for layer 0, both directions above."""
    return 1 if layer_index == 0 else 2 * config.hidden


def init_params(seed: int, config: NetworkConfig | None = None) -> NetworkParams:
    """Initialize parameters from a seed.

    Every tensor draws uniform values in +-1/sqrt(fan_in); the forget-gate
    bias slice is then set to 1 so cells start out remembering.
    """
    config = config or NetworkConfig()
    rng = np.random.default_rng(seed)
    H = config.hidden
    M = config.mlp_hidden

    def uniform(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    layers = []
    for li in range(config.n_layers):
        D = layer_input_dim(config, li)
        cells = []
        for _ in range(2):
            W = uniform((D, 4 * H), D)
            U = uniform((H, 4 * H), H)
            b = uniform((4 * H,), H)
            b[H : 2 * H] = 1.0
            cells.append(CellParams(W, U, b))
        layers.append(BiLayerParams(fwd=cells[0], bwd=cells[1]))
    mlp_w = uniform((2 * H, M), 2 * H)
    mlp_b = uniform((M,), 2 * H)
    head_w = uniform((M,), M)
    return NetworkParams(
        config=config, layers=layers, mlp_w=mlp_w, mlp_b=mlp_b, head_w=head_w
    )


def lstm_cell_step(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, cell: CellParams
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell update; the single-step reference the kernels must match."""
    H = cell.U.shape[0]
    a = x @ cell.W + h_prev @ cell.U + cell.b
    with np.errstate(over="ignore"):
        i = 1.0 / (1.0 + np.exp(-a[..., :H]))
        f = 1.0 / (1.0 + np.exp(-a[..., H : 2 * H]))
        o = 1.0 / (1.0 + np.exp(-a[..., 3 * H :]))
    g = np.tanh(a[..., 2 * H : 3 * H])
    c_new = f * c_prev + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


# ---------------------------------------------------------------------------
# Prefix-batched forward/backward
# ---------------------------------------------------------------------------
#
# Chain layout: a batch of B windows of length L expands into N = B * L
# chains, one per (window, prefix length).  Chain index of prefix length
# l of window w is (L - l) * B + w, so longer prefixes come first and
# the chains active at any step form a leading slice:
#   - forward runs of layers >= 2 shrink: step t serves prefixes l > t;
#   - backward runs grow: step s (reading position L - s) serves l >= L - s.
# The layer-1 forward run is shared by all prefixes of a window, so it
# uses B chains only.


def _grow_counts(L: int, B: int) -> np.ndarray:
    return (np.arange(1, L + 1, dtype=np.int64)) * B


def _shrink_counts(L: int, B: int) -> np.ndarray:
    return (np.arange(L, 0, -1, dtype=np.int64)) * B


def _flat_counts(L: int, B: int) -> np.ndarray:
    return np.full(L, B, dtype=np.int64)


def _tile_chain(h: np.ndarray, L: int) -> np.ndarray:
    """Repeat a (L, B, H) per-window stream across the L prefix blocks."""
    return np.ascontiguousarray(np.tile(h, (1, L, 1)))


def forward_prefix(
    params: NetworkParams,
    values: np.ndarray,
    dropout_mask: np.ndarray | None = None,
    keep_cache: bool = False,
) -> tuple[np.ndarray, dict | None]:
    """Predict after every prefix of each window.

    Args:
        values: (B, L) standardized glucose windows.
        dropout_mask: optional (B, L, mlp_hidden) multiplicative mask
            (inverted dropout, already scaled); None means no dropout.
        keep_cache: keep activations for `backward_prefix`.

    Returns:
        preds: (B, L); preds[w, t] estimates the value after values[w, :t+1].
        cache: opaque dict when keep_cache, else None.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    B, L = values.shape
    if not 1 <= L <= params.config.window:
        raise ValueError(
            f"window length {L} outside [1, {params.config.window}]"
        )
    N = B * L
    H = params.config.hidden
    two_layer = params.config.n_layers == 2

    X_f1 = np.ascontiguousarray(values.T)[:, :, None]
    X_b1 = np.tile(np.ascontiguousarray(values[:, ::-1].T), (1, L))[:, :, None]
    X_b1 = np.ascontiguousarray(X_b1)
    cf = _flat_counts(L, B)
    cg = _grow_counts(L, B)
    cs = _shrink_counts(L, B)

    l1 = params.layers[0]
    runs: dict[str, tuple] = {}
    if keep_cache:
        h_f1, g_f1, c_f1 = kernels.lstm_seq_forward(X_f1, l1.fwd.W, l1.fwd.U, l1.fwd.b, cf)
        h_b1, g_b1, c_b1 = kernels.lstm_seq_forward(X_b1, l1.bwd.W, l1.bwd.U, l1.bwd.b, cg)
        runs["f1"] = (X_f1, h_f1, g_f1, c_f1, cf)
        runs["b1"] = (X_b1, h_b1, g_b1, c_b1, cg)
    else:
        h_f1 = kernels.lstm_seq_forward_h(X_f1, l1.fwd.W, l1.fwd.U, l1.fwd.b, cf)
        h_b1 = kernels.lstm_seq_forward_h(X_b1, l1.bwd.W, l1.bwd.U, l1.bwd.b, cg)

    if two_layer:
        l2 = params.layers[1]
        X_f2 = np.empty((L, N, 2 * H))
        X_f2[:, :, :H] = _tile_chain(h_f1, L)
        X_f2[:, :, H:] = h_b1[::-1]
        X_b2 = np.empty((L, N, 2 * H))
        X_b2[:, :, :H] = _tile_chain(h_f1[::-1], L)
        X_b2[:, :, H:] = h_b1
        if keep_cache:
            h_f2, g_f2, c_f2 = kernels.lstm_seq_forward(X_f2, l2.fwd.W, l2.fwd.U, l2.fwd.b, cs)
            h_b2, g_b2, c_b2 = kernels.lstm_seq_forward(X_b2, l2.bwd.W, l2.bwd.U, l2.bwd.b, cg)
            runs["f2"] = (X_f2, h_f2, g_f2, c_f2, cs)
            runs["b2"] = (X_b2, h_b2, g_b2, c_b2, cg)
        else:
            h_f2 = kernels.lstm_seq_forward_h(X_f2, l2.fwd.W, l2.fwd.U, l2.fwd.b, cs)
            h_b2 = kernels.lstm_seq_forward_h(X_b2, l2.bwd.W, l2.bwd.U, l2.bwd.b, cg)
        h_ftop, h_btop = h_f2, h_b2
    else:
        h_ftop, h_btop = h_f1, h_b1

    # Readouts per (window, prefix): forward state at the prefix end,
    # backward state after consuming the whole reversed prefix.
    rows = np.arange(L)[:, None]
    cols = (L - 1 - np.arange(L))[:, None] * B + np.arange(B)[None, :]
    if two_layer:
        rf = h_ftop[rows, cols].transpose(1, 0, 2)  # (B, L, H)
    else:
        rf = np.ascontiguousarray(h_ftop.transpose(1, 0, 2))  # f1 is per-window
    rb = h_btop[L - 1].reshape(L, B, H)[::-1].transpose(1, 0, 2)  # (B, L, H)
    readout = np.concatenate([rf, rb], axis=2)  # (B, L, 2H)

    z = readout @ params.mlp_w + params.mlp_b
    act = np.maximum(z, 0.0)
    if dropout_mask is not None:
        act = act * dropout_mask
    preds = act @ params.head_w

    if not keep_cache:
        return preds, None
    cache = {
        "B": B,
        "L": L,
        "runs": runs,
        "readout": readout,
        "z": z,
        "act": act,
        "dropout_mask": dropout_mask,
        "two_layer": two_layer,
    }
    return preds, cache


def backward_prefix(
    params: NetworkParams, cache: dict, dpreds: np.ndarray
) -> NetworkParams:
    """Gradients of sum(dpreds * preds) w.r.t. all parameters.

    The caller folds its loss derivative into dpreds (zeroing masked
    positions), which keeps this function loss-agnostic.
    """
    B, L = cache["B"], cache["L"]
    N = B * L
    H = params.config.hidden
    two_layer = cache["two_layer"]
    grads = params.zeros_like()

    act = cache["act"]
    z = cache["z"]
    readout = cache["readout"]
    dact = dpreds[:, :, None] * params.head_w
    grads.head_w[...] = np.tensordot(act, dpreds, axes=([0, 1], [0, 1]))
    if cache["dropout_mask"] is not None:
        dact = dact * cache["dropout_mask"]
    dz = dact * (z > 0.0)
    flat_r = readout.reshape(B * L, 2 * H)
    flat_dz = dz.reshape(B * L, -1)
    grads.mlp_w[...] = flat_r.T @ flat_dz
    grads.mlp_b[...] = flat_dz.sum(axis=0)
    dreadout = dz @ params.mlp_w.T
    drf = dreadout[:, :, :H]
    drb = dreadout[:, :, H:]

    # Scatter readout gradients back to the chain runs.
    rows = np.arange(L)[:, None]
    cols = (L - 1 - np.arange(L))[:, None] * B + np.arange(B)[None, :]
    dh_btop = np.zeros((L, N, H))
    dh_btop[L - 1] = drb.transpose(1, 0, 2)[::-1].reshape(N, H)

    runs = cache["runs"]
    if two_layer:
        dh_ftop = np.zeros((L, N, H))
        dh_ftop[rows, cols] = drf.transpose(1, 0, 2)
        l2 = params.layers[1]
        X_f2, h_f2, g_f2, c_f2, cs = runs["f2"]
        X_b2, h_b2, g_b2, c_b2, cg = runs["b2"]
        dX_f2, dW, dU, db = kernels.lstm_seq_backward(
            X_f2, l2.fwd.W, l2.fwd.U, cs, h_f2, g_f2, c_f2, dh_ftop
        )
        grads.layers[1].fwd.W[...] = dW
        grads.layers[1].fwd.U[...] = dU
        grads.layers[1].fwd.b[...] = db
        dX_b2, dW, dU, db = kernels.lstm_seq_backward(
            X_b2, l2.bwd.W, l2.bwd.U, cg, h_b2, g_b2, c_b2, dh_btop
        )
        grads.layers[1].bwd.W[...] = dW
        grads.layers[1].bwd.U[...] = dU
        grads.layers[1].bwd.b[...] = db
        # Layer-2 input grads fold back into the layer-1 streams.  The
        # forward stream is shared across prefix blocks, so block sums
        # collapse the chain axis; the backward stream maps one-to-one.
        dh_f1 = dX_f2[:, :, :H].reshape(L, L, B, H).sum(axis=1)
        dh_f1 += dX_b2[::-1, :, :H].reshape(L, L, B, H).sum(axis=1)
        dh_b1 = dX_b2[:, :, H:].copy()
        dh_b1 += dX_f2[::-1, :, H:]
    else:
        # Single layer: the forward readout comes straight off the
        # per-window run, so its gradient maps back without scattering.
        dh_f1 = np.ascontiguousarray(drf.transpose(1, 0, 2))
        dh_b1 = dh_btop

    l1 = params.layers[0]
    X_b1, h_b1, g_b1, c_b1, cg = runs["b1"]
    _, dW, dU, db = kernels.lstm_seq_backward(
        X_b1, l1.bwd.W, l1.bwd.U, cg, h_b1, g_b1, c_b1, dh_b1
    )
    grads.layers[0].bwd.W[...] = dW
    grads.layers[0].bwd.U[...] = dU
    grads.layers[0].bwd.b[...] = db
    X_f1, h_f1, g_f1, c_f1, cf = runs["f1"]
    _, dW, dU, db = kernels.lstm_seq_backward(
        X_f1, l1.fwd.W, l1.fwd.U, cf, h_f1, g_f1, c_f1, dh_f1
    )
    grads.layers[0].fwd.W[...] = dW
    grads.layers[0].fwd.U[...] = dU
    grads.layers[0].fwd.b[...] = db
    return grads


def forward_full(params: NetworkParams, values: np.ndarray) -> np.ndarray:
    """One prediction per window from the full window (rollout step).

    Equivalent to forward_prefix(...)[0][:, -1] but runs one chain per
    window in every direction, which is what makes rollouts affordable.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    B, L = values.shape
    if not 1 <= L <= params.config.window:
        raise ValueError(
            f"window length {L} outside [1, {params.config.window}]"
        )
    H = params.config.hidden
    cf = _flat_counts(L, B)
    X_f = np.ascontiguousarray(values.T)[:, :, None]
    X_b = np.ascontiguousarray(values[:, ::-1].T)[:, :, None]
    l1 = params.layers[0]
    h_f = kernels.lstm_seq_forward_h(X_f, l1.fwd.W, l1.fwd.U, l1.fwd.b, cf)
    h_b = kernels.lstm_seq_forward_h(X_b, l1.bwd.W, l1.bwd.U, l1.bwd.b, cf)
    if params.config.n_layers == 2:
        l2 = params.layers[1]
        X_f2 = np.concatenate([h_f, h_b[::-1]], axis=2)
        X_b2 = np.concatenate([h_f[::-1], h_b], axis=2)
        h_f = kernels.lstm_seq_forward_h(X_f2, l2.fwd.W, l2.fwd.U, l2.fwd.b, cf)
        h_b = kernels.lstm_seq_forward_h(X_b2, l2.bwd.W, l2.bwd.U, l2.bwd.b, cf)
    readout = np.concatenate([h_f[L - 1], h_b[L - 1]], axis=1)
    act = np.maximum(readout @ params.mlp_w + params.mlp_b, 0.0)
    return act @ params.head_w


def rollout(params: NetworkParams, windows: np.ndarray, steps: int) -> np.ndarray:
    """Autoregressive multi-step forecast.

    Args:
        windows: (B, k) fully populated standardized windows.
        steps: number of future samples to emit.

    Returns:
        (B, steps); column j-1 is the forecast j steps past the window.
    """
    windows = np.ascontiguousarray(windows, dtype=np.float64)
    if not np.all(np.isfinite(windows)):
        raise ValueError("rollout windows must be finite (interpolate gaps first)")
    B, _ = windows.shape
    out = np.empty((B, steps))
    current = windows.copy()
    for s in range(steps):
        pred = forward_full(params, current)
        out[:, s] = pred
        current = np.concatenate([current[:, 1:], pred[:, None]], axis=1)
    return out


def loss_rmse(
    preds: np.ndarray, targets: np.ndarray, mask: np.ndarray
) -> tuple[float, int]:
    """Masked RMSE and the count of positions it averaged over."""
    m = mask.astype(bool)
    n = int(m.sum())
    if n == 0:
        raise ValueError("loss_rmse needs at least one unmasked target")
    diff = np.where(m, preds - targets, 0.0)
    return float(np.sqrt(np.sum(diff * diff) / n)), n


# ---------------------------------------------------------------------------
# Serialization: JSON header + float64 blob
# ---------------------------------------------------------------------------


def save_params(params: NetworkParams, path: str) -> None:
    """Write params as a JSON header plus a raw little-endian float64 blob."""
    names = list(params.tensor_names())
    tensors = list(params.tensors())
    header = {
        "format_version": _FORMAT_VERSION,
        "config": {
            "n_layers": params.config.n_layers,
            "hidden": params.config.hidden,
            "mlp_hidden": params.config.mlp_hidden,
            "window": params.config.window,
            "dropout": params.config.dropout,
        },
        "dtype": "<f8",
        "tensors": [
            {"name": n, "shape": list(t.shape)} for n, t in zip(names, tensors)
        ],
    }
    blob = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in tensors)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(blob)


def load_params(path: str) -> NetworkParams:
    """Read a file written by `save_params`, validating magic and shapes."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format_version")
        config = NetworkConfig(**header["config"])
        params = init_params(0, config)
        for spec, tensor in zip(header["tensors"], params.tensors()):
            want = tuple(spec["shape"])
            if want != tensor.shape:
                raise ValueError(
                    f"{path}: tensor {spec['name']} shape {want} != {tensor.shape}"
                )
            raw = fh.read(tensor.size * 8)
            if len(raw) != tensor.size * 8:
                raise ValueError(f"{path}: truncated blob at {spec['name']}")
            tensor[...] = np.frombuffer(raw, dtype="<f8").reshape(tensor.shape)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after blob")
    return params


def clone_config(config: NetworkConfig, **overrides) -> NetworkConfig:
    """NetworkConfig with some fields replaced (convenience for searches)."""
    return replace(config, **overrides)


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of the central-finite-difference gradient suite."""

    passed: bool
    max_rel_err: float
    worst: str
    n_seeds: int
    tolerance: float

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max relative error {self.max_rel_err:.3e} "
            f"(tolerance {self.tolerance:.0e}, {self.n_seeds} seeds, worst {self.worst})"
        )


def gradient_check(
    n_seeds: int = 20,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    config: NetworkConfig | None = None,
    batch: int = 2,
    tamper=None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs `n_seeds` independent trials on a small network (both layers,
    random 8-step windows, a masked RMSE loss) and perturbs every
    parameter coordinate by ±epsilon.  The per-coordinate relative
    error uses a scale floor of 1e-4 times the largest analytic
    gradient magnitude: below that scale, central differences are
    dominated by cancellation noise (~1e-11 for this loss), so a plain
    elementwise ratio would measure the oracle's noise rather than the
    implementation.  Coordinates at or above the floor are held to the
    ordinary elementwise relative error.

    `tamper(grads)` is a test hook that mutates the analytic gradients
    before comparison, proving the check can fail.
    """
    config = config or NetworkConfig(n_layers=2, hidden=6, mlp_hidden=6, window=8)
    worst_err = 0.0
    worst_name = "none"
    for seed in range(n_seeds):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
        params = init_params(seed, config)
        values = rng.normal(size=(batch, config.window))
        targets = rng.normal(size=(batch, config.window))
        mask = rng.random((batch, config.window)) > 0.2
        if not mask.any():
            mask[0, 0] = True

        preds, cache = forward_prefix(params, values, keep_cache=True)
        rmse, n = loss_rmse(preds, targets, mask)
        err = np.where(mask, preds - targets, 0.0)
        grads = backward_prefix(params, cache, err / (n * rmse))
        if tamper is not None:
            tamper(grads)

        scale = max(max(float(np.max(np.abs(g))) for g in grads.tensors()), 1e-8)
        floor = 1e-4 * scale
        for name, tensor, analytic in zip(
            params.tensor_names(), params.tensors(), grads.tensors()
        ):
            flat = tensor.reshape(-1)
            aflat = analytic.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + epsilon
                up, _ = loss_rmse(forward_prefix(params, values)[0], targets, mask)
                flat[i] = keep - epsilon
                down, _ = loss_rmse(forward_prefix(params, values)[0], targets, mask)
                flat[i] = keep
                fd = (up - down) / (2.0 * epsilon)
                denom = max(abs(fd), abs(aflat[i]), floor)
                rel = abs(fd - aflat[i]) / denom
                if rel > worst_err:
                    worst_err = rel
                    idx = np.unravel_index(i, tensor.shape)
                    worst_name = f"seed {seed} {name}[{','.join(map(str, idx))}]"
    return GradCheckReport(
        passed=worst_err < tolerance,
        max_rel_err=worst_err,
        worst=worst_name,
        n_seeds=n_seeds,
        tolerance=tolerance,
    )
