"""ARIMA(p,d,q) fitting, order selection, and multi-step forecasting.

The model on the d-times differenced series w is

    w_t = c + phi_1 w_{t-1} + ... + phi_p w_{t-p}
            + eps_t + theta_1 eps_{t-1} + ... + theta_q eps_{t-q}

Parameters are estimated by minimizing the conditional sum of squares
(pre-sample residuals fixed at zero) with a damped Newton iteration:
analytic gradient, Hessian by central finite differences of that
gradient, gradient-descent fallback when the Hessian is not positive
definite.  Orders are ranked by AIC = n ln(sigma^2) + 2(p + q + 1) and
searched stepwise from (p, q) = (1, 1); the differencing order d comes
from repeated KPSS level-stationarity tests.  Forecasts iterate the
recursion with future residuals at zero and integrate back to levels
anchored on the tail of the observed history.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels

# 5% critical value of the KPSS level-stationarity statistic.
KPSS_CRIT_5PCT = 0.463

_NEWTON_MAX_ITER = 200
_NEWTON_MAX_HALVINGS = 30
_NEWTON_GRAD_TOL = 1e-8
_SIGMA2_FLOOR = 1e-12


class ArimaError(Exception):
    """Raised when fitting or searching cannot proceed."""


@dataclass(frozen=True)
class ArimaOrder:
    """Model order (p autoregressive, d differences, q moving-average).

    p and q are capped at 24 lags (2 hours of 5-minute samples) and d at
    4.  The all-zero order is allowed: it is the intercept-only model the
    search falls back to on white noise.
    """

    p: int
    d: int
    q: int

    def __post_init__(self) -> None:
        if min(self.p, self.d, self.q) < 0:
            raise ValueError("order components must be non-negative")
        if self.p > 24 or self.q > 24:
            raise ValueError("p and q are capped at 24 (2 hours of lags)")
        if self.d > 4:
            raise ValueError("d is capped at 4")


@dataclass
class ArimaModel:
    order: ArimaOrder
    c: float
    phi: np.ndarray
    theta: np.ndarray
    sigma2: float
    aic: float
    n_fit: int


@dataclass
class FitDiagnostics:
    converged: bool
    iterations: int
    grad_norm: float
    css: float
    roots_ok: bool


def difference(series: np.ndarray, d: int) -> np.ndarray:
    """Apply first differencing d times; output shrinks by d."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if len(series) <= d:
        raise ValueError(f"series of length {len(series)} cannot be differenced {d} times")
    if d == 0:
        return series.copy()
    return np.diff(series, n=d)


def integrate(diffs: np.ndarray, pivots: Sequence[float], d: int | None = None) -> np.ndarray:
    """Invert `difference`: rebuild levels from diffs and the d original head values.

    integrate(difference(x, d), x[:d]) reconstructs x (up to rounding).
    """
    diffs = np.asarray(diffs, dtype=np.float64)
    pivots = np.asarray(pivots, dtype=np.float64)
    if d is not None and len(pivots) != d:
        raise ValueError(f"expected {d} pivots, got {len(pivots)}")
    d = len(pivots)
    if d == 0:
        return diffs.copy()
    # Head value of the i-times differenced series is derivable from the
    # first i+1 original values, i.e. from the pivots alone.
    out = diffs
    for i in range(d - 1, -1, -1):
        head = pivots[: i + 1] if i == 0 else np.diff(pivots, n=i)
        out = np.concatenate(([head[0]], out)).cumsum()
    return out


def kpss_statistic(series: np.ndarray) -> float:
    """KPSS level-stationarity statistic with short-lag variance correction.

    Long-run variance uses Bartlett weights over trunc(4 (n/100)^(1/4))
    lags.  Values above KPSS_CRIT_5PCT reject level stationarity at 5%.
    """
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    if n < 10:
        raise ValueError("KPSS needs at least 10 observations")
    resids = x - x.mean()
    partial = np.cumsum(resids)
    eta = float(partial @ partial) / (n * n)
    lags = int(4.0 * (n / 100.0) ** 0.25)
    s2 = float(resids @ resids) / n
    for i in range(1, lags + 1):
        gamma = float(resids[i:] @ resids[:-i]) / n
        s2 += 2.0 * (1.0 - i / (lags + 1.0)) * gamma
    if s2 <= 0.0:
        raise ArimaError("KPSS long-run variance is not positive (constant series?)")
    return eta / s2


def select_d(series: np.ndarray, max_d: int = 4) -> int:
    """Smallest d in [0, max_d] whose d-th difference passes KPSS at 5%.

    Returns max_d when every level rejects.
    """
    series = np.asarray(series, dtype=np.float64)
    if len(series) < 50:
        raise ValueError("select_d needs at least 50 observations")
    for d in range(max_d + 1):
        w = difference(series, d)
        if kpss_statistic(w) <= KPSS_CRIT_5PCT:
            return d
    return max_d


def _split_params(x: np.ndarray, p: int, q: int):
    return float(x[0]), np.ascontiguousarray(x[1 : 1 + p]), np.ascontiguousarray(x[1 + p :])


def css_objective(params: Sequence[float], diffed: np.ndarray, p: int, q: int):
    """Conditional sum of squares and its analytic gradient.

    params is the flat vector [c, phi_1..phi_p, theta_1..theta_q].
    """
    diffed = np.ascontiguousarray(diffed, dtype=np.float64)
    if len(diffed) <= max(p, q):
        raise ValueError("differenced series shorter than max(p, q)")
    x = np.asarray(params, dtype=np.float64)
    c, phi, theta = _split_params(x, p, q)
    loss, grad = kernels.css_loss_grad(diffed, c, phi, theta)
    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise ArimaError("CSS recursion diverged (non-invertible theta region)")
    return loss, grad


def _css_loss_only(x: np.ndarray, diffed: np.ndarray, p: int, q: int) -> float:
    c, phi, theta = _split_params(x, p, q)
    return float(kernels.css_loss(diffed, c, phi, theta))


def _fd_hessian(x: np.ndarray, diffed: np.ndarray, p: int, q: int) -> np.ndarray:
    npar = len(x)
    H = np.empty((npar, npar))
    for j in range(npar):
        h = 1e-6 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        xm = x.copy()
        xm[j] -= h
        _, gp = css_objective(xp, diffed, p, q)
        _, gm = css_objective(xm, diffed, p, q)
        H[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (H + H.T)


def _poly_roots_outside_unit(coefs: np.ndarray, sign: float) -> bool:
    """Check all roots of 1 + sign*(a_1 z + ... + a_k z^k) lie outside |z|=1."""
    if len(coefs) == 0 or not np.any(coefs):
        return True
    poly = np.concatenate(([1.0], sign * coefs))[::-1]  # highest degree first
    roots = np.roots(poly)
    return bool(np.all(np.abs(roots) > 1.0))


def fit_arima(
    series: np.ndarray, order: ArimaOrder, max_iter: int = _NEWTON_MAX_ITER
) -> tuple[ArimaModel, FitDiagnostics]:
    """Fit by damped Newton on the CSS objective.

    Non-convergence within max_iter is not an error: the best iterate is
    returned with converged=False.  Stationarity/invertibility of the
    optimum is not enforced, only flagged in diagnostics.
    """
    p, d, q = order.p, order.d, order.q
    w = difference(np.asarray(series, dtype=np.float64), d)
    m = len(w)
    if m < 10 * (p + q + 1):
        raise ArimaError(
            f"need at least {10 * (p + q + 1)} differenced observations for {order}, got {m}"
        )
    n_fit = m - max(p, q)

    x = np.zeros(1 + p + q)
    x[0] = w[max(p, q) :].mean()
    loss, grad = css_objective(x, w, p, q)
    gnorm = float(np.max(np.abs(grad)))
    iterations = 0
    converged = gnorm <= _NEWTON_GRAD_TOL
    while not converged and iterations < max_iter:
        iterations += 1
        H = _fd_hessian(x, w, p, q)
        step = None
        try:
            np.linalg.cholesky(H)
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            # Hessian not positive definite: damped gradient descent.
            step = -grad / max(1.0, gnorm)
        t = 1.0
        accepted = False
        for _ in range(_NEWTON_MAX_HALVINGS):
            x_try = x + t * step
            loss_try = _css_loss_only(x_try, w, p, q)
            if math.isfinite(loss_try) and loss_try < loss:
                x = x_try
                loss = loss_try
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        loss, grad = css_objective(x, w, p, q)
        gnorm = float(np.max(np.abs(grad)))
        converged = gnorm <= _NEWTON_GRAD_TOL

    c, phi, theta = _split_params(x, p, q)
    sigma2 = max(loss / n_fit, _SIGMA2_FLOOR)
    aic = n_fit * math.log(sigma2) + 2.0 * (p + q + 1)
    roots_ok = _poly_roots_outside_unit(phi, -1.0) and _poly_roots_outside_unit(theta, 1.0)
    model = ArimaModel(
        order=order, c=c, phi=phi, theta=theta, sigma2=sigma2, aic=aic, n_fit=n_fit
    )
    diag = FitDiagnostics(
        converged=converged,
        iterations=iterations,
        grad_norm=gnorm,
        css=loss,
        roots_ok=roots_ok,
    )
    return model, diag


def auto_arima(
    series: np.ndarray, bounds: ArimaOrder = ArimaOrder(p=24, d=4, q=24)
) -> tuple[ArimaModel, FitDiagnostics]:
    """Pick (p, d, q) by stepwise AIC descent.

    d is fixed first by `select_d`.  The (p, q) walk starts at (1, 1),
    evaluates the four +-1 neighbors inside bounds, moves to the best
    strictly lower AIC, and stops at a local minimum.  The lowest-AIC
    model seen anywhere during the walk is returned.
    """
    series = np.asarray(series, dtype=np.float64)
    d = select_d(series, bounds.d)
    evaluated: dict[tuple[int, int], tuple[ArimaModel, FitDiagnostics] | None] = {}
    failures: dict[tuple[int, int], str] = {}

    def try_fit(p: int, q: int):
        key = (p, q)
        if key in evaluated:
            return evaluated[key]
        try:
            result = fit_arima(series, ArimaOrder(p=p, d=d, q=q))
        except (ArimaError, ValueError) as exc:
            failures[key] = str(exc)
            result = None
        evaluated[key] = result
        return result

    current = (min(1, bounds.p), min(1, bounds.q))
    try_fit(*current)
    while True:
        cp, cq = current
        neighbors = [(cp - 1, cq), (cp + 1, cq), (cp, cq - 1), (cp, cq + 1)]
        for np_, nq in neighbors:
            if 0 <= np_ <= bounds.p and 0 <= nq <= bounds.q:
                try_fit(np_, nq)
        fitted = {k: v for k, v in evaluated.items() if v is not None}
        if not fitted:
            lines = [f"  ({p},{d},{q}): {msg}" for (p, q), msg in sorted(failures.items())]
            raise ArimaError("all candidate fits failed:\n" + "\n".join(lines))
        # Global best over everything evaluated so far; ties break toward
        # the lexicographically smallest (p, q), which guarantees the
        # walk terminates.
        best_key = min(sorted(fitted), key=lambda k: fitted[k][0].aic)
        if best_key == current:
            break
        current = best_key
    return fitted[best_key]


def forecast(model: ArimaModel, history: np.ndarray, steps: int = 18) -> np.ndarray:
    """Iterate the recursion `steps` ahead and integrate back to levels.

    Future residuals are zero; each prediction feeds back as input.
    Integration anchors on the tail of the observed history, so an
    ARIMA(0,1,0) with c=0 forecast is bit-identical to repeating the
    last observation.
    """
    history = np.asarray(history, dtype=np.float64)
    p, d, q = model.order.p, model.order.d, model.order.q
    if len(history) < max(p + d, d + 1):
        raise ArimaError(f"history of length {len(history)} too short for {model.order}")
    if not np.all(np.isfinite(history)):
        raise ArimaError("history contains non-finite values; interpolate gaps first")
    w = difference(history, d)
    eps = kernels.css_residuals(w, model.c, model.phi, model.theta)
    wl = w.tolist()
    epsl = eps.tolist()
    m = len(wl)
    for s in range(steps):
        t = m + s
        pred = model.c
        for i in range(p):
            pred += model.phi[i] * wl[t - 1 - i]
        for j in range(q):
            pred += model.theta[j] * epsl[t - 1 - j]
        wl.append(pred)
        epsl.append(0.0)
    future_w = np.asarray(wl[m:])
    # Integrate stage by stage, each anchored on the last observed value
    # of that differencing level.
    out = future_w
    for i in range(d - 1, -1, -1):
        level_i = difference(history, i)
        out = level_i[-1] + np.cumsum(out)
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_SCHEMA_VERSION = 1


def model_to_json(model: ArimaModel, standardizer=None) -> str:
    """Serialize a fitted model (and the standardizer it expects) to JSON."""
    doc = {
        "schema_version": _SCHEMA_VERSION,
        "order": {"p": model.order.p, "d": model.order.d, "q": model.order.q},
        "c": model.c,
        "phi": model.phi.tolist(),
        "theta": model.theta.tolist(),
        "sigma2": model.sigma2,
        "aic": model.aic,
        "n_fit": model.n_fit,
        "standardizer": None
        if standardizer is None
        else {"mean": standardizer.mean, "std": standardizer.std},
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str):
    """Inverse of model_to_json; returns (ArimaModel, standardizer dict or None)."""
    doc = json.loads(text)
    if doc.get("schema_version") != _SCHEMA_VERSION:
        raise ArimaError("unsupported ARIMA model schema version")
    order = ArimaOrder(**doc["order"])
    model = ArimaModel(
        order=order,
        c=float(doc["c"]),
        phi=np.asarray(doc["phi"], dtype=np.float64),
        theta=np.asarray(doc["theta"], dtype=np.float64),
        sigma2=float(doc["sigma2"]),
        aic=float(doc["aic"]),
        n_fit=int(doc["n_fit"]),
    )
    return model, doc.get("standardizer")


def exhaustive_search(
    series: np.ndarray, max_p: int, max_q: int, d: int | None = None
) -> tuple[ArimaModel, FitDiagnostics]:
    """Fit every (p, q) up to the bounds and return the lowest AIC.

    Exists as the oracle the stepwise search is tested against; the
    pipeline itself always uses `auto_arima`.
    """
    series = np.asarray(series, dtype=np.float64)
    if d is None:
        d = select_d(series)
    best = None
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            try:
                model, diag = fit_arima(series, ArimaOrder(p=p, d=d, q=q))
            except (ArimaError, ValueError):
                continue
            if best is None or model.aic < best[0].aic:
                best = (model, diag)
    if best is None:
        raise ArimaError("no candidate order could be fitted")
    return best
