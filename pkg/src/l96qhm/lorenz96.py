"""Two-timescale Lorenz-96 model.

The slow variables ``X`` have shape ``(K,)`` and the fast variables ``Y``
have shape ``(J, K)``: column ``k`` holds the ``J`` fast variables coupled to
``X[k]``.  Each column is its own periodic ring and the slow variables form a
periodic ring of length ``K``.

All integration routines are vectorised over a leading batch axis so that
many parameter points can be simulated together.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

PARAM_NAMES = ("F", "h", "c", "b")
#: lower/upper bounds of the admissible parameter box, one row per parameter
PARAM_BOUNDS = np.array([[-20.0, 20.0], [-2.0, 2.0], [0.0, 20.0], [-20.0, 20.0]])
B_EPS = 1e-6
BLOWUP_CAP = 1e6


class SingularParameterError(ValueError):
    """Raised for parameter points with ``|b| < B_EPS``."""


class DivergedError(RuntimeError):
    def __init__(self, time: float, cause: str = "state exceeded blow-up cap"):
        super().__init__(f"simulation diverged at t={time:.4f} MTU ({cause})")
        self.time = time
        self.cause = cause


@dataclass(frozen=True)
class ParamPoint:
    F: float
    h: float
    c: float
    b: float

    def as_array(self) -> np.ndarray:
        return np.array([self.F, self.h, self.c, self.b], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ParamPoint":
        a = np.asarray(a, dtype=float).ravel()
        return cls(*(float(v) for v in a[:4]))

    def in_space(self) -> bool:
        a = self.as_array()
        return bool(np.all(a >= PARAM_BOUNDS[:, 0]) and np.all(a <= PARAM_BOUNDS[:, 1]))

    def simulable(self) -> bool:
        return abs(self.b) >= B_EPS


TRUTH = ParamPoint(F=10.0, h=1.0, c=10.0, b=10.0)


@dataclass(frozen=True)
class SimConfig:
    K: int = 36
    J: int = 10
    dt: float = 0.005
    spinup_mtu: float = 10.0
    avg_mtu: float = 100.0

    def __post_init__(self):
        if self.K < 4 or self.J < 1:
            raise ValueError(f"need K >= 4 and J >= 1, got K={self.K}, J={self.J}")
        if not self.dt > 0 or self.spinup_mtu < 0 or not self.avg_mtu > 0:
            raise ValueError("need dt > 0, spinup_mtu >= 0 and avg_mtu > 0")

    @property
    def n_metrics(self) -> int:
        return 5 * self.K


@dataclass
class L96State:
    X: np.ndarray
    Y: np.ndarray

    def diverged(self) -> bool:
        ok = np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))
        return not (ok and np.abs(self.X).max() <= BLOWUP_CAP and np.abs(self.Y).max() <= BLOWUP_CAP)


@dataclass
class Trajectory:
    times: np.ndarray
    X: np.ndarray  # (n_steps + 1, K)
    Y: np.ndarray  # (n_steps + 1, J, K)
    diverged: bool = False
    divergence_time: float | None = None
    params: ParamPoint | None = field(default=None, repr=False)


def _check_params(F, h, c, b):
    b = np.asarray(b, dtype=float)
    if np.any(np.abs(b) < B_EPS):
        raise SingularParameterError(f"|b| < {B_EPS}: coupling hc/b is undefined")


def _rhs(X, Y, F, h, c, b):
    """Batched right-hand side.  X: (B, K), Y: (B, J, K), params: (B,)."""
    F = F[:, None]
    c2 = c[:, None, None]
    hcb = (h * c / b)[:, None]
    dX = (
        -np.roll(X, 1, axis=1) * (np.roll(X, 2, axis=1) - np.roll(X, -1, axis=1))
        - X
        + F
        - hcb * Y.sum(axis=1)
    )
    dY = (
        -(c2 * b[:, None, None]) * np.roll(Y, -1, axis=1) * (np.roll(Y, -2, axis=1) - np.roll(Y, 1, axis=1))
        - c2 * Y
        + hcb[:, None, :] * X[:, None, :]
    )
    return dX, dY


def derivative(state: L96State, p: ParamPoint, cfg: SimConfig | None = None) -> L96State:
    """Time derivative of a single state; returned as an ``L96State`` of rates."""
    _check_params(p.F, p.h, p.c, p.b)
    X = np.asarray(state.X, dtype=float)[None]
    Y = np.asarray(state.Y, dtype=float)[None]
    a = p.as_array()[:, None]
    dX, dY = _rhs(X, Y, *a)
    return L96State(dX[0], dY[0])


def _rk4_step(X, Y, pars, dt):
    k1x, k1y = _rhs(X, Y, *pars)
    k2x, k2y = _rhs(X + 0.5 * dt * k1x, Y + 0.5 * dt * k1y, *pars)
    k3x, k3y = _rhs(X + 0.5 * dt * k2x, Y + 0.5 * dt * k2y, *pars)
    k4x, k4y = _rhs(X + dt * k3x, Y + dt * k3y, *pars)
    return (
        X + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x),
        Y + (dt / 6.0) * (k1y + 2 * k2y + 2 * k3y + k4y),
    )


def _bad_rows(X, Y):
    mx = np.maximum(np.abs(X).max(axis=1), np.abs(Y).max(axis=(1, 2)))
    return ~(mx <= BLOWUP_CAP)  # also catches NaN


def _n_steps(duration, dt):
    n = int(round(duration / dt))
    if not math.isclose(n * dt, duration, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"duration {duration} is not a multiple of dt={dt}")
    return n


def integrate(initial: L96State, p: ParamPoint, cfg: SimConfig, duration_mtu: float) -> Trajectory:
    """Fixed-step RK4 integration returning every intermediate state.

    A diverged run is returned truncated at the last finite state with
    ``diverged=True``.
    """
    if duration_mtu < 0:
        raise ValueError("duration must be non-negative")
    _check_params(p.F, p.h, p.c, p.b)
    n = _n_steps(duration_mtu, cfg.dt)
    pars = p.as_array()[:, None]
    X = np.asarray(initial.X, dtype=float)[None].copy()
    Y = np.asarray(initial.Y, dtype=float)[None].copy()
    xs = np.empty((n + 1, cfg.K))
    ys = np.empty((n + 1, cfg.J, cfg.K))
    xs[0], ys[0] = X[0], Y[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n + 1):
            X, Y = _rk4_step(X, Y, pars, cfg.dt)
            if _bad_rows(X, Y)[0]:
                return Trajectory(
                    np.arange(i) * cfg.dt, xs[:i], ys[:i], True, i * cfg.dt, p
                )
            xs[i], ys[i] = X[0], Y[0]
    return Trajectory(np.arange(n + 1) * cfg.dt, xs, ys, params=p)


def default_initial_state(cfg: SimConfig, F: float) -> L96State:
    """Rest state ``X = F`` with one slow variable nudged by 0.01 and ``Y = 0``.

    The nudged variable is number 19 (1-based) when ``K >= 19`` and number
    ``ceil(K/2)`` otherwise.
    """
    X = np.full(cfg.K, float(F))
    idx = 19 if cfg.K >= 19 else math.ceil(cfg.K / 2)
    X[idx - 1] += 0.01
    return L96State(X, np.zeros((cfg.J, cfg.K)))


def compute_metrics_numpy(points, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised numpy version of ``compute_metrics_batch``.

    Slower than the compiled path; kept as an independent cross-check.

    Returns ``(metrics, ok, divergence_time)`` with ``metrics`` of shape
    ``(n, 5K)``; rows of failed simulations are NaN and ``ok`` is False
    there.  Singular points (``|b| < B_EPS``) are reported as failed with
    divergence time 0 rather than raising.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    n = P.shape[0]
    K, J = cfg.K, cfg.J
    out = np.full((n, 5 * K), np.nan)
    ok = np.abs(P[:, 3]) >= B_EPS
    t_div = np.full(n, np.nan)
    t_div[~ok] = 0.0
    live = np.flatnonzero(ok)
    if live.size == 0:
        return out, ok, t_div

    pars = P[live].T.copy()
    init = np.stack([default_initial_state(cfg, f).X for f in pars[0]])
    X = init
    Y = np.zeros((live.size, J, K))
    n_spin = _n_steps(cfg.spinup_mtu, cfg.dt)
    n_avg = _n_steps(cfg.avg_mtu, cfg.dt)
    acc = np.zeros((live.size, 5, K))
    alive = np.ones(live.size, dtype=bool)

    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_spin + n_avg):
            if step >= n_spin:
                Yb = Y.mean(axis=1)
                acc[:, 0] += X
                acc[:, 1] += Yb
                acc[:, 2] += X * X
                acc[:, 3] += X * Yb
                acc[:, 4] += Yb * Yb
            X, Y = _rk4_step(X, Y, pars, cfg.dt)
            bad = _bad_rows(X, Y) & alive
            if bad.any():
                t_div[live[bad]] = (step + 1) * cfg.dt
                alive &= ~bad
                # park dead rows at zero so they stop producing overflow noise
                X[bad] = 0.0
                Y[bad] = 0.0
                if not alive.any():
                    break

    ok[live[~alive]] = False
    out[live[alive]] = (acc[alive] / n_avg).reshape(-1, 5 * K)
    return out, ok, t_div


@nb.njit(cache=True)
def _rhs_one(X, Y, F, h, c, b, dX, dY):
    K = X.shape[0]
    J = Y.shape[0]
    hcb = h * c / b
    cb = c * b
    for k in range(K):
        s = 0.0
        for j in range(J):
            s += Y[j, k]
        dX[k] = -X[(k - 1) % K] * (X[(k - 2) % K] - X[(k + 1) % K]) - X[k] + F - hcb * s
        for j in range(J):
            dY[j, k] = (
                -cb * Y[(j + 1) % J, k] * (Y[(j + 2) % J, k] - Y[(j - 1) % J, k])
                - c * Y[j, k]
                + hcb * X[k]
            )


@nb.njit(cache=True)
def _metrics_one(X0, F, h, c, b, J, dt, n_spin, n_avg, cap):
    K = X0.shape[0]
    X = X0.copy()
    Y = np.zeros((J, K))
    k1x = np.empty(K)
    k2x = np.empty(K)
    k3x = np.empty(K)
    k4x = np.empty(K)
    k1y = np.empty((J, K))
    k2y = np.empty((J, K))
    k3y = np.empty((J, K))
    k4y = np.empty((J, K))
    tx = np.empty(K)
    ty = np.empty((J, K))
    acc = np.zeros((5, K))
    for step in range(n_spin + n_avg):
        if step >= n_spin:
            for k in range(K):
                yb = 0.0
                for j in range(J):
                    yb += Y[j, k]
                yb /= J
                acc[0, k] += X[k]
                acc[1, k] += yb
                acc[2, k] += X[k] * X[k]
                acc[3, k] += X[k] * yb
                acc[4, k] += yb * yb
        _rhs_one(X, Y, F, h, c, b, k1x, k1y)
        for k in range(K):
            tx[k] = X[k] + 0.5 * dt * k1x[k]
            for j in range(J):
                ty[j, k] = Y[j, k] + 0.5 * dt * k1y[j, k]
        _rhs_one(tx, ty, F, h, c, b, k2x, k2y)
        for k in range(K):
            tx[k] = X[k] + 0.5 * dt * k2x[k]
            for j in range(J):
                ty[j, k] = Y[j, k] + 0.5 * dt * k2y[j, k]
        _rhs_one(tx, ty, F, h, c, b, k3x, k3y)
        for k in range(K):
            tx[k] = X[k] + dt * k3x[k]
            for j in range(J):
                ty[j, k] = Y[j, k] + dt * k3y[j, k]
        _rhs_one(tx, ty, F, h, c, b, k4x, k4y)
        mx = 0.0
        for k in range(K):
            X[k] += dt / 6.0 * (k1x[k] + 2 * k2x[k] + 2 * k3x[k] + k4x[k])
            v = abs(X[k])
            if not v <= mx:
                mx = v
            for j in range(J):
                Y[j, k] += dt / 6.0 * (k1y[j, k] + 2 * k2y[j, k] + 2 * k3y[j, k] + k4y[j, k])
                v = abs(Y[j, k])
                if not v <= mx:
                    mx = v
        if not mx <= cap:
            return acc, (step + 1) * dt
    for i in range(5):
        for k in range(K):
            acc[i, k] /= n_avg
    return acc, -1.0


def compute_metrics_batch(points, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate many parameter points.

    Returns ``(metrics, ok, divergence_time)`` with ``metrics`` of shape
    ``(n, 5K)``; rows of failed simulations are NaN and ``ok`` is False
    there.  Singular points (``|b| < B_EPS``) are reported as failed with
    divergence time 0 rather than raising.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    n = P.shape[0]
    out = np.full((n, 5 * cfg.K), np.nan)
    ok = np.abs(P[:, 3]) >= B_EPS
    t_div = np.full(n, np.nan)
    t_div[~ok] = 0.0
    n_spin = _n_steps(cfg.spinup_mtu, cfg.dt)
    n_avg = _n_steps(cfg.avg_mtu, cfg.dt)
    for i in np.flatnonzero(ok):
        F, h, c, b = P[i]
        x0 = default_initial_state(cfg, F).X
        acc, td = _metrics_one(x0, F, h, c, b, cfg.J, cfg.dt, n_spin, n_avg, BLOWUP_CAP)
        if td < 0:
            out[i] = acc.ravel()
        else:
            ok[i] = False
            t_div[i] = td
    return out, ok, t_div


def compute_metrics(p: ParamPoint, cfg: SimConfig) -> np.ndarray:
    """Time-averaged first and second moments after spin-up, length ``5K``.

    Order: <X_k>, <Ybar_k>, <X_k^2>, <X_k Ybar_k>, <Ybar_k^2>, each over k.
    Raises ``SingularParameterError`` or ``DivergedError``.
    """
    _check_params(p.F, p.h, p.c, p.b)
    m, ok, t = compute_metrics_batch(p.as_array()[None], cfg)
    if not ok[0]:
        raise DivergedError(float(t[0]))
    return m[0]
