"""Multi-output GP regression with one shared kernel.

All ``m`` outputs share the kernel hyperparameters; they are fitted by
maximising the sum of the per-output log marginal likelihoods of the
standardised targets.  Training is gradient-free (multi-start Nelder-Mead).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .quantum_kernels import ANALYTIC, EstimatorConfig, KernelSpec, unit_kernel_matrix
from .rng import RngStream

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
LOG2PI = np.log(2 * np.pi)

LOG_AMP_BOUNDS = (-6.0, 6.0)
LOG_NOISE_BOUNDS = (-12.0, 0.0)
LOG_LENGTHSCALE_BOUNDS = (-4.0, 3.0)
SCALE_BOUNDS = (1e-3, 4.0)
ANGLE_BOUNDS = (0.0, 2 * np.pi)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingSet:
    inputs: np.ndarray  # (n, 4) normalized
    targets: np.ndarray  # (n, m) raw
    target_mean: np.ndarray = field(init=False)
    target_std: np.ndarray = field(init=False)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        t = np.asarray(self.targets, dtype=float)
        self.targets = t.reshape(len(t), -1)
        if self.inputs.shape[0] < 2 or self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("need at least two training points with matching targets")
        self.target_mean = self.targets.mean(axis=0)
        std = self.targets.std(axis=0)
        std[~(std > 1e-12 * np.maximum(1.0, np.abs(self.target_mean)))] = 1.0
        self.target_std = std

    @property
    def standardized(self) -> np.ndarray:
        return (self.targets - self.target_mean) / self.target_std

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


@dataclass
class GpModel:
    spec: KernelSpec
    training: TrainingSet
    chol: np.ndarray
    alpha: np.ndarray
    lml: float
    est: EstimatorConfig = ANALYTIC
    rng: RngStream | None = None
    jitter: float = 0.0


@dataclass
class Prediction:
    mean: np.ndarray  # (q, m), de-standardised
    variance: np.ndarray  # (q,), standardised units
    target_std: np.ndarray | None = None

    def output_variance(self) -> np.ndarray:
        """Per-output variance ``(q, m)`` in target units."""
        std = np.ones(self.mean.shape[1]) if self.target_std is None else np.asarray(self.target_std)
        return self.variance[:, None] * std[None, :] ** 2

    def __len__(self):
        return self.mean.shape[0]


def _cholesky(K: np.ndarray):
    """Lower Cholesky factor with escalating diagonal jitter; None if it fails."""
    try:
        return linalg.cholesky(K, lower=True, check_finite=True), 0.0
    except (linalg.LinAlgError, ValueError):
        pass
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return linalg.cholesky(K + jitter * eye, lower=True, check_finite=True), jitter
        except (linalg.LinAlgError, ValueError):
            jitter *= 10
    return None, np.inf


def _lml_from_gram(K_total: np.ndarray, Y: np.ndarray):
    L, jitter = _cholesky(K_total)
    if L is None:
        return -np.inf, None, None, jitter
    alpha = linalg.cho_solve((L, True), Y)
    n, m = Y.shape
    lml = -0.5 * np.sum(Y * alpha) - m * np.sum(np.log(np.diag(L))) - 0.5 * m * n * LOG2PI
    return float(lml), L, alpha, jitter


def total_gram(spec: KernelSpec, unit_K: np.ndarray) -> np.ndarray:
    K = spec.scale_amp * unit_K
    K[np.diag_indices_from(K)] += spec.noise_var
    return K


def log_marginal_likelihood(spec: KernelSpec, training: TrainingSet, est: EstimatorConfig = ANALYTIC, rng: RngStream | None = None) -> float:
    """Sum over standardised outputs of the Gaussian log evidence; ``-inf`` if not factorisable."""
    K = total_gram(spec, unit_kernel_matrix(spec, training.inputs, None, est, rng))
    return _lml_from_gram(K, training.standardized)[0]


def fit(spec: KernelSpec, training: TrainingSet, est: EstimatorConfig = ANALYTIC, rng: RngStream | None = None) -> GpModel:
    """Condition a GP with fixed hyperparameters on ``training``."""
    K = total_gram(spec, unit_kernel_matrix(spec, training.inputs, None, est, rng))
    lml, L, alpha, jitter = _lml_from_gram(K, training.standardized)
    if L is None:
        raise TrainingError("kernel matrix is not positive definite even with maximal jitter")
    return GpModel(spec, training, L, alpha, lml, est, rng, jitter)


# --- hyperparameter vector <-> KernelSpec ---------------------------------


def _family_bounds(spec: KernelSpec, train_kernel: bool):
    if not train_kernel:
        return []
    if spec.family == "RBF":
        return [LOG_LENGTHSCALE_BOUNDS]
    if spec.family in ("NPQC", "YZCX"):
        return [SCALE_BOUNDS]
    if spec.static_chebyshev:
        return []
    return [ANGLE_BOUNDS] * spec.params.size


def _pack(spec: KernelSpec, train_kernel: bool) -> np.ndarray:
    v = [np.log(spec.scale_amp), np.log(max(spec.noise_var, np.exp(LOG_NOISE_BOUNDS[0])))]
    if train_kernel:
        if spec.family == "RBF":
            v.append(np.log(spec.params[0]))
        elif spec.family in ("NPQC", "YZCX"):
            v.append(spec.params[0])
        elif not spec.static_chebyshev:
            v.extend(np.mod(spec.params, 2 * np.pi))
    return np.asarray(v, dtype=float)


def _unpack(spec: KernelSpec, v: np.ndarray, train_kernel: bool) -> KernelSpec:
    params = None
    if train_kernel:
        if spec.family == "RBF":
            params = [np.exp(v[2])]
        elif spec.family in ("NPQC", "YZCX"):
            params = [v[2]]
        elif not spec.static_chebyshev:
            params = v[2:]
    return spec.with_params(params, scale_amp=np.exp(v[0]), noise_var=np.exp(v[1]))


class _BudgetExhausted(Exception):
    pass


def train(
    spec: KernelSpec,
    training: TrainingSet,
    est: EstimatorConfig = ANALYTIC,
    budget: int = 200,
    rng: RngStream | None = None,
    n_starts: int = 3,
    train_kernel: bool = True,
) -> GpModel:
    """Maximise the log marginal likelihood with multi-start Nelder-Mead.

    ``budget`` caps the total number of objective evaluations over all
    starts.  The first start is the incoming ``spec``; later starts are
    uniform draws inside the bounds.  With ``train_kernel=False`` only the
    amplitude and noise level are optimised.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = rng if rng is not None else RngStream(0)
    kernel_rng = rng.derive("kernel")
    bounds = [LOG_AMP_BOUNDS, LOG_NOISE_BOUNDS] + _family_bounds(spec, train_kernel)
    Y = training.standardized
    x_init = np.clip(_pack(spec, train_kernel), [b[0] for b in bounds], [b[1] for b in bounds])

    # amplitude/noise changes do not need new circuit evaluations
    gram_cache: dict[bytes, np.ndarray] = {}

    def unit_gram(s: KernelSpec) -> np.ndarray:
        key = s.params.tobytes()
        if key not in gram_cache:
            if len(gram_cache) > 64:
                gram_cache.clear()
            gram_cache[key] = unit_kernel_matrix(s, training.inputs, None, est, kernel_rng)
        return gram_cache[key]

    evals = 0
    best = (-np.inf, None)

    def objective(v):
        nonlocal evals, best
        if evals >= budget:
            raise _BudgetExhausted
        evals += 1
        v = np.clip(v, [b[0] for b in bounds], [b[1] for b in bounds])
        s = _unpack(spec, v, train_kernel)
        lml = _lml_from_gram(total_gram(s, unit_gram(s).copy()), Y)[0]
        if best[1] is None or lml > best[0]:
            best = (lml, s)
        return -lml if np.isfinite(lml) else 1e300

    g = rng.derive("starts").generator()
    starts = [x_init] + [
        np.array([g.uniform(lo, hi) for lo, hi in bounds]) for _ in range(max(0, n_starts - 1))
    ]
    try:
        for x0 in starts:
            remaining = budget - evals
            if remaining <= 0:
                break
            optimize.minimize(
                objective,
                x0,
                method="Nelder-Mead",
                bounds=bounds,
                options={"maxfev": remaining, "xatol": 1e-4, "fatol": 1e-6},
            )
    except _BudgetExhausted:
        pass
    lml, s = best
    if s is None or not np.isfinite(lml):
        raise TrainingError("no finite log marginal likelihood found")
    model = fit(s, training, est, kernel_rng)
    log.debug("trained %s: lml=%.4f after %d evaluations", s.family, model.lml, evals)
    return model


def predict(model: GpModel, queries, rng: RngStream | None = None, row_offset: int = 0) -> Prediction:
    """Posterior mean (de-standardised) and shared standardised variance.

    Cross-covariances carry no white noise, but the prior variance at a
    query is ``scale_amp + noise_var``: the fitted measurement noise stays
    part of the predictive uncertainty.
    """
    Q = np.asarray(queries, dtype=float).reshape(-1, model.training.inputs.shape[1])
    m = model.training.targets.shape[1]
    if Q.shape[0] == 0:
        return Prediction(np.empty((0, m)), np.empty(0), model.training.target_std)
    spec = model.spec
    kr = rng if rng is not None else (model.rng.derive("predict") if model.rng is not None else None)
    if model.est.method == "rm" and spec.quantum:
        # reuse the training stream so both sides see the same Haar sets
        kr = model.rng
    Ks = spec.scale_amp * _cross(spec, Q, model, kr, row_offset)
    mean = Ks @ model.alpha * model.training.target_std + model.training.target_mean
    v = linalg.solve_triangular(model.chol, Ks.T, lower=True)
    var = spec.scale_amp + spec.noise_var - np.sum(v * v, axis=0)
    return Prediction(mean, np.maximum(var, 0.0), model.training.target_std)


def _cross(spec, Q, model, rng, row_offset):
    if model.est.method == "it" and model.est.shots is not None and spec.quantum:
        return unit_kernel_matrix(spec, Q, model.training.inputs, model.est, rng, row_offset=row_offset)
    return unit_kernel_matrix(spec, Q, model.training.inputs, model.est, rng)


def predict_batched(model: GpModel, queries, batch_size: int = 2048, rng: RngStream | None = None) -> Prediction:
    Q = np.asarray(queries, dtype=float)
    if Q.shape[0] <= batch_size:
        return predict(model, Q, rng)
    parts = [predict(model, Q[s : s + batch_size], rng, row_offset=s) for s in range(0, Q.shape[0], batch_size)]
    return Prediction(
        np.concatenate([p.mean for p in parts]),
        np.concatenate([p.variance for p in parts]),
        model.training.target_std,
    )


def diagnostics(model: GpModel, inputs, targets) -> dict:
    """R^2 and MSE of predictions, pooled over outputs in standardised units."""
    targets = np.asarray(targets, dtype=float)
    if targets.shape[0] < 2:
        raise ValueError("need at least two hold-out points")
    pred = predict(model, inputs)
    return score(targets, pred.mean, model.training.target_mean, model.training.target_std)


def score(targets, predicted, mean, std) -> dict:
    yt = (np.asarray(targets) - mean) / std
    yp = (np.asarray(predicted) - mean) / std
    resid = np.sum((yt - yp) ** 2)
    tot = np.sum((yt - yt.mean(axis=0)) ** 2)
    return {"r2": float(1.0 - resid / tot) if tot > 0 else 0.0, "mse": float(np.mean((yt - yp) ** 2))}


def loo_diagnostics(model: GpModel) -> dict:
    """Leave-one-out R^2 and MSE from the closed-form GP identities."""
    Kinv = linalg.cho_solve((model.chol, True), np.eye(model.training.n))
    d = np.diag(Kinv)[:, None]
    y = model.training.standardized
    loo = y - model.alpha / d
    return score(y, loo, 0.0, 1.0)
