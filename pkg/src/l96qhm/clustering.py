"""Gaussian mixtures (EM) and k-medoids on points rescaled to the unit cube."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .lorenz96 import PARAM_BOUNDS
from .rng import RngStream

RIDGE = 1e-6


def to_unit(points, bounds=PARAM_BOUNDS) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    return (np.asarray(points, dtype=float) - b[:, 0]) / (b[:, 1] - b[:, 0])


def from_unit(u, bounds=PARAM_BOUNDS) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    return b[:, 0] + np.asarray(u, dtype=float) * (b[:, 1] - b[:, 0])


@dataclass
class GmmFit:
    k: int
    means: np.ndarray  # (k, d) in the caller's coordinates
    covariances: np.ndarray  # (k, d, d) in unit-cube coordinates
    weights: np.ndarray
    log_likelihood: float
    history: list[float] = field(default_factory=list)
    n_iter: int = 0


@dataclass
class MedoidFit:
    k: int
    medoids: np.ndarray  # indices into the input points
    cost: float
    history: list[float] = field(default_factory=list)


def _check(points, k):
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if k < 1:
        raise ValueError("k must be >= 1")
    if P.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got {P.shape[0]}")
    return P


def _plusplus(U: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; returns indices of ``k`` distinct rows."""
    n = U.shape[0]
    idx = [int(gen.integers(n))]
    d2 = np.sum((U - U[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            j = int(gen.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), idx)
            j = int(gen.choice(rest))
        idx.append(j)
        d2 = np.minimum(d2, np.sum((U - U[j]) ** 2, axis=1))
    return np.array(idx)


def _log_gauss(U, means, covs):
    n, d = U.shape
    out = np.empty((n, len(means)))
    for j, (mu, S) in enumerate(zip(means, covs)):
        L = np.linalg.cholesky(S)
        z = np.linalg.solve(L, (U - mu).T)
        out[:, j] = -0.5 * np.sum(z * z, axis=0) - np.log(np.diag(L)).sum() - 0.5 * d * np.log(2 * np.pi)
    return out


def _m_step(U, R, ridge):
    nk = R.sum(axis=0) + 1e-300
    weights = nk / U.shape[0]
    means = (R.T @ U) / nk[:, None]
    d = U.shape[1]
    covs = np.empty((len(nk), d, d))
    for j in range(len(nk)):
        C = U - means[j]
        covs[j] = (R[:, j, None] * C).T @ C / nk[j] + ridge * np.eye(d)
    return weights, means, covs


def fit_gmm(points, k: int, rng: RngStream, max_iter: int = 100, tol: float = 1e-6, bounds=PARAM_BOUNDS, ridge: float = RIDGE) -> GmmFit:
    """EM for a full-covariance Gaussian mixture.

    The fit runs in unit-cube coordinates; ``means`` are mapped back.
    ``bounds=None`` skips the rescaling.  Stops when the relative change
    of the total log-likelihood drops below ``tol``.
    """
    P = _check(points, k)
    U = to_unit(P, bounds) if bounds is not None else P.copy()
    gen = rng.generator()
    n, d = U.shape
    # hard assignment to k-means++ seeds gives the first M step
    seeds = U[_plusplus(U, k, gen)]
    lab = np.argmin(((U[:, None, :] - seeds[None]) ** 2).sum(-1), axis=1)
    R = np.zeros((n, k))
    R[np.arange(n), lab] = 1.0
    weights, means, covs = _m_step(U, R, ridge)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        logp = _log_gauss(U, means, covs) + np.log(np.maximum(weights, 1e-300))
        ll = float(logsumexp(logp, axis=1).sum())
        history.append(ll)
        R = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * abs(history[-2]):
            break
        weights, means, covs = _m_step(U, R, ridge)
    out_means = from_unit(means, bounds) if bounds is not None else means
    return GmmFit(k, out_means, covs, weights / weights.sum(), history[-1], history, it)


def _cost(D, medoids):
    return float(D[:, medoids].min(axis=1).sum())


def fit_kmedoids(points, k: int, rng: RngStream, max_iter: int = 100, bounds=PARAM_BOUNDS) -> MedoidFit:
    """PAM: k-means++ build step, then best-improvement swaps until none helps."""
    P = _check(points, k)
    U = to_unit(P, bounds) if bounds is not None else P
    n = U.shape[0]
    if k == n:
        return MedoidFit(k, np.arange(n), 0.0, [0.0])
    D = np.sqrt(((U[:, None, :] - U[None]) ** 2).sum(-1))
    med = _plusplus(U, k, rng.generator())
    cost = _cost(D, med)
    history = [cost]
    for _ in range(max_iter):
        best = (cost, None, None)
        others = np.setdiff1d(np.arange(n), med)
        for i in range(k):
            rest = np.delete(med, i)
            near_rest = D[:, rest].min(axis=1) if k > 1 else np.full(n, np.inf)
            # cost of swapping medoid i for each candidate h
            c = np.minimum(near_rest[:, None], D[:, others]).sum(axis=0)
            j = int(np.argmin(c))
            if c[j] < best[0] - 1e-12:
                best = (float(c[j]), i, others[j])
        if best[1] is None:
            break
        med = med.copy()
        med[best[1]] = best[2]
        cost = best[0]
        history.append(cost)
    return MedoidFit(k, np.sort(med), cost, history)


def gmm_candidates(points, k_max: int, rng: RngStream, **kw) -> np.ndarray:
    """All component means for k = 1..k_max, stacked: k_max(k_max+1)/2 rows."""
    out = [fit_gmm(points, k, rng.derive(k), **kw).means for k in range(1, k_max + 1) if k <= len(points)]
    return np.concatenate(out) if out else np.empty((0, np.shape(points)[1]))


def medoid_candidates(points, k_max: int, rng: RngStream, **kw) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    out = [P[fit_kmedoids(P, k, rng.derive(k), **kw).medoids] for k in range(1, k_max + 1) if k <= len(P)]
    return np.concatenate(out) if out else np.empty((0, P.shape[1]))
