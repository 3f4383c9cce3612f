import numpy as np
import pytest
from hypothesis import given, strategies as st

from l96qhm.clustering import (
    RIDGE,
    fit_gmm,
    fit_kmedoids,
    from_unit,
    gmm_candidates,
    medoid_candidates,
    to_unit,
)
from l96qhm.lorenz96 import PARAM_BOUNDS
from l96qhm.rng import RngStream


def blobs(gen, n=60, centres=((0.25, 0.3, 0.2, 0.7), (0.75, 0.7, 0.8, 0.3)), sd=0.02):
    U = np.vstack([gen.normal(c, sd, (n, 4)) for c in centres])
    return from_unit(U), np.asarray(centres)


def test_unit_roundtrip(gen):
    P = gen.uniform(PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1], (10, 4))
    assert np.allclose(from_unit(to_unit(P)), P)
    assert np.allclose(to_unit(PARAM_BOUNDS.T), [[0] * 4, [1] * 4])


def test_gmm_k1_closed_form(gen):
    P, _ = blobs(gen)
    fit = fit_gmm(P, 1, RngStream(0))
    U = to_unit(P)
    assert np.allclose(fit.means[0], P.mean(0))
    cov = np.cov(U.T, bias=True) + RIDGE * np.eye(4)
    assert np.allclose(fit.covariances[0], cov, atol=1e-10)
    assert fit.weights.tolist() == [1.0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gmm_two_blobs(seed, gen):
    P, centres = blobs(gen)
    fit = fit_gmm(P, 2, RngStream(seed))
    got = to_unit(fit.means)
    order = np.argsort(got[:, 0])
    assert np.abs(got[order] - centres).max() < 0.05
    assert abs(fit.weights.sum() - 1) < 1e-8
    for C in fit.covariances:
        assert np.linalg.eigvalsh(C).min() > 0


def test_gmm_monotone_history(gen):
    P = gen.uniform(PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1], (200, 4))
    for k in (2, 3, 4):
        h = np.array(fit_gmm(P, k, RngStream(k)).history)
        assert np.all(np.diff(h) >= -1e-9 * np.maximum(1, np.abs(h[:-1])))


def test_gmm_nesting(gen):
    P, _ = blobs(gen, n=10)
    one = fit_gmm(P, 1, RngStream(0)).log_likelihood
    best = max(fit_gmm(P, 4, RngStream(s)).log_likelihood for s in range(3))
    assert best >= one


def test_gmm_deterministic(gen):
    P, _ = blobs(gen)
    a, b = fit_gmm(P, 3, RngStream(7)), fit_gmm(P, 3, RngStream(7))
    assert np.array_equal(a.means, b.means) and a.history == b.history


def test_too_few_points():
    with pytest.raises(ValueError):
        fit_gmm(np.zeros((2, 4)), 3, RngStream(0))
    with pytest.raises(ValueError):
        fit_kmedoids(np.zeros((2, 4)), 3, RngStream(0))


def brute_medoid(U):
    D = np.linalg.norm(U[:, None] - U[None], axis=-1)
    return int(np.argmin(D.sum(1)))


@given(st.integers(0, 10_000))
def test_kmedoids_k1_oracle(seed):
    g = np.random.default_rng(seed)
    P = g.uniform(PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1], (int(g.integers(2, 50)), 4))
    fit = fit_kmedoids(P, 1, RngStream(seed))
    U = to_unit(P)
    D = np.linalg.norm(U[:, None] - U[None], axis=-1)
    assert D[fit.medoids[0]].sum() == pytest.approx(D[brute_medoid(U)].sum(), rel=1e-12)


def test_kmedoids_all_points(gen):
    P = gen.uniform(PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1], (6, 4))
    fit = fit_kmedoids(P, 6, RngStream(0))
    assert sorted(fit.medoids.tolist()) == list(range(6))
    assert fit.cost == pytest.approx(0.0)


def test_kmedoids_two_blobs_and_cost(gen):
    P, _ = blobs(gen)
    fit = fit_kmedoids(P, 2, RngStream(1))
    assert sorted(m // 60 for m in fit.medoids) == [0, 1]
    assert len(set(fit.medoids.tolist())) == 2
    assert np.all(np.diff(fit.history) <= 1e-12)
    U = to_unit(P)
    D = np.linalg.norm(U[:, None] - U[None], axis=-1)
    rand = RngStream(1).generator().choice(len(P), 2, replace=False)
    assert fit.cost <= D[:, rand].min(1).sum() + 1e-12


def test_candidates_count(gen):
    P, _ = blobs(gen)
    assert gmm_candidates(P, 4, RngStream(0)).shape == (10, 4)
    assert medoid_candidates(P, 4, RngStream(0)).shape == (10, 4)
    m = medoid_candidates(P, 3, RngStream(0))
    assert all(any(np.array_equal(r, p) for p in P) for r in m)
