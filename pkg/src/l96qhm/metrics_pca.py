"""PCA reduction of trajectory metrics and the ground-truth observation pack."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lorenz96 import B_EPS, PARAM_BOUNDS, ParamPoint, SimConfig, compute_metrics_batch
from .rng import RngStream


class ZeroVarianceError(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (m, d), orthonormal rows
    explained_variance: np.ndarray
    coverage: float
    scale: np.ndarray  # per-feature divisor applied after centring (ones if unscaled)
    explained_variance_ratio: np.ndarray | None = None

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "explained_variance_ratio": None
            if self.explained_variance_ratio is None
            else self.explained_variance_ratio.tolist(),
            "coverage": self.coverage,
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        evr = d.get("explained_variance_ratio")
        return cls(
            np.asarray(d["mean"], dtype=float),
            np.asarray(d["components"], dtype=float).reshape(-1, len(d["mean"])),
            np.asarray(d["explained_variance"], dtype=float),
            float(d["coverage"]),
            np.asarray(d["scale"], dtype=float),
            None if evr is None else np.asarray(evr, dtype=float),
        )


def fit_pca(samples, coverage: float = 0.99, standardize: bool = True) -> PcaModel:
    """Centred PCA keeping the fewest components reaching ``coverage``.

    With ``standardize`` each metric is divided by its sample standard
    deviation before the decomposition, so metrics of very different
    magnitude (first vs second moments) weigh equally.
    """
    S = np.asarray(samples, dtype=float)
    if S.ndim != 2 or S.shape[0] < 2:
        raise ValueError("need at least two samples in a 2-d array")
    if not 0 < coverage <= 1:
        raise ValueError("coverage must lie in (0, 1]")
    mean = S.mean(axis=0)
    C = S - mean
    if standardize:
        scale = C.std(axis=0, ddof=1)
        scale[scale == 0] = 1.0
    else:
        scale = np.ones(S.shape[1])
    C = C / scale
    _, sv, vt = np.linalg.svd(C, full_matrices=False)
    var = sv**2 / (S.shape[0] - 1)
    total = var.sum()
    if not total > 1e-12 * max(1.0, np.abs(S).max() ** 2):
        raise ZeroVarianceError("all samples are identical")
    ratio = var / total
    m = int(np.searchsorted(np.cumsum(ratio), coverage - 1e-12) + 1)
    m = min(m, len(var))
    return PcaModel(mean, vt[:m].copy(), var[:m].copy(), float(coverage), scale, ratio[:m].copy())


def project(pca: PcaModel, v) -> np.ndarray:
    """Reduced coordinates; accepts one vector or a ``(n, d)`` stack."""
    v = np.asarray(v, dtype=float)
    return ((v - pca.mean) / pca.scale) @ pca.components.T


def reconstruct(pca: PcaModel, z) -> np.ndarray:
    return pca.mean + (np.asarray(z, dtype=float) @ pca.components) * pca.scale


@dataclass
class ObservationPack:
    pca: PcaModel
    z_obs: np.ndarray
    uncertainty: np.ndarray
    V_e: np.ndarray
    V_eta: np.ndarray
    truth: ParamPoint | None = None
    truth_metrics: np.ndarray | None = None
    sim: SimConfig | None = None

    def __post_init__(self):
        self.z_obs = np.asarray(self.z_obs, dtype=float)
        self.uncertainty = np.asarray(self.uncertainty, dtype=float)
        self.V_e = np.broadcast_to(np.asarray(self.V_e, dtype=float), self.z_obs.shape).copy()
        self.V_eta = np.broadcast_to(np.asarray(self.V_eta, dtype=float), self.z_obs.shape).copy()
        m = self.pca.n_components
        if not (self.z_obs.shape == self.uncertainty.shape == (m,)):
            raise ValueError("z_obs and uncertainty must have one entry per component")
        if not np.all(self.uncertainty > 0):
            raise ValueError("uncertainties must be strictly positive")
        if np.any(self.V_e < 0) or np.any(self.V_eta < 0):
            raise ValueError("error variances must be non-negative")

    @property
    def m(self) -> int:
        return self.pca.n_components

    def to_dict(self) -> dict:
        sim = self.sim
        return {
            "m": self.m,
            "pca": self.pca.to_dict(),
            "z_obs": self.z_obs.tolist(),
            "uncertainty": self.uncertainty.tolist(),
            "V_e": self.V_e.tolist(),
            "V_eta": self.V_eta.tolist(),
            "truth": None if self.truth is None else list(self.truth.as_array()),
            "truth_metrics": None if self.truth_metrics is None else self.truth_metrics.tolist(),
            "sim": None
            if sim is None
            else {"K": sim.K, "J": sim.J, "dt": sim.dt, "spinup_mtu": sim.spinup_mtu, "avg_mtu": sim.avg_mtu},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationPack":
        tm = d.get("truth_metrics")
        return cls(
            PcaModel.from_dict(d["pca"]),
            np.asarray(d["z_obs"], dtype=float),
            np.asarray(d["uncertainty"], dtype=float),
            np.asarray(d["V_e"], dtype=float),
            np.asarray(d["V_eta"], dtype=float),
            None if d.get("truth") is None else ParamPoint.from_array(d["truth"]),
            None if tm is None else np.asarray(tm, dtype=float),
            None if d.get("sim") is None else SimConfig(**d["sim"]),
        )


def uniform_points(n: int, gen: np.random.Generator) -> np.ndarray:
    return gen.uniform(PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1], size=(n, 4))


def simulate_calibration(n_calib: int, cfg: SimConfig, rng: RngStream, max_factor: int = 10):
    """Metrics for ``n_calib`` uniform points, redrawing failed or singular ones."""
    gen = rng.generator()
    pts, mets = [], []
    drawn = 0
    while len(pts) < n_calib:
        need = n_calib - len(pts)
        if drawn + need > max_factor * n_calib:
            raise RuntimeError(
                f"could not obtain {n_calib} successful simulations within {max_factor * n_calib} draws"
            )
        P = uniform_points(need, gen)
        drawn += need
        P = P[np.abs(P[:, 3]) >= B_EPS]
        M, ok, _ = compute_metrics_batch(P, cfg)
        pts.extend(P[ok])
        mets.extend(M[ok])
    return np.array(pts), np.array(mets)


def build_observation_pack(
    truth: ParamPoint,
    cfg: SimConfig,
    n_calib: int = 300,
    coverage: float = 0.99,
    uncertainty_frac: float = 0.05,
    rng: RngStream | None = None,
    standardize: bool = True,
    V_e=None,
    V_eta=0.0,
) -> ObservationPack:
    """Simulate the truth and a uniform calibration set, fit the PCA and set uncertainties.

    The uncertainty of each component is ``uncertainty_frac`` times the range
    of the calibration projections.  ``V_e`` defaults to the squared
    uncertainty.
    """
    if n_calib < 50:
        raise ValueError("n_calib must be at least 50")
    rng = rng if rng is not None else RngStream(0)
    truth_m, ok, _ = compute_metrics_batch(truth.as_array()[None], cfg)
    if not ok[0]:
        raise RuntimeError("truth simulation diverged")
    _, calib = simulate_calibration(n_calib, cfg, rng.derive("calibration"))
    pca = fit_pca(calib, coverage, standardize)
    zc = project(pca, calib)
    u = uncertainty_frac * (zc.max(axis=0) - zc.min(axis=0))
    z_obs = project(pca, truth_m[0])
    return ObservationPack(
        pca,
        z_obs,
        u,
        u**2 if V_e is None else V_e,
        V_eta,
        truth=truth,
        truth_metrics=truth_m[0],
        sim=cfg,
    )


def within_uncertainty(pack: ObservationPack, reduced) -> np.ndarray | bool:
    """Closed-box test ``|z - z_obs| <= u`` in every component; vectorised over rows."""
    r = np.asarray(reduced, dtype=float)
    inside = np.all(np.abs(r - pack.z_obs) <= pack.uncertainty, axis=-1)
    return bool(inside) if inside.ndim == 0 else inside
