"""Wave-based history matching with GP emulators.

A run starts from a Latin hypercube ensemble (the NROY pool) and repeats
waves: draw design points from the pool by noisy maximin, simulate them,
train an emulator on the reduced metrics, and discard pool points whose
implausibility exceeds the current threshold.  The NROY pool is never
augmented, only pruned.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
from scipy.stats import qmc

from . import gp
from .clustering import gmm_candidates, medoid_candidates, to_unit
from .lorenz96 import B_EPS, PARAM_BOUNDS, ParamPoint, SimConfig, compute_metrics_batch
from .metrics_pca import ObservationPack, project, within_uncertainty
from .quantum_kernels import ANALYTIC, EstimatorConfig, KernelSpec, normalize
from .rng import RngStream

log = logging.getLogger(__name__)

RANGES = PARAM_BOUNDS[:, 1] - PARAM_BOUNDS[:, 0]


class ConfigError(ValueError):
    pass


class HmFailed(RuntimeError):
    """The run could not produce a solution (empty NROY, no feasible candidate)."""


class DesignExhausted(HmFailed):
    pass


@dataclass
class HmConfig:
    n_smpls: int = 10_000
    n_design: int = 40
    T_impl_max: float = 3.0
    T_impl_min: float = 1.0
    lambda_impl: float = 0.0
    n_impl_max: int = 0
    t_conv: float = 0.2
    n_clusters_max: int = 4
    n_waves_max: int = 30
    runtime_cap_seconds: float = 18_000.0
    noise_frac: float = 0.01
    chi_single_train: bool = False
    seed: int = 42
    train_budget: int = 200
    n_starts: int = 3
    predict_batch: int = 2048
    kmedoids_max_points: int = 2000

    def __post_init__(self):
        errs = []
        if self.n_smpls < 1:
            errs.append("n_smpls must be >= 1")
        if self.n_design < 2:
            errs.append("n_design must be >= 2")
        if not 0.0 < self.T_impl_min <= self.T_impl_max:
            errs.append("need 0 < T_impl_min <= T_impl_max")
        if self.lambda_impl < 0:
            errs.append("lambda_impl must be >= 0")
        if self.n_impl_max < 0:
            errs.append("n_impl_max must be >= 0")
        if not 0.0 < self.t_conv <= 1.0:
            errs.append("t_conv must lie in (0, 1]")
        if self.n_clusters_max < 1:
            errs.append("n_clusters_max must be >= 1")
        if self.n_waves_max < 0:
            errs.append("n_waves_max must be >= 0")
        if self.noise_frac < 0:
            errs.append("noise_frac must be >= 0")
        if self.train_budget < 1 or self.n_starts < 1 or self.predict_batch < 1:
            errs.append("train_budget, n_starts and predict_batch must be >= 1")
        if errs:
            raise ConfigError("; ".join(errs))

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class HistoryEntry:
    wave: int
    model: gp.GpModel
    threshold: float


@dataclass
class NroyState:
    points: np.ndarray  # (n, 4) raw parameters
    indices: np.ndarray  # rows of the initial ensemble still alive
    n_initial: int
    wave: int = 0
    history: list[HistoryEntry] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def fraction(self) -> float:
        return self.size / self.n_initial


@dataclass
class WaveRecord:
    wave: int
    nroy_fraction: float
    n_nroy: int
    design: np.ndarray
    metrics: np.ndarray
    targets: np.ndarray
    in_uncertainty_ratio: float
    converged: bool
    threshold: float | None = None
    hyperparameters: dict | None = None
    lml: float | None = None
    r2: float | None = None
    mse: float | None = None
    n_rejected: int = 0
    n_diverged: int = 0
    seconds: float = 0.0

    def to_dict(self, include_metrics: bool = True) -> dict:
        d = {
            "wave": self.wave,
            "nroy_fraction": self.nroy_fraction,
            "n_nroy": self.n_nroy,
            "in_uncertainty_ratio": self.in_uncertainty_ratio,
            "converged": self.converged,
            "threshold": self.threshold,
            "hyperparameters": self.hyperparameters,
            "lml": self.lml,
            "r2": self.r2,
            "mse": self.mse,
            "n_rejected": self.n_rejected,
            "n_diverged": self.n_diverged,
            "seconds": self.seconds,
            "design": self.design.tolist(),
            "targets": self.targets.tolist(),
        }
        if include_metrics:
            d["metrics"] = self.metrics.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WaveRecord":
        kw = dict(d)
        kw["design"] = np.asarray(d["design"], dtype=float).reshape(-1, 4)
        kw["targets"] = np.asarray(d["targets"], dtype=float).reshape(len(kw["design"]), -1)
        kw["metrics"] = np.asarray(d.get("metrics", []), dtype=float).reshape(len(kw["design"]), -1)
        return cls(**kw)


@dataclass
class RunResult:
    solution: ParamPoint | None
    d_resc: float | None
    n_waves: int
    converged: bool
    waves: list[WaveRecord]
    config: HmConfig
    seed: int
    wall_time: float
    stop_reason: str
    failure: str | None = None
    kernel: dict | None = None
    estimator: dict | None = None
    selection: dict = field(default_factory=dict)
    final_state: NroyState | None = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return self.solution is None


# --- elementary operations --------------------------------------------------


def lhs_sample(n: int, rng: RngStream, bounds=PARAM_BOUNDS) -> np.ndarray:
    """Latin hypercube sample: one point per stratum and dimension."""
    if n < 1:
        raise ValueError("n must be >= 1")
    b = np.asarray(bounds, dtype=float)
    u = qmc.LatinHypercube(d=b.shape[0], rng=rng.generator()).random(n)
    return qmc.scale(u, b[:, 0], b[:, 1])


def implausibility(pred: gp.Prediction, pack: ObservationPack) -> np.ndarray:
    """Componentwise implausibility ``(q, m)`` of emulator predictions."""
    var = pred.output_variance() + pack.V_e + pack.V_eta
    with np.errstate(divide="ignore", invalid="ignore"):
        I = np.abs(pack.z_obs - pred.mean) / np.sqrt(var)
    # infinite observational variance means nothing is implausible
    return np.where(np.isinf(var), 0.0, I)


def feasible(I, T: float, n_impl_max: int):
    """At most ``n_impl_max`` components above ``T``; vectorised over rows."""
    ok = np.sum(np.asarray(I) > T, axis=-1) <= n_impl_max
    return bool(ok) if np.ndim(ok) == 0 else ok


def wave_threshold(w: int, cfg: HmConfig) -> float:
    if w < 1:
        raise ValueError("waves are counted from 1")
    return max(cfg.T_impl_max - (w - 1) * cfg.lambda_impl, cfg.T_impl_min)


def rescaled_distance(sol: ParamPoint, truth: ParamPoint) -> float:
    d = (truth.as_array() - sol.as_array()) / RANGES
    return float(np.sqrt(np.sum(d * d)))


def predict_implausibility(model: gp.GpModel, points, pack: ObservationPack, batch: int = 2048) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        return np.empty((0, pack.m))
    pred = gp.predict_batched(model, normalize(pts), batch)
    return implausibility(pred, pack)


def feasible_all(points, history: list[HistoryEntry], pack: ObservationPack, cfg: HmConfig) -> np.ndarray:
    """Feasibility against every model in ``history`` at its own threshold."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ok = np.ones(pts.shape[0], dtype=bool)
    for h in history:
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            break
        I = predict_implausibility(h.model, pts[idx], pack, cfg.predict_batch)
        ok[idx] = feasible(I, h.threshold, cfg.n_impl_max)
    return ok


# --- design sampling -----------------------------------------------------


class DesignSampler:
    """Noisy maximin selection from the NROY pool.

    Candidates are picked greedily (first uniformly, then the pool point
    farthest from everything picked so far in unit-cube distance), jittered
    by uniform noise and clamped to the parameter space.  A candidate is
    accepted only if it is feasible against every historical model and has
    ``|b| >= B_EPS``.  Once the pool is used up the selection restarts.
    """

    def __init__(self, state: NroyState, cfg: HmConfig, pack: ObservationPack, rng: RngStream):
        if state.size == 0:
            raise HmFailed("NROY space is empty")
        self.state, self.cfg, self.pack = state, cfg, pack
        self.gen = rng.generator()
        self.unit = to_unit(state.points)
        self.accepted: list[np.ndarray] = []
        self.rejected = 0
        self.consecutive = 0
        self._reset()

    def _reset(self):
        n = self.state.size
        self.used = np.zeros(n, dtype=bool)
        self.mind = np.full(n, np.inf)
        self.first = True

    def _pick(self) -> int:
        if self.used.all():
            self._reset()
        if self.first:
            i = int(self.gen.choice(np.flatnonzero(~self.used)))
            self.first = False
        else:
            d = np.where(self.used, -np.inf, self.mind)
            i = int(np.argmax(d))
        self.used[i] = True
        self.mind = np.minimum(self.mind, np.sqrt(np.sum((self.unit - self.unit[i]) ** 2, axis=1)))
        return i

    def _candidates(self, k: int) -> np.ndarray:
        idx = [self._pick() for _ in range(k)]
        c = self.state.points[idx].copy()
        if self.cfg.noise_frac > 0:
            c += self.gen.uniform(-1, 1, c.shape) * self.cfg.noise_frac * RANGES
        return np.clip(c, PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1])

    def draw(self, n: int) -> np.ndarray:
        """Return ``n`` newly accepted design points."""
        limit = 50 * self.cfg.n_design
        out: list[np.ndarray] = []
        while len(out) < n:
            c = self._candidates(n - len(out))
            ok = np.abs(c[:, 3]) >= B_EPS
            ok[ok] = feasible_all(c[ok], self.state.history, self.pack, self.cfg)
            for p, good in zip(c, ok):
                if good and any(np.array_equal(p, a) for a in self.accepted + out):
                    good = False
                if good:
                    out.append(p)
                    self.consecutive = 0
                    if len(out) == n:
                        break
                else:
                    self.rejected += 1
                    self.consecutive += 1
                    if self.consecutive >= limit:
                        raise DesignExhausted(
                            f"design sampling exhausted after {self.consecutive} consecutive rejections"
                        )
        self.accepted.extend(out)
        return np.array(out)


def draw_design_points(state: NroyState, cfg: HmConfig, pack: ObservationPack, rng: RngStream) -> np.ndarray:
    return DesignSampler(state, cfg, pack, rng).draw(cfg.n_design)


# --- waves ------------------------------------------------------------------

Simulator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def l96_simulator(cfg: SimConfig) -> Simulator:
    def simulate(points):
        M, ok, _ = compute_metrics_batch(points, cfg)
        return M, ok

    return simulate


def _simulate_design(sampler: DesignSampler, simulate: Simulator, n: int):
    pts, mets, failed = [], [], 0
    need = n
    while need > 0:
        P = sampler.draw(need)
        M, ok = simulate(P)
        failed += int((~ok).sum())
        pts.extend(P[ok])
        mets.extend(M[ok])
        need = n - len(pts)
        if failed > 50 * n:
            raise DesignExhausted("too many diverged design simulations")
    return np.array(pts), np.array(mets), failed


def _train_wave_model(design, targets, template, est, cfg, state, rng) -> gp.GpModel:
    ts = gp.TrainingSet(normalize(design), targets)
    if cfg.chi_single_train and state.history:
        # kernel parameters frozen after the first fit; amplitude and noise refit
        spec = state.history[0].model.spec
        return gp.train(spec, ts, est, cfg.train_budget, rng, cfg.n_starts, train_kernel=False)
    return gp.train(template, ts, est, cfg.train_budget, rng, cfg.n_starts)


def run_wave(
    state: NroyState,
    cfg: HmConfig,
    pack: ObservationPack,
    template: KernelSpec,
    est: EstimatorConfig = ANALYTIC,
    rng: RngStream | None = None,
    simulate: Simulator | None = None,
):
    """One wave; returns ``(new_state, record, converged)``.

    Convergence is judged on the fresh design targets before any fitting.
    Raises :class:`HmFailed` if pruning empties the NROY space.
    """
    t0 = time.perf_counter()
    rng = rng if rng is not None else RngStream(cfg.seed).derive("wave").derive(state.wave + 1)
    simulate = simulate if simulate is not None else l96_simulator(pack.sim or SimConfig())
    w = state.wave + 1
    sampler = DesignSampler(state, cfg, pack, rng.derive("design"))
    design, metrics, n_div = _simulate_design(sampler, simulate, cfg.n_design)
    targets = project(pack.pca, metrics)
    ratio = float(np.mean(within_uncertainty(pack, targets)))
    rec = WaveRecord(
        wave=w,
        nroy_fraction=state.fraction,
        n_nroy=state.size,
        design=design,
        metrics=metrics,
        targets=targets,
        in_uncertainty_ratio=ratio,
        converged=ratio > cfg.t_conv,
        n_rejected=sampler.rejected,
        n_diverged=n_div,
    )
    if rec.converged:
        rec.seconds = time.perf_counter() - t0
        log.info("wave %d: %.3f of design targets within uncertainty, converged", w, ratio)
        return NroyState(state.points, state.indices, state.n_initial, w, state.history), rec, True

    model = _train_wave_model(design, targets, template, est, cfg, state, rng.derive("gp"))
    T = wave_threshold(w, cfg)
    keep = feasible(predict_implausibility(model, state.points, pack, cfg.predict_batch), T, cfg.n_impl_max)
    new = NroyState(
        state.points[keep],
        state.indices[keep],
        state.n_initial,
        w,
        state.history + [HistoryEntry(w, model, T)],
    )
    diag = gp.loo_diagnostics(model)
    rec.nroy_fraction = new.fraction
    rec.n_nroy = new.size
    rec.threshold = T
    rec.hyperparameters = model.spec.describe()
    rec.lml = model.lml
    rec.r2, rec.mse = diag["r2"], diag["mse"]
    rec.seconds = time.perf_counter() - t0
    log.info(
        "wave %d: T=%.3f, NROY %d -> %d (r=%.4f), in-uncertainty %.3f, lml %.2f",
        w, T, state.size, new.size, new.fraction, ratio, model.lml,
    )
    if new.size == 0:
        raise HmFailed(f"NROY space empty after wave {w}")
    return new, rec, False


# --- solution extraction -----------------------------------------------------


def select_solution(
    state: NroyState,
    cfg: HmConfig,
    pack: ObservationPack,
    rng: RngStream,
    model_entry: HistoryEntry | None = None,
) -> tuple[ParamPoint, dict]:
    """Pick the candidate with the smallest mean implausibility.

    Candidates are the GMM means for every k up to ``n_clusters_max``; if
    none is feasible under the final model, k-medoids centres take over.
    """
    if state.size == 0:
        raise HmFailed("NROY space is empty")
    entry = model_entry if model_entry is not None else (state.history[-1] if state.history else None)
    if entry is None:
        raise HmFailed("no emulator available to assess candidates")
    cands = gmm_candidates(state.points, cfg.n_clusters_max, rng.derive("gmm"))
    source = "gmm"
    I = predict_implausibility(entry.model, cands, pack, cfg.predict_batch)
    ok = feasible(I, entry.threshold, cfg.n_impl_max)
    if not np.any(ok):
        pts = state.points
        if pts.shape[0] > cfg.kmedoids_max_points:
            sub = rng.derive("kmedoids-subsample").generator().choice(
                pts.shape[0], cfg.kmedoids_max_points, replace=False
            )
            pts = pts[np.sort(sub)]
        cands = medoid_candidates(pts, cfg.n_clusters_max, rng.derive("kmedoids"))
        source = "kmedoids"
        I = predict_implausibility(entry.model, cands, pack, cfg.predict_batch)
        ok = feasible(I, entry.threshold, cfg.n_impl_max)
    if not np.any(ok):
        raise HmFailed("no feasible solution candidate")
    score = np.where(ok, I.mean(axis=1), np.inf)
    j = int(np.argmin(score))
    info = {"source": source, "n_candidates": int(len(cands)), "n_feasible": int(ok.sum()), "mean_implausibility": float(score[j])}
    return ParamPoint.from_array(cands[j]), info


def run(
    cfg: HmConfig,
    pack: ObservationPack,
    template: KernelSpec,
    est: EstimatorConfig = ANALYTIC,
    rng: RngStream | None = None,
    simulate: Simulator | None = None,
    truth: ParamPoint | None = None,
) -> RunResult:
    """Full history-matching run from LHS initialisation to a solution.

    Failures to find a solution are reported in the result, not raised.
    """
    if cfg.n_waves_max == 0:
        raise ConfigError("n_waves_max = 0 leaves no emulator to select a solution with")
    t0 = time.perf_counter()
    rng = rng if rng is not None else RngStream(cfg.seed)
    simulate = simulate if simulate is not None else l96_simulator(pack.sim or SimConfig())
    truth = truth if truth is not None else pack.truth
    pts = lhs_sample(cfg.n_smpls, rng.derive("lhs"))
    state = NroyState(pts, np.arange(cfg.n_smpls), cfg.n_smpls)
    records: list[WaveRecord] = []
    converged, failure, stop = False, None, "max_waves"
    final_entry = None
    try:
        for w in range(1, cfg.n_waves_max + 1):
            if time.perf_counter() - t0 > cfg.runtime_cap_seconds:
                stop = "runtime_cap"
                break
            wave_rng = rng.derive("wave").derive(w)
            state, rec, converged = run_wave(state, cfg, pack, template, est, wave_rng, simulate)
            records.append(rec)
            if converged:
                stop = "converged"
                if not state.history:
                    # converged before any pruning: rank candidates with a GP on this wave's design
                    model = _train_wave_model(rec.design, rec.targets, template, est, cfg, state, wave_rng.derive("gp"))
                    final_entry = HistoryEntry(w, model, wave_threshold(w, cfg))
                break
    except HmFailed as e:
        failure, stop = str(e), "failed"
    solution, info = None, {}
    if failure is None:
        try:
            solution, info = select_solution(state, cfg, pack, rng.derive("select"), final_entry)
        except HmFailed as e:
            failure = str(e)
    d = rescaled_distance(solution, truth) if (solution is not None and truth is not None) else None
    res = RunResult(
        solution=solution,
        d_resc=d,
        n_waves=len(records),
        converged=converged,
        waves=records,
        config=cfg,
        seed=cfg.seed,
        wall_time=time.perf_counter() - t0,
        stop_reason=stop,
        failure=failure,
        kernel=template.describe(),
        estimator={"method": est.method, "shots": est.shots, "repetitions": est.repetitions},
        selection=info,
        final_state=state,
    )
    return res
