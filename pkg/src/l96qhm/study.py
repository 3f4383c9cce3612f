"""Random-search study over history-matching hyperparameters.

Each trial is repeated with seeds 42, 43, ... and pruned early when its
running mean distance falls too far behind the best finished trial.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import history_matching as hm
from .metrics_pca import ObservationPack
from .quantum_kernels import ANALYTIC, EstimatorConfig, make_kernel_spec
from .rng import RngStream

log = logging.getLogger(__name__)

QUBIT_CHOICES = (4, 6, 8)
N_SMPLS_CHOICES = (10_000, 50_000, 100_000)
T_CONV_CHOICES = tuple(np.round(np.arange(0.1, 1.0001, 0.05), 2))


@dataclass(frozen=True)
class TrialSpec:
    family: str
    n_qubits: int
    n_layers: int
    n_smpls: int
    chi_single_train: bool
    T_impl_min: float
    lambda_impl: float
    n_impl_max: int
    t_conv: float

    def __post_init__(self):
        if self.n_layers < 1 or self.n_layers > 2 ** (self.n_qubits // 2):
            raise ValueError(f"need 1 <= L <= 2^(N/2), got N={self.n_qubits}, L={self.n_layers}")

    def hm_config(self, base: hm.HmConfig, seed: int) -> hm.HmConfig:
        return replace(
            base,
            n_smpls=self.n_smpls,
            chi_single_train=self.chi_single_train,
            T_impl_min=self.T_impl_min,
            lambda_impl=self.lambda_impl,
            n_impl_max=self.n_impl_max,
            t_conv=self.t_conv,
            seed=seed,
        )


def sample_trial(family: str, rng: RngStream, n_smpls_choices=N_SMPLS_CHOICES) -> TrialSpec:
    """Uniform draw over the search ranges; L is drawn after N."""
    g = rng.generator()
    N = int(g.choice(QUBIT_CHOICES))
    L = int(g.integers(1, 2 ** (N // 2) + 1))
    chi = bool(g.integers(2))
    if family == "Chebyshev":
        chi = True  # trained once per run
    return TrialSpec(
        family=family,
        n_qubits=N,
        n_layers=L,
        n_smpls=int(g.choice(n_smpls_choices)),
        chi_single_train=chi,
        T_impl_min=float(g.uniform(0.1, 1.5)),
        lambda_impl=float(g.uniform(0.0, 0.5)),
        n_impl_max=int(g.integers(2)),
        t_conv=float(g.choice(T_CONV_CHOICES)),
    )


@dataclass(frozen=True)
class Policy:
    n_repeat_min: int = 2
    n_repeat_max: int = 5
    prune_tolerance: float = 0.20
    prune_fail_count: int = 2
    seed0: int = 42


@dataclass
class Repetition:
    seed: int
    d_resc: float | None
    n_waves: int
    failed: bool = False


@dataclass
class TrialResult:
    index: int
    spec: TrialSpec
    repetitions: list[Repetition] = field(default_factory=list)
    pruned: bool = False
    prune_reason: str | None = None

    @property
    def successes(self) -> list[Repetition]:
        return [r for r in self.repetitions if not r.failed]

    @property
    def failed_count(self) -> int:
        return sum(r.failed for r in self.repetitions)

    @property
    def mean_d_resc(self) -> float:
        s = self.successes
        return float(np.mean([r.d_resc for r in s])) if s else float("nan")

    @property
    def mean_n_waves(self) -> float:
        s = self.successes
        return float(np.mean([r.n_waves for r in s])) if s else float("nan")

    def score(self, n_waves_max: int) -> float:
        return 0.5 * (self.mean_d_resc / 2.0 + self.mean_n_waves / n_waves_max)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "spec": asdict(self.spec),
            "repetitions": [asdict(r) for r in self.repetitions],
            "pruned": self.pruned,
            "prune_reason": self.prune_reason,
            "mean_d_resc": self.mean_d_resc,
            "mean_n_waves": self.mean_n_waves,
            "failed_count": self.failed_count,
        }


# (spec, seed) -> finished run; injectable for cheap tests
Runner = Callable[[TrialSpec, int], "hm.RunResult"]


def hm_runner(pack: ObservationPack, base: hm.HmConfig, est: EstimatorConfig = ANALYTIC, simulate=None) -> Runner:
    def run_one(spec: TrialSpec, seed: int) -> hm.RunResult:
        cfg = spec.hm_config(base, seed)
        template = make_kernel_spec(
            spec.family, spec.n_qubits, spec.n_layers, rng=RngStream(seed).derive("kernel-init")
        )
        return hm.run(cfg, pack, template, est, RngStream(seed), simulate)

    return run_one


def run_trial(index: int, spec: TrialSpec, runner: Runner, policy: Policy = Policy(), best: float | None = None) -> TrialResult:
    """Repeat one configuration under the pruning policy.

    ``best`` is the lowest mean distance among finished, unpruned trials;
    ``None`` disables distance pruning.  Failed repetitions do not enter
    the means.
    """
    res = TrialResult(index, spec)
    for r in range(policy.n_repeat_max):
        seed = policy.seed0 + r
        out = runner(spec, seed)
        res.repetitions.append(Repetition(seed, out.d_resc, out.n_waves, out.failed))
        if res.failed_count >= policy.prune_fail_count:
            res.pruned, res.prune_reason = True, "failures"
            break
        done = r + 1
        if best is not None and policy.n_repeat_min <= done < policy.n_repeat_max and res.successes:
            if res.mean_d_resc > (1.0 + policy.prune_tolerance) * best:
                res.pruned, res.prune_reason = True, "distance"
                break
    log.info(
        "trial %d: %d repetitions, mean d_resc %.4f, mean waves %.2f, pruned=%s",
        index, len(res.repetitions), res.mean_d_resc, res.mean_n_waves, res.pruned,
    )
    return res


def select_best(results: list[TrialResult], n_waves_max: int = 30, top_k: int = 20) -> tuple[TrialResult, Repetition]:
    """Top ``top_k`` unpruned trials by equal-weight score, then the single best repetition."""
    ok = [t for t in results if not t.pruned and t.successes]
    if not ok:
        raise ValueError("no unpruned trial with a successful repetition")
    ranked = sorted(ok, key=lambda t: (t.score(n_waves_max), t.index))[:top_k]
    cands = [(rep.d_resc, t.index, rep.seed, t, rep) for t in ranked for rep in t.successes]
    _, _, _, t, rep = min(cands, key=lambda c: c[:3])
    return t, rep


@dataclass
class StudyResult:
    family: str
    seed: int
    trials: list[TrialResult]
    best_trial: TrialResult | None
    best_repetition: Repetition | None


def run_study(
    family: str,
    n_trials: int,
    runner: Runner,
    seed: int = 0,
    policy: Policy = Policy(),
    n_waves_max: int = 30,
    top_k: int = 20,
    n_smpls_choices=N_SMPLS_CHOICES,
) -> StudyResult:
    """Sequential random search; trial ``i`` draws from ``derive(seed, i)``."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    root = RngStream(seed).derive("trial")
    trials: list[TrialResult] = []
    best = None
    for i in range(n_trials):
        spec = sample_trial(family, root.derive(i), n_smpls_choices)
        t = run_trial(i, spec, runner, policy, best)
        trials.append(t)
        if not t.pruned and t.successes:
            best = t.mean_d_resc if best is None else min(best, t.mean_d_resc)
    try:
        bt, br = select_best(trials, n_waves_max, top_k)
    except ValueError:
        bt, br = None, None
    return StudyResult(family, seed, trials, bt, br)
