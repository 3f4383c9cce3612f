"""Configuration parsing and JSON/CSV persistence."""
from __future__ import annotations

import configparser
import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .history_matching import HmConfig, RunResult, WaveRecord
from .lorenz96 import TRUTH, ParamPoint, SimConfig
from .metrics_pca import ObservationPack
from .quantum_kernels import EstimatorConfig, make_kernel_spec
from .rng import RngStream
from .study import Policy, StudyResult

FLOAT_FMT = ".17g"


class ConfigFileError(ValueError):
    pass


@dataclass
class ObservationConfig:
    truth: tuple[float, float, float, float] = tuple(TRUTH.as_array())
    n_calib: int = 300
    coverage: float = 0.99
    uncertainty_frac: float = 0.05
    standardize: bool = True
    V_e: float | None = None
    V_eta: float = 0.0


@dataclass
class KernelConfig:
    family: str = "RBF"
    n_qubits: int = 4
    n_layers: int = 1
    chebyshev_mode: str = "trainable"
    lengthscale: float = 1.0
    scale: float = 1.0
    scale_amp: float = 1.0
    noise_var: float = 1e-6

    def template(self, seed: int):
        return make_kernel_spec(
            self.family,
            self.n_qubits,
            self.n_layers,
            rng=RngStream(seed).derive("kernel-init"),
            chebyshev_mode=self.chebyshev_mode,
            lengthscale=self.lengthscale,
            scale=self.scale,
            scale_amp=self.scale_amp,
            noise_var=self.noise_var,
        )


@dataclass
class EstimatorSection:
    method: str = "analytic"
    shots: int | None = None
    repetitions: int = 1

    def build(self) -> EstimatorConfig:
        return EstimatorConfig(self.method, self.shots, self.repetitions)


@dataclass
class StudyConfig:
    family: str | None = None  # defaults to the kernel family
    n_trials: int = 20
    seed: int = 0
    top_k: int = 20
    n_repeat_min: int = 2
    n_repeat_max: int = 5
    prune_tolerance: float = 0.2
    prune_fail_count: int = 2
    seed0: int = 42
    n_smpls_choices: tuple[int, ...] = (10_000, 50_000, 100_000)

    def policy(self) -> Policy:
        return Policy(self.n_repeat_min, self.n_repeat_max, self.prune_tolerance, self.prune_fail_count, self.seed0)


@dataclass
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    hm: HmConfig = field(default_factory=HmConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    study: StudyConfig = field(default_factory=StudyConfig)

    def to_dict(self) -> dict:
        return {s: _section_dict(getattr(self, s)) for s in SECTIONS}


SECTIONS = {
    "sim": SimConfig,
    "observation": ObservationConfig,
    "hm": HmConfig,
    "kernel": KernelConfig,
    "estimator": EstimatorSection,
    "study": StudyConfig,
}


def _section_dict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def _parse_value(raw: str, default, name: str):
    s = raw.strip()
    if s.lower() in ("none", "null", ""):
        return None
    if isinstance(default, bool):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigFileError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        parts = [p for p in s.replace(",", " ").split()]
        conv = type(default[0]) if default else float
        try:
            return tuple(conv(float(p)) if conv is int else conv(p) for p in parts)
        except ValueError as e:
            raise ConfigFileError(f"{name}: {e}") from None
    if isinstance(default, int):
        try:
            f = float(s)
        except ValueError:
            raise ConfigFileError(f"{name}: expected an integer, got {raw!r}") from None
        if f != int(f):
            raise ConfigFileError(f"{name}: expected an integer, got {raw!r}")
        return int(f)
    if isinstance(default, float):
        try:
            return float(s)
        except ValueError:
            raise ConfigFileError(f"{name}: expected a number, got {raw!r}") from None
    if default is None:
        # optional numeric fields
        try:
            f = float(s)
        except ValueError:
            return s
        return int(f) if f == int(f) and "." not in s and "e" not in s.lower() else f
    return s


def parse_config(text: str) -> Config:
    """Parse INI text; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigFileError(str(e)) from None
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigFileError(f"unknown section(s): {sorted(unknown)}")
    parts = {}
    for sec, cls in SECTIONS.items():
        defaults = cls()
        names = {f.name for f in fields(cls)}
        kw = {}
        if cp.has_section(sec):
            for key, raw in cp.items(sec):
                if key not in names:
                    raise ConfigFileError(f"unknown key {sec}.{key}")
                kw[key] = _parse_value(raw, getattr(defaults, key), f"{sec}.{key}")
        try:
            parts[sec] = cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigFileError(f"[{sec}] {e}") from None
    return Config(**parts)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    if not p.is_file():
        raise ConfigFileError(f"config file not found: {p}")
    return parse_config(p.read_text())


def format_config(cfg: Config) -> str:
    lines = []
    for sec, d in cfg.to_dict().items():
        lines.append(f"[{sec}]")
        for k, v in d.items():
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


# --- JSON --------------------------------------------------------------------


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path: str | Path):
    return json.loads(Path(path).read_text())


def save_pack(pack: ObservationPack, path) -> None:
    dump_json(pack.to_dict(), path)


def load_pack(path) -> ObservationPack:
    return ObservationPack.from_dict(load_json(path))


def run_result_to_dict(res: RunResult, include_metrics: bool = False) -> dict:
    return {
        "solution": None if res.solution is None else dict(zip(("F", "h", "c", "b"), res.solution.as_array().tolist())),
        "d_resc": res.d_resc,
        "n_waves": res.n_waves,
        "converged": res.converged,
        "stop_reason": res.stop_reason,
        "failure": res.failure,
        "seed": res.seed,
        "wall_time": res.wall_time,
        "config": _section_dict(res.config),
        "kernel": res.kernel,
        "estimator": res.estimator,
        "selection": res.selection,
        "waves": [w.to_dict(include_metrics) for w in res.waves],
    }


def run_result_from_dict(d: dict) -> RunResult:
    sol = d["solution"]
    return RunResult(
        solution=None if sol is None else ParamPoint(**sol),
        d_resc=d["d_resc"],
        n_waves=d["n_waves"],
        converged=d["converged"],
        waves=[WaveRecord.from_dict(w) for w in d["waves"]],
        config=HmConfig(**d["config"]),
        seed=d["seed"],
        wall_time=d["wall_time"],
        stop_reason=d["stop_reason"],
        failure=d["failure"],
        kernel=d.get("kernel"),
        estimator=d.get("estimator"),
        selection=d.get("selection") or {},
    )


# --- CSV ---------------------------------------------------------------------

WAVE_COLUMNS = ("wave", "nroy_fraction", "reduction", "n_nroy", "threshold", "lml", "r2", "mse", "in_uncertainty_ratio", "converged", "n_rejected", "n_diverged", "seconds")
BENCH_COLUMNS = ("method", "N", "L", "S", "R", "pair", "estimate", "analytic", "abs_error")
TRIAL_COLUMNS = (
    "index", "family", "n_qubits", "n_layers", "n_smpls", "chi_single_train", "T_impl_min", "lambda_impl",
    "n_impl_max", "t_conv", "n_repeat", "failed_count", "pruned", "prune_reason", "mean_d_resc", "mean_n_waves",
    "d_resc", "n_waves",
)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FMT)
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def wave_rows(res: RunResult) -> list[dict]:
    rows, prev = [], 1.0
    for w in res.waves:
        d = w.to_dict(include_metrics=False)
        d["reduction"] = prev - w.nroy_fraction
        prev = w.nroy_fraction
        rows.append(d)
    return rows


def trial_rows(study: StudyResult) -> list[dict]:
    rows = []
    for t in study.trials:
        d = asdict(t.spec)
        d.update(
            index=t.index,
            n_repeat=len(t.repetitions),
            failed_count=t.failed_count,
            pruned=t.pruned,
            prune_reason=t.prune_reason,
            mean_d_resc=t.mean_d_resc,
            mean_n_waves=t.mean_n_waves,
            d_resc=" ".join(_cell(r.d_resc) for r in t.repetitions),
            n_waves=" ".join(str(r.n_waves) for r in t.repetitions),
        )
        rows.append(d)
    return rows
