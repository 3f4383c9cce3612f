"""Command-line entry point: ``truth``, ``run``, ``study`` and ``kernel-bench``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import serialize as io
from .gp import TrainingError
from .history_matching import ConfigError, HmFailed, run as hm_run
from .lorenz96 import DivergedError, ParamPoint
from .metrics_pca import ZeroVarianceError, build_observation_pack
from .quantum_kernels import EstimatorConfig, make_kernel_spec, kernel_value
from .rng import RngStream
from .study import hm_runner, run_study

EXIT_OK, EXIT_USAGE, EXIT_HM_FAILED, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("l96qhm")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides hm.seed)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/worker threads")
    p.add_argument("--out", required=True, help=out_help)
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="l96qhm", description="History matching of the two-scale Lorenz-96 model with (quantum) GP emulators.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("truth", help="simulate the truth and build the observation pack")
    p.add_argument("--config", help="INI configuration file")
    _common(p, "observation pack JSON to write")

    p = sub.add_parser("run", help="one history-matching run")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--obs", required=True, help="observation pack JSON")
    _common(p, "run result JSON; the per-wave CSV goes next to it")

    p = sub.add_parser("study", help="random-search hyperparameter study")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--obs", required=True, help="observation pack JSON")
    p.add_argument("--trials", type=int, default=None, help="overrides study.n_trials")
    _common(p, "output directory")

    p = sub.add_parser("kernel-bench", help="compare a kernel estimator with the exact kernel")
    p.add_argument("--family", default="YZCX", choices=["Chebyshev", "NPQC", "YZCX"])
    p.add_argument("--qubits", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--method", default="it", choices=["analytic", "it", "rm"])
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--reps", type=int, default=None, help="RM repetitions")
    p.add_argument("--pairs", type=int, default=50)
    _common(p, "per-pair CSV to write")
    return ap


def _setup(args):
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        from threadpoolctl import threadpool_limits

        threadpool_limits(args.threads)


def _seeded(cfg: io.Config, seed):
    if seed is None:
        return cfg
    return replace(cfg, hm=replace(cfg.hm, seed=seed))


def cmd_truth(args) -> int:
    cfg = _seeded(io.load_config(args.config), args.seed)
    oc = cfg.observation
    pack = build_observation_pack(
        ParamPoint.from_array(oc.truth),
        cfg.sim,
        n_calib=oc.n_calib,
        coverage=oc.coverage,
        uncertainty_frac=oc.uncertainty_frac,
        rng=RngStream(cfg.hm.seed).derive("truth"),
        standardize=oc.standardize,
        V_e=oc.V_e,
        V_eta=oc.V_eta,
    )
    io.save_pack(pack, args.out)
    print(f"m = {pack.m}")
    print("u_z = " + " ".join(format(u, ".6g") for u in pack.uncertainty))
    return EXIT_OK


def _load_pack(path):
    if not Path(path).is_file():
        raise UsageError(f"observation file not found: {path}")
    return io.load_pack(path)


def cmd_run(args) -> int:
    cfg = _seeded(io.load_config(args.config), args.seed)
    pack = _load_pack(args.obs)
    seed = cfg.hm.seed
    res = hm_run(cfg.hm, pack, cfg.kernel.template(seed), cfg.estimator.build(), RngStream(seed))
    out = Path(args.out)
    io.dump_json(io.run_result_to_dict(res), out)
    io.write_csv(out.with_name(out.stem + "_waves.csv"), io.WAVE_COLUMNS, io.wave_rows(res))
    if res.failed:
        print(f"HM failed after {res.n_waves} waves: {res.failure}")
        return EXIT_HM_FAILED
    s = res.solution
    print(f"solution F={s.F:.4f} h={s.h:.4f} c={s.c:.4f} b={s.b:.4f}")
    print(f"d_resc = {res.d_resc:.4f}, waves = {res.n_waves}, converged = {res.converged}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _seeded(io.load_config(args.config), args.seed)
    pack = _load_pack(args.obs)
    sc = cfg.study
    n_trials = args.trials if args.trials is not None else sc.n_trials
    family = sc.family or cfg.kernel.family
    runner = hm_runner(pack, cfg.hm, cfg.estimator.build())
    res = run_study(
        family, n_trials, runner, seed=sc.seed if args.seed is None else args.seed, policy=sc.policy(),
        n_waves_max=cfg.hm.n_waves_max, top_k=sc.top_k, n_smpls_choices=sc.n_smpls_choices,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "trials.csv", io.TRIAL_COLUMNS, io.trial_rows(res))
    best = None
    if res.best_trial is not None:
        best = {
            "trial": res.best_trial.to_dict(),
            "d_resc_star": res.best_repetition.d_resc,
            "n_waves_star": res.best_repetition.n_waves,
            "seed_star": res.best_repetition.seed,
        }
    io.dump_json({"family": family, "seed": res.seed, "n_trials": n_trials, "best": best}, out / "best_trial.json")
    if best is None:
        print("no unpruned trial produced a solution")
        return EXIT_HM_FAILED
    print(f"best trial {res.best_trial.index}: d*_resc = {best['d_resc_star']:.4f}, n*_waves = {best['n_waves_star']}")
    return EXIT_OK


def cmd_kernel_bench(args) -> int:
    if args.method == "it" and args.reps is not None:
        raise UsageError("--reps only applies to --method rm")
    if args.method == "analytic" and (args.shots is not None or args.reps is not None):
        raise UsageError("--shots/--reps do not apply to --method analytic")
    if args.method == "rm" and args.reps is None:
        raise UsageError("--method rm needs --reps")
    if args.pairs < 1:
        raise UsageError("--pairs must be >= 1")
    seed = 0 if args.seed is None else args.seed
    root = RngStream(seed)
    try:
        spec = make_kernel_spec(args.family, args.qubits, args.layers, rng=root.derive("kernel-init"))
        est = EstimatorConfig(args.method, args.shots, args.reps or 1)
    except ValueError as e:
        raise UsageError(str(e)) from None
    pts = root.derive("pairs").generator().uniform(-1, 1, (args.pairs, 2, 4))
    rows = []
    for i, (x, y) in enumerate(pts):
        exact = kernel_value(spec, x, y)
        estimate = kernel_value(spec, x, y, est, root.derive("estimate").derive(i))
        rows.append({
            "method": args.method, "N": args.qubits, "L": args.layers, "S": args.shots, "R": args.reps,
            "pair": i, "estimate": estimate, "analytic": exact, "abs_error": abs(estimate - exact),
        })
    io.write_csv(args.out, io.BENCH_COLUMNS, rows)
    rmse = float(np.sqrt(np.mean([r["abs_error"] ** 2 for r in rows])))
    summary = {
        "family": args.family, "n_qubits": args.qubits, "n_layers": args.layers, "method": args.method,
        "shots": args.shots, "repetitions": args.reps, "pairs": args.pairs, "seed": seed, "rmse": rmse,
    }
    io.dump_json(summary, Path(args.out).with_suffix(".summary.json"))
    print(f"rmse = {format(rmse, '.6g')}")
    return EXIT_OK


COMMANDS = {"truth": cmd_truth, "run": cmd_run, "study": cmd_study, "kernel-bench": cmd_kernel_bench}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        _setup(args)
        return COMMANDS[args.command](args)
    except (UsageError, io.ConfigFileError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HmFailed as e:
        print(f"HM failed: {e}", file=sys.stderr)
        return EXIT_HM_FAILED
    except (TrainingError, DivergedError, ZeroVarianceError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RuntimeError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
