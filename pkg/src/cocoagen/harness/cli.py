"""Command-line entry point.

Exit codes: 0 on success, 2 for invalid input or configuration, 3 for I/O
failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .. import datagen, theory
from ..cocoa import CocoaConfig, load_solver_config, run_cocoa, training_error, write_trajectory_csv
from ..datagen import PartitionSpec
from ..errors import ValidationError
from .plan import BOUNDS, ExperimentPlan, load_plan, plan_from_mapping
from .report import ReportTable, emit_csv, write_provenance
from .studies import make_shared, run_experiment, trial_seeds

log = logging.getLogger("cocoagen")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3

STUDY_COMMANDS = {
    "sweep": "partition_sweep",
    "spectral": "spectral",
    "converge": "convergence",
    "noise": "noise",
    "regularize": "regularization",
    "hyperparam": "hyperparam",
    "mc-average": "mc_average",
    "bound-coverage": "bound_coverage",
}


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.replace(";", ",").split(",") if v.strip()]


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(";", ",").split(",") if v.strip()]


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--trials", type=int, help="number of Monte Carlo trials")
    sp.add_argument("--out", type=Path, help="CSV output path (stdout when omitted)")
    sp.add_argument("--config", type=Path, help="TOML file with plan fields")


def _plan_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--model", choices=["iso", "corr", "bern", "features"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--K", type=int)
    sp.add_argument("--p1", dest="p1_values", type=_ints, help="comma-separated first-block sizes")
    sp.add_argument("--partition", type=_ints, help="explicit block sizes, e.g. 10,12")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--checkpoints", type=_ints)
    sp.add_argument("--test-rows", dest="test_rows", type=int)
    sp.add_argument("--noise", dest="noise_variances", type=_floats)
    sp.add_argument("--lambdas", type=_floats)
    sp.add_argument("--aggregation", type=float)
    sp.add_argument("--subproblems", type=_floats)
    sp.add_argument("--equal-block-energy", dest="equal_block_energy", action="store_const", const=True)
    sp.add_argument("--bound", choices=BOUNDS)
    sp.add_argument("--q", type=_floats)
    sp.add_argument("--q-bar", dest="q_bar", type=_floats)
    sp.add_argument("--rho", dest="rho_target", type=float)
    sp.add_argument("--C", type=float)
    sp.add_argument("--L", type=_floats)
    sp.add_argument("--mnist-dir", dest="mnist_dir")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--tolerance", type=float)


_PLAN_FIELDS = {f.name for f in dataclasses.fields(ExperimentPlan)}


def build_plan(args, study: str) -> ExperimentPlan:
    plan = load_plan(args.config) if getattr(args, "config", None) else ExperimentPlan()
    overrides = {k: v for k, v in vars(args).items() if k in _PLAN_FIELDS and v is not None}
    overrides["study"] = study
    return plan_from_mapping(overrides, plan).validate()


def _write(table: ReportTable, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(table.to_csv())
        return
    emit_csv(table, out)
    write_provenance(table, out.with_name(out.name + ".provenance.json"))
    log.info("wrote %d rows to %s", len(table.rows), out)


# --------------------------------------------------------------------------
# commands


def cmd_study(args) -> int:
    plan = build_plan(args, STUDY_COMMANDS[args.command])
    _write(run_experiment(plan), args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    plan = build_plan(args, "partition_sweep")
    if plan.model == "features":
        raise ValidationError("gen-data writes synthetic regression data; use --model iso, corr or bern")
    shared_seed, seeds = trial_seeds(plan.seed, 1)
    shared = make_shared(plan, shared_seed)
    ts = datagen.synthesize(shared.model, shared.x, plan.n, plan.noise_variances[0], np.random.default_rng(seeds[0]))
    if args.out is None:
        raise ValidationError("gen-data needs --out")
    paths = datagen.write_training_set(ts, args.out)
    print("\n".join(str(p) for p in paths))
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = CocoaConfig()
    spec = None
    seed = args.seed
    if args.solver_config:
        cfg, spec, cfg_seed = load_solver_config(args.solver_config)
        seed = seed if seed is not None else cfg_seed
    repl = {}
    if args.lam is not None:
        repl["lam"] = args.lam
    if args.aggregation is not None:
        repl["aggregation"] = args.aggregation
    if args.subproblem is not None:
        repl["subproblem"] = args.subproblem
    if args.iterations is not None:
        repl["iterations"] = args.iterations
    if repl:
        base = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.init}
        cfg = CocoaConfig(**{**base, **repl})
    if args.partition:
        spec = PartitionSpec(args.partition)

    if args.data:
        ts = datagen.read_training_set(args.data)
    else:
        plan = build_plan(args, "partition_sweep")
        if seed is not None:
            plan = dataclasses.replace(plan, seed=seed)
        shared_seed, seeds = trial_seeds(plan.seed, 1)
        shared = make_shared(plan, shared_seed)
        ts = datagen.synthesize(shared.model, shared.x, plan.n, plan.noise_variances[0],
                                np.random.default_rng(seeds[0]))
    if spec is None:
        spec = PartitionSpec.split(ts.p, (ts.p + 1) // 2, 2) if ts.p > 1 else PartitionSpec([1])
    traj = run_cocoa(ts, spec, cfg)
    err = training_error(ts.regressors, ts.ground_truth, traj.final)
    kappa = float(np.sum((ts.ground_truth - traj.final) ** 2))
    print(f"iterations={traj.iterations} training_error={err:.6g} squared_error={kappa:.6g}", file=sys.stderr)
    if args.out is not None:
        write_trajectory_csv(traj, args.out)
    return EXIT_OK


_BOUND_FUNCS = {
    "theorem1": "iso",
    "lemma3": "iso",
    "theorem2": "corr",
    "lemma6": "corr",
    "theorem3": "sub",
    "theorem4": "sub",
}


def cmd_bounds(args) -> int:
    if not args.partition:
        raise ValidationError("bounds needs --partition")
    n = args.n if args.n is not None else 75
    dims = theory.PartitionDims(n, args.partition)
    K = dims.K
    q = _broadcast(args.q, K, "q", 0.0)
    qb = _broadcast(args.q_bar, K, "q_bar", 0.0)
    C = args.C if args.C is not None else 1.0
    L = _broadcast(args.L, K, "L", theory.GAUSS_L)
    spectra = None
    if args.model == "corr":
        seed = args.seed if args.seed is not None else 0
        shared, _ = trial_seeds(seed, 1)
        cov = datagen.build_decaying_covariance(sum(dims.sizes), 0.9631, np.random.default_rng(shared))
        spectra = theory.block_spectra(cov, dims.sizes)
    inp = theory.BoundInputs(dims, q, qb, C, L, spectra)
    kinds = [args.bound] if args.bound else [k for k in _BOUND_FUNCS]
    table = ReportTable(("bound_name", "K", "n", "p_list", "q_list", "C", "beta", "rho"))
    for kind in kinds:
        if kind == "lemma2":
            for p in dims.sizes:
                lo, hi, prob = theory.tracy_widom_interval(n, p, q[0])
                table.add("lemma2", 1, n, [p], [q[0]], C, hi, prob)
            continue
        tall_only = kind in ("lemma3", "lemma6", "theorem4")
        if tall_only and not dims.all_tall():
            if args.bound:
                raise ValidationError(f"{kind} needs every block size <= n")
            continue
        res = {
            "theorem1": lambda: theory.beta_iso_gaussian(dims, q),
            "lemma3": lambda: theory.beta_iso_gaussian_tall(dims, q),
            "theorem2": lambda: theory.beta_corr_gaussian(inp),
            "lemma6": lambda: theory.beta_corr_gaussian_tall(inp),
            "theorem3": lambda: theory.beta_sub_gaussian(inp),
            "theorem4": lambda: theory.beta_sub_gaussian_tall(inp),
        }[kind]()
        table.add(kind, K, n, list(dims.sizes), list(q), C, res.beta, res.rho)
    if args.out is None:
        sys.stdout.write(table.to_csv())
    else:
        emit_csv(table, args.out)
    return EXIT_OK


def _broadcast(vals, K, name, default):
    if not vals:
        return [default] * K
    if len(vals) == 1:
        return list(vals) * K
    if len(vals) != K:
        raise ValidationError(f"{name} needs 1 or {K} values")
    return list(vals)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cocoagen", description="Distributed least-squares experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="write a synthetic training set as CSV")
    _common(sp)
    _plan_flags(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("solve", help="run the solver and export the trajectory")
    _common(sp)
    _plan_flags(sp)
    sp.add_argument("--data", type=Path, help="dataset stem written by gen-data")
    sp.add_argument("--solver-config", dest="solver_config", type=Path,
                    help="TOML with lambda, aggregation, subproblem, iterations, seed, partition")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--subproblem", type=float)
    sp.set_defaults(func=cmd_solve)

    for name, study in STUDY_COMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {study.replace('_', ' ')} study")
        _common(sp)
        _plan_flags(sp)
        sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("bounds", help="evaluate norm bounds for given dimensions")
    _common(sp)
    sp.add_argument("--bound", choices=BOUNDS)
    sp.add_argument("--n", type=int)
    sp.add_argument("--partition", type=_ints, required=True)
    sp.add_argument("--q", type=_floats)
    sp.add_argument("--q-bar", dest="q_bar", type=_floats)
    sp.add_argument("--C", type=float)
    sp.add_argument("--L", type=_floats)
    sp.add_argument("--model", choices=["iso", "corr"], default="iso",
                    help="corr draws block spectra from the decaying covariance")
    sp.set_defaults(func=cmd_bounds)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
