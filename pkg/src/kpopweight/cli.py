"""Command-line front end: weighting, diagnostics, and simulation.

Exit codes: 0 on a converged solution, 2 when weights are usable but the
solver did not converge, 1 on error.  stdout carries a short human
summary; all data products are written to the output directory, along
with a manifest sufficient to reproduce the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import post_stratify, rake_margins
from .dataset import load_csv, one_hot
from .estimation import weighted_mean
from .kernel import distance_histogram, make_kernel, select_bandwidth
from .kpop import (
    KpopConfig,
    bias_bound,
    ess,
    l1_imbalance,
    margin_error_table,
    n_to_90pct,
    solve,
)
from .simharness import EstimatorSpec, SyntheticDGP, default_estimators, run_study
from .spectral import thin_svd

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, args: argparse.Namespace) -> None:
    resolved = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func",) and not k.startswith("_")
    }
    manifest = {"version": __version__, "config": resolved}
    if getattr(args, "input", None):
        manifest["input_sha256"] = _sha256(args.input)
    if getattr(args, "study", None):
        manifest["study_sha256"] = _sha256(args.study)
    _json_dump(manifest, outdir / "manifest.json")


def _roles_from_args(args) -> dict:
    if not args.sample_col:
        raise ValueError("role column absent: --sample-col is required")
    if not args.vars:
        raise ValueError("role column absent: --vars is required")
    roles = {"sample_col": args.sample_col, "covariates": args.vars.split(",")}
    if args.base_weight_col:
        roles["base_weight_col"] = args.base_weight_col
    if args.pop_weight_col:
        roles["pop_weight_col"] = args.pop_weight_col
    if args.outcome_col:
        roles["outcome_col"] = args.outcome_col
    if args.numeric_vars:
        roles["numeric"] = args.numeric_vars.split(",")
    return roles


def _write_weights(outdir: Path, ds, weights: np.ndarray) -> None:
    n_s = ds.n_sample
    ids = ds.row_ids[:n_s] if ds.row_ids is not None else np.arange(n_s)
    with open(outdir / "weights.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "weight", "weight_times_Ns"])
        for rid, w in zip(ids, weights):
            writer.writerow([rid, repr(float(w)), repr(float(w) * n_s)])


def _write_margins(outdir: Path, table: dict[str, float]) -> None:
    with open(outdir / "margins.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "abs_error_pp"])
        for name, err in table.items():
            writer.writerow([name, repr(float(err))])


def _write_scree(outdir: Path, singular_values: np.ndarray) -> None:
    top = singular_values[0]
    with open(outdir / "scree.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "singular_value", "normalized"])
        for i, a in enumerate(singular_values):
            writer.writerow([i, repr(float(a)), repr(float(a / top))])


def _estimate_entry(ds, weights) -> dict | None:
    if ds.outcome is None:
        return None
    res = weighted_mean(ds.outcome, weights)
    return {
        "estimate": res.estimate,
        "se": res.se,
        "ci_low": res.ci_low,
        "ci_high": res.ci_high,
        "n_effective": res.n_effective,
    }


def cmd_kpop(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = load_csv(args.input, _roles_from_args(args))
    cfg = KpopConfig(
        b=args.b,
        b_multiplier=args.b_multiplier,
        min_dims=args.min_dims,
        max_dims=args.max_dims,
        increment=args.increment,
        tolerance=args.tolerance,
        max_iterations=args.maxit,
        mean_first_vars=args.mean_first.split(",") if args.mean_first else None,
        require_convergence=args.require_convergence,
        svd_floor=args.svd_floor,
    )
    report = solve(ds, args.vars.split(","), cfg)
    _write_weights(outdir, ds, report.weights.weights)
    _write_margins(outdir, report.margin_table)
    _write_scree(outdir, report.scree_values)
    payload = {
        "b": report.b,
        "chosen_r": report.chosen_r,
        "mean_first_dims": report.mean_first_dims,
        "converged": report.weights.converged,
        "residual": report.weights.residual,
        "iterations": report.weights.iterations,
        "divergence": report.weights.divergence,
        "bias_bound_before": report.bias_bound_before,
        "bias_bound_after": report.bias_bound_after,
        "bias_bound_ratio": report.bias_bound_ratio,
        "l1_before": report.l1_before,
        "l1_after": report.l1_after,
        "ess": report.ess,
        "n_to_90pct": report.n_to_90pct,
        "margin_table": report.margin_table,
        "grid": [
            {"r": p.r, "bound": p.bound, "converged": p.converged,
             "residual": p.residual}
            for p in report.grid
        ],
        "outcome": _estimate_entry(ds, report.weights.weights),
    }
    _json_dump(payload, outdir / "report.json")
    _write_manifest(outdir, args)
    est = payload["outcome"]
    print(f"kpop: r={report.chosen_r} b={report.b:.4g} "
          f"bound ratio={report.bias_bound_ratio:.3g} ess={report.ess:.1f}"
          + (f" estimate={est['estimate']:.4g}" if est else ""))
    return EXIT_OK if report.weights.converged else EXIT_NOT_CONVERGED


def cmd_rake(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = load_csv(args.input, _roles_from_args(args))
    variables = args.vars.split(",")
    sol = rake_margins(ds, variables, tolerance=args.tolerance,
                       max_iterations=args.maxit)
    _write_weights(outdir, ds, sol.weights)
    _write_margins(outdir, margin_error_table(ds, variables, sol.weights))
    payload = {
        "converged": sol.converged,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "divergence": sol.divergence,
        "infeasible_levels": sol.infeasible_levels,
        "ess": ess(sol.weights),
        "outcome": _estimate_entry(ds, sol.weights),
    }
    _json_dump(payload, outdir / "report.json")
    _write_manifest(outdir, args)
    est = payload["outcome"]
    print(f"rake: converged={sol.converged} residual={sol.residual:.3g}"
          + (f" estimate={est['estimate']:.4g}" if est else ""))
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def cmd_poststrat(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = load_csv(args.input, _roles_from_args(args))
    variables = args.vars.split(",")
    res = post_stratify(ds, variables)
    sol = res.solution
    _write_weights(outdir, ds, sol.weights)
    _write_margins(outdir, margin_error_table(ds, variables, sol.weights))
    payload = {
        "converged": sol.converged,
        "divergence": sol.divergence,
        "ess": ess(sol.weights),
        "dropped_strata": res.dropped_strata,
        "dropped_mass": res.dropped_mass,
        "outcome": _estimate_entry(ds, sol.weights),
    }
    _json_dump(payload, outdir / "report.json")
    _write_manifest(outdir, args)
    est = payload["outcome"]
    print(f"poststrat: dropped {len(res.dropped_strata)} strata "
          f"(mass {res.dropped_mass:.4f})"
          + (f" estimate={est['estimate']:.4g}" if est else ""))
    return EXIT_OK


def cmd_scree(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = load_csv(args.input, _roles_from_args(args))
    design = one_hot(ds, args.vars.split(","))
    b = args.b
    if b is None:
        b = select_bandwidth(distance_histogram(design))
    b *= args.b_multiplier
    dec = thin_svd(make_kernel(design, b), floor=args.svd_floor)
    _write_scree(outdir, dec.A)
    _write_manifest(outdir, args)
    print(f"scree: rank={dec.rank} b={b:.4g} written to {outdir / 'scree.csv'}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = load_csv(args.input, _roles_from_args(args))
    with open(args.weights) as fh:
        rows = list(csv.DictReader(fh))
    w = np.array([float(r["weight"]) for r in rows])
    if len(w) != ds.n_sample:
        raise ValueError(
            f"weights file has {len(w)} rows; sample has {ds.n_sample}"
        )
    variables = args.vars.split(",")
    design = one_hot(ds, variables)
    b = args.b
    if b is None:
        b = select_bandwidth(distance_histogram(design))
    b *= args.b_multiplier
    K = make_kernel(design, b)
    dec = thin_svd(K, floor=args.svd_floor)
    before = bias_bound(dec, ds.base_weights, ds.pop_weights).value
    after = bias_bound(dec, w, ds.pop_weights).value
    payload = {
        "b": b,
        "l1_before": l1_imbalance(K, ds.base_weights, ds.pop_weights),
        "l1_after": l1_imbalance(K, w, ds.pop_weights),
        "bias_bound_before": before,
        "bias_bound_after": after,
        "bias_bound_ratio": before / after if after > 0 else float("inf"),
        "ess": ess(w),
        "n_to_90pct": n_to_90pct(w),
        "margin_table": margin_error_table(ds, variables, w),
    }
    if args.report:
        chosen_r = json.loads(Path(args.report).read_text()).get("chosen_r")
        payload["chosen_r"] = chosen_r
        if chosen_r is not None and chosen_r <= 2:
            print(f"warning: only {chosen_r} balanced dimension(s); "
                  "the solution reflects very coarse balance", file=sys.stderr)
    _json_dump(payload, outdir / "diagnostics.json")
    _write_manifest(outdir, args)
    print(
        f"diagnose: L1 {payload['l1_before']:.4g} -> {payload['l1_after']:.4g}, "
        f"bound ratio {payload['bias_bound_ratio']:.3g}, "
        f"ESS {payload['ess']:.1f}, n90 {payload['n_to_90pct']}"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    study = json.loads(Path(args.study).read_text())
    dgp_spec = dict(study["dgp"])
    if args.seed is not None:
        dgp_spec["seed"] = args.seed
    dgp = SyntheticDGP.from_dict(dgp_spec)
    if "estimators" in study:
        estimators = [EstimatorSpec.from_dict(e) for e in study["estimators"]]
    else:
        estimators = default_estimators(dgp.variables,
                                        study.get("kpop_overrides"))
    reps = args.reps or int(study.get("replications", 500))
    report = run_study(dgp, estimators, reps, jobs=args.jobs)

    with open(outdir / "simulation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "bias", "se", "mse", "bias_reduction",
                         "n_used", "failures"])
        for row in report.rows:
            writer.writerow([row.name, repr(row.bias), repr(row.se),
                             repr(row.mse), repr(row.bias_reduction),
                             row.n_used, row.failures])
    payload = {
        "replications": report.replications,
        "true_mean": report.true_mean,
        "bias_reduction_note": report.bias_reduction_note,
        "rows": [
            {"name": r.name, "bias": r.bias, "se": r.se, "mse": r.mse,
             "bias_reduction": r.bias_reduction, "n_used": r.n_used,
             "failures": r.failures}
            for r in report.rows
        ],
    }
    if reps < 30:
        payload["note"] = "few replications: Monte-Carlo error is wide"
    _json_dump(payload, outdir / "report.json")
    _write_manifest(outdir, args)
    for r in report.rows:
        print(f"{r.name:28s} bias={r.bias:+.4f} se={r.se:.4f} mse={r.mse:.4f}")
    return EXIT_OK


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="input CSV path")
    p.add_argument("--sample-col", help="0/1 sample indicator column")
    p.add_argument("--vars", help="comma-separated covariate columns")
    p.add_argument("--base-weight-col")
    p.add_argument("--pop-weight-col")
    p.add_argument("--outcome-col")
    p.add_argument("--numeric-vars",
                   help="comma-separated covariates to treat as continuous")


def _add_kernel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--b", type=float, default=None,
                   help="kernel bandwidth (default: variance-maximizing)")
    p.add_argument("--b-multiplier", type=float, default=1.0)
    p.add_argument("--svd-floor", type=float, default=1e-10)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--maxit", type=int, default=500)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpopweight",
        description="Kernel-balancing population weights and baselines",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("kpop", help="kernel-balancing weights")
    _add_data_flags(p)
    _add_kernel_flags(p)
    _add_solver_flags(p)
    p.add_argument("--min-dims", type=int, default=1)
    p.add_argument("--max-dims", type=int, default=None)
    p.add_argument("--increment", type=int, default=5)
    p.add_argument("--mean-first",
                   help="comma-separated variables held to exact means")
    p.add_argument("--require-convergence", action="store_true")
    p.set_defaults(func=cmd_kpop)

    p = sub.add_parser("rake", help="mean calibration on margins")
    _add_data_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_rake)

    p = sub.add_parser("poststrat", help="post-stratification weights")
    _add_data_flags(p)
    p.set_defaults(func=cmd_poststrat)

    p = sub.add_parser("scree", help="singular-value spectrum of K")
    _add_data_flags(p)
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_scree)

    p = sub.add_parser("diagnose", help="balance diagnostics for given weights")
    _add_data_flags(p)
    _add_kernel_flags(p)
    p.add_argument("--weights", required=True, help="weights.csv path")
    p.add_argument("--report", help="report.json from the weighting run")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", help="Monte-Carlo estimator comparison")
    p.add_argument("--study", required=True, help="study config JSON")
    p.add_argument("--reps", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    for name, sp in sub.choices.items():
        sp.add_argument("--out", default=f"kpopweight_{name}_out",
                        help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--config",
                        help="JSON file whose keys override these flags")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_config_file(args: argparse.Namespace) -> argparse.Namespace:
    if getattr(args, "config", None):
        overrides = json.loads(Path(args.config).read_text())
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise ValueError(f"unknown config key {key!r}")
            setattr(args, attr, value)
    return args


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = _apply_config_file(args)
        return args.func(args)
    except BrokenPipeError:
        raise
    except Exception as exc:  # contract: single-line machine-parseable error
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
