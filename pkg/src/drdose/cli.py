"""Command-line interface: estimate, curve, replicate and simulate.

Exit codes: 0 success, 1 estimation failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import json
import logging
import os
from pathlib import Path
import platform
import sys
import time

import numpy as np

from . import __version__
from .apo import fmt, support_check, write_support_csv
from .aor import DEFAULT_PI_FLOOR
from .boot import METHODS, PipelineConfig, bootstrap_pipeline, default_threads, run_pipeline
from .curve import evaluate_grid, parse_grid, write_curve_csv
from .data import LEVEL_MODES, StrataSpec, covariate_names, load_csv, parse_terms, write_csv
from .errors import DataError, DrDoseError
from .numkit import RngStream

DEFAULT_SEED = 20240611
SEED_ENV = "DRDOSE_SEED"
TABLES = ("1", "2", "3", "fig1")

log = logging.getLogger("drdose")


class UsageError(Exception):
    """Bad arguments or unusable input; exit status 2."""


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _parse_strata(text: str, delta: float, levels: str) -> StrataSpec:
    try:
        lo, hi, width = (float(x) for x in text.split(":"))
        return StrataSpec.regular(lo, hi, width, delta, levels)
    except ValueError as exc:
        raise UsageError(f"--strata {text!r}: {exc}") from None


def _parse_terms(text: str, flag: str):
    try:
        return parse_terms(text)
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _add_data_args(p):
    g = p.add_argument_group("data and model")
    g.add_argument("--data", required=True, help="input CSV with a header row")
    g.add_argument("--outcome", default="y", help="outcome column (default: y)")
    g.add_argument("--dose", default="d", help="dose column (default: d)")
    g.add_argument("--method", choices=METHODS, default="dr",
                   help="strata estimator (default: dr)")
    g.add_argument("--or-terms", required=True,
                   help='outcome-model terms, e.g. "1,d,d^2,x1,x2"')
    g.add_argument("--gps-terms", help='treatment-model terms, e.g. "1,x1,x2"')
    g.add_argument("--strata", required=True, metavar="L:U:WIDTH",
                   help="regular strata (L, L+WIDTH], ..., up to U")
    g.add_argument("--delta", type=float, default=0.5, help="PGPS half-width (default: 0.5)")
    g.add_argument("--pi-floor", type=float, default=DEFAULT_PI_FLOOR,
                   help=f"PGPS truncation floor (default: {DEFAULT_PI_FLOOR:g})")
    g.add_argument("--levels", choices=LEVEL_MODES, default="grid",
                   help="treatment levels averaged within a stratum (default: grid)")
    g.add_argument("--slide-step", type=float, help="also estimate on shifted partitions")
    g.add_argument("--average", choices=("exact", "binned", "auto"), default="auto",
                   help="inverse-PGPS averaging: exact, binned, or auto by problem size "
                        "(default: auto)")
    g.add_argument("--support-threshold", type=float, default=1e-3,
                   help="PGPS level flagged by the support diagnostic (default: 1e-3)")
    b = p.add_argument_group("bootstrap and output")
    b.add_argument("--boot", type=int, default=200, help="bootstrap replicates, 0 to skip")
    b.add_argument("--seed", type=int, help=f"master seed (default: ${SEED_ENV} or {DEFAULT_SEED})")
    b.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    b.add_argument("--out", default="drdose-out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drdose",
        description="Doubly robust strata dose-response estimation for continuous treatments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="suppress the stdout summary")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="strata APO estimates with bootstrap intervals")
    _add_data_args(p)

    p = sub.add_parser("curve", parents=[common], help="polynomial dose-response curve from strata APOs")
    _add_data_args(p)
    p.add_argument("--degree", type=int, default=2, help="polynomial degree (default: 2)")
    p.add_argument("--grid", metavar="LO:HI:STEP", help="evaluation grid (default: strata range)")

    p = sub.add_parser("replicate", parents=[common], help="rerun a simulation table or the curve figure")
    p.add_argument("--table", required=True, choices=TABLES)
    p.add_argument("--full-scale", action="store_true", help="1000 runs of n = 10000")
    p.add_argument("--runs", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--boot", type=int, help="bootstrap replicates per run")
    p.add_argument("--sigma-d", type=float, help="dose noise SD")
    p.add_argument("--sigma-y", type=float, help="outcome noise SD")
    p.add_argument("--levels", choices=LEVEL_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", default="drdose-out")

    p = sub.add_parser("simulate", parents=[common], help="write one simulated dataset to CSV")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--sigma-d", type=float)
    p.add_argument("--sigma-y", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="drdose-out")
    return parser


# ---------------------------------------------------------------------------
# Manifest and summary
# ---------------------------------------------------------------------------

def _versions() -> dict:
    import matplotlib
    import scipy
    return {"drdose": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__}


class Run:
    """Collects outputs for one command and writes the manifest last."""

    def __init__(self, command: str, out: str, seed: int, argv, t0: float | None = None):
        self.command = command
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.argv = list(argv)
        self.config: dict = {}
        self.results: dict = {}
        self.outputs: list = []
        self.t0 = time.perf_counter() if t0 is None else t0

    def path(self, name: str, kind: str) -> Path:
        self.outputs.append({"path": name, "kind": kind})
        return self.out / name

    def finish(self) -> Path:
        manifest = {
            "command": self.command, "argv": self.argv, "config": self.config,
            "seed": self.seed, "versions": _versions(),
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
            "outputs": self.outputs, "results": self.results,
        }
        target = self.out / "manifest.json"
        target.write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n",
                          encoding="utf-8")
        return target


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _print_table(header, rows, stream=None):
    stream = stream or sys.stdout
    text = [[str(h) for h in header]] + [[c if isinstance(c, str) else fmt(c) for c in r]
                                         for r in rows]
    widths = [max(len(r[j]) for r in text) for j in range(len(header))]
    for i, r in enumerate(text):
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)), file=stream)
        if i == 0:
            print("  ".join("-" * w for w in widths), file=stream)


def _short(x, digits=4):
    return "" if x is None or not np.isfinite(x) else f"{x:.{digits}f}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _pipeline_from_args(args, degree=None, grid=None):
    or_terms = _parse_terms(args.or_terms, "--or-terms")
    gps_terms = None if args.gps_terms is None else _parse_terms(args.gps_terms, "--gps-terms")
    if args.method != "or" and gps_terms is None:
        raise UsageError(f"--method {args.method} needs --gps-terms")
    strata = _parse_strata(args.strata, args.delta, args.levels)
    if args.boot < 0 or args.boot == 1:
        raise UsageError("--boot must be 0 or at least 2")
    covars = covariate_names(or_terms) + [c for c in covariate_names(gps_terms or [])
                                          if c not in covariate_names(or_terms)]
    data = load_csv(args.data, args.outcome, args.dose, covars)
    try:
        config = PipelineConfig(method=args.method, or_terms=or_terms, gps_terms=gps_terms,
                                strata=strata, pi_floor=args.pi_floor,
                                slide_step=args.slide_step, degree=degree, grid=grid,
                                average=args.average)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return data, config


def _bootstrap(args, data, config, seed):
    if args.boot == 0:
        return None
    threads = args.threads or default_threads()
    return bootstrap_pipeline(data, config, args.boot, RngStream(seed, 0), threads)


def _common_outputs(run, args, data, config, point, boot):
    run.config = {**config.describe(), "data": str(args.data), "n": data.n,
                  "outcome": args.outcome, "dose": args.dose, "boot": args.boot,
                  "threads": args.threads or default_threads()}
    point.table.write_csv(run.path("apo.csv", "strata APO estimates"))
    if boot is not None:
        boot.write_csv(run.path("bootstrap.csv", "bootstrap variances and normal intervals"))
    if point.gpsfit is not None:
        rows = support_check(data, point.gpsfit, config.strata, args.support_threshold)
        write_support_csv(rows, run.path("support.csv", "PGPS support diagnostics"))
        run.results["support_flagged"] = [r.stratum for r in rows if r.flagged]
    run.results["warnings"] = [w["message"] for w in point.table.warnings]
    prov = dict(point.table.provenance)
    run.results["provenance"] = prov


def cmd_estimate(args, argv) -> int:
    from .plotting import plot_apo_table
    seed = args.seed if args.seed is not None else _default_seed()
    data, config = _pipeline_from_args(args)
    point = run_pipeline(data, config)
    boot = _bootstrap(args, data, config, seed)
    run = Run("estimate", args.out, seed, argv, args.t0)
    _common_outputs(run, args, data, config, point, boot)
    plot_apo_table(point.table, run.path("apo.png", "figure: strata APO estimates"), boot)
    run.finish()
    if not args.quiet:
        rows = []
        for i, r in enumerate(point.table.rows):
            se = boot.se[i] if boot is not None else None
            lo = boot.ci_lo[i] if boot is not None else None
            hi = boot.ci_hi[i] if boot is not None else None
            rows.append([f"{r.partition_offset:g}", f"({r.lower:g},{r.upper:g}]", str(r.J),
                         _short(r.estimate), _short(se), _short(lo), _short(hi)])
        _print_table(["offset", "stratum", "J", "estimate", "se", "ci_lo", "ci_hi"], rows)
        print(f"\nwrote {len(run.outputs)} files and manifest.json to {run.out}")
    return 0


def cmd_curve(args, argv) -> int:
    from .plotting import plot_curve
    seed = args.seed if args.seed is not None else _default_seed()
    if args.degree < 0:
        raise UsageError("--degree must be non-negative")
    try:
        if args.grid:
            grid = parse_grid(args.grid)
        else:
            lo, hi, _ = (float(x) for x in args.strata.split(":"))
            grid = np.linspace(lo, hi, 41)
    except ValueError as exc:
        raise UsageError(f"--grid: {exc}") from None
    data, config = _pipeline_from_args(args, degree=args.degree, grid=grid)
    point = run_pipeline(data, config)
    boot = _bootstrap(args, data, config, seed)
    curve = point.curve
    k = len(point.table.rows)
    se = boot.se[k:] if boot is not None else None
    evaluate_grid(curve, grid, se)
    run = Run("curve", args.out, seed, argv, args.t0)
    _common_outputs(run, args, data, config, point, boot)
    write_curve_csv(curve, run.path("curve.csv", "dose-response curve on the grid"))
    plot_curve(curve, run.path("curve.png", "figure: dose-response curve"), se)
    run.results["coefficients"] = curve.theta.tolist()
    run.finish()
    if not args.quiet:
        print("coefficients (constant first): " + ", ".join(f"{c:.6g}" for c in curve.theta))
        step = max(1, len(curve.eval_grid) // 10)
        rows = [[_short(d, 3), _short(m), _short(s), _short(a), _short(b),
                 "yes" if ext else ""]
                for d, m, s, a, b, ext in curve.eval_grid[::step]]
        _print_table(["d", "mu_hat", "se", "ci_lo", "ci_hi", "extrapolated"], rows)
        print(f"\nwrote {len(run.outputs)} files and manifest.json to {run.out}")
    return 0


def _sim_config(args):
    from .sim import SimConfig
    base = SimConfig.full_scale() if getattr(args, "full_scale", False) else SimConfig()
    changes = {}
    for attr, key in (("runs", "runs"), ("n", "n"), ("boot", "B"), ("sigma_d", "sigma_d"),
                      ("sigma_y", "sigma_y"), ("levels", "levels"), ("seed", "seed"),
                      ("threads", "threads")):
        val = getattr(args, attr, None)
        if val is not None:
            changes[key] = val
    if "seed" not in changes:
        changes["seed"] = _default_seed()
    if "threads" not in changes and hasattr(args, "threads"):
        changes["threads"] = default_threads()
    try:
        return replace(base, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_replicate(args, argv) -> int:
    from . import plotting, sim
    config = _sim_config(args)
    run = Run("replicate", args.out, config.seed, argv, args.t0)
    run.config = config.snapshot()
    table = args.table
    if table in ("1", "2"):
        study = sim.run_table1(config) if table == "1" else sim.run_table2(config)
        sim.write_strata_table(study, run.path(f"table{table}.csv", f"Table {table} metrics"))
        plotting.plot_strata_study(study, run.path(f"table{table}.png",
                                                   f"figure: Table {table} average estimates"))
        run.results["truth"] = study.truth.tolist()
        run.results["truth_se"] = study.truth_se.tolist()
        summary = [[name, *[_short(v, 3) for v in study.metric(name, "Av Est")],
                    *[_short(v, 1) for v in study.metric(name, "Coverage")[[0, -1]]]]
                   for name in study.names]
        header = ["estimator", *[sim.interval_label(a, b) for a, b in config.strata.intervals],
                  "cov first", "cov last"]
        summary.insert(0, ["Truth", *[_short(v, 3) for v in study.truth], "", ""])
    elif table == "3":
        study = sim.run_table3(config)
        sim.write_wald_table(study, run.path("table3.csv", "Table 3 rejection rates"))
        plotting.plot_wald_study(study, run.path("table3.png", "figure: rejection rates"))
        run.results["rejection_rates"] = study.rejection_rates
        header = ["estimator", "rejection %"]
        summary = [[k, _short(v, 1)] for k, v in study.rejection_rates.items()]
    else:
        study = sim.run_figure1(config)
        for name, values in study.mean_curves.items():
            sim.write_curve_points(study.grid, values,
                                   run.path(f"fig1_{name.lower()}.csv", f"mean {name} curve"))
        sim.write_curve_points(study.grid, study.truth,
                               run.path("fig1_truth.csv", "true dose-response"))
        plotting.plot_curve_study(study, run.path("fig1.png", "figure: mean fitted curves"))
        dev = {name: study.max_deviation(name) for name in study.names}
        run.results["max_abs_deviation"] = dev
        header = ["estimator", "max |mu_hat - mu|"]
        summary = [[k, _short(v, 3)] for k, v in dev.items()]
    run.finish()
    if not args.quiet:
        print(f"table {table}: {config.runs} runs, n = {config.n}, B = {config.B}, "
              f"seed {config.seed}")
        _print_table(header, summary)
        print(f"\nwrote {len(run.outputs)} files and manifest.json to {run.out}")
    return 0


def cmd_simulate(args, argv) -> int:
    from . import sim
    config = _sim_config(args)
    data = sim.generate(config, RngStream(config.seed, 0))
    run = Run("simulate", args.out, config.seed, argv, args.t0)
    run.config = {"n": config.n, "sigma_d": config.sigma_d, "sigma_y": config.sigma_y}
    write_csv(data, run.path("simulated.csv", "simulated dataset"))
    run.finish()
    if not args.quiet:
        print(f"wrote {data.n} rows to {run.out / 'simulated.csv'}")
    return 0


COMMANDS = {"estimate": cmd_estimate, "curve": cmd_curve, "replicate": cmd_replicate,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad arguments
    args.t0 = time.perf_counter()
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (UsageError, DataError) as exc:
        print(f"drdose: error: {exc}", file=sys.stderr)
        return 2
    except DrDoseError as exc:
        print(f"drdose: estimation failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"drdose: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
