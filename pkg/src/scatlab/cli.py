"""Command-line experiment runner.

Usage:
    scatlab run EXPERIMENT [--config PATH] [--out DIR] [--seed N] [--threads N]
    scatlab compare REPORT_A REPORT_B [--column NAME] [--tol X]

Experiments: fas, cones, bohm, stationary, ajs, beam, full-chain.  The config
file is JSON with the same nesting as the experiment defaults; every run
archives its effective config into manifest.json, and re-running a manifest
reproduces all outputs byte for byte (stochastic parts through the seed).
--threads is accepted as a scheduler hint only; results never depend on it.

Exit codes: 0 success, 2 convergence failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .crosssec import CrossSectionReport, compare_reports
from .errors import ConfigError, NotConvergedError, ScatlabError, SchemaMismatch
from .experiments import EXPERIMENTS, merge_config, run_experiment


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON (line {exc.lineno})")
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a JSON object")
    return cfg


def _validate(cfg):
    """Fail early, naming the offending key, instead of deep in a run."""
    pot_cfg = cfg.get("potential")
    if pot_cfg is not None:
        if not isinstance(pot_cfg, dict) or "kind" not in pot_cfg:
            raise ConfigError("config: potential.kind is required")
    for section in ("grid", "packet", "partition"):
        sec = cfg.get(section)
        if sec is not None and not isinstance(sec, dict):
            raise ConfigError(f"config: {section} must be an object")


def _write_manifest(outdir, experiment, cfg, summary):
    manifest = {
        "experiment": experiment,
        "config": cfg,
        "versions": {
            "scatlab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": cfg.get("seed"),
        "artifacts": sorted(
            f for f in os.listdir(outdir) if f.endswith((".csv", ".json", ".dat"))
        ),
        "headline": {
            k: v
            for k, v in summary.items()
            if isinstance(v, (int, float, str)) and k != "config"
        },
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def cmd_run(args):
    if args.experiment not in EXPERIMENTS:
        raise ConfigError(
            f"experiment: unknown name {args.experiment!r}; expected one of {EXPERIMENTS}"
        )
    overrides = _load_config(args.config)
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = merge_config(args.experiment, overrides)
    _validate(cfg)
    outdir = args.out or ("out_" + args.experiment.replace("-", "_"))
    os.makedirs(outdir, exist_ok=True)
    progress = None
    if args.verbose:
        def progress(kind, info):
            print(f"[{args.experiment}] {kind}: {info}", flush=True)
    summary = run_experiment(args.experiment, cfg, outdir, progress=progress)
    _write_manifest(outdir, args.experiment, cfg, summary)
    print(f"{args.experiment}: artifacts in {outdir}")
    return 0


def cmd_compare(args):
    a = CrossSectionReport.read_csv(args.report_a)
    b = CrossSectionReport.read_csv(args.report_b)
    worst = 0.0
    print("column,max_abs_diff,max_rel_diff,status")
    for col in args.column:
        abs_d, rel_d = compare_reports(a, b, column=col)
        status = "pass" if rel_d <= args.tol else "FAIL"
        worst = max(worst, rel_d)
        print("%s,%.6g,%.6g,%s" % (col, abs_d, rel_d, status))
    return 0 if worst <= args.tol else 2


def build_parser():
    p = argparse.ArgumentParser(prog="scatlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a named experiment")
    pr.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    pr.add_argument("--config", default=None, help="JSON config overriding the defaults")
    pr.add_argument("--out", default=None, help="output directory")
    pr.add_argument("--seed", type=int, default=None, help="override the config seed")
    pr.add_argument(
        "--threads", type=int, default=1,
        help="worker hint; results are identical for any value",
    )
    pr.add_argument("-v", "--verbose", action="store_true")
    pr.set_defaults(func=cmd_run)

    pc = sub.add_parser("compare", help="compare two cross-section report CSVs")
    pc.add_argument("report_a")
    pc.add_argument("report_b")
    pc.add_argument(
        "--column", action="append", default=None,
        help="column(s) to compare (default sigma_momentum)",
    )
    pc.add_argument("--tol", type=float, default=0.03, help="relative tolerance")
    pc.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "column", 0) is None:
        args.column = ["sigma_momentum"]
    try:
        return args.func(args)
    except NotConvergedError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ScatlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
