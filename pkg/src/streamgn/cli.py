"""Command line front end for the experiment harness.

Subcommands reproduce the benchmark studies (step-sequence tables,
exploration-noise table, error curves, pivot normality) or run a custom
configuration from JSON. Every run writes delimited outputs, a summary,
figures, and a manifest with content hashes into the output directory.

Exit codes: 0 on success, 1 on configuration errors, 2 when some cell had
more than 5% failed replications.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

from . import harness, report, stats
from .harness import Cell, ExperimentConfig

__all__ = ["main", "build_parser", "config_from_json"]

# per-subcommand defaults for (seed, reps, n)
_DEFAULTS = {
    "table1": (0, 100, 10_000),
    "table2": (0, 100, 10_000),
    "table3": (0, 100, 10_000),
    "curves": (0, 100, 10_000),
    "normality": (0, 1000, 5000),
    "custom": (None, None, None),
}


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors (2 means numerical failure)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamgn",
                     description="Streaming Gauss-Newton experiment harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--reps", type=int, default=None,
                       help="Monte Carlo replications per cell")
        p.add_argument("--n", type=int, default=None, help="observations per run")
        p.add_argument("--out", type=str, default=None,
                       help="output directory (default runs/<command>)")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel worker processes")
        p.add_argument("--format", choices=("csv", "json"), default=None,
                       help="format of the delimited outputs")

    add_common(sub.add_parser("table1", help="Gauss-Newton step-sequence table"))
    add_common(sub.add_parser("table2", help="stochastic gradient step-sequence table"))
    add_common(sub.add_parser("table3", help="exploration-noise (c_beta, beta) table"))
    curves = sub.add_parser("curves", help="error-vs-sample-size curves")
    add_common(curves)
    curves.add_argument("--r0", type=str, default="1,5,12",
                        help="comma-separated initialization radii")
    add_common(sub.add_parser("normality", help="pivot normality diagnostics"))
    custom = sub.add_parser("custom", help="run an experiment config from JSON")
    add_common(custom)
    custom.add_argument("--config", type=str, required=True,
                        help="path to a JSON experiment configuration")
    return parser


_CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


def config_from_json(doc: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a JSON document (strict keys)."""
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    unknown = set(doc) - _CONFIG_FIELDS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "cells" not in doc:
        raise ValueError("config must define cells")
    kwargs = dict(doc)
    cells = []
    for cd in kwargs.pop("cells"):
        if not isinstance(cd, dict) or "algorithm" not in cd:
            raise ValueError("each cell must be an object with an algorithm key")
        cells.append(Cell(**cd))
    for key in ("theta_true", "checkpoints"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
    return ExperimentConfig(cells=tuple(cells), **kwargs)


def _canonical_command(args) -> str:
    """Reproducible invocation string; omits --out and --jobs, which cannot
    affect results."""
    parts = [args.command]
    if args.command == "custom":
        parts += ["--config", args.config]
        for flag in ("seed", "reps", "n"):
            value = getattr(args, flag)
            if value is not None:
                parts += [f"--{flag}", str(value)]
        parts += ["--format", args.format or "csv"]
    else:
        parts += ["--seed", str(args.seed), "--reps", str(args.reps),
                  "--n", str(args.n), "--format", args.format]
        if args.command == "curves":
            parts += ["--r0", args.r0]
    return " ".join(parts)


def _plan_runs(args):
    """Resolve the subcommand into (subdir, config, runner, figure, heading)."""
    d_seed, d_reps, d_n = _DEFAULTS[args.command]
    if args.command != "custom":
        args.seed = d_seed if args.seed is None else args.seed
        args.reps = d_reps if args.reps is None else args.reps
        args.n = d_n if args.n is None else args.n
        args.format = args.format or "csv"
    args.jobs = args.jobs or 1

    if args.command == "table1":
        cfg = harness.table1_config(args.seed, args.reps, args.n, args.jobs)
        return [("", cfg, harness.run_table, "table", "table1")]
    if args.command == "table2":
        cfg = harness.table2_config(args.seed, args.reps, args.n, args.jobs)
        return [("", cfg, harness.run_table, "table", "table2")]
    if args.command == "table3":
        cfg = harness.table3_config(args.seed, args.reps, args.n, args.jobs)
        return [("", cfg, harness.run_table, "table", "table3")]
    if args.command == "curves":
        radii = [float(v) for v in args.r0.split(",") if v.strip()]
        if not radii:
            raise ValueError("--r0 must list at least one radius")
        runs = []
        for r0 in radii:
            cfg = harness.curves_config(r0, args.seed, args.reps, args.n, args.jobs)
            runs.append((f"r0_{r0:g}", cfg, harness.run_curves, "curves",
                         f"curves r0={r0:g}"))
        return runs
    if args.command == "normality":
        cfg = harness.normality_config(args.seed, args.reps, args.n, args.jobs)
        return [("", cfg, harness.run_normality, "normality", "normality")]
    if args.command == "custom":
        text = Path(args.config).read_text()
        cfg = config_from_json(json.loads(text))
        overrides = {}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.reps is not None:
            overrides["replications"] = args.reps
        if args.n is not None:
            overrides["n"] = args.n
        overrides["jobs"] = args.jobs
        cfg = replace(cfg, **overrides)
        runner = harness.run_normality if cfg.collect_pivots else harness.run_experiment
        return [("", cfg, runner, "auto", f"custom ({args.config})")]
    raise ValueError(f"unknown command {args.command!r}")


def _print_report(rep, heading):
    print(f"== {heading} ==")
    print(stats.rows_to_text(rep.rows), end="")
    for f in rep.flagged_cells():
        print(f"flagged: {f['algorithm']} cell with {f['failed']}/"
              f"{f['replications']} failed replications")
    for row in rep.ks:
        print(f"ks[{row['algorithm']}] = {row['ks']:.4f} "
              f"(99% critical {row['ks_crit_99']:.4f}), "
              f"pivot mean = {row['mean']:.3f}")
    print()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        runs = _plan_runs(args)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"streamgn: config error: {exc}", file=sys.stderr)
        return 1

    out_root = Path(args.out) if args.out else Path("runs") / args.command
    try:
        out_root.mkdir(parents=True, exist_ok=True)
        probe = out_root / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        print(f"streamgn: output directory is not writable: {exc}", file=sys.stderr)
        return 1

    written = []
    flagged = False
    seed_for_manifest = None
    for subdir, config, runner, figure, heading in runs:
        rep = runner(config)
        target = out_root / subdir if subdir else out_root
        written += report.write_outputs(rep, target, fmt=args.format or "csv",
                                        figure=figure)
        _print_report(rep, heading)
        flagged = flagged or bool(rep.flagged_cells())
        seed_for_manifest = config.master_seed
    manifest = report.write_manifest(out_root, _canonical_command(args),
                                     seed_for_manifest, written)
    elapsed = time.perf_counter() - start
    print(f"outputs in {out_root} ({len(written)} files + {manifest.name}); "
          f"wall clock {elapsed:.1f}s")
    return 2 if flagged else 0


if __name__ == "__main__":
    sys.exit(main())
