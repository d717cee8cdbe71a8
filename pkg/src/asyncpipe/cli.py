"""Command-line entry point.

    asyncpipe <subcommand> --config PATH --out DIR [--seeds 0,1,2] [--jobs N] [--full-scale]

Every subcommand writes one CSV per table into the output directory. ``repro``
also writes ``checks.csv`` and, unless ``--no-plots`` is given, PNG figures.
The exit status is 0 only when every check passes; otherwise the first
failing check is named on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .dataio import ConfigError, ParseError, load_config, parse_config, write_csv
from .recipes import RECIPES, RecipeError
from .runner import COMMANDS, Check, Outcome, default_jobs

OUT_ENV = "ASYNCPIPE_OUT"
CHECK_COLUMNS = ["name", "passed", "value", "expected", "detail"]


def _seeds(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asyncpipe", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        p.add_argument("--seeds", type=_seeds, help="comma-separated seeds")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
        p.add_argument("--full-scale", action="store_true", help="run at the original step counts")

    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file (defaults apply when omitted)")
        common(p)
    p = sub.add_parser("repro")
    p.add_argument("name", choices=[*RECIPES, "all"])
    p.add_argument("--dataset", help="cpusmall libsvm file for fig2b")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common(p)
    return parser


def write_outcome(outcome: Outcome, outdir: Path, prefix: str = "") -> list:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for table in outcome.tables:
        path = outdir / f"{prefix}{table.name}.csv"
        path.write_text(write_csv(table.records, table.columns), encoding="utf-8")
        paths.append(path)
    return paths


def run_repro(names, outdir: Path, seeds=None, jobs: int = 1, full_scale: bool = False,
              dataset=None, plots: bool = True) -> Outcome:
    total = Outcome()
    for name in names:
        kwargs = dict(jobs=jobs, full_scale=full_scale, dataset=dataset)
        if seeds:
            kwargs["seeds"] = tuple(seeds)
        try:
            outcome = RECIPES[name](**kwargs)
        except RecipeError as exc:
            # a single missing input should not hide the other recipes' results
            if len(names) == 1:
                raise
            total.checks.append(Check(f"{name}_inputs", False, "missing", "available", str(exc)))
            continue
        write_outcome(outcome, outdir)
        if plots:
            from .plotting import render
            render(name, outcome, outdir)
        total.checks.extend(outcome.checks)
    rows = [dict(name=c.name, passed=bool(c.passed), value=c.value, expected=c.expected,
                 detail=c.detail) for c in total.checks]
    (outdir / "checks.csv").write_text(write_csv(rows, CHECK_COLUMNS), encoding="utf-8")
    return total


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    try:
        if args.command == "repro":
            outdir = Path(args.out or os.environ.get(OUT_ENV) or "out")
            names = list(RECIPES) if args.name == "all" else [args.name]
            outdir.mkdir(parents=True, exist_ok=True)
            outcome = run_repro(names, outdir, args.seeds, jobs, args.full_scale, args.dataset,
                                plots=not args.no_plots)
        else:
            overrides = {"seeds": args.seeds} if args.seeds else {}
            cfg = load_config(args.config, **overrides) if args.config else parse_config("", **overrides)
            outdir = Path(args.out or cfg.output or os.environ.get(OUT_ENV) or "out")
            if args.full_scale and args.command == "heatmap":
                cfg.steps = max(cfg.steps, 1_000_000)
            outcome = COMMANDS[args.command](cfg, jobs=jobs)
            write_outcome(outcome, outdir)
    except (ConfigError, ParseError, RecipeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for check in outcome.checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.value} (expected {check.expected})")
    failed = [c for c in outcome.checks if not c.passed]
    if failed:
        print(f"first failing check: {failed[0].name}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
