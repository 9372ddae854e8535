"""Command line interface.

    genias solve    --config cfg.json [--jobs N] [--out DIR]
    genias sweep    --config cfg.json --theta-grid 1e-3,1e-2,... [--jobs N] [--out DIR]
    genias diagnose --run DIR

Exit status: 0 on success, 1 for configuration errors, 2 for solver failures.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import run_experiment
from .krylov import SolverError
from .updates import InadmissiblePrior

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def _parse_grid(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid --theta-grid: {exc}") from exc
    if not vals or any(not v > 0 for v in vals):
        raise ConfigError("--theta-grid needs a comma-separated list of positive numbers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genias", description="Generalized IAS reconstructions")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the experiment described by a JSON config")
    solve.add_argument("--config", required=True, type=Path)
    solve.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    solve.add_argument("--out", type=Path, help="override output_dir")

    sweep = sub.add_parser("sweep", help="run a vartheta sweep")
    sweep.add_argument("--config", required=True, type=Path)
    sweep.add_argument("--theta-grid", required=True)
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", type=Path)

    diag = sub.add_parser("diagnose", help="summarise a finished run directory")
    diag.add_argument("--run", required=True, type=Path)
    return parser


def _print_table(path: Path, out) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return
    shown = []
    for row in rows:
        cells = []
        for c in row:
            try:
                f = float(c)
                cells.append(c if c.lstrip("-").isdigit() else f"{f:.4g}")
            except ValueError:
                cells.append(c)
        shown.append(cells)
    widths = [max(len(r[i]) for r in shown if i < len(r)) for i in range(len(shown[0]))]
    for r in shown:
        out.write("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n")


def diagnose(run_dir: Path, out=None) -> int:
    out = sys.stdout if out is None else out
    if not run_dir.is_dir():
        raise ConfigError(f"no such run directory: {run_dir}")
    summary = next((run_dir / f for f in ("sweep.csv", "summary.csv") if (run_dir / f).exists()), None)
    if summary is None:
        raise ConfigError(f"{run_dir} has no sweep.csv or summary.csv")
    out.write(f"{summary.name}\n")
    _print_table(summary, out)
    for diag in sorted(run_dir.glob("diagnostics_*.csv")):
        with open(diag, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        first, last = rows[0], rows[-1]
        total = sum(int(r["inner_iters"]) for r in rows)
        out.write(
            f"{diag.stem}: {len(rows)} outer iterations, {total} inner, "
            f"objective {float(first['objective']):.6g} -> {float(last['objective']):.6g}, nu {float(last['nu']):.4g}\n"
        )
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diagnose":
            return diagnose(args.run)
        cfg = load_config(args.config)
        if args.command == "sweep":
            cfg = cfg.with_sweep(_parse_grid(args.theta_grid))
        if args.out is not None:
            cfg = cfg.with_output(str(args.out))
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.command == "sweep" and cfg.experiment == "ct":
            raise ConfigError("sweep supports the denoise and custom experiments")
        result = run_experiment(cfg, jobs=args.jobs)
    except (ConfigError, InadmissiblePrior, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {result['output_dir']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
