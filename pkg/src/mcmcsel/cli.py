"""Command line: ``mcmcsel {compare,reproduce,estimate,bound}``.

Every subcommand writes a CSV with the same columns plus a short
human-readable summary.  Exit status 0 means success; each error class maps
to its own nonzero status (see :mod:`mcmcsel.errors`).
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .config import RunConfig, from_dict, parse_config
from .divergence import BoundInputs, DivergenceKind, estimate_divergence, theorem_bound
from .errors import IoError, MCMCSelError, ParseError, ValidationError
from .experiment import ComparisonReport, run_config
from .knn import default_k

log = logging.getLogger("mcmcsel")

HEADER = ("strategy", "n", "family", "alpha", "estimate", "ci_lower", "ci_upper", "k", "N", "M", "mode", "seed")


@dataclass(frozen=True)
class CurveRow:
    strategy: str
    n: int
    family: str
    alpha: float
    estimate: float
    ci_lower: float
    ci_upper: float
    k: int
    N: int
    M: int
    mode: str
    seed: int


_REAL = {"alpha", "estimate", "ci_lower", "ci_upper"}
_INT = {"n", "k", "N", "M", "seed"}


def format_real(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _cell(name: str, value) -> str:
    if name in _REAL:
        return format_real(value)
    if name in _INT:
        return str(int(value))
    return str(value)


def write_csv(rows: Sequence[CurveRow], path) -> None:
    """Write rows sorted by (strategy, n); reals keep 17 significant digits."""
    rows = sorted(rows, key=lambda r: (r.strategy, r.n))
    names = [f.name for f in fields(CurveRow)]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for r in rows:
                w.writerow([_cell(name, v) for name, v in zip(names, astuple(r))])
    except OSError as exc:
        raise IoError(f"{path}: cannot write ({exc.strerror})") from None


def read_csv(path) -> list[CurveRow]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != HEADER:
                raise ParseError(f"{path}: unexpected header {header}")
            out = []
            for rec in reader:
                vals = {}
                for name, cell in zip(HEADER, rec):
                    vals[name] = float(cell) if name in _REAL else int(cell) if name in _INT else cell
                out.append(CurveRow(**vals))
            return out
    except OSError as exc:
        raise IoError(f"{path}: cannot read ({exc.strerror})") from None


def report_rows(report: ComparisonReport, master_seed: int) -> list[CurveRow]:
    rows = []
    for curve in report.curves:
        for n, e in curve.points:
            rows.append(CurveRow(
                curve.strategy_id, n, e.kind.family.value, e.kind.alpha, e.value, e.ci[0], e.ci[1],
                e.k, e.N, e.M, e.mode, master_seed,
            ))
    return rows


def summary_text(report: ComparisonReport, cfg: RunConfig) -> str:
    lines = [
        f"divergence: {cfg.kind}  mode: {cfg.mode}  N={cfg.N} M={cfg.M if not cfg.known_f else 0} k={cfg.k}",
        f"criterion: {report.criterion}" + (f" (threshold {report.threshold})" if report.threshold is not None else ""),
    ]
    for curve in report.curves:
        last_n, last = curve.points[-1]
        lines.append(
            f"  {curve.strategy_id}: score={format_real(report.scores[curve.strategy_id])} "
            f"final n={last_n} estimate={last.value:.6g} CI=[{last.ci[0]:.6g}, {last.ci[1]:.6g}]"
        )
    lines.append(f"winner: {report.winner}")
    return "\n".join(lines) + "\n"


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel 'iteration n'
set ylabel '{ylabel}'
set logscale y
plot {plots}
"""


def gnuplot_script(csv_name: str, strategies: Sequence[str], ylabel: str) -> str:
    plots = ", \\\n     ".join(
        f"'{csv_name}' using (strcol(1) eq '{s}' ? $2 : 1/0):5 with linespoints title '{s}'" for s in strategies
    )
    return GNUPLOT.format(ylabel=ylabel, plots=plots)


def _write_text(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"{path}: cannot write ({exc.strerror})") from None


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"{out}: cannot create directory ({exc.strerror})") from None
    return out


def _run(cfg: RunConfig, args) -> int:
    out = _outdir(args.out or cfg.output_dir)
    _write_text(out / "resolved_config.yaml", cfg.echo())
    report = run_config(cfg, threads=args.threads)
    write_csv(report_rows(report, cfg.master_seed), out / "curves.csv")
    text = summary_text(report, cfg)
    _write_text(out / "summary.txt", text)
    if args.gnuplot:
        _write_text(out / "curves.gp", gnuplot_script("curves.csv", [c.strategy_id for c in report.curves], str(cfg.kind)))
    sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = from_dict({**cfg.resolved, "master_seed": args.seed})
    return _run(cfg, args)


def cmd_reproduce(args) -> int:
    cfg = from_dict({"reproduce_figure": args.figure, "master_seed": args.seed})
    return _run(cfg, args)


def load_points(path) -> np.ndarray:
    """Sample file: one point per row, comma separated, optional header line."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"{path}: no such file")
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError:
        pass
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def cmd_estimate(args) -> int:
    kind = DivergenceKind(args.family, args.alpha)
    xs, ys = load_points(args.x), load_points(args.y)
    k = default_k(xs.shape[0]) if args.k is None else args.k
    jit = rngmod.generator(args.seed, "jitter", 0) if args.jitter else None
    est = estimate_divergence(kind, xs, k, ys=ys, level=args.level, jitter_rng=jit, seed=args.seed)
    out = _outdir(args.out or ".")
    row = CurveRow("estimate", 0, kind.family.value, kind.alpha, est.value, est.ci[0], est.ci[1],
                   est.k, est.N, est.M, est.mode, args.seed)
    write_csv([row], out / "estimate.csv")
    text = (
        f"{kind} between {args.x} (N={est.N}) and {args.y} (M={est.M}), k={est.k}\n"
        f"estimate: {est.value:.6g}  {args.level:g} CI: [{est.ci[0]:.6g}, {est.ci[1]:.6g}]\n"
    )
    _write_text(out / "estimate_summary.txt", text)
    sys.stdout.write(text)
    return 0


def parse_range(text: str) -> list[int]:
    """``"5"``, ``"1:10"`` (inclusive) or ``"1,2,5"``."""
    try:
        if ":" in text:
            a, b = text.split(":")
            return list(range(int(a), int(b) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise ValidationError(f"--n: cannot parse {text!r}") from None


def cmd_bound(args) -> int:
    kind = DivergenceKind(args.family, args.alpha)
    ns = parse_range(args.n)
    rows = []
    for n in ns:
        b = theorem_bound(kind, BoundInputs(args.r, args.delta, n))
        rows.append(CurveRow("bound", n, kind.family.value, kind.alpha, b, b, b, 0, 0, 0, "bound", 0))
    out = _outdir(args.out or ".")
    write_csv(rows, out / "bound.csv")
    text = "".join(f"n={r.n} bound={format_real(r.estimate)}\n" for r in rows)
    _write_text(out / "bound_summary.txt", text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcmcsel", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress per-checkpoint log lines")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--out", help="output directory (default: the config's output_dir)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads; does not change the output (env MCMCSEL_THREADS)")
        sp.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script for the curves")

    c = sub.add_parser("compare", parents=[common], help="compare the strategies of a YAML run configuration")
    c.add_argument("config")
    c.add_argument("--seed", type=int, default=None, help="override master_seed")
    run_flags(c)
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("reproduce", parents=[common], help="run one of the five canned comparisons")
    r.add_argument("--figure", type=int, required=True, choices=range(1, 6))
    r.add_argument("--seed", type=int, default=0)
    run_flags(r)
    r.set_defaults(func=cmd_reproduce)

    e = sub.add_parser("estimate", parents=[common], help="divergence between two sample files")
    e.add_argument("--family", required=True, choices=["alpha", "renyi", "tsallis"])
    e.add_argument("--alpha", type=float, required=True)
    e.add_argument("--x", required=True, help="CSV of points from p, one per row")
    e.add_argument("--y", required=True, help="CSV of points from f, one per row")
    e.add_argument("--k", type=int, default=None)
    e.add_argument("--level", type=float, default=0.95)
    e.add_argument("--jitter", action="store_true", help="break exact ties before the neighbour search")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bound", parents=[common], help="evaluate the geometric convergence bound")
    b.add_argument("--family", required=True, choices=["alpha", "renyi", "tsallis"])
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--r", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--n", required=True, help="iteration, inclusive range a:b, or list a,b,c")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bound)
    return p


_handler: Optional[logging.Handler] = None


def _configure_logging(quiet: bool):
    """Log to the current stderr through the package logger only."""
    global _handler
    if _handler is not None:
        log.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(_handler)
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    log.propagate = False


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.quiet)
    try:
        return args.func(args)
    except MCMCSelError as exc:
        sys.stderr.write(f"mcmcsel: {type(exc).__name__}: {exc}\n")
        return exc.exit_code


def main() -> None:
    sys.exit(run_command())
