"""Command-line entry point: ``tresca-inverse <command> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .config import ConfigError, load_config
from .fem import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("tresca_inverse")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tresca-inverse", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="worker threads for Jacobian columns")
    p.add_argument("--seed", type=int, default=None, help="override the config's mesh seed")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("forward-rates", "manufactured-solution convergence study"),
                       ("recover", "single Newton recovery of the friction coefficient"),
                       ("noise-rates", "recovery error versus mesh size and noise level")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", required=True, type=Path)
        if name == "recover":
            s.add_argument("--inverse-crime", action="store_true",
                           help="generate data on the working mesh itself")
    return p


def _print_slopes(report):
    for name, s in report.slopes.items():
        print(f"slope {name}: {s:.3f}")


def _forward(cfg, args) -> int:
    report = experiments.forward_rates(cfg)
    path = experiments.write_csv(args.out / "forward_rates.csv", report.columns, report.rows,
                                 f"config {cfg.source}")
    for h, l2, h1 in report.rows:
        print(f"h={h:.5f}  L2={l2:.4e}  H1={h1:.4e}")
    _print_slopes(report)
    print(f"wrote {path}")
    return EXIT_OK


def _recover(cfg, args) -> int:
    result = experiments.recover(cfg, args.inverse_crime, args.threads)
    rows = [(r.k, r.F_norm, r.step, np.nan if r.e_rel is None else r.e_rel) for r in result.trace.rows]
    comment = f"config {cfg.source}; data {result.provenance}; h {result.h:.17g}"
    trace_path = experiments.write_csv(args.out / "recover_trace.csv", ("k", "F_norm", "step", "e_rel"),
                                       rows, comment)
    a = result.coefficient
    names = [f"alpha_{m}" for m in range(1, cfg.J1 + 1)] + [f"beta_{n}" for n in range(1, cfg.J2 + 1)]
    coef_path = experiments.write_csv(args.out / "recover_coefficients.csv", ("name", "value"),
                                      list(zip(names, a.vector)), comment)
    for k, fn, step, err in rows:
        print(f"k={k:3d}  |F|={fn:.4e}  step={step:.4g}  e_rel={err:.4e}")
    print(f"data: {result.provenance}, h={result.h:.5f}")
    print(f"wrote {trace_path} and {coef_path}")
    if result.error is not None:
        print(f"error: {result.error}", file=sys.stderr)
        return EXIT_SOLVER
    if not result.trace.converged:
        print(f"note: stopped at the iteration limit ({cfg.newton.max_iter}) before the tolerance",
              file=sys.stderr)
    return EXIT_OK


def _noise(cfg, args) -> int:
    report = experiments.noise_rates(cfg, args.threads)
    path = experiments.write_csv(args.out / "noise_rates.csv", report.columns, report.rows,
                                 f"config {cfg.source}")
    for sigma, h, err in report.rows:
        print(f"sigma={sigma:.1e}  h={h:.5f}  e_rel={err:.4e}")
    missing = len(cfg.sigmas) * len(cfg.ladder) - len(report.rows)
    if missing:
        print(f"{missing} (sigma, h) cells failed and are missing", file=sys.stderr)
    _print_slopes(report)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"forward-rates": _forward, "recover": _recover, "noise-rates": _noise}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, experiments.ExperimentError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
