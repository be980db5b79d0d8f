"""Convergence studies and recovery runs driven by an :class:`ExperimentConfig`."""

from __future__ import annotations

import csv
import datetime as _dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .fem import SolverError, errors_against
from .forward import NonlinearProblem, mms_rhs, solve_nonlinear
from .geometry import generate_mesh, measure_h
from .inverse import (FrictionCoefficient, InverseContext, NewtonTrace, ObservationData,
                      PositivityError, add_noise, c2_error, inverse_crime_data, newton_recover)
from .reference import ReferenceSolution, assert_not_nested, reference_solution
from .registry import manufactured_solution, scalar_function

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    """A solver failure inside an experiment, tagged with where it happened."""


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    if len(h) < 2:
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class RateReport:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    slopes: dict[str, float] = field(default_factory=dict)

    def column(self, name: str, **where) -> np.ndarray:
        idx = self.columns.index(name)
        keep = [r for r in self.rows
                if all(r[self.columns.index(k)] == v for k, v in where.items())]
        return np.array([r[idx] for r in keep], dtype=float)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, columns, rows, comment: str = "") -> Path:
    """CSV with a timestamped comment line, a header row and 17-digit floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with path.open("w", newline="") as fh:
        fh.write(f"# generated {stamp}{'; ' + comment if comment else ''}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# forward convergence


def forward_rates(cfg: ExperimentConfig) -> RateReport:
    """L2 and H1 errors of the nonlinear solve against a manufactured solution."""
    if cfg.mms is None:
        raise ConfigError(f"{cfg.source}: forward-rates needs data.mms")
    if not cfg.ladder:
        raise ConfigError(f"{cfg.source}: mesh ladder is empty")
    ms = manufactured_solution(cfg.mms)
    a = scalar_function(cfg.a or "one")
    beta = cfg.beta
    f, g = mms_rhs(ms, a, beta)
    report = RateReport(("h", "err_l2", "err_h1"))
    for level, target in enumerate(cfg.ladder):
        mesh = generate_mesh(cfg.domain, target, seed=cfg.seed + level)
        try:
            u = solve_nonlinear(NonlinearProblem(mesh, beta, a, f, g))
        except SolverError as exc:
            raise ExperimentError(f"level {level} (target h={target:g}): {exc}") from exc
        e_l2, e_h1 = errors_against(mesh, u.values, ms.u, ms.grad)
        report.rows.append((measure_h(mesh), e_l2, e_h1))
        log.info("level %d: h=%.4g  n=%d  L2=%.3e  H1=%.3e",
                 level, mesh.h_max, mesh.n_vertices, e_l2, e_h1)
    report.slopes["err_l2"] = fit_slope(report.column("h"), report.column("err_l2"))
    report.slopes["err_h1"] = fit_slope(report.column("h"), report.column("err_h1"))
    return report


# ---------------------------------------------------------------------------
# inverse problem


def make_context(cfg: ExperimentConfig, mesh, threads: int = 1) -> InverseContext:
    return InverseContext(cfg.domain, mesh, cfg.beta, scalar_function(cfg.f),
                          scalar_function(cfg.g), cfg.J1, cfg.J2, threads)


def make_reference(cfg: ExperimentConfig, ctx: InverseContext) -> ReferenceSolution:
    return reference_solution(ctx, cfg.truth_coefficient(), cfg.reference_target(),
                              cfg.reference_seed, cfg.cache_dir,
                              key_extra={"f": cfg.f, "g": cfg.g}, degree=cfg.reference_degree)


@dataclass
class RecoveryResult:
    coefficient: FrictionCoefficient
    trace: NewtonTrace
    provenance: str
    h: float
    error: Exception | None = None


def recover(cfg: ExperimentConfig, inverse_crime: bool = False, threads: int = 1,
            callback=None) -> RecoveryResult:
    """Newton recovery on the finest ladder mesh.

    Coarser ladder entries, if any, are solved first and each result starts
    the next level (continuation); a single entry means one run from the
    configured initial guess.  The returned trace is that of the last level
    reached.  A Newton failure is returned in ``RecoveryResult.error``
    together with the trace recorded up to that point.
    """
    if not cfg.ladder:
        raise ConfigError(f"{cfg.source}: mesh ladder is empty")
    a_true = cfg.truth_coefficient()
    start = cfg.initial_coefficient()
    ref = None
    for level, target in enumerate(cfg.ladder):
        mesh = generate_mesh(cfg.domain, target, seed=cfg.seed + level)
        ctx = make_context(cfg, mesh, threads)
        if inverse_crime:
            data = inverse_crime_data(a_true, ctx)
        else:
            if ref is None:
                ref = make_reference(cfg, ctx)
            assert_not_nested(mesh, ref.mesh)
            data = ref.observe(ctx)
        if cfg.sigmas and cfg.sigmas[0] > 0:
            data = add_noise(data, ctx, cfg.sigmas[0])
        rows = []

        def keep(row):
            rows.append(row)
            if callback is not None:
                callback(row)

        try:
            a, trace = newton_recover(start, data, ctx, cfg.newton, a_true, keep)
        except (SolverError, PositivityError) as exc:
            last = FrictionCoefficient.from_vector(rows[-1].x, cfg.J1) if rows else start
            return RecoveryResult(last, NewtonTrace(rows, False), data.provenance, measure_h(mesh), exc)
        log.info("level %d  h=%.4g  %d iterations", level, measure_h(mesh), trace.iterations)
        start = a
    return RecoveryResult(a, trace, data.provenance, measure_h(mesh))


def noise_rates(cfg: ExperimentConfig, threads: int = 1, on_trace=None) -> RateReport:
    """e_rel over the ladder for every noise level, with continuation per level.

    Meshes, contexts and reference observations are shared between noise
    levels; each sigma carries its own continuation iterate.  A failed cell
    is logged and left out of the report.  ``on_trace(sigma, level, trace)``
    sees every finished Newton run.
    """
    if not cfg.ladder or not cfg.sigmas:
        raise ConfigError(f"{cfg.source}: ladder and noise levels must be nonempty")
    a_true = cfg.truth_coefficient()
    current = {s: cfg.initial_coefficient() for s in cfg.sigmas}
    results: dict[float, list[tuple]] = {s: [] for s in cfg.sigmas}
    ref = None
    for level, target in enumerate(cfg.ladder):
        mesh = generate_mesh(cfg.domain, target, seed=cfg.seed + level)
        ctx = make_context(cfg, mesh, threads)
        if ref is None:
            ref = make_reference(cfg, ctx)
        assert_not_nested(mesh, ref.mesh)
        exact = ref.observe(ctx)
        h = measure_h(mesh)
        for sigma in cfg.sigmas:
            data = add_noise(exact, ctx, sigma)
            try:
                a, trace = newton_recover(current[sigma], data, ctx, cfg.newton, a_true)
            except (SolverError, PositivityError) as exc:
                log.warning("sigma=%g level %d: %s", sigma, level, exc)
                continue
            if on_trace is not None:
                on_trace(sigma, level, trace)
            current[sigma] = a
            err = c2_error(a, a_true)
            results[sigma].append((sigma, h, err))
            log.info("sigma=%g  h=%.4g  e_rel=%.3e  (%d iterations)", sigma, h, err, trace.iterations)
    report = RateReport(("sigma", "h", "e_rel"))
    for sigma in cfg.sigmas:
        report.rows.extend(results[sigma])
    if 0.0 in results and len(results[0.0]) >= 2:
        report.slopes["e_rel(sigma=0)"] = fit_slope(report.column("h", sigma=0.0),
                                                   report.column("e_rel", sigma=0.0))
    return report


def observe_exact(cfg: ExperimentConfig, ctx: InverseContext) -> ObservationData:
    ref = make_reference(cfg, ctx)
    assert_not_nested(ctx.mesh, ref.mesh)
    return ref.observe(ctx)
