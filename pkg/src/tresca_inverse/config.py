"""Experiment configuration files (TOML).

A config looks like::

    seed = 0
    output_dir = "results/example1"

    [domain]
    kind = "flower"          # or "annulus"
    r_in = 0.25
    r0 = 1.0
    rho = 0.25
    k = 6

    [domain.omega]           # petal discs; or `discs = [[x, y, r], ...]`
    center_radius = 0.8
    axis_radius = 0.25
    other_radius = 0.2

    [beta]
    epsilon = 1.0

    [data]
    f = "oscillating_source"
    g = "zero"

    [basis]
    J1 = 6
    J2 = 6

    [truth]
    cos = [2.0, 0.3, -0.2, 0.1, 0.05, -0.05]
    sin = [0.25, -0.15, 0.1, -0.05, 0.05, 0.02]

    [initial]
    constant = 2.0           # or cos = [...], sin = [...]

    [mesh]
    ladder = [0.01, 0.007, 0.005]

    [reference]
    target_h = 0.005         # isoparametric P2 unless degree = 1
    seed = 12345
    degree = 2

    [noise]
    sigma = [0.0, 1e-7]

    [solver]
    newton_rtol = 1e-11
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .beta import BetaFamily
from .geometry import Disc, DomainSpec, MeshError, annulus, flower_discs, flower_domain
from .inverse import FrictionCoefficient, NewtonOptions
from .registry import MANUFACTURED_SOLUTIONS, SCALAR_FUNCTIONS


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    domain: DomainSpec
    epsilon: float
    f: str = "zero"
    g: str = "zero"
    a: str | None = None
    mms: str | None = None
    J1: int = 6
    J2: int = 6
    truth: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    initial: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    ladder: tuple[float, ...] = ()
    reference_h: float | None = None
    reference_seed: int = 12345
    reference_degree: int = 2
    cache_dir: str | None = None
    sigmas: tuple[float, ...] = (0.0,)
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    output_dir: str = "results"
    seed: int = 0
    source: str = "<memory>"

    @property
    def beta(self) -> BetaFamily:
        return BetaFamily(self.epsilon)

    def truth_coefficient(self) -> FrictionCoefficient:
        if self.truth is None:
            raise ConfigError(f"{self.source}: [truth] coefficients are required")
        return FrictionCoefficient(*self.truth)

    def initial_coefficient(self) -> FrictionCoefficient:
        if self.initial is None:
            return FrictionCoefficient.constant(2.0, self.J1, self.J2)
        return FrictionCoefficient(*self.initial)

    def reference_target(self) -> float:
        """Fine-reference target h unless set: the finest ladder entry for P2, an eighth of it for P1."""
        if self.reference_h is not None:
            return self.reference_h
        return min(self.ladder) / (8.0 if self.reference_degree == 1 else 1.0)


def _domain(table: dict, source: str) -> DomainSpec:
    kind = table.get("kind", "annulus")
    omega = table.get("omega", {})
    try:
        if "discs" in omega:
            discs = tuple(Disc((float(x), float(y)), float(r)) for x, y, r in omega["discs"])
        elif kind == "flower":
            discs = flower_discs(int(table.get("k", 6)), **{k: float(v) for k, v in omega.items()})
        else:
            discs = ()
        if kind == "annulus":
            return annulus(float(table.get("r_in", 0.5)), float(table.get("r_out", 1.0)), discs)
        if kind == "flower":
            return flower_domain(float(table.get("r_in", 0.25)), float(table.get("r0", 1.0)),
                                 float(table.get("rho", 0.25)), int(table.get("k", 6)), discs)
    except (MeshError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid [domain]: {exc}") from exc
    raise ConfigError(f"{source}: unknown domain kind {kind!r}")


def _coeffs(table: dict | None, J1: int, J2: int, name: str, source: str):
    if table is None:
        return None
    if "constant" in table:
        c = FrictionCoefficient.constant(float(table["constant"]), J1, J2)
        return c.cos_coeffs, c.sin_coeffs
    cos = tuple(float(v) for v in table.get("cos", ()))
    sin = tuple(float(v) for v in table.get("sin", ()))
    if len(cos) != J1 or len(sin) != J2:
        raise ConfigError(f"{source}: [{name}] needs {J1} cos and {J2} sin coefficients, "
                          f"got {len(cos)} and {len(sin)}")
    return cos, sin


def from_dict(raw: dict, source: str = "<memory>") -> ExperimentConfig:
    """Build and validate a config from parsed TOML."""
    data = raw.get("data", {})
    for key in ("f", "g", "a"):
        if key in data and data[key] not in SCALAR_FUNCTIONS:
            raise ConfigError(f"{source}: data.{key} = {data[key]!r} is not a registered function "
                              f"({', '.join(sorted(SCALAR_FUNCTIONS))})")
    if "mms" in data and data["mms"] not in MANUFACTURED_SOLUTIONS:
        raise ConfigError(f"{source}: data.mms = {data['mms']!r} is not a registered "
                          f"manufactured solution ({', '.join(sorted(MANUFACTURED_SOLUTIONS))})")
    basis = raw.get("basis", {})
    J1, J2 = int(basis.get("J1", 6)), int(basis.get("J2", 6))
    if J1 < 1 or J2 < 1:
        raise ConfigError(f"{source}: J1 and J2 must be at least 1")
    ladder = tuple(float(h) for h in raw.get("mesh", {}).get("ladder", ()))
    if any(h <= 0 for h in ladder) or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError(f"{source}: mesh ladder must be positive and strictly decreasing")
    eps = float(raw.get("beta", {}).get("epsilon", 1.0))
    if eps <= 0:
        raise ConfigError(f"{source}: beta.epsilon must be positive")
    sigmas = tuple(float(s) for s in raw.get("noise", {}).get("sigma", (0.0,)))
    if any(s < 0 for s in sigmas):
        raise ConfigError(f"{source}: noise levels must be non-negative")
    ref = raw.get("reference", {})
    degree = ref.get("degree", 2)
    if degree not in (1, 2):
        raise ConfigError(f"{source}: reference.degree must be 1 or 2")
    solver = raw.get("solver", {})
    try:
        newton = NewtonOptions(
            tol=solver.get("newton_tol"),
            rtol=float(solver.get("newton_rtol", 1e-11)),
            xtol=float(solver.get("newton_xtol", 1e-10)),
            max_iter=int(solver.get("newton_max_iter", 200)),
            max_halvings=int(solver.get("max_halvings", 60)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid [solver]: {exc}") from exc
    truth = _coeffs(raw.get("truth"), J1, J2, "truth", source)
    initial = _coeffs(raw.get("initial"), J1, J2, "initial", source)
    for name, coeffs in (("truth", truth), ("initial", initial)):
        if coeffs is not None and not FrictionCoefficient(*coeffs).is_positive():
            raise ConfigError(f"{source}: [{name}] coefficient is not positive on Gamma")
    return ExperimentConfig(
        domain=_domain(raw.get("domain", {}), source),
        epsilon=eps,
        f=data.get("f", "zero"),
        g=data.get("g", "zero"),
        a=data.get("a"),
        mms=data.get("mms"),
        J1=J1,
        J2=J2,
        truth=truth,
        initial=initial,
        ladder=ladder,
        reference_h=float(ref["target_h"]) if "target_h" in ref else None,
        reference_seed=int(ref.get("seed", 12345)),
        reference_degree=int(degree),
        cache_dir=ref.get("cache_dir"),
        sigmas=sigmas,
        newton=newton,
        output_dir=str(raw.get("output_dir", "results")),
        seed=int(raw.get("seed", 0)),
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = from_dict(raw, str(path))
    if cfg.cache_dir is not None and not Path(cfg.cache_dir).is_absolute():
        cfg.cache_dir = str(path.parent / cfg.cache_dir)
    return cfg
