"""Named closures that experiment configs refer to by string."""

from __future__ import annotations

import numpy as np

from .forward import RADIAL_WAVE_MMS, ZERO_MMS, ManufacturedSolution


def oscillating_source(p):
    """f(x, y) = -5 x y exp(sin(4 pi y)), the inverse examples' source."""
    p = np.atleast_2d(p)
    x, y = p[:, 0], p[:, 1]
    return -5.0 * x * y * np.exp(np.sin(4 * np.pi * y))


def exp_sine_friction(p):
    """a(x, y) = 2 + exp(sin(x^2 y)), the forward example's friction bound."""
    p = np.atleast_2d(p)
    x, y = p[:, 0], p[:, 1]
    return 2.0 + np.exp(np.sin(x * x * y))


def zero(p):
    return np.zeros(len(np.atleast_2d(p)))


def one(p):
    return np.ones(len(np.atleast_2d(p)))


SCALAR_FUNCTIONS = {
    "oscillating_source": oscillating_source,
    "exp_sine_friction": exp_sine_friction,
    "zero": zero,
    "one": one,
}

MANUFACTURED_SOLUTIONS: dict[str, ManufacturedSolution] = {
    "radial_wave": RADIAL_WAVE_MMS,
    "zero": ZERO_MMS,
}


def scalar_function(name: str):
    try:
        return SCALAR_FUNCTIONS[name]
    except KeyError:
        raise KeyError(f"unknown function {name!r}; known: {sorted(SCALAR_FUNCTIONS)}") from None


def manufactured_solution(name: str) -> ManufacturedSolution:
    try:
        return MANUFACTURED_SOLUTIONS[name]
    except KeyError:
        raise KeyError(f"unknown manufactured solution {name!r}; "
                       f"known: {sorted(MANUFACTURED_SOLUTIONS)}") from None
