"""Smooth sign-function mollifier used in the regularized friction law.

The nonlinearity is

    beta(r) = -1                  for r <= -eps
            = gamma(r / eps)      for |r| < eps
            =  1                  for r >= eps

with gamma(t) = 2 C int_{-1}^{t} exp(-1/(1 - tau^2)) dtau - 1 and C the
reciprocal of the full bump integral, so that gamma(+-1) = +-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_PANELS = 64
PANEL_NODES = 16
# |t| above this is treated as the constant branch; exp(-1/(1-t^2)) underflows anyway.
_EDGE = 1.0 - 1e-14

_GL_X, _GL_W = np.polynomial.legendre.leggauss(PANEL_NODES)


def bump(tau):
    """exp(-1/(1 - tau^2)) on (-1, 1), zero elsewhere."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    inside = np.abs(tau) < _EDGE
    t = tau[inside]
    out[inside] = np.exp(-1.0 / (1.0 - t * t))
    return out


def _panel_integrals(edges: np.ndarray) -> np.ndarray:
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
    return half * (bump(nodes) @ _GL_W)


def _cumulative_table():
    edges = np.linspace(-1.0, 1.0, N_PANELS + 1)
    cum = np.concatenate([[0.0], np.cumsum(_panel_integrals(edges))])
    return edges, cum


def normalization_constant() -> float:
    """Return C = 1 / int_{-1}^{1} exp(-1/(1 - tau^2)) dtau."""
    _, cum = _cumulative_table()
    return 1.0 / cum[-1]


@dataclass(frozen=True)
class BetaFamily:
    """The mollified sign function ``beta_eps`` and its first two derivatives.

    All evaluators accept scalars or arrays and are vectorized.
    """

    epsilon: float
    normalization_C: float = field(init=False)
    _edges: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        edges, cum = _cumulative_table()
        object.__setattr__(self, "_edges", edges)
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "normalization_C", 1.0 / cum[-1])

    def gamma(self, t):
        """gamma(t) for t in [-1, 1]; clamps outside."""
        t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
        width = 2.0 / N_PANELS
        k = np.clip(np.floor((t + 1.0) / width).astype(int), 0, N_PANELS - 1)
        lo = self._edges[k]
        half = 0.5 * (t - lo)
        nodes = (lo + half)[..., None] + half[..., None] * _GL_X
        partial = half * (bump(nodes) @ _GL_W)
        return 2.0 * self.normalization_C * (self._cum[k] + partial) - 1.0

    def beta(self, r):
        r = np.asarray(r, dtype=float)
        t = np.atleast_1d(r / self.epsilon)
        out = np.sign(t)
        inside = np.abs(t) < _EDGE
        # evaluated on |t| so that oddness holds bitwise
        out[inside] *= self.gamma(np.abs(t[inside]))
        return out.reshape(r.shape) if r.ndim else float(out[0])

    def beta_prime(self, r):
        r = np.asarray(r, dtype=float)
        t = r / self.epsilon
        out = 2.0 * self.normalization_C / self.epsilon * bump(t)
        return out if out.ndim else float(out)

    def beta_second(self, r):
        r = np.asarray(r, dtype=float)
        t = np.atleast_1d(r / self.epsilon)
        out = np.zeros_like(t)
        inside = np.abs(t) < _EDGE
        ti = t[inside]
        s = 1.0 - ti * ti
        out[inside] = (2.0 * self.normalization_C / self.epsilon**2
                       * np.exp(-1.0 / s) * (-2.0 * ti / (s * s)))
        return out.reshape(r.shape) if r.ndim else float(out[0])

    def __call__(self, r):
        return self.beta(r)
