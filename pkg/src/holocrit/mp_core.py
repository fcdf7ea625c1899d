"""Ratio-one Marchenko-Pastur law on [0, 4].

Closed forms come from the substitution ``t = 4 sin^2(theta)``, under which
the density becomes ``(4/pi) cos^2(theta) d theta``. The tail mass above
``s`` is then ``(2u - sin 2u)/pi`` with ``u = arcsin(sqrt(4 - s)/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .mc import DomainError

EDGE = 4.0


def mp_density(x):
    """Density ``sqrt((4-x)x) / (2 pi x)``; 0 outside [0, 4], ``+inf`` at 0.

    The singularity at 0 is ``~ 1/(pi sqrt(x))``; nothing in the package
    integrates the density directly, so returning ``inf`` there is safe.
    """
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    inside = (x_arr > 0.0) & (x_arr < EDGE)
    xi = x_arr[inside]
    out[inside] = np.sqrt((EDGE - xi) * xi) / (2.0 * math.pi * xi)
    out[x_arr == 0.0] = math.inf
    if np.ndim(x) == 0:
        return float(out)
    return out


def _two_u_minus_sin(u):
    # 2u - sin(2u), series below 1e-2 to avoid cancellation
    u = np.asarray(u, dtype=float)
    v = 2.0 * u
    small = np.abs(v) < 2e-2
    out = np.where(small, 0.0, v - np.sin(v))
    vs = v[small]
    out[small] = vs**3 / 6.0 - vs**5 / 120.0 + vs**7 / 5040.0
    return out


def mp_tail_mass(s):
    """MP mass of ``[s, 4]``: 1 for ``s <= 0`` and 0 for ``s >= 4``."""
    s_arr = np.clip(np.asarray(s, dtype=float), 0.0, EDGE)
    u = np.arcsin(np.sqrt(EDGE - s_arr) / 2.0)
    out = _two_u_minus_sin(u) / math.pi
    out = np.where(s_arr <= 0.0, 1.0, out)
    out = np.where(s_arr >= EDGE, 0.0, out)
    if np.ndim(s) == 0:
        return float(out)
    return out


def mp_cdf(x):
    return 1.0 - mp_tail_mass(x)


def mp_quantile_s_gamma(gamma: float) -> float:
    """The point ``s`` with MP mass ``gamma`` above it, by bisection."""
    if not (0.0 < gamma < 1.0):
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    # bisection in u, where tail = (2u - sin 2u)/pi is increasing on [0, pi/2]
    lo, hi = 0.0, math.pi / 2.0
    target = gamma * math.pi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if float(_two_u_minus_sin(mid)) < target:
            lo = mid
        else:
            hi = mid
    u = 0.5 * (lo + hi)
    return EDGE * math.cos(u) ** 2


def rate_I_MP(x):
    """``int_4^x sqrt((t-4)/(4t)) dt`` for ``x >= 4``, ``+inf`` below 4.

    Antiderivative: ``sqrt(t(t-4))/2 - 2 arccosh(sqrt(t)/2)``.
    """
    x_arr = np.asarray(x, dtype=float)
    out = np.full_like(x_arr, math.inf)
    ok = x_arr >= EDGE
    xo = x_arr[ok]
    v = xo - EDGE
    # arccosh(y) = log1p(w + sqrt(w (w + 2))), w = y - 1 formed without cancellation
    w = v / (2.0 * (np.sqrt(xo) + 2.0))
    out[ok] = 0.5 * np.sqrt(xo * v) - 2.0 * np.log1p(w + np.sqrt(w * (w + 2.0)))
    out[ok] = np.maximum(out[ok], 0.0)
    if np.ndim(x) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: tuple
    weights: tuple

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if atoms.shape != weights.shape or atoms.ndim != 1 or atoms.size == 0:
            raise DomainError("atoms and weights must be equal-length nonempty vectors")
        if not np.all(np.isfinite(atoms)) or np.any(atoms < 0):
            raise DomainError("atoms must be finite and nonnegative")
        if np.any(weights <= 0):
            raise DomainError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "atoms", tuple(atoms.tolist()))
        object.__setattr__(self, "weights", tuple(weights.tolist()))

    @classmethod
    def empirical(cls, values: Sequence[float]) -> "DiscreteMeasure":
        values = np.asarray(values, dtype=float)
        return cls(tuple(values), tuple(np.full(values.size, 1.0 / values.size)))


def log_potential_phi(mu: DiscreteMeasure, z: float) -> float:
    """``sum_i w_i log|z - y_i| - z/2``; ``-inf`` when ``z`` is an atom."""
    atoms = np.asarray(mu.atoms)
    gaps = np.abs(z - atoms)
    if np.any(gaps == 0.0):
        return -math.inf
    return float(np.dot(mu.weights, np.log(gaps)) - z / 2.0)


def phi_mp(x: float) -> float:
    """Log-potential of the MP law at ``x >= 4`` minus ``x/2``, by quadrature.

    Integrates ``(4/pi) log(x - 4 sin^2 t) cos^2 t`` over ``[0, pi/2]``; at
    ``x = 4`` the log singularity at ``pi/2`` is damped by ``cos^2``.
    """
    if x < EDGE:
        raise DomainError(f"phi_mp needs x >= 4, got {x}")

    def integrand(t):
        c = math.cos(t)
        gap = x - EDGE + EDGE * c * c  # x - 4 sin^2 t, written to keep precision near pi/2
        if gap <= 0.0:
            return 0.0
        return (4.0 / math.pi) * math.log(gap) * c * c

    val, _ = integrate.quad(integrand, 0.0, math.pi / 2.0, epsabs=1e-13, epsrel=1e-13, limit=400)
    return val - x / 2.0


@dataclass(frozen=True)
class MPLaw:
    """Parameter-free handle on the ratio-one law."""

    support: tuple = (0.0, EDGE)

    def pdf(self, x):
        return mp_density(x)

    def cdf(self, x):
        return mp_cdf(x)

    def sf(self, x):
        return mp_tail_mass(x)

    def isf(self, gamma):
        return mp_quantile_s_gamma(gamma)

    def rate(self, x):
        return rate_I_MP(x)


MP = MPLaw()
