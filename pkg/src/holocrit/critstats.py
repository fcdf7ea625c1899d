"""Expected critical-point counts of random sections of O(N) over CP^m.

Counts are expressed through the Wishart ensemble of dimension ``m + 1``:

    E N_{m, 2m-k, N}(B) = 2 (N-1)^{m+1} / N
        * E[ exp(-(1 - 2/N)(m+1) lambda_{k+1} / 2) ; lambda_{k+1} in N/(N-1) B ]

and summing over ``k`` gives the total count. Prefactors are carried in the
log domain because ``(N-1)^{m+1}`` overflows for moderate ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.special import logsumexp

from . import _kernels
from .mc import CountEstimate, DomainError, as_stream, map_chunks
from .mp_core import EDGE, mp_quantile_s_gamma, rate_I_MP
from .wishart import sample_spectra, tridiagonal_model


@dataclass(frozen=True)
class Window:
    """Half-open interval ``[lower, upper)`` of normalized critical values."""

    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not (self.lower >= 0.0):
            raise DomainError(f"window lower bound must be >= 0, got {self.lower}")
        if not (self.upper > self.lower):
            raise DomainError(f"empty window [{self.lower}, {self.upper})")

    def scaled(self, factor: float) -> "Window":
        return Window(self.lower * factor, self.upper * factor)

    def contains(self, x):
        x = np.asarray(x)
        return (x >= self.lower) & (x < self.upper)

    @classmethod
    def parse(cls, text: str) -> "Window":
        lo, hi = text.split(":")
        return cls(float(lo), float(hi))

    def __str__(self):
        return f"[{self.lower:g}, {self.upper:g})"


@dataclass
class RatePoint:
    params: tuple
    analytic_rate: float
    empirical_rate: Optional[float] = None
    m: Optional[int] = None
    flagged: bool = False
    estimate: Optional[CountEstimate] = field(default=None, repr=False)

    def to_dict(self):
        out = {
            "params": list(self.params),
            "m": self.m,
            "analytic_rate": self.analytic_rate,
            "empirical_rate": self.empirical_rate,
            "flagged": self.flagged,
        }
        if self.estimate is not None:
            out["estimate"] = self.estimate.to_dict()
        return out


def _check_N(N):
    if int(N) != N or N < 2:
        raise DomainError(f"degree N must be an integer >= 2, got {N}")


def _check_m(m):
    if int(m) != m or m < 1:
        raise DomainError(f"m must be an integer >= 1, got {m}")


def _check_x(x):
    if not (x >= 0):
        raise DomainError(f"x must be >= 0, got {x}")


def saddle_exponent(m: int, N: int) -> float:
    """Decay constant ``c`` in ``exp(-c x)`` of the index-m critical value density."""
    return (m + 1) * N / (2.0 * (N - 1)) * (2.0 - 2.0 / N + m)


# ---------------------------------------------------------------------------
# closed forms for index m


def log_density_index_m(m: int, N: int, x: float) -> float:
    _check_m(m)
    _check_N(N)
    _check_x(x)
    return m * math.log(N - 1) + 2.0 * math.log(m + 1) - saddle_exponent(m, N) * x


def density_index_m(m: int, N: int, x: float) -> float:
    """Density of normalized critical values of index ``m``: ``(N-1)^m (m+1)^2 exp(-c x)``."""
    return math.exp(log_density_index_m(m, N, x))


def log_expected_index_m_total(m: int, N: int) -> float:
    _check_m(m)
    _check_N(N)
    return math.log(2.0 * (m + 1)) + (m + 1) * math.log(N - 1) - math.log(2.0 * (N - 1) + m * N)


def expected_index_m_total(m: int, N: int) -> float:
    """``2(m+1)(N-1)^{m+1} / (2(N-1) + mN)``."""
    return math.exp(log_expected_index_m_total(m, N))


def log_expected_index_m_tail(m: int, N: int, x: float) -> float:
    _check_x(x)
    return log_expected_index_m_total(m, N) - saddle_exponent(m, N) * x


def expected_index_m_tail(m: int, N: int, x: float) -> float:
    """Expected number of index-m critical points with normalized value ``>= x``.

    This is the integral of :func:`density_index_m` over ``[x, inf)``, i.e.
    ``2(m+1)(N-1)^{m+1}/(2(N-1)+mN) * exp(-c x)``.
    """
    return math.exp(log_expected_index_m_tail(m, N, x))


def log_density_index_m_via_smallest_eig(m: int, N: int, x: float) -> float:
    """Index-m density assembled from its ingredients rather than the closed form.

    The smallest eigenvalue of the dimension-``M = m+1`` ensemble satisfies
    ``P((M/2) lambda_M >= y) = exp(-M y)``, so ``lambda_M`` has density
    ``(M^2/2) exp(-M^2 lambda / 2)``. Pushing it through the count formula with
    ``lambda = N x / (N-1)`` gives the density in ``x``.
    """
    _check_m(m)
    _check_N(N)
    _check_x(x)
    M = m + 1
    lam = N * x / (N - 1.0)
    log_pref = math.log(2.0) + M * math.log(N - 1) - math.log(N)
    log_weight = -(1.0 - 2.0 / N) * M * lam / 2.0
    log_law = 2.0 * math.log(M) - math.log(2.0) - M * M * lam / 2.0
    log_jac = math.log(N / (N - 1.0))
    return log_pref + log_weight + log_law + log_jac


# ---------------------------------------------------------------------------
# Monte Carlo estimators


def weight_exponent(m: int, N: int) -> float:
    """``a`` in the per-eigenvalue weight ``exp(-a lambda)``."""
    return (1.0 - 2.0 / N) * (m + 1) / 2.0


def log_prefactor(m: int, N: int) -> float:
    """``log(2 (N-1)^{m+1} / N)``."""
    return math.log(2.0) + (m + 1) * math.log(N - 1) - math.log(N)


def _index_log_weights(spectra, k, a, win):
    lam = spectra[:, k]
    logw = np.full(lam.shape, -np.inf)
    inside = win.contains(lam)
    logw[inside] = -a * lam[inside]
    return logw


def _total_log_weights(spectra, a, win):
    inside = win.contains(spectra)
    with np.errstate(divide="ignore"):
        terms = np.where(inside, -a * spectra, -np.inf)
    return logsumexp(terms, axis=1)


def mc_expected_count_index(m: int, k: int, N: int, window: Window, n: int, stream, method: str = "auto", workers=None) -> CountEstimate:
    """Estimate the expected number of critical points of index ``2m - k`` with values in ``window``."""
    _check_m(m)
    _check_N(N)
    if not (0 <= k <= m):
        raise DomainError(f"need 0 <= k <= m, got k={k}, m={m}")
    if n < 1:
        raise DomainError("n must be >= 1")
    stream = as_stream(stream)
    win = window.scaled(N / (N - 1.0))
    a = weight_exponent(m, N)
    spectra = sample_spectra(m + 1, n, stream, method=method, workers=workers)
    logw = _index_log_weights(spectra, k, a, win)
    est = CountEstimate.from_log_weights(logw, log_prefactor(m, N), seed=stream)
    est.extra.update({"m": m, "k": k, "index": 2 * m - k, "N": N, "window": [window.lower, window.upper]})
    return est


def _conditional_chunk(gen, size, M, a, win):
    d, e = tridiagonal_model(gen, size, M)
    logc, _, lam2 = _kernels.conditional_top(d, e, win.lower, win.upper, a)
    # eigenvalues below the top one can also fall in the window
    need = (lam2 >= win.lower) & (M > 1)
    if np.any(need):
        for i in np.nonzero(need)[0]:
            ev = eigvalsh_tridiagonal(d[i], e[i], lapack_driver="sterf")[::-1][1:]
            inside = win.contains(ev)
            if np.any(inside):
                logc[i] = np.logaddexp(logc[i], logsumexp(-a * ev[inside]))
    return logc


def mc_expected_count_total(m: int, N: int, window: Window, n: int, stream, method: str = "plain", workers=None) -> CountEstimate:
    """Estimate the expected total number of critical points with values in ``window``.

    ``method="plain"`` averages ``sum_i exp(-a lambda_i) 1[lambda_i in window]``
    over sampled spectra. ``method="conditional"`` integrates the top
    eigenvalue out exactly given the others (same expectation, far lower
    variance in deep upper tails where plain sampling sees no hits).
    """
    _check_m(m)
    _check_N(N)
    if n < 1:
        raise DomainError("n must be >= 1")
    stream = as_stream(stream)
    win = window.scaled(N / (N - 1.0))
    a = weight_exponent(m, N)
    if method == "conditional":
        M = m + 1
        parts = map_chunks(lambda g, size, start: _conditional_chunk(g, size, M, a, win), n, stream, workers)
        logw = np.concatenate(parts)
    else:
        sampler = "auto" if method == "plain" else method
        spectra = sample_spectra(m + 1, n, stream, method=sampler, workers=workers)
        logw = _total_log_weights(spectra, a, win)
    est = CountEstimate.from_log_weights(logw, log_prefactor(m, N), seed=stream)
    est.extra.update({"m": m, "N": N, "window": [window.lower, window.upper], "method": method})
    return est


# ---------------------------------------------------------------------------
# growth rates


def x_scaled(N: int, x: float) -> float:
    return N * x / (N - 1.0)


def psi(N: int, t: float) -> float:
    """``log(N-1) - (1 - 2/N) t / 2``."""
    _check_N(N)
    return math.log(N - 1) - (1.0 - 2.0 / N) * t / 2.0


def index_m_rate_limit(N: int) -> float:
    """Growth rate of the index-m count (and of any fixed ``k`` on ``[0, x)`` with ``x_N >= 4``)."""
    _check_N(N)
    return math.log(N - 1)


def rate_fixed_k(N: int, k: int, x: float, side: str = "above") -> RatePoint:
    """Growth rate of index ``2m - k`` counts on ``[x, inf)`` (above) or ``[0, x)`` (below)."""
    _check_N(N)
    _check_x(x)
    if k < 0:
        raise DomainError("k must be >= 0")
    if side not in ("above", "below"):
        raise DomainError(f"side must be 'above' or 'below', got {side!r}")
    xn = x_scaled(N, x)
    flat = math.log(N - 1) - 2.0 * (1.0 - 2.0 / N)
    if side == "above":
        val = psi(N, xn) - (k + 1) * rate_I_MP(xn) if xn >= EDGE else flat
    else:
        val = flat if xn >= EDGE else -math.inf
    return RatePoint((N, k, x, side), val)


def rate_linear_gamma(N: int, gamma: float) -> RatePoint:
    """Growth rate when the index is ``2m - k(m)`` with ``k(m)/m -> gamma``."""
    _check_N(N)
    s = mp_quantile_s_gamma(gamma)
    return RatePoint((N, gamma), math.log(N - 1) - (1.0 - 2.0 / N) * s / 2.0)


def rate_total(N: int, x: float) -> RatePoint:
    """Growth rate of the total count on ``[x, inf)``: ``psi(x_N) - I_MP(x_N)``."""
    _check_N(N)
    _check_x(x)
    xn = x_scaled(N, x)
    val = psi(N, xn) - rate_I_MP(xn) if xn >= EDGE else psi(N, xn)
    return RatePoint((N, "total", x), val)


def linear_index_k(m: int, gamma: float) -> int:
    """``round(gamma m)`` clamped to ``[1, m-1]``."""
    return int(min(max(round(gamma * m), 1), max(m - 1, 1)))


def empirical_rate_curve(
    N: int,
    which,
    x: float,
    m_list: Sequence[int],
    n: int,
    stream,
    side: str = "above",
    method: str = "conditional",
    workers=None,
) -> list:
    """Finite-m rates ``(1/m) log E N`` next to the analytic limit.

    ``which`` is ``"total"``, ``"saddle"`` (index m, exact formula) or an
    integer ``k`` (index ``2m - k``, Monte Carlo).
    """
    _check_N(N)
    m_list = list(m_list)
    if m_list != sorted(m_list):
        raise DomainError("m_list must be ascending")
    stream = as_stream(stream)
    win = Window(x) if side == "above" else Window(0.0, x) if x > 0 else None
    if win is None:
        raise DomainError("side='below' needs x > 0")
    points = []
    for i, m in enumerate(m_list):
        sub = stream.child(stream.stream * 1000 + i + 1)
        if which == "saddle":
            analytic = index_m_rate_limit(N)
            pt = RatePoint((N, "saddle", x), analytic, log_expected_index_m_total(m, N) / m, m=m)
        elif which == "total":
            analytic = rate_total(N, x).analytic_rate if side == "above" else math.nan
            est = mc_expected_count_total(m, N, win, n, sub, method=method if side == "above" else "plain", workers=workers)
            pt = RatePoint((N, "total", x), analytic, m=m, estimate=est)
        else:
            k = int(which)
            analytic = rate_fixed_k(N, k, x, side).analytic_rate
            est = mc_expected_count_index(m, k, N, win, n, sub, workers=workers)
            pt = RatePoint((N, k, x, side), analytic, m=m, estimate=est)
        if pt.estimate is not None:
            if pt.estimate.zero_hits or not math.isfinite(pt.estimate.log_mean):
                pt.empirical_rate = -math.inf
                pt.flagged = True
            else:
                pt.empirical_rate = pt.estimate.log_mean / m
        points.append(pt)
    return points
