"""The real Wishart ensemble ``W = X^T X``, ``X`` of shape (m+1, m), entries N(0, 1/m).

Two exact samplers:

``dense``
    Draw ``X``, form ``W`` and call LAPACK's symmetric eigensolver.
``tridiagonal``
    The bidiagonal chi model: ``W`` has the spectrum of ``B B^T / m`` with
    ``B`` lower bidiagonal, diagonal ``chi_{m+1}, ..., chi_2`` and subdiagonal
    ``chi_{m-1}, ..., chi_1``. Same law, ``O(m^2)`` instead of ``O(m^3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.special import gammaln

from . import _kernels
from .mc import CountEstimate, DomainError, RngStream, as_stream, binomial_stderr, map_chunks
from .mp_core import DiscreteMeasure, mp_cdf, mp_quantile_s_gamma

CLAMP_TOL = 1e-12
DENSE_MAX_M = 64
MAX_RETRIES = 3


@dataclass(frozen=True)
class Spectrum:
    m: int
    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.shape != (self.m,):
            raise DomainError(f"expected {self.m} eigenvalues, got shape {ev.shape}")
        if np.any(np.diff(ev) > 0):
            raise DomainError("eigenvalues must be in descending order")
        if np.any(ev < -CLAMP_TOL):
            raise DomainError("eigenvalues must be nonnegative")
        object.__setattr__(self, "eigenvalues", np.maximum(ev, 0.0))

    def empirical_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure.empirical(self.eigenvalues)


def _clamp_sorted(ev):
    # ascending LAPACK output -> descending, clamp roundoff negatives
    ev = ev[..., ::-1]
    bad = ev < -CLAMP_TOL * np.maximum(1.0, np.abs(ev[..., :1]))
    if np.any(bad):
        raise np.linalg.LinAlgError("negative eigenvalue beyond roundoff in a Gram matrix")
    return np.maximum(ev, 0.0)


def _dense_chunk(gen, size, m):
    x = gen.standard_normal((size, m + 1, m)) / math.sqrt(m)
    w = np.einsum("bki,bkj->bij", x, x)
    return _clamp_sorted(np.linalg.eigvalsh(w))


def tridiagonal_model(gen, size, m):
    """Diagonal and off-diagonal of ``B B^T / m`` for ``size`` draws."""
    a = np.sqrt(gen.chisquare(np.arange(m + 1, 1, -1, dtype=float), size=(size, m)))
    if m > 1:
        b = np.sqrt(gen.chisquare(np.arange(m - 1, 0, -1, dtype=float), size=(size, m - 1)))
    else:
        b = np.zeros((size, 0))
    d = a * a
    d[:, 1:] += b * b
    e = a[:, :-1] * b
    return d / m, e / m


def _tridiag_eigs(d, e):
    out = np.empty_like(d)
    for i in range(d.shape[0]):
        if d.shape[1] == 1:
            out[i] = d[i]
        else:
            out[i] = eigvalsh_tridiagonal(d[i], e[i], lapack_driver="sterf")
    return _clamp_sorted(out)


def _tridiag_chunk(gen, size, m):
    d, e = tridiagonal_model(gen, size, m)
    return _tridiag_eigs(d, e)


def resolve_method(m: int, method: str) -> str:
    if method == "auto":
        return "dense" if m <= DENSE_MAX_M else "tridiagonal"
    if method not in ("dense", "tridiagonal"):
        raise DomainError(f"unknown sampling method {method!r}")
    return method


def _sample_chunk(gen, size, m, method):
    draw = _dense_chunk if method == "dense" else _tridiag_chunk
    for attempt in range(MAX_RETRIES):
        try:
            return draw(gen, size, m)
        except np.linalg.LinAlgError:
            if attempt == MAX_RETRIES - 1:
                raise
    raise AssertionError("unreachable")


def sample_spectra(m: int, n: int, stream, method: str = "auto", workers: Optional[int] = None) -> np.ndarray:
    """``n`` independent spectra as an ``(n, m)`` array, rows descending."""
    if m < 1:
        raise DomainError("m must be >= 1")
    stream = as_stream(stream)
    method = resolve_method(m, method)
    parts = map_chunks(lambda g, size, start: _sample_chunk(g, size, m, method), n, stream, workers)
    return np.concatenate(parts, axis=0) if parts else np.empty((0, m))


def sample_spectrum(m: int, stream, method: str = "dense") -> Spectrum:
    return Spectrum(m, sample_spectra(m, 1, stream, method=method)[0])


def log_normalizer(m: int) -> float:
    """``log(2^m m^{-m(m+1)/2} prod_{j<=m} j!)``.

    This constant normalizes ``Delta(lambda) exp(-m/2 sum lambda)`` over the
    unordered cone ``R_+^m``; the ordered region carries an extra ``1/m!``.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    j = np.arange(1, m + 1, dtype=float)
    return float(m * math.log(2.0) - 0.5 * m * (m + 1) * math.log(m) + gammaln(j + 1.0).sum())


def log_joint_density(spec: Spectrum, ordered: bool = False) -> float:
    """``sum_{i<j} log(lambda_i - lambda_j) - (m/2) sum lambda_i - log Z_W(m)``.

    This is the symmetric density on ``R_+^m`` evaluated at a point of the
    ordered cone; it integrates to ``1/m!`` over the ordered region.
    ``ordered=True`` adds ``log m!`` and gives the density of the ordered
    eigenvalue vector. Ties or nonpositive entries give ``-inf``.
    """
    lam = np.asarray(spec.eigenvalues, dtype=float)
    m = spec.m
    if np.any(lam <= 0.0):
        return -math.inf
    gaps = lam[:, None] - lam[None, :]
    iu = np.triu_indices(m, 1)
    g = gaps[iu]
    if np.any(g <= 0.0):
        return -math.inf
    val = float(np.log(g).sum() - 0.5 * m * lam.sum() - log_normalizer(m))
    if ordered:
        val += float(gammaln(m + 1.0))
    return val


def smallest_tail_exact(m: int, x: float) -> float:
    """``P((m/2) lambda_m >= x) = exp(-m x)``."""
    if x < 0:
        raise DomainError("x must be >= 0")
    return math.exp(-m * x)


def estimate_kth_tail(m: int, k: int, x: float, n: int, stream, method: str = "auto", workers=None) -> CountEstimate:
    """Plain Monte Carlo estimate of ``P(lambda_k >= x)``."""
    if not (1 <= k <= m):
        raise DomainError(f"need 1 <= k <= m, got k={k}, m={m}")
    if n < 1:
        raise DomainError("n must be >= 1")
    stream = as_stream(stream)
    spectra = sample_spectra(m, n, stream, method=method, workers=workers)
    hits = (spectra[:, k - 1] >= x).astype(float)
    p = float(hits.mean())
    est = CountEstimate.from_samples(hits, seed=stream)
    est.stderr = binomial_stderr(p, n)
    return est


def _top_tail_chunk(gen, size, m, x):
    d, e = tridiagonal_model(gen, size, m)
    logc, _, _ = _kernels.conditional_top(d, e, x, math.inf, 0.0)
    return logc


def estimate_top_tail(m: int, x: float, n: int, stream, workers=None) -> CountEstimate:
    """``P(lambda_1 >= x)`` with the top eigenvalue integrated out given the rest.

    Unbiased like plain sampling, but usable far into the tail where plain
    sampling records no hits.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    if x <= 0:
        raise DomainError("x must be > 0")
    stream = as_stream(stream)
    parts = map_chunks(lambda g, size, start: _top_tail_chunk(g, size, m, x), n, stream, workers)
    return CountEstimate.from_log_weights(np.concatenate(parts), 0.0, seed=stream)


def ks_distance_to_mp(spectra) -> float:
    """Sup distance between the pooled empirical spectral CDF and the MP CDF."""
    if isinstance(spectra, Spectrum):
        spectra = [spectra]
    if isinstance(spectra, np.ndarray):
        pooled = spectra.ravel()
    else:
        parts = [np.asarray(s.eigenvalues if isinstance(s, Spectrum) else s).ravel() for s in spectra]
        pooled = np.concatenate(parts) if parts else np.empty(0)
    if pooled.size == 0:
        raise DomainError("need at least one spectrum")
    x = np.sort(pooled)
    n = x.size
    f = mp_cdf(x)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def kth_index(m: int, gamma: float) -> int:
    return int(min(max(round(gamma * m), 1), m))


def concentration_check(m: int, gamma: float, eps: float, n: int, stream, method: str = "auto", workers=None) -> float:
    """Frequency with which ``lambda_{k}``, ``k = round(gamma m)``, leaves ``(s_gamma - eps, s_gamma + eps)``."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    s = mp_quantile_s_gamma(gamma)
    k = kth_index(m, gamma)
    spectra = sample_spectra(m, n, as_stream(stream), method=method, workers=workers)
    lam = spectra[:, k - 1]
    outside = (lam <= s - eps) | (lam >= s + eps)
    return float(outside.mean())


def smallest_eig_frequencies(m: int, xs: Iterable[float], n: int, stream, method: str = "auto"):
    """Empirical ``P((m/2) lambda_m >= x)`` with binomial standard errors."""
    spectra = sample_spectra(m, n, as_stream(stream), method=method)
    scaled = 0.5 * m * spectra[:, -1]
    rows = []
    for x in xs:
        p = float((scaled >= x).mean())
        exact = smallest_tail_exact(m, x)
        rows.append({"x": x, "empirical": p, "exact": exact, "stderr": binomial_stderr(exact, n)})
    return rows
