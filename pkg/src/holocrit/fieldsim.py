"""Direct simulation of Gaussian random sections of O(N) over CP^m.

A section is the homogeneous polynomial

    p(Z) = sum_{|alpha| = N} a_alpha sqrt(N! / alpha!) Z^alpha,

``a_alpha`` independent standard complex Gaussians, so that in the chart
``Z_0 = 1`` the local function ``f`` has covariance ``(1 + z . conj(w))^N``.
Critical points are those of ``||s||_h^2 = |f|^2 / (1 + |z|^2)^N``; they are
found by multistart Newton and classified by the real Hessian of
``log ||s||_h^2``.
"""

from __future__ import annotations

import csv
import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln

from . import _kernels
from .critstats import Window, mc_expected_count_total
from .mc import CountEstimate, DomainError, RngStream, as_stream, default_workers
from .wishart import sample_spectra

MAX_DIRECT_M = 3
DEDUP_TOL = 1e-6
DEGENERATE_TOL = 1e-9
ZERO_F_TOL = 1e-12
MAX_STARTS = 10_000


@functools.lru_cache(maxsize=None)
def monomial_exponents(m: int, N: int) -> np.ndarray:
    """All exponent vectors ``alpha`` with ``|alpha| = N`` in ``m + 1`` variables."""

    def rec(nvars, total):
        if nvars == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in rec(nvars - 1, total - first):
                yield (first,) + rest

    E = np.array(list(rec(m + 1, N)), dtype=np.int64)
    E.setflags(write=False)
    return E


@functools.lru_cache(maxsize=None)
def _tables(m: int, N: int):
    E = monomial_exponents(m, N)
    tabs = _kernels.derivative_tables(E)
    for t in tabs:
        t.setflags(write=False)
    weights = np.exp(0.5 * (gammaln(N + 1.0) - gammaln(E + 1.0).sum(1)))
    return E, tabs, weights


@dataclass(frozen=True)
class SectionSample:
    """Unit complex Gaussian coordinates of a section in the weighted monomial basis."""

    m: int
    N: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        expected = math.comb(self.N + self.m, self.m)
        if c.shape != (expected,):
            raise DomainError(f"expected {expected} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.m, self.N)

    @property
    def poly_coeffs(self) -> np.ndarray:
        """Coefficients of ``p`` on the plain monomials ``Z^alpha``."""
        return self.coeffs * _tables(self.m, self.N)[2]

    @classmethod
    def from_monomials(cls, m: int, N: int, poly: dict) -> "SectionSample":
        """Section with given plain-monomial coefficients ``{alpha: value}``."""
        E, _, w = _tables(m, N)
        c = np.zeros(E.shape[0], dtype=complex)
        index = {tuple(row): i for i, row in enumerate(E.tolist())}
        for alpha, val in poly.items():
            c[index[tuple(alpha)]] = val / w[index[tuple(alpha)]]
        return cls(m, N, c)


@dataclass(frozen=True)
class ChartPoint:
    chart: int
    z: tuple

    def __post_init__(self):
        object.__setattr__(self, "z", tuple(complex(v) for v in self.z))
        if not (0 <= self.chart <= len(self.z)):
            raise DomainError(f"chart {self.chart} out of range for m={len(self.z)}")
        if not all(math.isfinite(v.real) and math.isfinite(v.imag) for v in self.z):
            raise DomainError("chart coordinates must be finite")

    @property
    def m(self) -> int:
        return len(self.z)

    def homogeneous(self) -> np.ndarray:
        Z = np.empty(self.m + 1, dtype=complex)
        Z[self.chart] = 1.0
        Z[_kernels.others_table(self.m + 1)[self.chart]] = self.z
        return Z

    @classmethod
    def from_homogeneous(cls, Z, chart: Optional[int] = None) -> "ChartPoint":
        Z = np.asarray(Z, dtype=complex)
        if chart is None:
            chart = int(np.argmax(np.abs(Z)))
        if Z[chart] == 0:
            raise DomainError("point lies on the chart's hyperplane at infinity")
        Zn = Z / Z[chart]
        return cls(int(chart), tuple(Zn[_kernels.others_table(Z.size)[chart]]))


@dataclass(frozen=True)
class HessianData:
    holo_hess: np.ndarray
    mixed: np.ndarray
    f_value: complex


@dataclass(frozen=True)
class CriticalPoint:
    location: ChartPoint
    normalized_value: float
    index: int
    residual: float
    degenerate: bool = False
    min_abs_eig: float = math.nan

    def __post_init__(self):
        m = self.location.m
        if not self.degenerate and not (m <= self.index <= 2 * m):
            raise AssertionError(f"Morse index {self.index} outside [{m}, {2 * m}]")


@dataclass
class CriticalSet:
    points: List[CriticalPoint]
    stable: bool
    starts_used: int
    converged: int

    def counts_by_index(self, m: int, window: Optional[Window] = None) -> np.ndarray:
        counts = np.zeros(2 * m + 1, dtype=np.int64)
        for p in self.points:
            if p.degenerate:
                continue
            if window is None or window.contains(p.normalized_value):
                counts[p.index] += 1
        return counts


def sample_section(m: int, N: int, stream, index: int = 0) -> SectionSample:
    """Section number ``index`` of ``stream`` (one substream per section)."""
    gen = as_stream(stream).generator(index)
    return _draw_section(gen, m, N)


def _draw_section(gen, m, N):
    T = math.comb(N + m, m)
    raw = gen.standard_normal((2, T))
    return SectionSample(m, N, (raw[0] + 1j * raw[1]) / math.sqrt(2.0))


def sample_sections(m: int, N: int, n: int, stream) -> np.ndarray:
    """Coefficient matrix ``(n, T)`` of sections ``0..n-1`` of ``stream``."""
    stream = as_stream(stream)
    return np.stack([sample_section(m, N, stream, i).coeffs for i in range(n)]) if n else np.empty((0, math.comb(N + m, m)), complex)


def _jets(sample: SectionSample, Z):
    E, tabs, _ = _tables(sample.m, sample.N)
    p, g, h = _kernels.eval_homog_np(sample.poly_coeffs, E, tabs, np.atleast_2d(Z), sample.N)
    return p, g, h


def _terms(sample: SectionSample, point: ChartPoint):
    Z = point.homogeneous()[None, :]
    p, g, h = _jets(sample, Z)
    chart = np.array([point.chart])
    G, A, Theta, H, grad = _kernels.chart_terms_np(p, g, h, Z, chart, sample.N)
    return p[0], g[0], h[0], G[0], A[0], Theta[0], H[0], grad[0]


def _chart_slices(point: ChartPoint):
    oth = _kernels.others_table(point.m + 1)[point.chart]
    return oth


def eval_derivs(sample: SectionSample, point: ChartPoint):
    """``(f, grad f, hess f, HessianData)`` of the local function in ``point``'s chart."""
    Z = point.homogeneous()[None, :]
    p, g, h = _jets(sample, Z)
    oth = _chart_slices(point)
    f = complex(p[0])
    df = g[0][oth]
    d2f = h[0][np.ix_(oth, oth)]
    z = np.asarray(point.z)
    r = 1.0 + float(np.sum(np.abs(z) ** 2))
    theta = sample.N * (r * np.eye(point.m) - np.outer(z.conj(), z)) / r**2
    return f, df, d2f, HessianData(d2f, theta, f)


def log_norm_sq(sample: SectionSample, point: ChartPoint) -> float:
    """``log ||s||_h^2 = log|f|^2 - N log(1 + |z|^2)``."""
    f, _, _, _ = eval_derivs(sample, point)
    z = np.asarray(point.z)
    return math.log(abs(f) ** 2) - sample.N * math.log1p(float(np.sum(np.abs(z) ** 2)))


def normalized_value(sample: SectionSample, point: ChartPoint) -> float:
    """``||s||_h^2 / (m + 1)``, evaluated in log form."""
    return math.exp(log_norm_sq(sample, point)) / (sample.m + 1)


def covariant_gradient(sample: SectionSample, point: ChartPoint) -> np.ndarray:
    """``d_j f - f N conj(z_j) / (1 + |z|^2)``; vanishes exactly at critical points of ``||s||_h^2``."""
    f, df, _, _ = eval_derivs(sample, point)
    z = np.asarray(point.z)
    r = 1.0 + float(np.sum(np.abs(z) ** 2))
    return df - f * sample.N * z.conj() / r


def real_hessian(sample: SectionSample, point: ChartPoint) -> np.ndarray:
    """Real ``2m x 2m`` Hessian of ``log ||s||_h^2`` in coordinates ``(Re z, Im z)``."""
    return _terms(sample, point)[6]


def morse_index(sample: SectionSample, point: ChartPoint) -> int:
    f = eval_derivs(sample, point)[0]
    if abs(f) < ZERO_F_TOL:
        raise DomainError("near-singular critical point: f vanishes, log ||s||^2 is -inf there")
    eig = np.linalg.eigvalsh(real_hessian(sample, point))
    return int(np.sum(eig < 0))


# ---------------------------------------------------------------------------
# critical point search


@functools.lru_cache(maxsize=None)
def expected_total_count(m: int, N: int) -> float:
    """Quick fixed-seed Monte Carlo value of the expected total count (for start budgets)."""
    if N == 2:
        return float(m + 1)  # the eigenvalue weight is identically 1
    est = mc_expected_count_total(m, N, Window(), 20_000, RngStream(12345, 0))
    return float(est.mean)


def default_starts(m: int, N: int) -> int:
    return int(min(MAX_STARTS, max(20, math.ceil(50 * expected_total_count(m, N)))))


def fs_uniform_starts(gen, n: int, m: int) -> np.ndarray:
    """Fubini-Study uniform points of CP^m as homogeneous rows."""
    raw = gen.standard_normal((n, m + 1, 2))
    return raw[..., 0] + 1j * raw[..., 1]


def _unit_rows(Z):
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def chordal_distance(U, V) -> np.ndarray:
    """``sqrt(1 - |<u, v>|^2)`` between rows of unit-normalised homogeneous vectors."""
    ip = np.abs(U @ V.conj().T) ** 2
    return np.sqrt(np.clip(1.0 - ip, 0.0, None))


def _merge_unique(found: List[np.ndarray], units: List[np.ndarray], resids: List[float], Z, resid, tol):
    if Z.shape[0] == 0:
        return
    U = _unit_rows(Z)
    for i in range(U.shape[0]):
        if units:
            d = chordal_distance(U[i : i + 1], np.asarray(units))[0]
            if np.min(d) <= tol:
                continue
        units.append(U[i])
        found.append(Z[i])
        resids.append(float(resid[i]))


def classify(sample: SectionSample, Z, residual: float) -> CriticalPoint:
    point = ChartPoint.from_homogeneous(Z)
    p, _, _, _, _, _, H, _ = _terms(sample, point)
    if abs(p) < ZERO_F_TOL:
        raise DomainError("near-singular critical point: f vanishes, log ||s||^2 is -inf there")
    eig = np.linalg.eigvalsh(H)
    min_abs = float(np.min(np.abs(eig)))
    value = math.exp(log_norm_sq(sample, point)) / (sample.m + 1)
    return CriticalPoint(
        location=point,
        normalized_value=value,
        index=int(np.sum(eig < 0)),
        residual=float(residual),
        degenerate=min_abs < DEGENERATE_TOL,
        min_abs_eig=min_abs,
    )


def find_critical_points(
    sample: SectionSample,
    starts: Optional[int] = None,
    tol: float = 1e-10,
    max_iter: int = 100,
    gen: Optional[np.random.Generator] = None,
    start_points=None,
    start_chart: Optional[int] = None,
    max_starts: int = MAX_STARTS,
    switch_radius: float = 1.0,
) -> CriticalSet:
    """Multistart Newton with count-stability doubling.

    Batches of Fubini-Study uniform starts are run until a batch as large as
    everything before it adds no new critical point; if ``max_starts`` is hit
    first the result is returned with ``stable=False``. ``start_points``
    (homogeneous rows) replaces random starts and disables doubling.
    """
    m, N = sample.m, sample.N
    if m > MAX_DIRECT_M:
        raise DomainError(f"direct counting supports m <= {MAX_DIRECT_M}, got m={m}")
    E, tabs, _ = _tables(m, N)
    c = sample.poly_coeffs
    found: List[np.ndarray] = []
    units: List[np.ndarray] = []
    resid_of: List[float] = []

    def run(Z0):
        Z, _, resid, conv, _ = _kernels.newton_solve(c, E, tabs, N, Z0, tol=tol, max_iter=max_iter, switch_radius=switch_radius, start_chart=start_chart)
        _merge_unique(found, units, resid_of, Z[conv], resid[conv], DEDUP_TOL)
        return int(conv.sum())

    if start_points is not None:
        Z0 = np.asarray(start_points, dtype=complex)
        n_conv = run(Z0)
        used, stable = Z0.shape[0], True
    else:
        if gen is None:
            gen = np.random.default_rng(0)
        batch = starts if starts is not None else default_starts(m, N)
        n_conv = run(fs_uniform_starts(gen, batch, m))
        used = batch
        stable = False
        while used < max_starts:
            extra = min(used, max_starts - used)
            before = len(found)
            n_conv += run(fs_uniform_starts(gen, extra, m))
            used += extra
            if len(found) == before and extra == used - extra:
                stable = True
                break
    points = [classify(sample, Z, r) for Z, r in zip(found, resid_of)]
    return CriticalSet(points=points, stable=stable, starts_used=used, converged=n_conv)


# ---------------------------------------------------------------------------
# direct counting


@dataclass
class DirectCountTable:
    """Per-section critical sets of sections ``0..n-1`` of one stream."""

    m: int
    N: int
    stream: RngStream
    sets: List[CriticalSet] = field(default_factory=list)

    @property
    def n_sections(self) -> int:
        return len(self.sets)

    @property
    def flagged(self) -> List[int]:
        return [i for i, s in enumerate(self.sets) if not s.stable]

    @property
    def n_degenerate(self) -> int:
        return sum(p.degenerate for s in self.sets for p in s.points)

    def per_section_counts(self, window: Optional[Window] = None) -> np.ndarray:
        """``(n_stable, 2m+1)`` counts by Morse index over stable sections."""
        rows = [s.counts_by_index(self.m, window) for s in self.sets if s.stable]
        return np.array(rows, dtype=float).reshape(len(rows), 2 * self.m + 1)

    def estimate(self, k: int, window: Optional[Window] = None) -> CountEstimate:
        """Mean count of index ``2m - k`` critical points with normalized value in ``window``."""
        if not (0 <= k <= self.m):
            raise DomainError(f"need 0 <= k <= m, got k={k}")
        counts = self.per_section_counts(window)[:, 2 * self.m - k]
        return self._wrap(counts, {"k": k, "index": 2 * self.m - k})

    def total(self, window: Optional[Window] = None) -> CountEstimate:
        counts = self.per_section_counts(window).sum(1)
        return self._wrap(counts, {"k": "total"})

    def _wrap(self, counts, info):
        est = CountEstimate.from_samples(counts, seed=self.stream)
        est.extra.update({"m": self.m, "N": self.N, "flagged_sections": len(self.flagged), **info})
        return est

    def instability_rate(self) -> float:
        return len(self.flagged) / max(self.n_sections, 1)

    def to_csv(self, path):
        write_critical_points_csv(path, self)


def direct_count_table(m: int, N: int, nsections: int, stream, starts: Optional[int] = None, workers=None, **kw) -> DirectCountTable:
    if m > MAX_DIRECT_M:
        raise DomainError(f"direct counting supports m <= {MAX_DIRECT_M}, got m={m}")
    stream = as_stream(stream)

    def solve(i):
        gen = stream.generator(i)
        sample = _draw_section(gen, m, N)
        return find_critical_points(sample, starts=starts, gen=gen, **kw)

    workers = default_workers() if workers is None else workers
    if workers <= 1:
        sets = [solve(i) for i in range(nsections)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(solve, range(nsections)))
    return DirectCountTable(m, N, stream, sets)


def direct_count_estimate(m: int, N: int, k: int, window: Window, nsections: int, stream, **kw) -> CountEstimate:
    return direct_count_table(m, N, nsections, stream, **kw).estimate(k, window)


def write_critical_points_csv(path, table: DirectCountTable, header_comment: Optional[str] = None):
    m = table.m
    cols = ["section_id", "chart"]
    for a in range(1, m + 1):
        cols += [f"re_z{a}", f"im_z{a}"]
    cols += ["normalized_value", "index", "residual", "degenerate", "section_stable"]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for sid, s in enumerate(table.sets):
            for p in s.points:
                row = [sid, p.location.chart]
                for v in p.location.z:
                    row += [repr(v.real), repr(v.imag)]
                row += [repr(p.normalized_value), p.index, repr(p.residual), int(p.degenerate), int(s.stable)]
                w.writerow(row)


# ---------------------------------------------------------------------------
# self-tests at the origin of chart 0


def _origin_jets(m: int, N: int, coeffs: np.ndarray):
    """``f(0)``, ``d f(0)`` and ``d^2 f(0)`` (chart 0) for a batch of sections."""
    E, tabs, w = _tables(m, N)
    e0 = np.zeros((1, m + 1), complex)
    e0[0, 0] = 1.0
    E1, F1, E2, F2 = tabs
    pw = _kernels._powers_np(e0, N)[0]
    cols = np.arange(m + 1)
    mono = pw[cols, E].prod(-1) * w
    d1 = pw[cols, E1].prod(-1) * F1 * w
    d2 = pw[cols, E2].prod(-1) * F2 * w
    f = coeffs @ mono
    g = coeffs @ d1.T
    h = np.einsum("nt,abt->nab", coeffs, d2)
    return f, g[:, 1:], h[:, 1:, 1:]


@dataclass
class CovarianceCell:
    identity: str
    cell: tuple
    empirical: complex
    expected: float
    stderr: float

    @property
    def z(self) -> float:
        return abs(self.empirical - self.expected) / self.stderr if self.stderr > 0 else (0.0 if self.empirical == self.expected else math.inf)

    def to_dict(self):
        return {
            "identity": self.identity,
            "cell": list(self.cell),
            "empirical_re": self.empirical.real,
            "empirical_im": self.empirical.imag,
            "expected": self.expected,
            "stderr": self.stderr,
            "z": self.z,
        }


@dataclass
class CovarianceReport:
    m: int
    N: int
    n: int
    cells: List[CovarianceCell]
    grad_density_empirical: float
    grad_density_exact: float

    @property
    def max_z(self) -> float:
        return max(c.z for c in self.cells)

    @property
    def density_rel_error(self) -> float:
        return abs(self.grad_density_empirical / self.grad_density_exact - 1.0)

    def passed(self, z_tol: float = 3.0, density_tol: float = 0.05) -> bool:
        return self.max_z <= z_tol and self.density_rel_error <= density_tol


def _cell(identity, idx, x, y, expected):
    prod = x * np.conj(y)
    mu = complex(prod.mean())
    se = math.sqrt(float(np.mean(np.abs(prod - mu) ** 2)) / prod.size)
    return CovarianceCell(identity, idx, mu, float(expected), se)


def covariance_selftest(m: int, N: int, nsamples: int, stream) -> CovarianceReport:
    """Empirical second moments of ``(f, df, d^2 f)`` at the origin against their exact values.

    Identities: ``E|f|^2 = 1``, ``E f conj(d_i f) = 0``, ``E d_i f conj(d_j f) = N delta_ij``,
    ``E f conj(d_ij f) = 0``, ``E d_i f conj(d_jk f) = 0`` and
    ``E d_ij f conj(d_kl f) = N(N-1)(delta_il delta_jk + delta_ik delta_jl)``.
    Only one cell of each Hermitian-conjugate pair is reported.
    """
    coeffs = sample_sections(m, N, nsamples, stream)
    f, g, h = _origin_jets(m, N, coeffs)
    cells = [_cell("f,f", (), f, f, 1.0)]
    pairs = [(i, j) for i in range(m) for j in range(i, m)]
    for i in range(m):
        cells.append(_cell("f,df", (i,), f, g[:, i], 0.0))
        for j in range(i, m):
            cells.append(_cell("df,df", (i, j), g[:, i], g[:, j], N if i == j else 0.0))
    for i, j in pairs:
        cells.append(_cell("f,d2f", (i, j), f, h[:, i, j], 0.0))
        for a in range(m):
            cells.append(_cell("df,d2f", (a, i, j), g[:, a], h[:, i, j], 0.0))
    for u, (i, j) in enumerate(pairs):
        for k, l in pairs[u:]:
            expected = N * (N - 1) * ((i == l) * (j == k) + (i == k) * (j == l))
            cells.append(_cell("d2f,d2f", (i, j, k, l), h[:, i, j], h[:, k, l], expected))
    sigma = (g.T @ g.conj()) / nsamples
    dens = 1.0 / (math.pi**m * float(np.linalg.det(sigma).real))
    return CovarianceReport(m, N, nsamples, cells, dens, 1.0 / (N * math.pi) ** m)


@dataclass
class HessianSpectrumReport:
    m: int
    N: int
    n: int
    ks_distance: float
    ks_pvalue: float
    moment_z: tuple
    field_means: tuple
    wishart_means: tuple


def _two_sample_z(a, b):
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    return (a.mean() - b.mean()) / se if se > 0 else 0.0


def hessian_spectrum_selftest(m: int, N: int, nsamples: int, stream) -> HessianSpectrumReport:
    """Compare the spectrum of ``Y Y^* / (m N (N-1))``, ``Y = d^2 f(0)``, with Wishart spectra."""
    if N < 2:
        raise DomainError("need N >= 2 for a nonzero Hessian")
    stream = as_stream(stream)
    coeffs = sample_sections(m, N, nsamples, stream.child(2 * stream.stream + 1))
    _, _, Y = _origin_jets(m, N, coeffs)
    W = Y @ np.conj(np.transpose(Y, (0, 2, 1))) / (m * N * (N - 1))
    field_ev = np.linalg.eigvalsh(W)
    wish_ev = sample_spectra(m, nsamples, stream.child(2 * stream.stream + 2))
    ks = stats.ks_2samp(field_ev.ravel(), wish_ev.ravel())
    moments_f = (field_ev.mean(1), (field_ev**2).mean(1))
    moments_w = (wish_ev.mean(1), (wish_ev**2).mean(1))
    z = tuple(float(_two_sample_z(a, b)) for a, b in zip(moments_f, moments_w))
    return HessianSpectrumReport(
        m,
        N,
        nsamples,
        float(ks.statistic),
        float(ks.pvalue),
        z,
        tuple(float(a.mean()) for a in moments_f),
        tuple(float(b.mean()) for b in moments_w),
    )
