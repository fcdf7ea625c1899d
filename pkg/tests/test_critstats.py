import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from holocrit import critstats as cs
from holocrit.mc import DomainError, RngStream, combined_z
from holocrit.mp_core import mp_quantile_s_gamma, rate_I_MP
from holocrit.wishart import sample_spectra


def test_window():
    w = cs.Window(1.0, 3.0)
    assert list(w.contains([0.5, 1.0, 2.9, 3.0])) == [False, True, True, False]
    assert w.scaled(2.0) == cs.Window(2.0, 6.0)
    assert cs.Window.parse("0:inf") == cs.Window()
    for lo, hi in ((-1.0, 2.0), (2.0, 2.0), (3.0, 1.0)):
        with pytest.raises(DomainError):
            cs.Window(lo, hi)


def test_density_examples():
    assert cs.density_index_m(1, 2, 0.0) == pytest.approx(4.0)
    assert cs.density_index_m(3, 3, 50.0) < 1e-200


@pytest.mark.parametrize("m,N", [(1, 2), (3, 3), (10, 4)])
def test_density_integrates_to_closed_form(m, N):
    total = cs.expected_index_m_total(m, N)
    val, _ = integrate.quad(lambda x: cs.density_index_m(m, N, x), 0, math.inf, epsabs=0, epsrel=1e-13)
    assert abs(val / total - 1) <= 1e-8


def test_tail_at_zero_is_total():
    assert cs.expected_index_m_tail(1, 2, 0.0) == pytest.approx(1.0)
    for m, N in ((1, 2), (2, 3), (5, 7)):
        assert cs.expected_index_m_tail(m, N, 0.0) == pytest.approx(cs.expected_index_m_total(m, N), rel=1e-14)


def test_tail_matches_quadrature_of_density():
    m, N, x = 3, 3, 0.05
    val, _ = integrate.quad(lambda t: cs.density_index_m(m, N, t), x, math.inf, epsabs=0, epsrel=1e-13)
    assert cs.expected_index_m_tail(m, N, x) == pytest.approx(val, rel=1e-10)


def test_tail_derivative_is_density():
    m, N, x, h = 2, 3, 0.1, 1e-6
    deriv = -(cs.expected_index_m_tail(m, N, x + h) - cs.expected_index_m_tail(m, N, x - h)) / (2 * h)
    assert deriv == pytest.approx(cs.density_index_m(m, N, x), rel=1e-6)
    assert cs.expected_index_m_tail(m, N, 100.0) < 1e-100


def test_total_examples():
    assert cs.expected_index_m_total(1, 2) == pytest.approx(1.0)
    assert cs.expected_index_m_total(2, 3) == pytest.approx(24 / 5)
    assert math.isfinite(cs.log_expected_index_m_total(10**6, 3))


def test_total_rate_bound_m500():
    m, N = 500, 3
    assert abs(cs.log_expected_index_m_total(m, N) / m - math.log(N - 1)) <= 2 * math.log(m + 1) / m


def test_pipeline_reproduces_density():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m, N, x = int(rng.integers(1, 300)), int(rng.integers(2, 20)), float(rng.uniform(0, 5))
        a = cs.log_density_index_m_via_smallest_eig(m, N, x)
        b = cs.log_density_index_m(m, N, x)
        assert abs(math.expm1(a - b)) <= 1e-10


@given(st.integers(1, 200), st.integers(2, 30), st.floats(0, 10))
@settings(max_examples=100, deadline=None)
def test_pipeline_property(m, N, x):
    assert cs.log_density_index_m_via_smallest_eig(m, N, x) == pytest.approx(cs.log_density_index_m(m, N, x), rel=1e-12, abs=1e-9)


@pytest.mark.parametrize(
    "call",
    [
        lambda: cs.density_index_m(1, 1, 0.0),
        lambda: cs.expected_index_m_tail(1, 1, 0.0),
        lambda: cs.expected_index_m_total(1, 1),
        lambda: cs.psi(1, 0.0),
        lambda: cs.rate_fixed_k(1, 0, 1.0),
        lambda: cs.rate_linear_gamma(1, 0.5),
        lambda: cs.rate_total(1, 1.0),
        lambda: cs.mc_expected_count_index(1, 1, 1, cs.Window(), 10, 0),
        lambda: cs.mc_expected_count_total(1, 1, cs.Window(), 10, 0),
    ],
)
def test_degree_one_rejected(call):
    with pytest.raises(DomainError):
        call()


def test_mc_index_m_full_window_exact_at_N2():
    est = cs.mc_expected_count_index(1, 1, 2, cs.Window(), 100_000, RngStream(1))
    assert abs(est.mean - 1.0) <= 3 * est.stderr + 1e-12


@pytest.mark.parametrize("m,N,x", [(1, 2, 0.0), (2, 3, 0.2), (3, 4, 0.1)])
def test_mc_index_m_matches_tail(m, N, x):
    est = cs.mc_expected_count_index(m, m, N, cs.Window(x), 100_000, RngStream(2, m))
    target = cs.expected_index_m_tail(m, N, x)
    assert abs(est.mean - target) <= 3 * est.stderr + 1e-12


def test_mc_index_monotone_in_k():
    m, N = 3, 3
    ests = [cs.mc_expected_count_index(m, k, N, cs.Window(), 50_000, RngStream(3)) for k in range(m + 1)]
    means = [e.mean for e in ests]
    assert all(a <= b for a, b in zip(means, means[1:]))
    assert ests[0].mean <= ests[1].mean + 3 * math.hypot(ests[0].stderr, ests[1].stderr)


def test_total_is_sum_of_indices_with_common_draws():
    m, N = 2, 3
    stream = RngStream(4)
    total = cs.mc_expected_count_total(m, N, cs.Window(), 50_000, stream)
    parts = [cs.mc_expected_count_index(m, k, N, cs.Window(), 50_000, stream) for k in range(m + 1)]
    assert total.mean == pytest.approx(sum(p.mean for p in parts), rel=1e-12)
    for p in parts:
        assert p.mean <= total.mean + 3 * math.hypot(p.stderr, total.stderr)


def test_window_scaling_is_applied_once():
    m, N, x = 2, 3, 0.4
    stream = RngStream(5)
    est = cs.mc_expected_count_index(m, 0, N, cs.Window(x), 20_000, stream)
    lam = sample_spectra(m + 1, 20_000, stream)[:, 0]
    a = (1 - 2 / N) * (m + 1) / 2
    manual = 2 * (N - 1) ** (m + 1) / N * np.mean(np.exp(-a * lam) * (lam >= N / (N - 1) * x))
    assert est.mean == pytest.approx(manual, rel=1e-12)


def test_large_N_scaling_is_nearly_identity():
    # the factor N/(N-1) shifts the threshold by 0.1%; near the origin that moves the count by less than 0.2%
    m, N, x = 2, 1000, 0.2
    exact = cs.expected_index_m_tail(m, N, x) / cs.expected_index_m_tail(m, N, x * (N - 1) / N)
    assert abs(exact - 1) < 2e-3
    stream = RngStream(6)
    scaled = cs.mc_expected_count_index(m, m, N, cs.Window(x), 20_000, stream)
    unscaled = cs.mc_expected_count_index(m, m, N, cs.Window(x * (N - 1) / N), 20_000, stream)
    assert abs(scaled.mean / unscaled.mean - 1) < 2e-3


def test_log_domain_when_prefactor_overflows():
    m, N = 1100, 3
    est = cs.mc_expected_count_index(m, m, N, cs.Window(), 64, RngStream(7))
    assert est.log_domain and est.mean is None
    exact = cs.log_expected_index_m_total(m, N)
    assert abs(est.log_mean - exact) < 5 * est.rel_stderr + 1e-9


def test_zero_hit_window_flagged():
    est = cs.mc_expected_count_index(2, 2, 3, cs.Window(50.0), 1000, RngStream(8))
    assert est.mean == 0.0 and est.stderr == 0.0 and est.zero_hits


@pytest.mark.parametrize("m,N,x", [(3, 3, 1.0), (10, 3, 2.0), (2, 4, 0.0), (5, 3, 1.0)])
def test_conditional_total_matches_plain(m, N, x):
    plain = cs.mc_expected_count_total(m, N, cs.Window(x), 60_000, RngStream(9, m))
    cond = cs.mc_expected_count_total(m, N, cs.Window(x), 15_000, RngStream(10, m), method="conditional")
    assert abs(plain.mean - cond.mean) <= 3.5 * math.hypot(plain.stderr, cond.stderr)


def test_conditional_total_bounded_window():
    plain = cs.mc_expected_count_total(4, 3, cs.Window(0.5, 1.5), 60_000, RngStream(11))
    cond = cs.mc_expected_count_total(4, 3, cs.Window(0.5, 1.5), 15_000, RngStream(12), method="conditional")
    assert abs(plain.mean - cond.mean) <= 3.5 * math.hypot(plain.stderr, cond.stderr)


def test_conditional_total_deep_tail_has_hits():
    m = 100
    est = cs.mc_expected_count_total(m, 3, cs.Window(3.0), 1000, RngStream(13), method="conditional")
    assert not est.zero_hits and est.rel_stderr < 0.2
    plain = cs.mc_expected_count_total(m, 3, cs.Window(3.0), 1000, RngStream(13))
    assert plain.zero_hits


def test_psi_examples():
    assert cs.psi(3, 0.0) == pytest.approx(math.log(2))
    assert cs.psi(2, 17.0) == 0.0
    assert cs.psi(3, 4.0) == pytest.approx(math.log(2) - 2 / 3)


def test_rate_fixed_k_examples():
    assert cs.rate_fixed_k(2, 0, 1.0).analytic_rate == 0.0
    assert cs.rate_fixed_k(3, 0, 0.0).analytic_rate == pytest.approx(math.log(2) - 2 / 3)
    assert cs.rate_fixed_k(3, 0, 0.0).analytic_rate == pytest.approx(0.02648, abs=1e-5)
    assert cs.rate_fixed_k(3, 1, 1.0, "below").analytic_rate == -math.inf
    assert cs.rate_fixed_k(3, 1, 3.0, "below").analytic_rate == pytest.approx(math.log(2) - 2 / 3)
    x = 3.0  # x_N = 4.5 at N = 3
    assert cs.rate_fixed_k(3, 2, x).analytic_rate == pytest.approx(cs.psi(3, 4.5) - 3 * rate_I_MP(4.5))
    with pytest.raises(DomainError):
        cs.rate_fixed_k(3, 0, 1.0, "sideways")


@given(st.integers(2, 50), st.integers(0, 10))
@settings(max_examples=50, deadline=None)
def test_rate_branches_continuous_at_edge(N, k):
    x_edge = 4.0 * (N - 1) / N
    eps = 1e-9
    above = cs.rate_fixed_k(N, k, x_edge + eps).analytic_rate
    below = cs.rate_fixed_k(N, k, x_edge - eps).analytic_rate
    assert above == pytest.approx(below, abs=1e-7)
    t_above = cs.rate_total(N, x_edge + eps).analytic_rate
    t_below = cs.rate_total(N, x_edge - eps).analytic_rate
    assert t_above == pytest.approx(t_below, abs=1e-7)


def test_rate_fixed_k_decreasing_in_k_and_x():
    vals = [cs.rate_fixed_k(3, k, 3.5).analytic_rate for k in range(5)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    xs = np.linspace(2.7, 8, 30)
    r = [cs.rate_fixed_k(3, 0, x).analytic_rate for x in xs]
    assert np.all(np.diff(r) < 0)


def test_rate_linear_gamma():
    assert cs.rate_linear_gamma(3, 1 - 1e-9).analytic_rate == pytest.approx(math.log(2), abs=1e-3)
    assert cs.rate_linear_gamma(3, 1e-9).analytic_rate == pytest.approx(math.log(2) - 2 / 3, abs=1e-3)
    for g in (0.1, 0.5, 0.9):
        assert cs.rate_linear_gamma(2, g).analytic_rate == 0.0
        assert cs.rate_linear_gamma(5, g).analytic_rate == pytest.approx(math.log(4) - 0.3 * mp_quantile_s_gamma(g))


def test_rate_linear_gamma_increasing():
    vals = [cs.rate_linear_gamma(4, g).analytic_rate for g in np.linspace(0.05, 0.95, 19)]
    assert np.all(np.diff(vals) > 0)


def test_rate_limit_helper():
    assert cs.index_m_rate_limit(3) == pytest.approx(math.log(2))
    # every fixed-k rate sits below the index-m limit
    for k in range(4):
        assert cs.rate_fixed_k(3, k, 0.0).analytic_rate <= cs.index_m_rate_limit(3)


def test_rate_total_branches():
    assert cs.rate_total(3, 1.0).analytic_rate == pytest.approx(math.log(2) - (1 / 3) * 1.5 / 2)
    assert cs.rate_total(3, 3.0).analytic_rate == pytest.approx(cs.psi(3, 4.5) - rate_I_MP(4.5))
    for x in (2.67, 3.0, 5.0, 9.0):
        assert cs.rate_total(3, x).analytic_rate == pytest.approx(cs.rate_fixed_k(3, 0, x).analytic_rate)


def test_linear_index_k():
    assert cs.linear_index_k(10, 0.0001) == 1
    assert cs.linear_index_k(10, 0.9999) == 9
    assert cs.linear_index_k(1, 0.5) == 1


def test_rate_curve_saddle_exact():
    pts = cs.empirical_rate_curve(3, "saddle", 0.0, [50, 100, 200, 500], 1, RngStream(1))
    gaps = [abs(p.empirical_rate - p.analytic_rate) for p in pts]
    assert all(g <= 2 * math.log(p.m + 1) / p.m for g, p in zip(gaps, pts))
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_rate_curve_flat_at_N2():
    pts = cs.empirical_rate_curve(2, "total", 1.0, [50, 100, 200], 2000, RngStream(2), method="plain")
    assert all(p.analytic_rate == 0.0 for p in pts)
    assert abs(pts[-1].empirical_rate) <= 0.05


def test_rate_curve_fixed_k_flags_zero_hits():
    pts = cs.empirical_rate_curve(3, 1, 6.0, [60], 200, RngStream(3))
    assert pts[0].flagged and pts[0].empirical_rate == -math.inf


def test_rate_curve_requires_ascending():
    with pytest.raises(DomainError):
        cs.empirical_rate_curve(3, "total", 3.0, [100, 50], 10, RngStream(4))


def test_rate_point_dict():
    d = cs.rate_total(3, 3.0).to_dict()
    assert d["params"] == [3, "total", 3.0] and d["empirical_rate"] is None
