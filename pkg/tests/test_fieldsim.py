import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holocrit import fieldsim as fs
from holocrit.critstats import Window
from holocrit.mc import DomainError, RngStream


@pytest.mark.parametrize("m,N", [(1, 2), (2, 3), (3, 4), (4, 1)])
def test_coefficient_count(m, N):
    s = fs.sample_section(m, N, RngStream(1), 0)
    assert s.coeffs.shape == (math.comb(N + m, m),)
    E = fs.monomial_exponents(m, N)
    assert E.shape == (math.comb(N + m, m), m + 1)
    assert np.all(E.sum(1) == N)
    assert len({tuple(r) for r in E.tolist()}) == E.shape[0]


def test_section_validation():
    with pytest.raises(DomainError):
        fs.SectionSample(1, 2, np.zeros(4))
    with pytest.raises(DomainError):
        fs.SectionSample(1, 2, np.array([1.0, np.nan, 0.0]))
    with pytest.raises(DomainError):
        fs.ChartPoint(3, (0.0,))


def test_sections_reproducible_by_index():
    a = fs.sample_sections(2, 3, 5, RngStream(7))
    b = fs.sample_section(2, 3, RngStream(7), 3)
    np.testing.assert_array_equal(a[3], b.coeffs)


def test_chart_point_round_trip():
    Z = np.array([0.3 + 0.1j, -2.0 + 1.0j, 0.5j])
    p = fs.ChartPoint.from_homogeneous(Z)
    assert p.chart == 1
    W = p.homogeneous()
    assert fs.chordal_distance(W[None] / np.linalg.norm(W), Z[None] / np.linalg.norm(Z))[0, 0] < 1e-12
    with pytest.raises(DomainError):
        fs.ChartPoint.from_homogeneous(np.array([0.0, 1.0]), chart=0)


def test_monomial_derivative():
    s = fs.SectionSample.from_monomials(1, 3, {(0, 3): 1.0})
    f, df, d2f, _ = fs.eval_derivs(s, fs.ChartPoint(0, (1.0,)))
    assert f == pytest.approx(1.0)
    assert df[0] == pytest.approx(3.0)
    assert d2f[0, 0] == pytest.approx(6.0)


def test_mixed_term_at_origin():
    s = fs.sample_section(3, 4, RngStream(2), 0)
    hd = fs.eval_derivs(s, fs.ChartPoint(0, (0.0, 0.0, 0.0)))[3]
    np.testing.assert_allclose(hd.mixed, 4 * np.eye(3))


def _random_point(rng, m):
    return fs.ChartPoint(int(rng.integers(0, m + 1)), tuple(rng.normal(size=m) * 0.6 + 1j * rng.normal(size=m) * 0.6))


def _shift(point, j, h):
    z = list(point.z)
    z[j] = z[j] + h
    return fs.ChartPoint(point.chart, tuple(z))


@pytest.mark.parametrize("m,N", [(1, 3), (2, 3), (3, 2)])
def test_holomorphic_hessian_finite_difference(m, N):
    rng = np.random.default_rng(m * 10 + N)
    s = fs.sample_section(m, N, RngStream(3), m)
    pt = _random_point(rng, m)
    _, _, d2f, _ = fs.eval_derivs(s, pt)
    h = 1e-6
    for j in range(m):
        fd = (fs.eval_derivs(s, _shift(pt, j, h))[1] - fs.eval_derivs(s, _shift(pt, j, -h))[1]) / (2 * h)
        np.testing.assert_allclose(fd, d2f[:, j], rtol=1e-6, atol=1e-7)


def _log_real(s, pt, x):
    m = pt.m
    z = tuple(complex(x[j], x[m + j]) for j in range(m))
    return fs.log_norm_sq(s, fs.ChartPoint(pt.chart, z))


@pytest.mark.parametrize("m,N", [(1, 2), (2, 3), (3, 3)])
def test_real_hessian_and_gradient_finite_difference(m, N):
    rng = np.random.default_rng(100 + m)
    s = fs.sample_section(m, N, RngStream(4), m)
    pt = _random_point(rng, m)
    x0 = np.concatenate([np.real(pt.z), np.imag(pt.z)])
    h = 1e-4
    n = 2 * m
    H = np.empty((n, n))
    grad = np.empty(n)
    for a in range(n):
        ea = np.eye(n)[a] * h
        grad[a] = (_log_real(s, pt, x0 + ea) - _log_real(s, pt, x0 - ea)) / (2 * h)
        for b in range(n):
            eb = np.eye(n)[b] * h
            H[a, b] = (
                _log_real(s, pt, x0 + ea + eb) - _log_real(s, pt, x0 + ea - eb) - _log_real(s, pt, x0 - ea + eb) + _log_real(s, pt, x0 - ea - eb)
            ) / (4 * h * h)
    np.testing.assert_allclose(fs.real_hessian(s, pt), H, atol=2e-5 * max(1.0, np.abs(H).max()))
    f = fs.eval_derivs(s, pt)[0]
    G = fs.covariant_gradient(s, pt) / f
    np.testing.assert_allclose(np.concatenate([2 * G.real, -2 * G.imag]), grad, atol=1e-7)


def test_power_section_single_maximum():
    for m, N in ((1, 2), (2, 3)):
        alpha = (N,) + (0,) * m
        s = fs.SectionSample.from_monomials(m, N, {alpha: 1.0})
        cs = fs.find_critical_points(s, starts=200, gen=np.random.default_rng(0))
        assert cs.stable and len(cs.points) == 1
        p = cs.points[0]
        assert p.index == 2 * m
        assert p.normalized_value == pytest.approx(1.0 / (m + 1))
        assert np.allclose(p.location.z, 0.0, atol=1e-10)


def test_covariant_gradient_vanishes_at_found_points():
    s = fs.sample_section(2, 3, RngStream(5), 0)
    cs = fs.find_critical_points(s, gen=np.random.default_rng(1))
    assert cs.points
    for p in cs.points:
        f = fs.eval_derivs(s, p.location)[0]
        assert np.max(np.abs(fs.covariant_gradient(s, p.location))) <= 1e-8 * max(1.0, abs(f))
        assert fs.morse_index(s, p.location) == p.index


def test_chart_invariance():
    stream = RngStream(6)
    starts = fs.fs_uniform_starts(np.random.default_rng(9), 200, 1)
    for i in range(20):
        s = fs.sample_section(1, 3, stream, i)
        a = fs.find_critical_points(s, start_points=starts, start_chart=0)
        b = fs.find_critical_points(s, start_points=starts, start_chart=1)
        assert len(a.points) == len(b.points)
        ua = np.array([p.location.homogeneous() for p in a.points])
        ub = np.array([p.location.homogeneous() for p in b.points])
        ua /= np.linalg.norm(ua, axis=1, keepdims=True)
        ub /= np.linalg.norm(ub, axis=1, keepdims=True)
        d = fs.chordal_distance(ua, ub)
        match = d.argmin(1)
        assert np.all(d.min(1) < 1e-7)
        for j, p in enumerate(a.points):
            q = b.points[match[j]]
            assert p.index == q.index
            assert p.normalized_value == pytest.approx(q.normalized_value, rel=1e-8)


def test_index_range_enforced():
    loc = fs.ChartPoint(0, (0.0,))
    with pytest.raises(AssertionError):
        fs.CriticalPoint(loc, 0.1, 0, 0.0)
    fs.CriticalPoint(loc, 0.1, 0, 0.0, degenerate=True)


def test_morse_index_rejects_zero_of_section():
    s = fs.SectionSample.from_monomials(1, 2, {(1, 1): 1.0})
    with pytest.raises(DomainError):
        fs.morse_index(s, fs.ChartPoint(0, (0.0,)))


def test_direct_rejects_large_m():
    with pytest.raises(DomainError):
        fs.direct_count_table(4, 2, 1, RngStream(1))


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_indices_in_range_and_dedup(seed):
    s = fs.sample_section(1, 3, RngStream(seed), 0)
    cs = fs.find_critical_points(s, gen=np.random.default_rng(seed))
    for p in cs.points:
        assert 1 <= p.index <= 2
    U = np.array([p.location.homogeneous() for p in cs.points])
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    d = fs.chordal_distance(U, U) + np.eye(len(U))
    assert np.all(d > fs.DEDUP_TOL)


@pytest.fixture(scope="module")
def table_12():
    return fs.direct_count_table(1, 2, 200, RngStream(11), workers=1)


def test_direct_one_two(table_12):
    assert not table_12.flagged
    assert table_12.estimate(1).mean == 1.0
    assert table_12.estimate(0).mean == 1.0
    total = table_12.total()
    assert total.mean == pytest.approx(sum(table_12.estimate(k).mean for k in range(2)))
    assert table_12.total(Window(10.0)).mean == 0.0
    with pytest.raises(DomainError):
        table_12.estimate(2)


def test_direct_thread_determinism(table_12):
    other = fs.direct_count_table(1, 2, 200, RngStream(11), workers=3)
    np.testing.assert_array_equal(other.per_section_counts(), table_12.per_section_counts())


def test_csv_dump(tmp_path, table_12):
    path = tmp_path / "pts.csv"
    fs.write_critical_points_csv(path, table_12, header_comment='{"seed": 11}')
    lines = path.read_text().splitlines()
    assert lines[0] == '# {"seed": 11}'
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == ["section_id", "chart", "re_z1", "im_z1", "normalized_value", "index", "residual", "degenerate", "section_stable"]
    assert len(rows) == sum(len(s.points) for s in table_12.sets)
    assert {int(r["index"]) for r in rows} <= {1, 2}


def test_covariance_selftest_passes():
    rep = fs.covariance_selftest(2, 3, 20_000, RngStream(12))
    assert rep.passed()
    ids = {c.identity for c in rep.cells}
    assert ids == {"f,f", "f,df", "df,df", "f,d2f", "df,d2f", "d2f,d2f"}
    # one cell per Hermitian pair of second derivatives: 3 unique (i<=j) pairs -> 6 cells
    assert sum(c.identity == "d2f,d2f" for c in rep.cells) == 6
    assert all(math.isfinite(c.to_dict()["z"]) for c in rep.cells)


def test_hessian_spectrum_m1_mean():
    rep = fs.hessian_spectrum_selftest(1, 3, 20_000, RngStream(13))
    assert rep.field_means[0] == pytest.approx(2.0, abs=0.05)
    assert rep.wishart_means[0] == pytest.approx(2.0, abs=0.05)
    assert max(abs(z) for z in rep.moment_z) < 4
    assert rep.ks_distance < 0.03
