import math

import numpy as np
import pytest

from holocrit.mc import CHUNK, CountEstimate, DomainError, RngStream, as_stream, binomial_stderr, chunk_bounds, combined_z, map_chunks


def test_stream_reproducible_and_distinct():
    a = RngStream(7).generator(0).standard_normal(5)
    b = RngStream(7).generator(0).standard_normal(5)
    c = RngStream(7).generator(1).standard_normal(5)
    d = RngStream(7, 1).generator(0).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_stream_validation():
    with pytest.raises(DomainError):
        RngStream(1, -1)
    with pytest.raises(TypeError):
        as_stream("seed")
    assert as_stream(3) == RngStream(3)
    assert RngStream(3).child(4) == RngStream(3, 4)


def test_chunk_bounds():
    assert chunk_bounds(0) == []
    b = chunk_bounds(2 * CHUNK + 5)
    assert [s for s, _ in b] == [0, CHUNK, 2 * CHUNK]
    assert sum(n for _, n in b) == 2 * CHUNK + 5


def test_map_chunks_independent_of_workers():
    fn = lambda g, size, start: g.standard_normal(size) + start
    one = np.concatenate(map_chunks(fn, 5000, RngStream(2), workers=1))
    many = np.concatenate(map_chunks(fn, 5000, RngStream(2), workers=4))
    assert np.array_equal(one, many)


def test_from_samples():
    est = CountEstimate.from_samples([1.0, 2.0, 3.0, 4.0])
    assert est.mean == 2.5
    assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert est.log_mean == pytest.approx(math.log(2.5))
    zero = CountEstimate.from_samples(np.zeros(100))
    assert zero.zero_hits and zero.mean == 0.0 and "0.03" in zero.note


def test_from_log_weights_matches_linear():
    rng = np.random.default_rng(0)
    w = rng.exponential(size=1000)
    a = CountEstimate.from_samples(w)
    b = CountEstimate.from_log_weights(np.log(w))
    assert b.mean == pytest.approx(a.mean)
    assert b.stderr == pytest.approx(a.stderr)
    c = CountEstimate.from_log_weights(np.log(w), log_scale=2.0)
    assert c.mean == pytest.approx(math.e**2 * a.mean)


def test_from_log_weights_overflow_and_zero():
    big = CountEstimate.from_log_weights(np.array([0.0, -1.0]), log_scale=1000.0)
    assert big.mean is None and big.log_domain and big.log_mean > 999
    assert big.rel_stderr > 0
    with pytest.raises(OverflowError):
        big.zscore(1.0)
    none = CountEstimate.from_log_weights(np.full(10, -np.inf), log_scale=5.0)
    assert none.mean == 0.0 and none.stderr == 0.0 and none.zero_hits
    d = none.to_dict()
    assert d["log_mean"] is None and d["zero_hits"]


def test_zscores():
    a = CountEstimate(mean=1.0, stderr=0.1, n=10)
    b = CountEstimate(mean=1.3, stderr=0.2, n=10)
    assert a.zscore(1.2) == pytest.approx(-2.0)
    assert combined_z(b, a) == pytest.approx(0.3 / math.hypot(0.1, 0.2))
    same = CountEstimate(mean=1.0, stderr=0.0, n=10)
    assert combined_z(same, same) == 0.0
    assert same.zscore(1.0) == 0.0


def test_binomial_stderr():
    assert binomial_stderr(0.5, 100) == pytest.approx(0.05)
    assert binomial_stderr(0.0, 100) == 0.0
