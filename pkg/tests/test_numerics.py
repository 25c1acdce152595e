import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itoreg.numerics import (
    fit_loglog_slope,
    gauss_legendre_01,
    pairwise_mean,
    pairwise_sum,
    pairwise_sum_axis0,
    sig17,
    wilson_halfwidth,
    wilson_interval,
)

finite_floats = st.floats(min_value=-1e12, max_value=1e12, allow_nan=False)


@given(st.lists(finite_floats, min_size=0, max_size=300))
def test_pairwise_sum_matches_fsum(xs):
    expected = math.fsum(xs)
    got = pairwise_sum(np.asarray(xs))
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-6)


@given(st.lists(finite_floats, min_size=1, max_size=100))
def test_pairwise_sum_permutation_of_tree_is_fixed(xs):
    a = np.asarray(xs)
    assert pairwise_sum(a) == pairwise_sum(a.copy())


@given(st.integers(min_value=1, max_value=70), st.integers(min_value=1, max_value=5))
def test_axis0_matches_scalar_tree_bitwise(n, m):
    rng = np.random.default_rng(n * 13 + m)
    mat = rng.standard_normal((n, m))
    cols = pairwise_sum_axis0(mat)
    for j in range(m):
        assert cols[j] == pairwise_sum(mat[:, j])


def test_pairwise_mean_empty_raises():
    with pytest.raises(ValueError):
        pairwise_mean(np.array([]))


def test_wilson_interval_basics():
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-12) and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    with pytest.raises(ValueError):
        wilson_interval(5, 0)
    with pytest.raises(ValueError):
        wilson_interval(11, 10)


def test_wilson_halfwidth_shrinks_like_sqrt_n():
    # 16x the sample size must shrink the interval by at least 3x (25% slack
    # around the 4x asymptotic factor).
    h1 = wilson_halfwidth(30, 100)
    h2 = wilson_halfwidth(480, 1600)
    assert h1 / h2 >= 3.0


def test_gauss_legendre_01_integrates_polynomials_exactly():
    x, w = gauss_legendre_01(16)
    assert x.shape == (16,) and w.shape == (16,)
    assert pytest.approx(1.0, rel=1e-14) == w.sum()
    for k in range(0, 31):  # exact through degree 2*16-1
        assert np.dot(w, x**k) == pytest.approx(1.0 / (k + 1), rel=1e-12)


def test_fit_loglog_slope_recovers_rate():
    eps = np.array([2.0**-j for j in range(3, 9)])
    dev = 3.0 * eps**0.5
    assert fit_loglog_slope(eps, dev) == pytest.approx(0.5, abs=1e-9)
    assert math.isnan(fit_loglog_slope(eps, np.zeros_like(eps)))


@settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_sig17_roundtrips_doubles(x):
    assert float(sig17(x)) == x
