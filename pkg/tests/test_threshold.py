import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import fsolve

from kcsm.threshold import (
    critical_density,
    ell_zero,
    eval_g,
    eval_g_prime,
    frozen_fraction_unrooted,
    iterate_recursion,
    largest_fixed_point,
)
from oracles import g_direct

kj = st.integers(1, 8).flatmap(lambda k: st.tuples(st.just(k), st.integers(1, k)))
unit = st.floats(0.0, 1.0)


def test_g_examples():
    assert eval_g(2, 2, 0.6, 0.5) == pytest.approx(0.45, abs=1e-15)
    assert eval_g_prime(2, 2, 0.6, 1 / 3) == pytest.approx(0.8, abs=1e-15)
    assert eval_g_prime(3, 3, 0.4, 0.0) == pytest.approx(1.2)
    assert eval_g_prime(3, 2, 0.4, 0.0) == 0.0
    with pytest.raises(ValueError):
        eval_g(2, 3, 0.5, 0.5)
    with pytest.raises(ValueError):
        eval_g(2, 2, 0.5, 1.5)


@given(kj, unit)
def test_g_endpoints(kj_, p):
    k, j = kj_
    assert eval_g(k, j, p, 0.0) == 0.0
    assert eval_g(k, j, p, 1.0) == pytest.approx(p, abs=1e-15)


@settings(max_examples=200)
@given(kj, unit, unit, unit)
def test_g_monotone_and_bounded(kj_, p, x, y):
    k, j = kj_
    lo, hi = min(x, y), max(x, y)
    assert 0.0 <= eval_g(k, j, p, lo) <= eval_g(k, j, p, hi) + 1e-15
    assert eval_g(k, j, p, hi) <= p + 1e-15
    assert eval_g(k, j, p, x) == pytest.approx(g_direct(k, j, p, x), abs=1e-14)


@settings(max_examples=200)
@given(kj, st.floats(0.05, 1.0), st.floats(0.01, 0.99))
def test_g_prime_finite_difference(kj_, p, x):
    k, j = kj_
    h = 1e-5
    fd = (eval_g(k, j, p, x + h) - eval_g(k, j, p, x - h)) / (2 * h)
    d = eval_g_prime(k, j, p, x)
    assert d == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_large_k_log_space():
    # k above the exact-coefficient limit still matches a direct sum
    k, j, p, x = 80, 40, 0.7, 0.55
    ref = p * sum(math.exp(math.lgamma(k + 1) - math.lgamma(i + 1) - math.lgamma(k - i + 1)) * x**i * (1 - x) ** (k - i) for i in range(k - j + 1, k + 1))
    assert eval_g(k, j, p, x) == pytest.approx(ref, rel=1e-10)


def test_recursion_examples():
    seq = iterate_recursion(2, 2, 0.45, 1)
    assert seq[0] == 0.45
    assert seq[1] == pytest.approx(0.45 * (0.9 - 0.2025), abs=1e-15)
    assert iterate_recursion(2, 2, 0.6, 400)[-1] == pytest.approx(1 / 3, abs=1e-12)
    # below the threshold the sequence decays exponentially
    tail = iterate_recursion(2, 2, 0.3, 60)[30:]
    ratios = tail[1:] / tail[:-1]
    assert np.all(ratios < 0.7)


def test_frozen_fraction():
    k, j, p = 2, 2, 0.7
    # the n = 1 value uses p_0 = p
    expected = p * sum(math.comb(3, i) * p**i * (1 - p) ** (3 - i) for i in (1, 2, 3))
    assert frozen_fraction_unrooted(k, j, p, 1) == pytest.approx(expected)
    assert frozen_fraction_unrooted(2, 2, 0.4, None) == 0.0
    assert frozen_fraction_unrooted(2, 2, 0.7, None) > 0.0
    # the limit is what the finite-n values converge to
    assert frozen_fraction_unrooted(2, 2, 0.7, 300) == pytest.approx(frozen_fraction_unrooted(2, 2, 0.7, None), abs=1e-10)
    with pytest.raises(ValueError):
        frozen_fraction_unrooted(2, 2, 0.5, 0)


def test_frozen_fraction_extremes():
    # p_{n-1} = 0 gives 0 and p_{n-1} = 1 gives p: p = 0 and p = 1 realise both
    assert frozen_fraction_unrooted(3, 2, 0.0, 5) == 0.0
    assert frozen_fraction_unrooted(3, 2, 1.0, 5) == pytest.approx(1.0)


def test_fixed_point_examples():
    r = largest_fixed_point(2, 2, 0.6)
    assert r.p_inf == pytest.approx(1 / 3, abs=1e-11)
    assert r.derivative_at_fp == pytest.approx(0.8, abs=1e-10)
    assert r.stable
    assert largest_fixed_point(2, 2, 0.4).p_inf == 0.0
    assert largest_fixed_point(2, 2, 0.5).p_inf == 0.0
    assert largest_fixed_point(2, 2, 0.7).p_inf == pytest.approx(4 / 7, abs=1e-11)


@settings(max_examples=100, deadline=None)
@given(kj, unit)
def test_fixed_point_invariants(kj_, p):
    k, j = kj_
    r = largest_fixed_point(k, j, p)
    assert 0.0 <= r.p_inf <= p + 1e-15
    assert eval_g(k, j, p, r.p_inf) == pytest.approx(r.p_inf, abs=1e-9)
    # nothing above p_inf is fixed: g(x) < x on (p_inf, 1]
    xs = np.linspace(r.p_inf, 1.0, 50)[1:]
    assert all(eval_g(k, j, p, x) < x + 1e-12 for x in xs)


def tangency_oracle(k, j):
    """Solve g(x) = x and g'(x) = 1 for (x, p)."""

    def eqs(v):
        x, p = v
        return [g_direct(k, j, p, x) - x, eval_g_prime(k, j, min(max(p, 0), 1), min(max(x, 0), 1)) - 1]

    x, p = fsolve(eqs, [0.7, 0.8], xtol=1e-13)
    return x, p


def test_tangency_oracle_3_2():
    x, p = tangency_oracle(3, 2)
    assert x == pytest.approx(0.75, abs=1e-10)
    assert p == pytest.approx(8 / 9, abs=1e-10)
    assert critical_density(3, 2).p_c == pytest.approx(p, abs=1e-8)


@pytest.mark.parametrize("k,j", [(4, 2), (4, 3), (5, 3)])
def test_critical_density_intermediate_j(k, j):
    x, p = tangency_oracle(k, j)
    assert critical_density(k, j).p_c == pytest.approx(p, abs=1e-8)
    # above the tangency the fixed point jumps to a positive value
    assert largest_fixed_point(k, j, p + 1e-6).p_inf > 0.1


@pytest.mark.parametrize("k", range(2, 7))
def test_critical_density_exact_family(k):
    rep = critical_density(k, k, tol=1e-10)
    assert rep.p_c == pytest.approx(1 / k, abs=1e-9)
    assert rep.bracket_width <= 1e-10


def test_critical_density_j1():
    rep = critical_density(3, 1)
    assert rep.p_c == pytest.approx(1.0, abs=rep.bracket_width)


@pytest.mark.parametrize("k,j", [(2, 2), (3, 2), (3, 3)])
def test_attracting_above_threshold(k, j):
    p_c = critical_density(k, j).p_c
    for p in np.linspace(p_c + 1e-3, 0.999, 25):
        r = largest_fixed_point(k, j, p)
        assert r.p_inf > 0 and r.derivative_at_fp < 1.0


def ell_zero_oracle(k, j, p, horizon=5000):
    """Direct scan: smallest ell after which the condition never fails up to ``horizon``."""
    x, last_fail = p, 0
    for ell in range(1, horizon):
        x = g_direct(k, j, p, x)
        if (ell + 1) * x / p > 0.25:
            last_fail = ell
    return last_fail + 1


def test_ell_zero_value():
    assert ell_zero_oracle(2, 2, 0.3) == 6
    assert ell_zero(2, 2, 0.3) == 6


@pytest.mark.parametrize("p", [0.01, 0.1, 0.2, 0.4, 0.45])
def test_ell_zero_matches_scan(p):
    assert ell_zero(2, 2, p) == ell_zero_oracle(2, 2, p)


def test_ell_zero_limits():
    assert ell_zero(2, 2, 1e-6) == 1
    assert ell_zero(2, 2, 0.0) == 1
    grid = [ell_zero(2, 2, p) for p in (0.3, 0.4, 0.45, 0.49, 0.499)]
    assert all(a < b for a, b in zip(grid, grid[1:]))
    with pytest.raises(ValueError, match="p_c"):
        ell_zero(2, 2, 0.5)
