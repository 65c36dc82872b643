"""The one-generation bootstrap recursion and the critical density.

``g(x) = p * P(Binomial(k, x) >= k - j + 1)`` maps the probability that a
child is still occupied after ``n - 1`` bootstrap steps to the probability
that its parent is still occupied after ``n`` steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

EXACT_BINOMIAL_MAX_K = 64


def _check(k, j, p, x=None):
    if k < 1 or not 1 <= j <= k:
        raise ValueError(f"need 1 <= j <= k, got k={k}, j={j}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if x is not None and not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")


def _binom_pmf(n: int, i: int, x):
    if np.ndim(x) == 0:
        x = float(x)
        if x == 0.0 or x == 1.0:
            return float(i == (0 if x == 0.0 else n))
        if n <= EXACT_BINOMIAL_MAX_K:
            return math.comb(n, i) * x**i * (1.0 - x) ** (n - i)
        logc = math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1)
        return math.exp(logc + i * math.log(x) + (n - i) * math.log1p(-x))
    x = np.asarray(x, dtype=float)
    if n <= EXACT_BINOMIAL_MAX_K:
        return float(math.comb(n, i)) * x**i * (1.0 - x) ** (n - i)
    logc = math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1)
    with np.errstate(divide="ignore"):
        logs = logc + i * np.log(x) + (n - i) * np.log1p(-x)
    out = np.exp(logs)
    out = np.where(x == 0.0, float(i == 0), out)
    return np.where(x == 1.0, float(i == n), out)


def _g(k, j, p, x):
    """Vectorised ``g``; the scalar entry points share this arithmetic."""
    tail = sum(_binom_pmf(k, i, x) for i in range(k - j + 1, k + 1))
    return p * tail


def eval_g(k: int, j: int, p: float, x: float) -> float:
    """``p`` times the probability that at least ``k - j + 1`` of ``k`` children stay occupied."""
    _check(k, j, p, x)
    return float(_g(k, j, p, x))


def eval_g_prime(k: int, j: int, p: float, x: float) -> float:
    """Derivative of :func:`eval_g` in ``x``: ``p k P(Binomial(k-1, x) = k-j)``."""
    _check(k, j, p, x)
    return float(p * k * _binom_pmf(k - 1, k - j, x))


def iterate_recursion(k: int, j: int, p: float, n: int) -> np.ndarray:
    """Return ``(p_0, ..., p_n)`` with ``p_0 = p`` and ``p_m = g(p_{m-1})``."""
    _check(k, j, p)
    if n < 0:
        raise ValueError("n must be >= 0")
    out = np.empty(n + 1)
    out[0] = x = p
    for m in range(1, n + 1):
        x = eval_g(k, j, p, x)
        out[m] = x
    return out


def frozen_fraction_unrooted(k: int, j: int, p: float, n: int | None) -> float:
    """Probability that a vertex of the unrooted tree is occupied after ``n`` steps.

    ``n=None`` gives the ``n -> infinity`` limit, using the largest fixed
    point of ``g`` in place of ``p_{n-1}``.
    """
    _check(k, j, p)
    if n is None:
        q = largest_fixed_point(k, j, p).p_inf
    else:
        if n < 1:
            raise ValueError("n must be >= 1")
        q = iterate_recursion(k, j, p, n - 1)[-1]
    return float(p * sum(_binom_pmf(k + 1, i, q) for i in range(k - j + 1, k + 2)))


@dataclass
class FixedPointReport:
    p_inf: float
    derivative_at_fp: float
    stable: bool
    iterations: int


@dataclass
class CriticalDensityReport:
    p_c: float
    bracket_width: float
    evaluations: int


def largest_fixed_point(k: int, j: int, p: float, tol: float = 1e-13, max_iter: int = 200) -> FixedPointReport:
    """Largest fixed point of ``g`` on ``[0, 1]``.

    Iterates ``x <- g(x)`` from ``x = 1``; the iterates decrease monotonically
    to the answer. Near a tangency this crawls, so after ``max_iter`` steps the
    last iterate is used as an upper bracket for a root search of
    ``g(x) - x`` below it.
    """
    _check(k, j, p)
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = 1.0
    converged = False
    it = 0
    while it < max_iter:
        nx = eval_g(k, j, p, x)
        it += 1
        if abs(nx - x) < tol * max(x, 1e-12):
            x = nx
            converged = True
            break
        x = nx
        if x < 1e-14:
            converged = True
            break
    if not converged:
        x = _largest_root_below(k, j, p, x)
    if x < 1e-14:
        # below this the fixed point is indistinguishable from 0 in double precision
        x = 0.0
    d = eval_g_prime(k, j, p, x)
    return FixedPointReport(x, d, d < 1.0, it)


def _largest_root_below(k, j, p, upper):
    """Largest zero of ``g(x) - x`` in ``(0, upper]`` given ``g(upper) < upper``.

    Works with ``g(x) / x - 1`` so that the sign test is scale free near 0.
    """

    def h(x):
        return float(_g(k, j, p, x)) - x

    def root(a, b):
        fa, fb = h(a), h(b)
        if fa >= 0.0 > fb:
            return float(brentq(h, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps))
        # rounding flipped a sign: both ends are zeros to working precision
        return float(a if abs(fa) <= abs(fb) else b)

    if upper <= 0.0:
        return 0.0
    grid = np.unique(np.concatenate([np.linspace(0.0, upper, 2049)[1:], upper * np.geomspace(1e-15, 1.0, 241)]))
    ratio = _g(k, j, p, grid) / grid - 1.0
    nonneg = np.flatnonzero(ratio >= 0.0)
    if nonneg.size:
        i = nonneg[-1]
        if i + 1 == len(grid):
            return float(grid[i])
        return root(grid[i], grid[i + 1])
    # the positive region can fall between grid points near a tangency
    i = int(np.argmax(ratio))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda t: -h(t) / t, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    if -res.fun < 0.0:
        return 0.0
    return root(res.x, hi)


def critical_density(k: int, j: int, tol: float = 1e-10, fp_tol: float = 1e-13) -> CriticalDensityReport:
    """Bisection on ``p`` for the largest density where 0 is the only fixed point.

    A density is classified supercritical when the largest fixed point exceeds
    ``10 * fp_tol``.
    """
    _check(k, j, 0.5)
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = 0.0, 1.0
    evals = 0

    def supercritical(p):
        nonlocal evals
        evals += 1
        return largest_fixed_point(k, j, p, tol=fp_tol).p_inf > 10 * fp_tol

    if not supercritical(hi):
        return CriticalDensityReport(1.0, 0.0, evals)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if supercritical(mid):
            hi = mid
        else:
            lo = mid
    return CriticalDensityReport(0.5 * (lo + hi), hi - lo, evals)


def ell_zero(k: int, j: int, p: float, p_c: float | None = None, max_ell: int = 10**7) -> int:
    """Smallest ``ell >= 1`` from which ``(ell + 1) * p_ell / p <= 1/4`` holds for good.

    ``p_ell`` is the recursion value after ``ell`` steps. Past
    ``ell + 1 >= p / (p_c - p)`` every later term shrinks (because
    ``g(x) <= x p / p_c``), so the scan stops once the condition holds beyond
    that index.
    """
    _check(k, j, p)
    if p_c is None:
        rep = critical_density(k, j)
        p_c, lower = rep.p_c, rep.p_c - rep.bracket_width / 2
    else:
        lower = p_c
    # only densities below the bisection bracket are certainly subcritical
    if p >= lower:
        raise ValueError(f"ell_zero needs p < p_c = {p_c!r}, got p = {p!r}")
    if p == 0.0:
        return 1
    monotone_from = math.ceil(p / (p_c - p))
    x = p
    last_fail = 0
    ell = 0
    while ell < max_ell:
        ell += 1
        x = eval_g(k, j, p, x)
        if (ell + 1) * x / p > 0.25:
            last_fail = ell
        elif ell + 1 >= monotone_from:
            return last_fail + 1
    raise RuntimeError(f"ell_zero did not settle within {max_ell} levels")
