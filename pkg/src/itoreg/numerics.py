"""Small numeric helpers: deterministic reductions, intervals, quadrature nodes.

Every ensemble statistic in this package is reduced with :func:`pairwise_sum`,
whose summation tree depends only on the length of the input array.  Results
are therefore bit-identical no matter how many worker threads produced the
per-path values, as long as they are collected into index order first.
"""

from __future__ import annotations

import math

import numpy as np

_BLOCK = 8


def pairwise_sum(values) -> float:
    """Sum ``values`` with a fixed pairwise (binary) reduction tree.

    Blocks of at most 8 elements are summed left to right; longer arrays are
    split at ``len // 2`` and the halves combined.  The tree is a pure
    function of ``len(values)``, independent of any chunking done upstream.
    """
    a = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    return _pairwise(a)


def _pairwise(a: np.ndarray) -> float:
    n = a.size
    if n <= _BLOCK:
        s = 0.0
        for v in a:
            s += float(v)
        return s
    half = n // 2
    return _pairwise(a[:half]) + _pairwise(a[half:])


def pairwise_mean(values) -> float:
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("mean of empty array")
    return pairwise_sum(a) / a.size


def pairwise_sum_axis0(matrix) -> np.ndarray:
    """Column sums with the same fixed tree as :func:`pairwise_sum`.

    Each column is reduced in exactly the order the scalar version would
    use, so ``pairwise_sum_axis0(m)[j] == pairwise_sum(m[:, j])`` bit for bit.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a 2-d array")
    if m.shape[0] == 0:
        return np.zeros(m.shape[1])
    return _pairwise_axis0(m)


def _pairwise_axis0(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    if n <= _BLOCK:
        out = m[0].astype(np.float64, copy=True)
        for i in range(1, n):
            out += m[i]
        return out
    half = n // 2
    return _pairwise_axis0(m[:half]) + _pairwise_axis0(m[half:])


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion.

    Preferred over the Wald interval because it stays informative at the
    boundary proportions 0 and 1 that exceedance counts often hit.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes outside [0, n]")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return (max(0.0, center - half), min(1.0, center + half))


def wilson_halfwidth(successes: int, n: int, z: float = 1.959963984540054) -> float:
    lo, hi = wilson_interval(successes, n, z)
    return 0.5 * (hi - lo)


def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped from [-1, 1] to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def fit_loglog_slope(eps_values, deviations) -> float:
    """Least-squares slope of log(deviation) against log(eps).

    Returns NaN when fewer than two strictly positive pairs are available;
    rates are reported, never asserted.
    """
    e = np.asarray(eps_values, dtype=np.float64)
    d = np.asarray(deviations, dtype=np.float64)
    mask = (e > 0) & (d > 0) & np.isfinite(d)
    if mask.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(e[mask]), np.log(d[mask]), 1)
    return float(slope)


def sig17(x: float) -> str:
    """Decimal text with 17 significant digits (round-trips float64 exactly)."""
    return format(float(x), ".17g")
