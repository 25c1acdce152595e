"""Covariation and forward integrals via regularization, plus the Ito-sum oracle.

The estimators discretize the eps-regularized functionals

    [X, Y]_t^eps          = int_0^t (X_{r+eps} - X_r)(Y_{r+eps} - Y_r) / eps dr
    int_0^t H d^-Y (eps)  = int_0^t H_r (Y_{r+eps} - Y_r) / eps dr

with a left-point Riemann rule: integrand values at the left node times,
weighted by dt, summed over nodes strictly before t.  Left-point quadrature
matches the non-anticipating structure of the forward integral (the
integrand is read at the left endpoint); a trapezoid rule would bias it
toward the symmetric (Stratonovich-type) integral, which this package does
not implement.  Values beyond the horizon come from the constant
continuation of the paths.

Convergence across an eps schedule is reported (values plus a fitted
log-log slope), never extrapolated.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from os import PathLike
from typing import Sequence, TextIO, Union

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .numerics import pairwise_sum, sig17
from .pathkit import SamplePath, TimeGrid


@dataclass(frozen=True)
class RegularizationEstimate:
    """One eps-regularized quadrature value at time t."""

    t: float
    eps: float
    value: float
    quadrature_nodes: int


def _common_axis(*paths: SamplePath) -> TimeGrid:
    g = paths[0].grid
    for p in paths[1:]:
        if not p.grid.same_axis(g):
            raise ContractViolation("paths live on different grids")
    for p in paths:
        if p.dimension != 1:
            raise ContractViolation("regularization integrals are defined for scalar paths")
    return g


def _eps_steps(grid: TimeGrid, paths: Sequence[SamplePath], eps: float) -> int:
    e = grid.eps_to_steps(eps)
    margin = min(p.grid.continuation_margin for p in paths)
    if eps > margin * (1 + 1e-12):
        raise ConfigurationError(
            f"eps={eps} exceeds the declared continuation margin {margin} of the paths"
        )
    return e


def _shifted_increments(path: SamplePath, e: int) -> np.ndarray:
    """(P_{k+e} - P_k) for k = 0..n_steps-1, using constant continuation."""
    p = path.padded_series()
    n = path.grid.n_steps
    if p.size < n + e:
        p = np.concatenate([p, np.full(n + e - p.size, p[-1])])
    return p[e : e + n] - p[:n]


def eps_covariation_curve(x: SamplePath, y: SamplePath, eps: float) -> SamplePath:
    """[X, Y]^eps as a function of t on the whole grid."""
    grid = _common_axis(x, y)
    e = _eps_steps(grid, (x, y), eps)
    integrand = _shifted_increments(x, e) * _shifted_increments(y, e) / eps
    curve = np.concatenate([[0.0], np.cumsum(integrand) * grid.dt])
    return SamplePath.from_series(x.grid, curve, "derived")


def eps_covariation(x: SamplePath, y: SamplePath, eps: float, t: float) -> RegularizationEstimate:
    """Left-point quadrature of the covariation integrand up to (excluding) t."""
    grid = _common_axis(x, y)
    e = _eps_steps(grid, (x, y), eps)
    j = grid.index_of(t)
    integrand = _shifted_increments(x, e)[:j] * _shifted_increments(y, e)[:j] / eps
    return RegularizationEstimate(t, eps, pairwise_sum(integrand) * grid.dt, j)


def weighted_eps_covariation_curve(h: SamplePath, x: SamplePath, y: SamplePath, eps: float) -> SamplePath:
    """int H(r) (X_{r+eps}-X_r)(Y_{r+eps}-Y_r)/eps dr with H read at left nodes."""
    grid = _common_axis(h, x, y)
    e = _eps_steps(grid, (x, y), eps)
    integrand = h.series()[:-1] * _shifted_increments(x, e) * _shifted_increments(y, e) / eps
    curve = np.concatenate([[0.0], np.cumsum(integrand) * grid.dt])
    return SamplePath.from_series(x.grid, curve, "derived")


def weighted_eps_covariation(
    h: SamplePath, x: SamplePath, y: SamplePath, eps: float, t: float
) -> RegularizationEstimate:
    grid = _common_axis(h, x, y)
    e = _eps_steps(grid, (x, y), eps)
    j = grid.index_of(t)
    integrand = (
        h.series()[:j] * _shifted_increments(x, e)[:j] * _shifted_increments(y, e)[:j] / eps
    )
    return RegularizationEstimate(t, eps, pairwise_sum(integrand) * grid.dt, j)


def eps_forward_integral_curve(h: SamplePath, y: SamplePath, eps: float) -> SamplePath:
    """int H_r (Y_{r+eps} - Y_r)/eps dr as a function of t."""
    grid = _common_axis(h, y)
    e = _eps_steps(grid, (y,), eps)
    integrand = h.series()[:-1] * _shifted_increments(y, e) / eps
    curve = np.concatenate([[0.0], np.cumsum(integrand) * grid.dt])
    return SamplePath.from_series(y.grid, curve, "derived")


def eps_forward_integral(h: SamplePath, y: SamplePath, eps: float, t: float) -> RegularizationEstimate:
    grid = _common_axis(h, y)
    e = _eps_steps(grid, (y,), eps)
    j = grid.index_of(t)
    integrand = h.series()[:j] * _shifted_increments(y, e)[:j] / eps
    return RegularizationEstimate(t, eps, pairwise_sum(integrand) * grid.dt, j)


def ito_integral_curve(h: SamplePath, y: SamplePath) -> SamplePath:
    """Classical left-point Ito sum: sum H(t_k) (Y_{k+1} - Y_k).

    On semimartingale realizations this is the oracle the regularized
    forward integral must approach; for finite-variation Y it doubles as the
    Riemann-Stieltjes oracle.
    """
    _common_axis(h, y)
    increments = h.series()[:-1] * np.diff(y.series())
    curve = np.concatenate([[0.0], np.cumsum(increments)])
    return SamplePath.from_series(y.grid, curve, "derived")


def ito_integral_oracle(h: SamplePath, y: SamplePath, t: float) -> float:
    grid = _common_axis(h, y)
    j = grid.index_of(t)
    return pairwise_sum(h.series()[:j] * np.diff(y.series())[:j])


def estimates_to_csv(
    estimates: Sequence[RegularizationEstimate], dest: Union[str, PathLike, TextIO, None] = None
) -> str | None:
    """CSV rows (t, eps, value, n_nodes) with 17-significant-digit floats."""
    if isinstance(dest, (str, PathLike)):
        with open(dest, "w", encoding="utf-8", newline="\n") as f:
            estimates_to_csv(estimates, f)
        return None
    buf = dest if dest is not None else io.StringIO()
    buf.write("t,eps,value,n_nodes\n")
    for est in estimates:
        buf.write(f"{sig17(est.t)},{sig17(est.eps)},{sig17(est.value)},{est.quadrature_nodes}\n")
    if dest is None:
        return buf.getvalue()
    return None
