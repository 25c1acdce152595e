"""Assembly and verification of the C^{0,1} decomposition of F(t, X_t).

For a weak Dirichlet realization X = M + A and a flow F, the toolkit builds

    F(t, X_t) - F(0, X_0) = int gamma(r, X_r) dW_r + int F_x(r, X_r) dM_r
                            + B^X(F)_t

where the residual B^X(F) is always *defined by subtraction* of the two
left-point Ito sums from the left-hand side.  The residual exists in the
C^{0,1} case; the explicit four-term formula (drift integral, forward
integral against A, gamma_x against [X, W], half F_xx against [X]) only
applies to C^{0,2} flows and is computed as a cross-check, never as the
primary value.

The forward integral against A uses the regularized estimator even when A
has finite variation; the classical Stieltjes sum (``ito_integral_curve``)
is kept alongside as an oracle for those cases.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from os import PathLike
from typing import Callable, Sequence, TextIO, Union

import numpy as np

from .errors import CapabilityError, ContractViolation
from .flowkit import StochasticFlow, as_driver_view, flow_dx_along
from .numerics import pairwise_sum_axis0, sig17
from .pathkit import PathBundle, SamplePath, TimeGrid
from .regint import (
    eps_covariation,
    eps_forward_integral_curve,
    ito_integral_curve,
    weighted_eps_covariation_curve,
)
from .ucpstats import UcpSeries, estimate_ucp_distance

_XMA_TOL = 1e-12


@dataclass(frozen=True)
class ExplicitTerms:
    """The four C^{0,2} components of the residual, each as a node curve."""

    beta_dr: np.ndarray
    fx_da: np.ndarray
    gamma_x_dxw: np.ndarray
    half_fxx_dx: np.ndarray
    eps: float

    @property
    def total(self) -> np.ndarray:
        return self.beta_dr + self.fx_da + self.gamma_x_dxw + self.half_fxx_dx


@dataclass(frozen=True)
class DecompositionReport:
    """Per-node values of every term of the decomposition, plus discrepancies."""

    grid: TimeGrid
    flow_name: str
    lhs: np.ndarray
    term_gamma_dw: np.ndarray
    term_fx_dm: np.ndarray
    residual: np.ndarray
    explicit: ExplicitTerms | None = None

    @property
    def discrepancy(self) -> np.ndarray | None:
        if self.explicit is None:
            return None
        return self.residual - self.explicit.total

    def residual_path(self) -> SamplePath:
        return SamplePath.from_series(self.grid, self.residual, "derived")

    def to_csv(self, dest: Union[str, PathLike, TextIO, None] = None) -> str | None:
        if isinstance(dest, (str, PathLike)):
            with open(dest, "w", encoding="utf-8", newline="\n") as f:
                self.to_csv(f)
            return None
        buf = dest if dest is not None else io.StringIO()
        cols = {
            "t": self.grid.node_times,
            "lhs": self.lhs,
            "gamma_dw": self.term_gamma_dw,
            "fx_dm": self.term_fx_dm,
            "residual": self.residual,
        }
        if self.explicit is not None:
            cols.update(
                beta_dr=self.explicit.beta_dr,
                fx_da=self.explicit.fx_da,
                gamma_x_dxw=self.explicit.gamma_x_dxw,
                half_fxx_dx=self.explicit.half_fxx_dx,
                explicit_total=self.explicit.total,
                discrepancy=self.discrepancy,
            )
        buf.write(",".join(cols) + "\n")
        matrix = np.column_stack(list(cols.values()))
        for row in matrix:
            buf.write(",".join(sig17(v) for v in row) + "\n")
        if dest is None:
            return buf.getvalue()
        return None


def _check_bundle(paths: PathBundle) -> None:
    x, m, a = paths.x.series(), paths.m.series(), paths.a.series()
    scale = max(1.0, float(np.max(np.abs(x))))
    if np.max(np.abs(x - (m + a))) > _XMA_TOL * scale:
        raise ContractViolation("X != M + A beyond 1e-12")
    if paths.x.dimension != 1:
        raise ContractViolation("decomposition checks are implemented for d = 1 only")


def assemble_rhs_terms(flow: StochasticFlow, paths: PathBundle) -> DecompositionReport:
    """Left-point Ito sums of both stochastic terms; residual by subtraction.

    Needs F_x along the path, hence a flow that is at least C^{0,1}; flows
    without analytic forms fall back to per-node quadrature and finite
    differences (O(n^2) over the grid).
    """
    _check_bundle(paths)
    grid = paths.x.grid
    x = paths.x.series()
    left = grid.times[: grid.n_steps]
    view = as_driver_view(paths.w)

    from .flowkit import evaluate_flow_along

    f_path = evaluate_flow_along(flow, paths.w, grid.node_times, x)
    lhs = f_path - f_path[0]

    gamma_vals = np.asarray(flow.chars.gamma(view, left, x[:-1]), dtype=np.float64)
    term_gamma = np.concatenate([[0.0], np.cumsum(gamma_vals * np.diff(paths.w.series()))])

    fx_vals = flow_dx_along(flow, paths.w, left, x[:-1], order=1)
    term_fx = np.concatenate([[0.0], np.cumsum(fx_vals * np.diff(paths.m.series()))])

    residual = lhs - term_gamma - term_fx
    return DecompositionReport(
        grid=grid,
        flow_name=flow.name,
        lhs=lhs,
        term_gamma_dw=term_gamma,
        term_fx_dm=term_fx,
        residual=residual,
    )


def explicit_bx_terms(flow: StochasticFlow, paths: PathBundle, eps: float) -> ExplicitTerms:
    """The C^{0,2} formula: beta dr + F_x d-A + gamma_x d[X,W] + (1/2) F_xx d[X].

    The drift term is a left-point quadrature along x = X_r; the other three
    are regularized integrals at width eps.
    """
    if flow.smoothness != "C02":
        raise CapabilityError(f"flow {flow.name!r} is declared {flow.smoothness}; the explicit formula needs C02")
    if flow.gamma_smoothness != "C1alpha" or flow.analytic is None or flow.analytic.gamma_x is None:
        raise CapabilityError(f"flow {flow.name!r} does not declare a C^(0,1+alpha) gamma with gamma_x")
    _check_bundle(paths)
    grid = paths.x.grid
    x = paths.x.series()
    left = grid.times[: grid.n_steps]
    view = as_driver_view(paths.w)

    beta_vals = np.asarray(flow.chars.beta(view, left, x[:-1]), dtype=np.float64)
    beta_dr = np.concatenate([[0.0], np.cumsum(beta_vals * grid.dt)])

    fx_path = SamplePath.from_series(grid, flow_dx_along(flow, paths.w, grid.node_times, x, order=1), "derived")
    fx_da = eps_forward_integral_curve(fx_path, paths.a, eps).series()

    gx_vals = np.asarray(flow.analytic.gamma_x(view, grid.node_times, x), dtype=np.float64)
    gx_path = SamplePath.from_series(grid, gx_vals, "derived")
    gamma_x_dxw = weighted_eps_covariation_curve(gx_path, paths.x, paths.w, eps).series()

    fxx_path = SamplePath.from_series(grid, flow_dx_along(flow, paths.w, grid.node_times, x, order=2), "derived")
    half_fxx_dx = 0.5 * weighted_eps_covariation_curve(fxx_path, paths.x, paths.x, eps).series()

    return ExplicitTerms(beta_dr, fx_da, gamma_x_dxw, half_fxx_dx, eps)


def verify_decomposition(flow: StochasticFlow, paths: PathBundle, eps: float | None = None) -> DecompositionReport:
    """Residual report, with the explicit cross-check attached when eps is given."""
    report = assemble_rhs_terms(flow, paths)
    if eps is None:
        return report
    return DecompositionReport(
        grid=report.grid,
        flow_name=report.flow_name,
        lhs=report.lhs,
        term_gamma_dw=report.term_gamma_dw,
        term_fx_dm=report.term_fx_dm,
        residual=report.residual,
        explicit=explicit_bx_terms(flow, paths, eps),
    )


def stieltjes_fx_da(flow: StochasticFlow, paths: PathBundle) -> np.ndarray:
    """Classical Stieltjes oracle for the forward integral when A has finite variation."""
    grid = paths.x.grid
    fx_path = SamplePath.from_series(
        grid, flow_dx_along(flow, paths.w, grid.node_times, paths.x.series(), order=1), "derived"
    )
    return ito_integral_curve(fx_path, paths.a).series()


# ---------------------------------------------------------------------------
# Test-martingale catalog and ensemble checks
# ---------------------------------------------------------------------------

MartingaleSpec = Union[str, Callable[[PathBundle], SamplePath]]


def test_martingale(spec: MartingaleSpec, bundle: PathBundle) -> SamplePath:
    """Continuous local martingales used as N in covariation checks.

    The catalog is necessarily incomplete (the theorem quantifies over all
    continuous local martingales); it is documented, not exhaustive.
    """
    if callable(spec):
        return spec(bundle)
    if spec in ("brownian", "W"):
        return bundle.w.with_label("martingale")
    if spec == "int-w-dw":
        return ito_integral_curve(bundle.w, bundle.w).with_label("martingale")
    if spec == "int-sin-w-dw":
        integrand = SamplePath.from_series(bundle.w.grid, np.sin(bundle.w.series()), "derived")
        return ito_integral_curve(integrand, bundle.w).with_label("martingale")
    raise ContractViolation(f"unknown test martingale {spec!r}")


def zero_energy_check(
    flow: StochasticFlow,
    bundles: Sequence[PathBundle],
    martingale: MartingaleSpec,
    eps_schedule: Sequence[float],
    delta: float = 0.05,
    eta: float = 0.05,
) -> UcpSeries:
    """[B^X(F), N]^eps at T across the schedule, reduced against target 0.

    delta is the deviation threshold on the covariation value; eta the
    acceptable terminal exceedance probability.
    """
    if not bundles:
        raise ContractViolation("ensemble must be nonempty")
    horizon = bundles[0].x.grid.t_horizon
    samples = {float(e): np.empty(len(bundles)) for e in eps_schedule}
    for i, bundle in enumerate(bundles):
        residual = assemble_rhs_terms(flow, bundle).residual_path()
        n_path = test_martingale(martingale, bundle)
        for e in eps_schedule:
            samples[float(e)][i] = eps_covariation(residual, n_path, float(e), horizon).value
    estimates = tuple(estimate_ucp_distance(samples[float(e)], 0.0, delta) for e in eps_schedule)
    return UcpSeries(tuple(float(e) for e in eps_schedule), estimates, eta)


@dataclass(frozen=True)
class CorollaryReport:
    """Per-path sup |B^X(F)| for declared-martingale cases."""

    tol: float
    sup_residuals: np.ndarray
    worst_path: int
    worst_node: int
    worst_value: float
    self_covariations: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return bool(np.all(self.sup_residuals <= self.tol))


def martingale_corollary_check(
    flow: StochasticFlow,
    bundles: Sequence[PathBundle],
    tol: float = 1e-10,
    eps: float | None = None,
) -> CorollaryReport:
    """When F(., X) is a local martingale the residual must vanish identically.

    The report carries the worst node so a failing declared-martingale case
    can be located; optionally also [B^X, B^X]^eps at T per path.
    """
    if not bundles:
        raise ContractViolation("ensemble must be nonempty")
    sups = np.empty(len(bundles))
    worst = (-1.0, 0, 0)
    self_cov = np.empty(len(bundles)) if eps is not None else None
    for i, bundle in enumerate(bundles):
        report = assemble_rhs_terms(flow, bundle)
        k = int(np.argmax(np.abs(report.residual)))
        sups[i] = abs(report.residual[k])
        if sups[i] > worst[0]:
            worst = (sups[i], i, k)
        if eps is not None:
            res = report.residual_path()
            self_cov[i] = eps_covariation(res, res, eps, bundle.x.grid.t_horizon).value
    return CorollaryReport(
        tol=tol,
        sup_residuals=sups,
        worst_path=worst[1],
        worst_node=worst[2],
        worst_value=worst[0],
        self_covariations=self_cov,
    )


# ---------------------------------------------------------------------------
# Assumption spot checks (hypotheses of the decomposition theorem)
# ---------------------------------------------------------------------------


def spot_check_assumptions(
    flow: StochasticFlow,
    bundles: Sequence[PathBundle],
    rho: float = 1.0,
    n_time_samples: int = 17,
    max_paths: int = 32,
) -> dict:
    """Empirical versions of the drift/noise assumptions on a (s, t) subgrid.

    These are hypotheses of the theorem, not computations: the check
    verifies that the declared test case plausibly satisfies them (finite
    sampled sups, moments below declared bounds) and reports the numbers.
    """
    if not bundles:
        raise ContractViolation("ensemble must be nonempty")
    grid = bundles[0].x.grid
    idx = np.linspace(0, grid.n_steps, n_time_samples).astype(int)
    s_times = grid.times[idx]
    beta_path_integrals = []
    gamma_sups = []
    beta_abs = []  # per (path, s, t) samples of |beta(s, X_t)|
    gamma_pow = []  # per (path, s, t) samples of |gamma(s, X_t)|^(2+rho)
    cadlag_ok = True
    for bundle in bundles[:max_paths]:
        view = as_driver_view(bundle.w)
        x_t = bundle.x.series()[idx]
        b_mat = np.empty((n_time_samples, n_time_samples))
        g_mat = np.empty((n_time_samples, n_time_samples))
        for j, s in enumerate(s_times):
            b_mat[j] = np.abs(np.asarray(flow.chars.beta(view, np.full_like(x_t, s), x_t), dtype=np.float64))
            g_mat[j] = np.abs(np.asarray(flow.chars.gamma(view, np.full_like(x_t, s), x_t), dtype=np.float64))
        beta_path_integrals.append(float(np.mean(b_mat.max(axis=0)) * grid.t_horizon))
        gamma_sups.append(float(g_mat.max()))
        beta_abs.append(b_mat)
        gamma_pow.append(g_mat ** (2.0 + rho))
        along = np.asarray(flow.chars.gamma(view, grid.node_times, bundle.x.series()), dtype=np.float64)
        cadlag_ok = cadlag_ok and bool(np.all(np.isfinite(along)))
    decl = flow.declared_bounds
    mean_beta = float(np.mean(np.max(np.mean(np.stack(beta_abs), axis=0), axis=0)) * grid.t_horizon)
    sup_gamma_moment = float(np.max(np.mean(np.stack(gamma_pow), axis=0)))
    report = {
        "a1_sup_path_integral": max(beta_path_integrals),
        "a1_finite": all(np.isfinite(v) for v in beta_path_integrals),
        "b1_mean_integral": mean_beta,
        "b1_within_declared": None if decl.beta_mean_integral is None else mean_beta <= decl.beta_mean_integral * 1.01,
        "a2_sup": max(gamma_sups),
        "a2_within_declared": None if decl.gamma_sup is None else max(gamma_sups) <= decl.gamma_sup * 1.01,
        "b2_sup_moment": sup_gamma_moment,
        "b2_within_declared": None if decl.gamma_moment is None else sup_gamma_moment <= decl.gamma_moment * 1.01,
        "a3_cadlag_evaluable": cadlag_ok,
        "rho": rho,
    }
    return report


def ensemble_mean_curve(curves: Sequence[np.ndarray]) -> np.ndarray:
    """Nodewise ensemble mean with the fixed pairwise reduction."""
    stacked = np.stack([np.asarray(c, dtype=np.float64) for c in curves])
    return pairwise_sum_axis0(stacked) / stacked.shape[0]
