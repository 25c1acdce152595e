"""Term-by-term decomposition of [F(., X), N]^eps and its convergence checks.

The regularized covariation of F(., X) with a test martingale N splits into

    I1 + I2,   I1 = I11 + R11 + R12,   I2 = I21 + R21 + R22,

where I11 carries F_x(r, X_r) against the double increment, I21 carries
gamma(r, X_r) against the Brownian/N double increment, and the R terms are
remainders that vanish as eps shrinks.  The splits are algebraic identities
of the discretization: each remainder is computed from the same F, F_x and
window-integral evaluations as its parent term, so the reconstructions hold
to rounding on every path, independent of any convergence.

R12's remainder is the exact bracket F(r+eps, X_{r+eps}) - F(r+eps, X_r)
- F_x(r+eps, X_r) dX; the lambda-averaged difference quotient that
represents it is exported separately (``z_eps``) using a 16-point
Gauss-Legendre rule, whose error is negligible against Monte Carlo noise
but would pollute an exact identity for kinked F_x.

I2 is computed through the same window-integral kernel as
``substitute_random_point``: the integrand at r is the pair of
characteristic integrals over [r, r+eps] with x frozen at X_r.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, ContractViolation
from .flowkit import StochasticFlow, as_driver_view, evaluate_flow_along, flow_dx_along, window_integrals
from .numerics import gauss_legendre_01, pairwise_sum
from .pathkit import PathBundle, SamplePath, TimeGrid
from .ucpstats import MomentEstimate, UcpSeries, estimate_ucp_distance, moment_estimate

_GL_NODES, _GL_WEIGHTS = gauss_legendre_01(16)


@dataclass(frozen=True)
class ReconstructionCheck:
    ok: bool
    max_abs_error: float
    scale: float


@dataclass(frozen=True)
class ProofTermSet:
    """Curves of the eight proof terms plus the per-node auxiliary samples.

    Curves have one value per node in [0, T]; the auxiliary arrays sample
    the integrand quantities at the n_steps left nodes.
    """

    grid: TimeGrid
    eps: float
    total: np.ndarray
    i1: np.ndarray
    i2: np.ndarray
    i11: np.ndarray
    r11: np.ndarray
    r12: np.ndarray
    i21: np.ndarray
    r21: np.ndarray
    r22: np.ndarray
    y_eps: np.ndarray
    z_eps: np.ndarray
    y_tilde: np.ndarray
    z_tilde: np.ndarray

    def check_reconstruction(self, rtol: float = 1e-10) -> ReconstructionCheck:
        scale = max(1.0, float(np.max(np.abs(self.total))))
        err = max(
            float(np.max(np.abs(self.i1 + self.i2 - self.total))),
            float(np.max(np.abs(self.i11 + self.r11 + self.r12 - self.i1))),
            float(np.max(np.abs(self.i21 + self.r21 + self.r22 - self.i2))),
        )
        return ReconstructionCheck(err <= rtol * scale, err, scale)

    def term(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def to_csv(self) -> str:
        names = ["total", "i1", "i2", "i11", "r11", "r12", "i21", "r21", "r22"]
        from .numerics import sig17

        lines = ["t," + ",".join(names)]
        cols = [getattr(self, n) for n in names]
        for k, t in enumerate(self.grid.node_times):
            lines.append(",".join([sig17(t)] + [sig17(c[k]) for c in cols]))
        return "\n".join(lines) + "\n"


def _curve(integrand: np.ndarray, dt: float) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(integrand) * dt])


def compute_proof_terms(
    flow: StochasticFlow, paths: PathBundle, n_path: SamplePath, eps: float
) -> ProofTermSet:
    """All eight term curves for one path at one regularization width."""
    grid = paths.x.grid
    if paths.x.dimension != 1:
        raise ContractViolation("proof terms are implemented for d = 1 only")
    if flow.analytic is None or flow.analytic.f_x is None:
        # Finite differences over the whole grid would cost O(n^2) per term;
        # refuse instead of silently crawling.  Separable flows get F_x free.
        raise CapabilityError(
            f"flow {flow.name!r} does not provide F_x; proof terms need a C01 flow with derivatives"
        )
    e = grid.eps_to_steps(eps)
    margin = min(paths.x.grid.continuation_margin, n_path.grid.continuation_margin)
    if eps > margin * (1 + 1e-12):
        raise ContractViolation(f"eps={eps} exceeds the continuation margin {margin}")
    n = grid.n_steps
    dt = grid.dt
    x = paths.x.series()
    xp = paths.x.padded_series()
    npad = n_path.padded_series()
    wpad = paths.w.padded_series()
    dxe = xp[e : e + n] - xp[:n]
    dne = npad[e : e + n] - npad[:n]
    dwe = wpad[e : e + n] - wpad[:n]
    left = grid.times[:n]
    shift_idx = np.minimum(np.arange(n) + e, n)
    ts = grid.times[shift_idx]  # r + eps, constantly continued at T
    x_shift = xp[e : e + n]

    f_a = evaluate_flow_along(flow, paths.w, ts, x_shift)  # F(r+eps, X_{r+eps})
    f_b = evaluate_flow_along(flow, paths.w, ts, x[:n])  # F(r+eps, X_r)
    f_d = evaluate_flow_along(flow, paths.w, left, x[:n])  # F(r, X_r)
    fx0 = flow_dx_along(flow, paths.w, left, x[:n], order=1)
    fxe = flow_dx_along(flow, paths.w, ts, x[:n], order=1)
    y_eps = fxe - fx0

    view = as_driver_view(paths.w)
    gam0 = np.asarray(flow.chars.gamma(view, left, x[:n]), dtype=np.float64)
    b_win, g_win = window_integrals(flow, paths.w, x[:n], e)

    inv = 1.0 / eps
    total_i = (f_a - f_d) * dne * inv
    i1_i = (f_a - f_b) * dne * inv
    i2_i = (b_win + g_win) * dne * inv
    i11_i = fx0 * dxe * dne * inv
    r11_i = y_eps * dxe * dne * inv
    r12_i = (f_a - f_b - fxe * dxe) * dne * inv
    i21_i = gam0 * dwe * dne * inv
    r21_i = b_win * dne * inv
    r22_i = (g_win - gam0 * dwe) * dne * inv

    z_eps = np.zeros(n)
    for lam, wq in zip(_GL_NODES, _GL_WEIGHTS):
        z_eps += wq * (flow_dx_along(flow, paths.w, ts, x[:n] + lam * dxe, order=1) - fxe)

    return ProofTermSet(
        grid=grid,
        eps=eps,
        total=_curve(total_i, dt),
        i1=_curve(i1_i, dt),
        i2=_curve(i2_i, dt),
        i11=_curve(i11_i, dt),
        r11=_curve(r11_i, dt),
        r12=_curve(r12_i, dt),
        i21=_curve(i21_i, dt),
        r21=_curve(r21_i, dt),
        r22=_curve(r22_i, dt),
        y_eps=y_eps,
        z_eps=z_eps,
        y_tilde=b_win * inv,
        z_tilde=(g_win - gam0 * dwe) / math.sqrt(eps),
    )


# ---------------------------------------------------------------------------
# Lemma functionals
# ---------------------------------------------------------------------------

LEMMA_IDS = ("L42", "L45", "L46")


def lemma_convergence_check(
    lemma_id: str,
    xs: Sequence[SamplePath],
    z_family: Callable[[int, float], np.ndarray],
    eps_schedule: Sequence[float],
    ys: Sequence[SamplePath] | None = None,
    delta: float = 0.05,
    eta: float = 0.05,
) -> UcpSeries:
    """Ucp estimates of one remainder-lemma functional against target 0.

    L42:  int Z_r (X_{r+eps} - X_r) / sqrt(eps) dr   (needs int |Z|^2 -> 0)
    L45:  int Z_r (X_{r+eps} - X_r) dr               (needs Z bounded in prob.)
    L46:  int Z_r (X_{r+eps} - X_r)(Y_{r+eps} - Y_r) / eps dr  (needs sup|Z| -> 0)

    ``z_family(i, eps)`` supplies the Z samples at the left nodes for path i;
    callers pass families from :func:`compute_proof_terms` or synthetic ones
    with known decay.
    """
    if lemma_id not in LEMMA_IDS:
        raise ContractViolation(f"unknown lemma id {lemma_id!r}; choose from {LEMMA_IDS}")
    if lemma_id == "L46" and ys is None:
        raise ContractViolation("L46 needs the second process family ys")
    if not xs:
        raise ContractViolation("ensemble must be nonempty")
    grid = xs[0].grid
    n = grid.n_steps
    sup_by_eps: dict[float, np.ndarray] = {}
    for e_val in eps_schedule:
        e = grid.eps_to_steps(float(e_val))
        sups = np.empty(len(xs))
        for i, xpath in enumerate(xs):
            z = np.asarray(z_family(i, float(e_val)), dtype=np.float64)
            if z.shape != (n,):
                raise ContractViolation(f"z_family must return {n} left-node samples")
            xpad = xpath.padded_series()
            dxe = xpad[e : e + n] - xpad[:n]
            if lemma_id == "L42":
                integrand = z * dxe / math.sqrt(float(e_val))
            elif lemma_id == "L45":
                integrand = z * dxe
            else:
                ypad = ys[i].padded_series()
                dye = ypad[e : e + n] - ypad[:n]
                integrand = z * dxe * dye / float(e_val)
            sups[i] = float(np.max(np.abs(_curve(integrand, grid.dt))))
        sup_by_eps[float(e_val)] = sups
    estimates = tuple(estimate_ucp_distance(sup_by_eps[float(e)], 0.0, delta) for e in eps_schedule)
    return UcpSeries(tuple(float(e) for e in eps_schedule), estimates, eta)


def ytilde_l1_samples(flow: StochasticFlow, bundles: Sequence[PathBundle], eps: float) -> np.ndarray:
    """Per-path int_0^T |Ytilde^eps_r| dr, the L1 statistic behind tightness."""
    out = np.empty(len(bundles))
    for i, bundle in enumerate(bundles):
        grid = bundle.x.grid
        e = grid.eps_to_steps(eps)
        b_win, _ = window_integrals(flow, bundle.w, bundle.x.series()[:-1], e)
        out[i] = pairwise_sum(np.abs(b_win) / eps) * grid.dt
    return out


# ---------------------------------------------------------------------------
# Moment bound of the stochastic window remainder
# ---------------------------------------------------------------------------


def mao_constant(rho: float) -> float:
    """C = ((2+rho)(1+rho)/2)^((2+rho)/2) * 2^(2+rho), from the moment inequality."""
    if not rho > 0:
        raise ContractViolation("rho must be positive")
    p = 2.0 + rho
    return ((p * (1.0 + rho)) / 2.0) ** (p / 2.0) * 2.0**p


@dataclass(frozen=True)
class MaoBoundReport:
    """Empirical moments of Ztilde^eps_r against the theoretical ceiling.

    ``moment2``/``momentp`` are (n_r, n_eps) grids of MomentEstimates'
    values; ``flagged`` marks any (r, eps) whose lower confidence bound
    exceeds the bound, which would contradict the declared assumptions.
    """

    rho: float
    c_constant: float
    bound: float
    r_times: np.ndarray
    eps_schedule: tuple[float, ...]
    moment2: np.ndarray
    moment2_ci: np.ndarray
    momentp: np.ndarray
    momentp_ci: np.ndarray
    flagged: np.ndarray
    second_moment_integrals: np.ndarray
    integral_decreasing: bool
    degenerate_pass: bool

    @property
    def passed(self) -> bool:
        return self.degenerate_pass or (not bool(self.flagged.any()) and self.integral_decreasing)

    def to_json_dict(self) -> dict:
        return {
            "rho": self.rho,
            "c_constant": self.c_constant,
            "bound": self.bound,
            "r_times": [float(r) for r in self.r_times],
            "records": [
                {
                    "epsilon": e,
                    "r": float(self.r_times[i]),
                    "moment2": float(self.moment2[i, j]),
                    "moment2_ci": float(self.moment2_ci[i, j]),
                    "momentp": float(self.momentp[i, j]),
                    "momentp_ci": float(self.momentp_ci[i, j]),
                    "flagged": bool(self.flagged[i, j]),
                }
                for j, e in enumerate(self.eps_schedule)
                for i in range(len(self.r_times))
            ],
            "second_moment_integrals": [float(v) for v in self.second_moment_integrals],
            "integral_decreasing": self.integral_decreasing,
            "degenerate_pass": self.degenerate_pass,
            "verdict": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def mao_bound_check(
    flow: StochasticFlow,
    bundles: Sequence[PathBundle],
    eps_schedule: Sequence[float],
    rho: float = 1.0,
    n_r_nodes: int = 9,
) -> MaoBoundReport:
    """Moments of Ztilde^eps_r = eps^(-1/2) int_r^(r+eps) [gamma(s, X_r) - gamma(r, X_r)] dW_s.

    Ztilde is computed by direct Ito sums over the window.  The r nodes are
    equispaced in [0, T - eps_max]: the bound is uniform in r, so a fixed
    grid spot-checks uniformity at fixed cost.  A gamma that is constant in
    time makes Ztilde vanish identically; that is reported as a degenerate
    pass rather than an error.
    """
    if not bundles:
        raise ContractViolation("ensemble must be nonempty")
    decl = flow.declared_bounds
    candidates = []
    if decl.gamma_sup is not None:
        candidates.append(decl.gamma_sup ** (2.0 + rho))
    if decl.gamma_moment is not None:
        candidates.append(decl.gamma_moment)
    if not candidates:
        raise CapabilityError(
            f"flow {flow.name!r} declares neither a gamma sup bound nor a gamma moment bound"
        )
    c_const = mao_constant(rho)
    bound = c_const * max(candidates)

    grid = bundles[0].x.grid
    for e_val in eps_schedule:
        if float(e_val) > grid.continuation_margin * (1 + 1e-12):
            raise ContractViolation(
                f"eps={e_val} exceeds the grid margin {grid.continuation_margin}; windows would leave the horizon"
            )
    r_hi = grid.index_of(grid.t_horizon - grid.continuation_margin)
    r_idx = np.unique(np.linspace(0, r_hi, n_r_nodes).astype(int))
    r_times = grid.times[r_idx]
    eps_list = [float(e) for e in eps_schedule]

    n_r, n_e = len(r_idx), len(eps_list)
    m2 = np.empty((n_r, n_e))
    m2ci = np.empty((n_r, n_e))
    mp = np.empty((n_r, n_e))
    mpci = np.empty((n_r, n_e))
    all_zero = True
    for j, eps in enumerate(eps_list):
        e = grid.eps_to_steps(eps)
        root = math.sqrt(eps)
        for i, k in enumerate(r_idx):
            samples = np.empty(len(bundles))
            for b_i, bundle in enumerate(bundles):
                view = as_driver_view(bundle.w)
                x_r = bundle.x.series()[k]
                s_nodes = grid.times[k : k + e]
                gam = np.asarray(flow.chars.gamma(view, s_nodes, np.asarray(x_r)), dtype=np.float64)
                gam_r = float(np.asarray(flow.chars.gamma(view, grid.times[k : k + 1], np.asarray(x_r)), dtype=np.float64)[0])
                dw = np.diff(view.series_up_to(k + e)[k:])
                samples[b_i] = float(np.dot(gam - gam_r, dw)) / root
            if np.any(samples != 0.0):
                all_zero = False
            est2: MomentEstimate = moment_estimate(samples, 2.0)
            estp: MomentEstimate = moment_estimate(samples, 2.0 + rho)
            m2[i, j], m2ci[i, j] = est2
            mp[i, j], mpci[i, j] = estp
    flagged = (mp - mpci) > bound
    integrals = np.array([np.trapz(m2[:, j], r_times) for j in range(n_e)])
    diffs = np.diff(integrals)
    integral_decreasing = bool(np.all(diffs <= 1e-12 + 1e-9 * np.abs(integrals[:-1])))
    return MaoBoundReport(
        rho=rho,
        c_constant=c_const,
        bound=bound,
        r_times=r_times,
        eps_schedule=tuple(eps_list),
        moment2=m2,
        moment2_ci=m2ci,
        momentp=mp,
        momentp_ci=mpci,
        flagged=flagged,
        second_moment_integrals=integrals,
        integral_decreasing=integral_decreasing,
        degenerate_pass=all_zero,
    )
