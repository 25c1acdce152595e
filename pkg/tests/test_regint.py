import warnings

import numpy as np
import pytest

import itoreg as ir
from itoreg.errors import ConfigurationError, ContractViolation

from conftest import nonincreasing


def brute_force_covariation(x_vals, y_vals, dt, e, eps, j):
    """Independent oracle: direct summation over the defining display."""
    total = 0.0
    n = len(x_vals) - 1
    for k in range(j):
        xk_e = x_vals[min(k + e, n)]
        yk_e = y_vals[min(k + e, n)]
        total += (xk_e - x_vals[k]) * (yk_e - y_vals[k]) / eps * dt
    return total


class TestEpsCovariation:
    def test_hand_quadrature_oracle(self):
        # grid {0, 0.5, 1.0}, X = Y with values {0, 1, 0}, eps = 0.5, t = 0.5:
        # single term (1-0)^2 / 0.5 * 0.5 = 1.0.
        grid = ir.TimeGrid(1.0, 2, 0.5)
        x = ir.SamplePath.from_series(grid, [0.0, 1.0, 0.0], "deterministic")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # eps < 8 dt by construction here
            est = ir.eps_covariation(x, x, 0.5, 0.5)
        assert est.value == 1.0
        assert est.quadrature_nodes == 1

    def test_smooth_path_value_is_eps_times_t(self):
        grid = ir.TimeGrid(1.0, 2**10, 0.25)
        ramp = ir.deterministic_path(grid, lambda t: t)
        for eps in (0.25, 0.125, 0.0625):
            est = ir.eps_covariation(ramp, ramp, eps, 0.75)
            # increments are exactly eps except in the continued tail
            assert est.value == pytest.approx(eps * 0.75, rel=1e-12)
        assert ir.eps_covariation(ramp, ramp, 0.0625, 0.75).value < 0.05

    def test_matches_brute_force_on_random_path(self, w_small):
        grid = w_small.grid
        eps = 0.125
        e = round(eps / grid.dt)
        j = grid.index_of(0.5)
        oracle = brute_force_covariation(w_small.series(), w_small.series(), grid.dt, e, eps, j)
        est = ir.eps_covariation(w_small, w_small, eps, 0.5)
        assert est.value == pytest.approx(oracle, rel=1e-12)

    def test_brownian_qv_recovery(self):
        # Oracle: [W]_T = T.  Ensemble mean within 3 standard errors.
        grid = ir.TimeGrid(1.0, 2**12, 0.125)
        paths = ir.simulate_brownian_ensemble(grid, 500, 300)
        vals = np.array([ir.eps_covariation(w, w, 2**-6, 1.0).value for w in paths])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - 1.0) <= 3 * se

    def test_symmetry_and_bilinearity(self, w_medium, bundle_medium):
        a = bundle_medium.a
        eps = 0.0625
        c_xy = ir.eps_covariation(w_medium, a, eps, 1.0).value
        c_yx = ir.eps_covariation(a, w_medium, eps, 1.0).value
        assert c_xy == c_yx  # products commute exactly
        x_sum = ir.nodewise_sum(w_medium, a)
        lhs = ir.eps_covariation(x_sum, a, eps, 1.0).value
        rhs = ir.eps_covariation(w_medium, a, eps, 1.0).value + ir.eps_covariation(a, a, eps, 1.0).value
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_grid_mismatch_rejected(self, w_small, w_medium):
        with pytest.raises(ContractViolation):
            ir.eps_covariation(w_small, w_medium, 0.125, 1.0)

    def test_eps_validation(self, w_small):
        with pytest.raises(ConfigurationError):
            ir.eps_covariation(w_small, w_small, 0.26, 1.0)  # not a multiple of margin grid
        with pytest.raises(ConfigurationError):
            ir.eps_covariation(w_small, w_small, 0.5, 1.0)  # beyond margin

    def test_curve_continuity_bound(self, w_small):
        eps = 0.125
        curve = ir.eps_covariation_curve(w_small, w_small, eps).series()
        grid = w_small.grid
        e = round(eps / grid.dt)
        pad = w_small.padded_series()
        integrand = (pad[e : e + grid.n_steps] - pad[: grid.n_steps]) ** 2 / eps
        assert np.all(np.abs(np.diff(curve)) <= np.max(integrand) * grid.dt + 1e-15)


class TestWeightedCovariation:
    def test_unit_weight_equals_plain(self, w_medium):
        one = ir.deterministic_path(w_medium.grid, lambda t: np.ones_like(t))
        a = ir.weighted_eps_covariation(one, w_medium, w_medium, 0.0625, 1.0).value
        b = ir.eps_covariation(w_medium, w_medium, 0.0625, 1.0).value
        assert a == pytest.approx(b, rel=1e-15)

    def test_zero_weight(self, w_medium):
        zero = ir.deterministic_path(w_medium.grid, lambda t: np.zeros_like(t))
        assert ir.weighted_eps_covariation(zero, w_medium, w_medium, 0.0625, 1.0).value == 0.0

    def test_time_weight_against_exact_bracket(self):
        # Oracle: int_0^1 r d[W]_r = int_0^1 r dr = 1/2 with d[W]_r = dr.
        grid = ir.TimeGrid(1.0, 2**12, 0.125)
        paths = ir.simulate_brownian_ensemble(grid, 501, 300)
        ramp = ir.deterministic_path(grid, lambda t: t)
        vals = np.array([ir.weighted_eps_covariation(ramp, w, w, 2**-6, 1.0).value for w in paths])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - 0.5) <= 3 * se + 0.01


class TestForwardIntegral:
    def test_unit_integrand_telescopes_to_increment(self):
        grid = ir.TimeGrid(1.0, 2**10, 0.25)
        one = ir.deterministic_path(grid, lambda t: np.ones_like(t))
        smooth = ir.deterministic_path(grid, lambda t: t**2)
        devs = []
        for eps in (0.25, 0.125, 0.0625, 0.03125):
            est = ir.eps_forward_integral(one, smooth, eps, 1.0)
            devs.append(abs(est.value - (smooth.value_at(1.0) - smooth.value_at(0.0))))
        assert nonincreasing(devs, slack=1e-12)
        assert devs[-1] < 0.05

    def test_deterministic_calculus_limit(self):
        # H(r) = r, Y(r) = r: limit is 1/2; error is O(eps + dt).
        grid = ir.TimeGrid(1.0, 2**12, 0.125)
        ramp = ir.deterministic_path(grid, lambda t: t)
        est = ir.eps_forward_integral(ramp, ramp, 2**-6, 1.0)
        assert abs(est.value - 0.5) <= 2**-6 + 2 * grid.dt

    def test_ito_coincidence_for_brownian(self):
        # Per-path agreement with the Ito-sum oracle improves as eps falls;
        # ensemble mean of the forward integral sits near E[(W^2-1)/2] = 0.
        grid = ir.TimeGrid(1.0, 2**12, 0.125)
        paths = ir.simulate_brownian_ensemble(grid, 502, 200)
        medians = []
        for eps in (2**-3, 2**-4, 2**-5, 2**-6):
            devs = [
                abs(ir.eps_forward_integral(w, w, eps, 1.0).value - ir.ito_integral_oracle(w, w, 1.0))
                for w in paths
            ]
            medians.append(float(np.median(devs)))
        assert nonincreasing(medians, slack=1e-3)
        vals = np.array([ir.eps_forward_integral(w, w, 2**-6, 1.0).value for w in paths])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean()) <= 3 * se

    def test_linearity(self, w_medium, bundle_medium):
        h1, h2 = w_medium, bundle_medium.a
        y = bundle_medium.x
        eps = 0.0625
        lhs = ir.eps_forward_integral(ir.nodewise_sum(h1, h2), y, eps, 1.0).value
        rhs = ir.eps_forward_integral(h1, y, eps, 1.0).value + ir.eps_forward_integral(h2, y, eps, 1.0).value
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
        lhs_y = ir.eps_forward_integral(h1, ir.nodewise_sum(y, h2), eps, 1.0).value
        rhs_y = ir.eps_forward_integral(h1, y, eps, 1.0).value + ir.eps_forward_integral(h1, h2, eps, 1.0).value
        assert lhs_y == pytest.approx(rhs_y, rel=1e-12, abs=1e-12)


class TestItoOracle:
    def test_constant_integrand_telescopes(self, w_small):
        c = 2.5
        h = ir.deterministic_path(w_small.grid, lambda t: np.full_like(t, c))
        got = ir.ito_integral_oracle(h, w_small, 1.0)
        assert got == pytest.approx(c * (w_small.value_at(1.0) - w_small.value_at(0.0)), rel=1e-12)

    def test_ito_identity_for_w_dw(self):
        # Closed form: int_0^1 W dW = (W(1)^2 - 1)/2, discretization error
        # O(sqrt(dt)) via the exact algebra sum W dW = (W_T^2 - sum dW^2)/2.
        grid = ir.TimeGrid(1.0, 2**12, 0.0)
        for seed in range(20):
            w = ir.simulate_brownian(grid, seed)
            got = ir.ito_integral_oracle(w, w, 1.0)
            wt = w.value_at(1.0)
            assert abs(got - (wt**2 - 1.0) / 2.0) <= 5.0 * np.sqrt(2.0 * grid.dt) / 2.0

    def test_riemann_stieltjes_value(self):
        grid = ir.TimeGrid(1.0, 2**12, 0.0)
        h = ir.deterministic_path(grid, lambda t: t)
        y = ir.deterministic_path(grid, lambda t: t**2)
        assert abs(ir.ito_integral_oracle(h, y, 1.0) - 2.0 / 3.0) <= 3.0 * grid.dt

    def test_curve_matches_pointwise(self, w_small):
        curve = ir.ito_integral_curve(w_small, w_small).series()
        j = w_small.grid.index_of(0.5)
        assert curve[j] == pytest.approx(ir.ito_integral_oracle(w_small, w_small, 0.5), rel=1e-12)


class TestFiniteVariationAgainstMartingale:
    def test_zero_covariation(self):
        # A(t) = int_0^t f(s) ds with deterministic f: ensemble mean of
        # [A, W]^eps at T is within 3 standard errors of 0 at eps = 2^-7.
        grid = ir.TimeGrid(1.0, 2**12, 0.125)
        a = ir.deterministic_path(grid, lambda t: np.sin(3 * t) / 3)  # rate cos(3t)
        vals = []
        for seed in range(300):
            w = ir.simulate_brownian(grid, seed)
            vals.append(ir.eps_covariation(a, w, 2**-7, 1.0).value)
        vals = np.array(vals)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean()) <= 3 * se


class TestSemimartingaleCoincidence:
    def test_smooth_function_of_w_median_decreases(self):
        # H = f(W) with f smooth, Y = W: |forward - Ito| falls across the
        # schedule; ensemble median monotone.
        grid = ir.TimeGrid(1.0, 2**12, 0.125)
        paths = ir.simulate_brownian_ensemble(grid, 503, 100)
        medians = []
        for eps in (2**-3, 2**-4, 2**-5, 2**-6):
            devs = []
            for w in paths:
                h = ir.SamplePath.from_series(grid, np.cos(w.series()), "derived")
                devs.append(abs(ir.eps_forward_integral(h, w, eps, 1.0).value - ir.ito_integral_oracle(h, w, 1.0)))
            medians.append(float(np.median(devs)))
        assert nonincreasing(medians, slack=1e-4)


def test_estimates_to_csv_roundtrip(w_small):
    ests = [ir.eps_covariation(w_small, w_small, 0.25, t) for t in (0.5, 1.0)]
    text = ir.estimates_to_csv(ests)
    lines = text.strip().splitlines()
    assert lines[0] == "t,eps,value,n_nodes"
    t, eps, value, nodes = lines[1].split(",")
    assert float(t) == 0.5 and float(eps) == 0.25
    assert float(value) == ests[0].value  # 17 significant digits round-trip
    assert int(nodes) == ests[0].quadrature_nodes
