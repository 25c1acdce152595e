import numpy as np
import pytest

import itoreg as ir
from itoreg.errors import (
    AdaptednessError,
    CapabilityError,
    ConfigurationError,
    ContractViolation,
    EvaluationError,
)

CATALOG_C02 = ["frozen", "drift-only", "additive-noise", "linear-noise"]


class TestProfiles:
    def test_builtin_square(self):
        p = ir.parse_profile("x**2")
        xs = np.array([-1.0, 0.0, 2.0])
        assert np.array_equal(p.value(xs), xs**2)
        assert np.array_equal(p.dx(xs), 2 * xs)
        assert np.array_equal(p.dxx(xs), np.full(3, 2.0))

    def test_kink_has_no_second_derivative(self):
        p = ir.parse_profile("x*abs(x)/2")
        assert p.dxx is None
        assert p.dx(np.array([-2.0, 3.0]))[0] == 2.0

    def test_sympy_fallback(self):
        p = ir.parse_profile("x**3 - 2*x")
        assert p.value(np.array([2.0]))[0] == pytest.approx(4.0)
        assert p.dx(np.array([2.0]))[0] == pytest.approx(10.0)
        assert p.dxx(np.array([2.0]))[0] == pytest.approx(12.0)

    def test_sympy_kink_detected(self):
        p = ir.parse_profile("abs(x)*x")
        assert p.dxx is None

    def test_unknown_symbols_rejected(self):
        with pytest.raises(ConfigurationError):
            ir.parse_profile("x + y")


class TestCatalog:
    def test_names(self):
        for name in CATALOG_C02 + ["c01-kink"]:
            flow = ir.builtin_flow(name)
            assert flow.name == name
        with pytest.raises(ConfigurationError):
            ir.builtin_flow("nope")

    def test_frozen_flow_is_constant_in_time(self, w_small):
        flow = ir.builtin_flow("frozen", "x**2")
        for t in (0.0, 0.5, 1.0):
            assert ir.evaluate_flow(flow, w_small, t, 1.5) == pytest.approx(2.25, rel=1e-14)

    def test_drift_only_adds_time(self, w_small):
        flow = ir.builtin_flow("drift-only")
        assert ir.evaluate_flow(flow, w_small, 0.75, 2.0) == pytest.approx(2.75, rel=1e-12)

    def test_additive_noise_adds_driver(self, w_small):
        flow = ir.builtin_flow("additive-noise")
        got = ir.evaluate_flow(flow, w_small, 0.5, 2.0)
        assert got == pytest.approx(2.0 + w_small.value_at(0.5), rel=1e-12)

    def test_kink_declared_c01(self):
        kink = ir.builtin_flow("c01-kink")
        assert kink.smoothness == "C01"
        assert kink.analytic.f_x is not None and kink.analytic.f_xx is None

    @pytest.mark.parametrize("name", CATALOG_C02 + ["c01-kink"])
    def test_quadrature_agrees_with_analytic(self, name, w_small):
        flow = ir.builtin_flow(name, None if name == "c01-kink" else "x**2")
        for t, x in [(0.0, 0.3), (0.25, -1.2), (1.0, 2.0)]:
            quad = ir.evaluate_flow(flow, w_small, t, x)
            closed = float(ir.evaluate_flow_along(flow, w_small, np.array([t]), np.array([x]))[0])
            assert quad == pytest.approx(closed, rel=1e-10, abs=1e-12)


class TestDerivatives:
    def test_identity_profile(self, w_small):
        flow = ir.builtin_flow("frozen", "x")
        assert ir.flow_spatial_derivative(flow, w_small, 0.5, 1.7, 1) == 1.0
        assert ir.flow_spatial_derivative(flow, w_small, 0.5, 1.7, 2) == 0.0

    def test_square_profile(self, w_small):
        flow = ir.builtin_flow("frozen", "x**2")
        assert ir.flow_spatial_derivative(flow, w_small, 0.25, -1.5, 1) == pytest.approx(-3.0)
        assert ir.flow_spatial_derivative(flow, w_small, 0.25, -1.5, 2) == pytest.approx(2.0)

    def test_fd_matches_ito_sum_derivative(self, w_small):
        # gamma(r, x) = x without closed forms: F_x(t, x) = 1 + W(t).  The
        # finite difference of the quadrature evaluator must find it.
        flow = ir.expression_flow("linear-noise-expr", f0="x", gamma="x", smoothness="C01")
        t = 0.5
        got = ir.flow_spatial_derivative(flow, w_small, t, 0.7, 1)
        expected = 1.0 + w_small.value_at(t)
        assert abs(got - expected) <= max(1e-6, 1e-4 * abs(expected))

    @pytest.mark.parametrize("name", CATALOG_C02)
    def test_fd_consistency_with_analytic_on_box(self, name, w_small):
        flow = ir.builtin_flow(name, "x**2")
        stripped = ir.StochasticFlow(  # same flow without closed forms
            name=flow.name,
            f0=flow.f0,
            chars=flow.chars,
            smoothness=flow.smoothness,
            gamma_smoothness=flow.gamma_smoothness,
            analytic=None,
            box=flow.box,
            declared_bounds=flow.declared_bounds,
        )
        for x in np.linspace(-2.0, 2.0, 5):
            analytic = ir.flow_spatial_derivative(flow, w_small, 0.5, float(x), 1)
            fd = ir.flow_spatial_derivative(stripped, w_small, 0.5, float(x), 1)
            assert abs(fd - analytic) <= max(1e-6, 1e-4 * abs(analytic))

    def test_order_two_on_c01_flow_rejected(self, w_small):
        kink = ir.builtin_flow("c01-kink")
        with pytest.raises(CapabilityError):
            ir.flow_spatial_derivative(kink, w_small, 0.5, 0.0, 2)
        with pytest.raises(CapabilityError):
            ir.flow_dx_along(kink, w_small, np.array([0.5]), np.array([0.0]), order=2)

    def test_invalid_order(self, w_small):
        with pytest.raises(ConfigurationError):
            ir.flow_spatial_derivative(ir.builtin_flow("frozen"), w_small, 0.5, 0.0, 3)


class TestAdaptedness:
    def test_guarded_view_blocks_anticipating_reads(self, w_small):
        flow = ir.expression_flow("needs-w", f0="x", gamma="W", smoothness="C01")
        guard = ir.DriverView(w_small, limit=0.25)
        assert np.isfinite(ir.evaluate_flow(flow, guard, 0.25, 1.0))
        with pytest.raises(AdaptednessError):
            ir.evaluate_flow(flow, guard, 0.5, 1.0)

    def test_anticipating_characteristic_is_caught(self, w_small):
        horizon = w_small.grid.t_horizon

        def peeking_gamma(view, t, x):
            w_end = view.value_at(np.full(1, horizon))  # reads the future
            return np.broadcast_to(w_end, np.broadcast_shapes(np.shape(t), np.shape(x)))

        flow = ir.make_flow("peeker", "x", ir.sep_zero(), peeking_gamma)
        with pytest.raises(AdaptednessError):
            ir.evaluate_flow(flow, w_small, 0.5, 1.0)

    def test_view_flattening_takes_tighter_limit(self, w_small):
        inner = ir.DriverView(w_small, limit=0.25)
        outer = ir.DriverView(inner, limit=0.75)
        assert outer.limit == 0.25
        with pytest.raises(AdaptednessError):
            outer.value_at(0.5)


class TestSubstitution:
    def test_constant_gamma_gives_driver_increment(self, w_small):
        flow = ir.builtin_flow("additive-noise")
        drift, noise = ir.substitute_random_point(flow, w_small, 0.25, 0.75, 42.0)
        assert drift == 0.0
        assert noise == pytest.approx(w_small.value_at(0.75) - w_small.value_at(0.25), rel=1e-12)

    def test_linear_beta_substitution(self, w_small):
        flow = ir.make_flow("beta-x", "x", ir.sep_space("x"), ir.sep_zero())
        drift, noise = ir.substitute_random_point(flow, w_small, 0.25, 0.75, 2.0)
        assert noise == 0.0
        assert drift == pytest.approx(2.0 * 0.5, rel=1e-12)

    def test_frozen_state_factor_out_oracle(self, bundle_medium):
        # gamma(s, x) = x with x frozen at X(r): direct summation oracle is
        # X(r) * (W(t) - W(r)).
        flow = ir.builtin_flow("linear-noise")
        r, t = 0.25, 0.875
        g = bundle_medium.x.value_at(r)
        _, noise = ir.substitute_random_point(flow, bundle_medium.w, r, t, g)
        oracle = g * (bundle_medium.w.value_at(t) - bundle_medium.w.value_at(r))
        assert noise == pytest.approx(oracle, rel=1e-12)

    def test_substitution_identity_against_flow_increment(self, w_small):
        # With constant G the substitution must reproduce the flow increment
        # F(t, G) - F(r, G) split into its drift and noise parts.
        flow = ir.flow_from_separable("mix", "x", ir.sep_constant(0.5), ir.sep_space("x"))
        g = 1.3
        r, t = 0.25, 1.0
        drift, noise = ir.substitute_random_point(flow, w_small, r, t, g)
        inc = ir.evaluate_flow(flow, w_small, t, g) - ir.evaluate_flow(flow, w_small, r, g)
        assert drift + noise == pytest.approx(inc, rel=1e-12, abs=1e-12)

    def test_reversed_window_rejected(self, w_small):
        with pytest.raises(ContractViolation):
            ir.substitute_random_point(ir.builtin_flow("frozen"), w_small, 0.75, 0.25, 0.0)
        with pytest.raises(ContractViolation):
            ir.substitute_random_point(ir.builtin_flow("frozen"), w_small, 0.25, 0.75, float("nan"))


class TestWindowIntegrals:
    def test_separable_matches_generic_fallback(self, w_small):
        grid = w_small.grid
        sep_flow = ir.flow_from_separable(
            "ramp-noise", "x", ir.sep_constant(1.0), ir.SeparableTerm(lambda s: s, ir.PROFILES["x"])
        )

        def beta_plain(view, t, x):
            tt, xx = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
            return np.ones_like(tt)

        def gamma_plain(view, t, x):
            tt, xx = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
            return tt * xx

        gen_flow = ir.make_flow("ramp-noise-generic", "x", beta_plain, gamma_plain)
        x_frozen = w_small.series()[:-1]
        e = grid.eps_to_steps(0.25)
        b1, g1 = ir.window_integrals(sep_flow, w_small, x_frozen, e)
        b2, g2 = ir.window_integrals(gen_flow, w_small, x_frozen, e)
        assert np.allclose(b1, b2, rtol=1e-12, atol=1e-14)
        assert np.allclose(g1, g2, rtol=1e-12, atol=1e-14)

    def test_windows_truncate_at_horizon(self, w_small):
        grid = w_small.grid
        flow = ir.builtin_flow("drift-only")
        b, _ = ir.window_integrals(flow, w_small, np.zeros(grid.n_steps), grid.eps_to_steps(0.25))
        # near the horizon the drift window shrinks linearly to dt
        assert b[0] == pytest.approx(0.25, rel=1e-12)
        assert b[-1] == pytest.approx(grid.dt, rel=1e-12)

    def test_substitute_consistency(self, w_small):
        # window_integrals row r equals substitute_random_point on [r, r+eps]
        grid = w_small.grid
        flow = ir.builtin_flow("linear-noise")
        x_frozen = w_small.series()[:-1]
        e = grid.eps_to_steps(0.25)
        b, g = ir.window_integrals(flow, w_small, x_frozen, e)
        k = grid.index_of(0.5)
        drift, noise = ir.substitute_random_point(
            flow, w_small, 0.5, min(0.5 + 0.25, 1.0), float(x_frozen[k])
        )
        assert b[k] == pytest.approx(drift, rel=1e-12, abs=1e-15)
        assert g[k] == pytest.approx(noise, rel=1e-12, abs=1e-15)


class TestLinearity:
    @pytest.mark.parametrize("pair", [("frozen", "additive-noise"), ("linear-noise", "drift-only")])
    def test_sum_of_flows_evaluates_to_sum(self, pair, w_small):
        f1 = ir.builtin_flow(pair[0], "x**2")
        f2 = ir.builtin_flow(pair[1], "x")
        both = ir.combine_flows(f1, f2)
        for t, x in [(0.25, 0.4), (1.0, -1.1)]:
            lhs = ir.evaluate_flow(both, w_small, t, x)
            rhs = ir.evaluate_flow(f1, w_small, t, x) + ir.evaluate_flow(f2, w_small, t, x)
            assert lhs == pytest.approx(rhs, rel=1e-12)


class TestSpotChecks:
    def test_catalog_holder_ok(self, w_small):
        for name in CATALOG_C02:
            worst, ok = ir.spot_check_holder(ir.builtin_flow(name), w_small)
            assert ok, f"{name}: quotient {worst}"

    def test_rough_gamma_flagged(self, w_small):
        flow = ir.expression_flow("rough", gamma="abs(x)**(1/4)", holder_alpha=1.0, holder_const=1.0)
        worst, ok = ir.spot_check_holder(flow, w_small)
        assert not ok and worst > 10.0

    def test_integrability_sampling(self, w_small):
        vals = ir.spot_check_integrability(ir.builtin_flow("linear-noise"), w_small)
        assert vals["beta_sup_integral"] == 0.0
        assert vals["gamma_sup_sq_integral"] == pytest.approx(9.0, rel=1e-9)  # sup |x|^2 on [-3,3]


class TestExpressionFlows:
    def test_time_gamma(self, w_small):
        flow = ir.expression_flow("time-noise", gamma="t")
        view = ir.as_driver_view(w_small)
        got = flow.chars.gamma(view, np.array([0.25, 0.5]), np.array([1.0, 1.0]))
        assert np.array_equal(got, [0.25, 0.5])

    def test_min_max_abs(self, w_small):
        flow = ir.expression_flow("clipped", gamma="min(max(x, -1), 1) + abs(t)")
        view = ir.as_driver_view(w_small)
        got = flow.chars.gamma(view, np.array([0.5]), np.array([3.0]))
        assert got[0] == pytest.approx(1.5)

    def test_unknown_symbol_rejected(self):
        with pytest.raises(ConfigurationError):
            ir.expression_flow("bad", gamma="q * t")

    def test_nonfinite_evaluation_names_node(self, w_small):
        flow = ir.expression_flow("div", gamma="1/t")
        with pytest.raises(EvaluationError, match="gamma non-finite at t=0.0"):
            ir.evaluate_flow(flow, w_small, 0.5, 1.0)


def test_multidimensional_flow_evaluation(small_grid):
    w2 = ir.simulate_brownian(small_grid, 90, d=2)

    def gamma_vec(view, t, x):
        m = np.shape(t)[0] if np.ndim(t) else 1
        return np.ones((m, 2))

    chars = ir.LocalCharacteristics(
        beta=lambda view, t, x: np.zeros(np.shape(t)),
        gamma=gamma_vec,
        d=2,
    )
    f0_vec = ir.Profile("zero-on-R2", lambda x: np.asarray(0.0))
    flow = ir.StochasticFlow(name="two-d", f0=f0_vec, chars=chars)
    got = ir.evaluate_flow(flow, w2, 1.0, np.zeros(2))
    expected = float(w2.value_at(1.0).sum())
    assert got == pytest.approx(expected, rel=1e-12)
