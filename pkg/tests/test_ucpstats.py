import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import itoreg as ir
from itoreg.errors import ContractViolation, DataError

from conftest import nonincreasing


class TestEstimateUcpDistance:
    def test_ensemble_equal_to_target_has_zero_exceedance(self, w_small):
        est = ir.estimate_ucp_distance([w_small, w_small], w_small, delta=1e-9)
        assert est.empirical_prob == 0.0
        assert np.all(est.sup_samples == 0.0)

    def test_constant_shift_above_delta_hits_probability_one(self, small_grid):
        target = ir.deterministic_path(small_grid, lambda t: np.zeros_like(t))
        shifted = ir.deterministic_path(small_grid, lambda t: np.full_like(t, 0.2))
        est = ir.estimate_ucp_distance([shifted] * 5, target, delta=0.1)
        assert est.empirical_prob == 1.0

    def test_accepts_scalars_and_arrays(self):
        est = ir.estimate_ucp_distance([0.1, -0.2, 0.0], 0.0, delta=0.15)
        assert est.empirical_prob == pytest.approx(1 / 3)

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ContractViolation):
            ir.estimate_ucp_distance([], 0.0, 0.1)
        with pytest.raises(ContractViolation):
            ir.estimate_ucp_distance([1.0], 0.0, 0.0)

    def test_permutation_invariance_bitwise(self, small_grid):
        rng = np.random.default_rng(4)
        ensemble = [
            ir.SamplePath.from_series(small_grid, np.cumsum(rng.standard_normal(small_grid.n_nodes)), "derived")
            for _ in range(16)
        ]
        target = ensemble[0]
        a = ir.estimate_ucp_distance(ensemble, target, 0.5)
        perm = [ensemble[i] for i in rng.permutation(len(ensemble))]
        b = ir.estimate_ucp_distance(perm, target, 0.5)
        assert np.array_equal(a.sup_samples, b.sup_samples)
        assert a.empirical_prob == b.empirical_prob
        assert a.ci_halfwidth == b.ci_halfwidth

    def test_qv_curves_improve_across_schedule(self):
        # Oracle: the exact quadratic-variation curve of Brownian motion is
        # t itself; smaller eps must not look worse.
        grid = ir.TimeGrid(1.0, 2**10, 0.25)
        paths = ir.simulate_brownian_ensemble(grid, 600, 150)
        target = ir.deterministic_path(grid, lambda t: t)
        probs = []
        for eps in (2**-2, 2**-4, 2**-6):
            curves = [ir.eps_covariation_curve(w, w, eps) for w in paths]
            probs.append(ir.estimate_ucp_distance(curves, target, delta=0.25).empirical_prob)
        assert probs[-1] < probs[0]
        assert nonincreasing(probs, slack=0.02)


@settings(max_examples=50)
@given(
    st.lists(st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=1, max_size=60),
    st.floats(min_value=0.01, max_value=2.0),
    st.floats(min_value=0.01, max_value=2.0),
)
def test_exceedance_nonincreasing_in_delta(samples, d1, d2):
    lo, hi = sorted((d1, d2))
    if lo == hi:
        hi = lo * 1.5
    a = ir.estimate_ucp_distance(samples, 0.0, lo)
    b = ir.estimate_ucp_distance(samples, 0.0, hi)
    assert b.empirical_prob <= a.empirical_prob


class TestUcpSeriesVerdict:
    def _series(self, probs, n=100, eta=0.05):
        ests = []
        for p in probs:
            k = int(round(p * n))
            ests.append(
                ir.UcpEstimate(
                    delta=0.05,
                    sup_samples=np.concatenate([np.zeros(n - k), np.ones(k)]),
                    empirical_prob=k / n,
                    ci_halfwidth=0.02,
                )
            )
        return ir.UcpSeries(tuple(2.0 ** -(3 + i) for i in range(len(probs))), tuple(ests), eta)

    def test_monotone_decay_with_small_terminal_passes(self):
        assert self._series([0.8, 0.4, 0.1, 0.02]).verdict is True

    def test_large_terminal_fails(self):
        assert self._series([0.8, 0.4, 0.3, 0.2]).verdict is False

    def test_increase_beyond_ci_fails(self):
        assert self._series([0.1, 0.5, 0.02, 0.01]).verdict is False

    def test_json_shape(self):
        doc = self._series([0.5, 0.0]).to_json_dict()
        assert set(doc) == {"records", "eta", "verdict"}
        assert set(doc["records"][0]) == {"epsilon", "delta", "prob", "ci", "n"}
        json.dumps(doc)


class TestTightness:
    def test_zero_samples(self):
        rep = ir.boundedness_in_probability({0.1: np.zeros(50)}, [0.5, 1.0])
        assert np.all(rep.exceedance == 0.0)
        assert rep.tight

    def test_bounded_support(self):
        rng = np.random.default_rng(8)
        rep = ir.boundedness_in_probability(
            {0.1: rng.uniform(-1, 1, 200), 0.05: rng.uniform(-1, 1, 200)}, [0.5, 2.0]
        )
        assert np.all(rep.exceedance[:, 1] == 0.0)
        assert rep.tight

    def test_rows_nonincreasing_in_m(self):
        rng = np.random.default_rng(9)
        rep = ir.boundedness_in_probability({0.1: rng.standard_normal(500)}, [0.1, 0.5, 1.0, 2.0])
        assert np.all(np.diff(rep.exceedance, axis=1) <= 0)

    def test_validation(self):
        with pytest.raises(ContractViolation):
            ir.boundedness_in_probability({0.1: []}, [1.0])
        with pytest.raises(ContractViolation):
            ir.boundedness_in_probability({0.1: [1.0]}, [2.0, 1.0])

    def test_ytilde_family_tight_below_twice_drift_bound(self):
        # L1 bound from the drift assumption: int |Ytilde| dr <= T sup|beta|;
        # Markov makes exceedance at M = 2 B1 at most 1/2, and for constant
        # drift it is exactly 0.
        grid = ir.TimeGrid(1.0, 2**9, 0.25)
        flow = ir.builtin_flow("drift-only")
        bundles = [ir.simulate_weak_dirichlet(grid, ir.BrownianMotion(), None, s) for s in range(20)]
        samples = {e: ir.ytilde_l1_samples(flow, bundles, e) for e in (0.25, 0.125)}
        b1 = flow.declared_bounds.beta_sup * grid.t_horizon
        rep = ir.boundedness_in_probability(samples, [b1 / 2, 2 * b1])
        assert np.all(rep.exceedance[:, 1] <= 0.05)


class TestMomentEstimate:
    def test_constant_samples(self):
        value, ci = ir.moment_estimate(np.full(10, -2.0), 3.0)
        assert value == pytest.approx(8.0)
        assert ci == 0.0

    def test_gaussian_second_moment(self):
        rng = np.random.Generator(np.random.Philox(123))
        samples = rng.standard_normal(10_000)
        value, ci = ir.moment_estimate(samples, 2.0)
        assert abs(value - 1.0) <= 3.0 * np.sqrt(2.0 / 10_000)

    def test_p1_signs(self):
        value, _ = ir.moment_estimate([-1.0, 1.0], 1.0)
        assert value == 1.0

    def test_rejects_bad_input(self):
        with pytest.raises(ContractViolation):
            ir.moment_estimate([], 2.0)
        with pytest.raises(DataError):
            ir.moment_estimate([1.0, float("nan")], 2.0)
        with pytest.raises(ContractViolation):
            ir.moment_estimate([1.0], 0.5)

    def test_ci_shrinks_like_sqrt_n(self):
        rng = np.random.Generator(np.random.Philox(5))
        base = rng.standard_normal(16_000)
        _, ci_small = ir.moment_estimate(base[:1000], 2.0)
        _, ci_big = ir.moment_estimate(base, 2.0)
        assert ci_small / ci_big >= 3.0  # 16x samples, >= 3x shrink (25% slack)
