"""Scenario simulation, streaming deflator estimators, and control policies."""

import math

import numpy as np
import pytest

from gkernel import (
    ConstantControl,
    DivergenceError,
    FeedbackControl,
    InvalidSetError,
    ModelSpec,
    PiecewiseControl,
    ShapeError,
    UncertaintySet,
    extreme_controls,
    long_term_yield_mc,
    simulate_gsde,
    upper_price_mc,
    worst_case_policy,
)
from conftest import CONST_LAM


def _classical(sig="0.2", r=0.0, b="0.0", v=None):
    return ModelSpec.build(
        m=1, d=1, b=[b], sigma=[[sig]], r=r, v=v,
        uncertainty=UncertaintySet.interval(1.0, 1.0),
    )


class TestPathGeneration:
    def test_deterministic_ode_reduction(self):
        model = _classical(sig="0.0", b="-x1")
        batch = simulate_gsde(model, ConstantControl(1.0), [1.0], 1.0, 0.01, 3)
        final = batch.X[:, -1, 0]
        assert np.ptp(final) == 0.0
        assert abs(final[0] - math.exp(-1.0)) < 2 * 0.01

    def test_quadratic_variation_exact_classical(self):
        batch = simulate_gsde(_classical(), ConstantControl(1.0), [0.0], 1.0, 0.01, 4)
        assert np.max(np.abs(batch.QV[:, -1, 0, 0] - 1.0)) < 1e-12

    def test_quadratic_variation_exact_bang_bang(self):
        model = ModelSpec.build(
            m=1, d=1, b=["0.0"], sigma=[["0.2"]], r=0.0,
            uncertainty=UncertaintySet.interval(0.8, 1.2),
        )
        ctl = PiecewiseControl([0.0, 0.5], [1.2, 0.8])
        batch = simulate_gsde(model, ctl, [0.0], 1.0, 1.0 / 64, 4)
        assert np.max(np.abs(batch.QV[:, -1, 0, 0] - 1.0)) < 1e-12
        # left-closed segments: step at t=0.5 already uses the second matrix
        k_half = 32
        assert np.all(batch.Q[:, k_half - 1, 0, 0] == 1.2)
        assert np.all(batch.Q[:, k_half, 0, 0] == 0.8)

    def test_quadratic_variation_sandwich(self, ou_model, ou_sol):
        policy = worst_case_policy(ou_sol, ou_model)
        batch = simulate_gsde(ou_model, policy, [0.1], 1.0, 0.02, 16, seed=2)
        t = batch.times[1:]
        qv = batch.QV[:, 1:, 0, 0]
        assert np.all(qv >= 0.8 * t - 1e-12)
        assert np.all(qv <= 1.2 * t + 1e-12)

    def test_classical_terminal_variance(self):
        batch = simulate_gsde(_classical(), ConstantControl(1.0), [0.0], 2.0, 0.02, 20_000)
        sample_var = float(np.var(batch.B[:, -1, 0])) / 2.0
        assert abs(sample_var - 1.0) < 4 * math.sqrt(2.0 / 20_000)

    def test_batch_accessors(self, const_model):
        batch = simulate_gsde(const_model, ConstantControl(1.0), [0.3], 0.5, 0.05, 6, seed=9)
        assert batch.n_paths == 6
        assert batch.n_steps == 10
        assert batch.dt == pytest.approx(0.05)
        assert batch.X.shape == (6, 11, 1)
        assert batch.noise.shape == (6, 10, 1)
        assert batch.control_label == "constant"


class TestReproducibility:
    def test_same_seed_bitwise(self, const_model):
        a = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 8, seed=4)
        b = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 8, seed=4)
        for name in ("noise", "B", "QV", "X", "Q"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_chunking_does_not_change_draws(self, const_model):
        a = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 9, seed=4)
        b = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 9, seed=4,
                          chunk_size=2)
        for name in ("noise", "B", "QV", "X", "Q"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_offset_runs_tile_the_big_run(self, const_model):
        whole = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 10, seed=4)
        head = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 6, seed=4)
        tail = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 4, seed=4,
                             path_offset=6)
        assert np.array_equal(whole.X[:6], head.X)
        assert np.array_equal(whole.X[6:], tail.X)
        assert np.array_equal(whole.noise[6:], tail.noise)

    def test_path_slice_view(self, const_model):
        whole = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 10, seed=4)
        part = whole.path_slice(3, 7)
        assert part.n_paths == 4
        assert part.path_offset == 3
        assert np.array_equal(part.X, whole.X[3:7])

    def test_different_seeds_differ(self, const_model):
        a = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 4, seed=1)
        b = simulate_gsde(const_model, ConstantControl(0.7), [0.0], 1.0, 0.05, 4, seed=2)
        assert not np.array_equal(a.noise, b.noise)


class TestValidation:
    def test_step_resolution(self, const_model):
        ctl = ConstantControl(1.0)
        with pytest.raises(ShapeError):
            simulate_gsde(const_model, ctl, [0.0], 1.0, 1.5, 2)  # dt > T
        with pytest.raises(ShapeError):
            simulate_gsde(const_model, ctl, [0.0], 1.0, 0.3, 2)  # does not divide
        with pytest.raises(ShapeError):
            simulate_gsde(const_model, ctl, [0.0], 1.0, -0.1, 2)
        with pytest.raises(ShapeError):
            simulate_gsde(const_model, ctl, [0.0], 0.0, 0.1, 2)

    def test_memory_guard(self, const_model):
        with pytest.raises(ShapeError):
            simulate_gsde(const_model, ConstantControl(1.0), [0.0], 1.0, 1e-3, 100_000)

    def test_x0_shape(self, const_model):
        with pytest.raises(ShapeError):
            simulate_gsde(const_model, ConstantControl(1.0), [0.0, 0.0], 1.0, 0.1, 2)

    def test_control_membership(self, const_model):
        with pytest.raises(InvalidSetError):
            simulate_gsde(const_model, ConstantControl(2.0), [0.0], 1.0, 0.1, 2)
        with pytest.raises(InvalidSetError):
            simulate_gsde(
                const_model, PiecewiseControl([0.0, 0.5], [1.0, 0.2]), [0.0], 1.0, 0.1, 2)

    def test_piecewise_breakpoints(self):
        with pytest.raises(ShapeError):
            PiecewiseControl([0.5, 1.0], [1.0, 1.0])  # must start at 0
        with pytest.raises(ShapeError):
            PiecewiseControl([0.0, 0.0], [1.0, 1.0])
        with pytest.raises(ShapeError):
            PiecewiseControl([0.0, 0.5], [1.0])

    def test_constant_control_shape(self):
        with pytest.raises(ShapeError):
            ConstantControl(np.zeros((1, 2)))

    def test_feedback_output_shape_checked(self, const_model):
        bad = FeedbackControl(lambda t, x: np.ones((x.shape[0], 2)))
        with pytest.raises(ShapeError):
            simulate_gsde(const_model, bad, [0.0], 1.0, 0.1, 2)


class TestPolicies:
    def test_extreme_controls_interval(self, const_model):
        ctls = extreme_controls(const_model.uncertainty)
        assert [c.label for c in ctls] == ["upper", "lower"]
        assert ctls[0].q[0, 0] == 1.0
        assert ctls[1].q[0, 0] == 0.5

    def test_extreme_controls_degenerate(self):
        ctls = extreme_controls(UncertaintySet.interval(1.0, 1.0))
        assert [c.label for c in ctls] == ["upper"]

    def test_extreme_controls_finite(self):
        sset = UncertaintySet.finite([np.eye(2), 0.5 * np.eye(2)])
        ctls = extreme_controls(sset)
        assert [c.label for c in ctls] == ["member_0", "member_1"]

    def test_worst_case_picks_upper_when_driver_positive(self, const_model, const_sol):
        policy = worst_case_policy(const_sol, const_model)
        q = policy.matrices(0.0, np.array([[0.0], [1.2], [-2.0]]))
        assert np.allclose(q[:, 0, 0], 1.0)

    def test_worst_case_on_mean_reverting(self, ou_model, ou_sol):
        q = worst_case_policy(ou_sol, ou_model).matrices(0.0, np.array([[0.0], [0.5]]))
        assert np.allclose(q[:, 0, 0], 1.2)

    def test_worst_case_flips_to_lower_when_driver_negative(self, const_sol):
        model = ModelSpec.build(
            m=1, d=1, b=["-x1"], sigma=[["0.2"]], r=0.02, v=[0.3], k=[[0.5]],
            uncertainty=UncertaintySet.interval(0.5, 1.0),
        )
        q = worst_case_policy(const_sol, model).matrices(0.0, np.array([[0.0]]))
        assert np.allclose(q[:, 0, 0], 0.5)


class TestPricing:
    def test_classical_discount_bond(self):
        model = _classical(r=0.03)
        pe = upper_price_mc(model, None, 2.0, dt=0.05, n_paths=64, seed=1)
        assert pe.estimate == pytest.approx(math.exp(-0.06), abs=1e-12)
        assert pe.stderr < 1e-12

    def test_martingale_payoff_prices_to_zero(self):
        model = ModelSpec.build(
            m=1, d=1, b=["0.0"], sigma=[["0.2"]], r=0.0,
            uncertainty=UncertaintySet.interval(0.5, 1.0),
        )
        pe = upper_price_mc(model, "x1", 1.0, dt=1.0 / 64, n_paths=4000, seed=5)
        assert abs(pe.estimate) <= 3 * pe.stderr

    def test_constant_model_upper_price(self, const_model):
        pe = upper_price_mc(const_model, None, 1.0, dt=1.0 / 64, n_paths=20_000, seed=11)
        assert pe.control == "upper"
        assert abs(pe.estimate - math.exp(CONST_LAM)) <= 3 * pe.stderr

    def test_larger_covariance_dominates(self, const_model):
        qs = [0.5, 0.625, 0.75, 0.875, 1.0]
        ctls = [ConstantControl(q, label=f"q{q}") for q in qs]
        pe = upper_price_mc(const_model, None, 1.0, ctls, dt=1.0 / 64,
                            n_paths=2000, seed=3)
        means = [pe.table[f"q{q}"][0] for q in qs]
        ses = [pe.table[f"q{q}"][1] for q in qs]
        for lo, hi, se in zip(means, means[1:], ses):
            assert hi >= lo - 3 * se
        assert pe.control == "q1.0"

    def test_callable_payoff_and_start_point(self, const_model):
        pe = upper_price_mc(
            const_model, lambda x: np.maximum(x[:, 0], 0.0), 0.5,
            dt=0.05, n_paths=256, seed=2, x0=[2.0])
        # starting far in the money, the payoff is near the (mean-reverted) state
        assert 0.5 < pe.estimate < 2.5

    def test_empty_controls_rejected(self, const_model):
        with pytest.raises(ShapeError):
            upper_price_mc(const_model, None, 1.0, [], dt=0.1, n_paths=16)


class TestYield:
    def test_classical_rate_recovered_exactly(self):
        model = _classical(r=0.03)
        ye = long_term_yield_mc(model, [5.0, 10.0], ConstantControl(1.0),
                                dt=0.05, n_paths=32, seed=1)
        assert ye.rates == pytest.approx([-0.03, -0.03], abs=1e-12)
        assert ye.lam_fit == pytest.approx(-0.03, abs=1e-12)
        assert ye.transient_fit == pytest.approx(0.0, abs=1e-10)

    def test_constant_model_growth_rate(self, const_model):
        ye = long_term_yield_mc(
            const_model, [5.0, 10.0, 20.0], ConstantControl(1.0, label="upper"),
            dt=0.05, n_paths=40_000, seed=7)
        for rate, se in zip(ye.rates, ye.stderrs):
            assert abs(rate - CONST_LAM) <= 3 * se
        assert abs(ye.lam_fit - CONST_LAM) < 2e-3
        assert ye.control == "upper"

    def test_single_horizon_rejected(self, const_model):
        with pytest.raises(ShapeError):
            long_term_yield_mc(const_model, [5.0], ConstantControl(1.0))

    def test_non_dividing_horizon_rejected(self, const_model):
        with pytest.raises(ShapeError):
            long_term_yield_mc(const_model, [5.0, 10.3], ConstantControl(1.0), dt=0.5)

    def test_degenerate_run_reports_horizon(self):
        model = ModelSpec.build(
            m=1, d=1, b=["0.0"], sigma=[["0.2"]], r=0.0, v=[600.0],
            uncertainty=UncertaintySet.interval(0.5, 1.0),
        )
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as err:
                long_term_yield_mc(model, [5.0, 10.0], ConstantControl(1.0),
                                   dt=0.1, n_paths=8, seed=3)
        assert err.value.where is not None
