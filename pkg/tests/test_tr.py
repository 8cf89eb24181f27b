import math

import numpy as np
import pytest

from ddtr.core import Box, ConfigurationError, make_rng
from ddtr.llr import LLRModel, fit, generate_poised_set
from ddtr.problems import synthetic_instance, synthetic_primal_grad
from ddtr.tr import (
    DegenerateGradientError,
    SampleSchedule,
    TRConfig,
    acceptance_update,
    check_sufficient_descent,
    estimate_value,
    iterate,
    solve,
    surrogate_value_and_xgrad,
    trial_step,
)

from util import affine_map_problem, directional_fd, scalar_oracle


def small_config(**kw):
    defaults = dict(
        llr_schedule=SampleSchedule(fixed=40),
        value_schedule=SampleSchedule(fixed=40),
        max_iters=20,
        seed=0,
    )
    defaults.update(kw)
    return TRConfig(**defaults)


def fitted_model(fn, center, radius=0.5, count=40, sigma=0.0, seed=3):
    samples = generate_poised_set(
        scalar_oracle(fn, sigma=sigma), center, radius, count, 100.0, make_rng(seed)
    )
    return fit(samples)


class TestSurrogateValueAndXGrad:
    def test_omega_independent_loss_has_no_chain_term(self):
        # With a loss that ignores w, the chain term must vanish even though
        # the fitted slope is nonzero.
        from ddtr.core import ProblemSpec

        problem = ProblemSpec(
            n=1, m=1, d=1,
            loss=lambda x, y, w: np.full(w.shape[0], (x[0] - 1.0) ** 2 - y[0] ** 2),
            grad1=lambda x, y, w: np.full((w.shape[0], 1), 2.0 * (x[0] - 1.0)),
            grad2=lambda x, y, w: np.full((w.shape[0], 1), -2.0 * y[0]),
            grad3=lambda x, y, w: np.zeros((w.shape[0], 1)),
            inner_domain=Box(np.array([-5.0]), np.array([5.0])),
            mu=2.0,
            ell=2.0,
        )
        model = fitted_model(lambda x: 2.0 * x + 1.0, np.array([0.0]))
        x = np.array([4.0])
        value, grad = surrogate_value_and_xgrad(problem, model, x, np.zeros(1))
        assert grad[0] == pytest.approx(2.0 * (x[0] - 1.0))

    def test_zero_slope_reduces_to_grad1_average(self):
        inst = synthetic_instance()
        model = LLRModel(
            b1=np.zeros((1, 1)),
            b0=np.array([5.0]),
            residuals=np.array([[-1.0], [1.0], [0.0]]),
            center=np.zeros(1),
            radius=1.0,
        )
        x, y = np.array([2.0]), np.array([0.5])
        value, grad = surrogate_value_and_xgrad(inst.problem, model, x, y)
        scen = model.surrogate_scenarios(x)
        expected = np.mean(inst.problem.grad1(x, y, scen), axis=0)
        assert np.allclose(grad, expected)

    def test_matches_finite_differences_on_synthetic(self):
        inst = synthetic_instance()
        model = fitted_model(lambda x: x**3, np.array([2.0]), sigma=1.0, seed=11)
        y = np.array([-7.5])

        def value_at(x):
            return surrogate_value_and_xgrad(inst.problem, model, x, y)[0]

        x = np.array([2.1])
        _, grad = surrogate_value_and_xgrad(inst.problem, model, x, y)
        fd = directional_fd(value_at, x, np.array([1.0]))
        assert grad[0] == pytest.approx(fd, rel=1e-6)

    def test_matches_finite_differences_on_random_models(self):
        inst = synthetic_instance()
        rng = make_rng(29)
        for trial in range(20):
            model = fitted_model(
                lambda x: np.sin(x) * x**2,
                rng.normal(size=1),
                radius=float(rng.uniform(0.2, 1.5)),
                sigma=0.5,
                seed=trial,
            )
            x = model.center + rng.normal(size=1) * 0.3
            y = rng.normal(size=1) * 3.0
            _, grad = surrogate_value_and_xgrad(inst.problem, model, x, y)
            fd = directional_fd(
                lambda z: surrogate_value_and_xgrad(inst.problem, model, z, y)[0],
                x,
                np.array([1.0]),
            )
            assert grad[0] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestTrialStep:
    def test_normalization(self):
        s = trial_step(np.array([3.0, 4.0]), 1.0)
        assert np.allclose(s, [-0.6, -0.8])

    def test_axis_direction(self):
        s = trial_step(np.array([0.0, 5.0]), 2.0)
        assert np.allclose(s, [0.0, -2.0])

    def test_zero_gradient_signals(self):
        with pytest.raises(DegenerateGradientError):
            trial_step(np.zeros(2), 1.0)


class TestCheckSufficientDescent:
    def test_holds(self):
        assert check_sufficient_descent(10.0, 9.0, 1.0, 0.5, 1.0)

    def test_fails(self):
        assert not check_sufficient_descent(10.0, 9.9, 1.0, 0.5, 1.0)

    def test_radius_clamped_at_one(self):
        # With delta = 3 the threshold is kappa * grad_norm * 1.
        assert check_sufficient_descent(10.0, 8.9, 1.0, 3.0, 1.0)
        assert not check_sufficient_descent(10.0, 9.1, 1.0, 3.0, 1.0)


class TestEstimateValue:
    def test_deterministic_value_is_exact(self):
        # Deterministic map and a loss whose maximum in y equals w^2 exactly.
        problem, oracle = affine_map_problem(slope=1.0, intercept=-3.0)
        value, maximizer = estimate_value(
            problem, oracle, np.array([5.0]), 10, 1e-8, np.zeros(1), make_rng(0)
        )
        assert value == pytest.approx(4.0, abs=1e-12)
        assert abs(maximizer[0]) <= 1e-8

    def test_synthetic_near_stationary_value(self):
        inst = synthetic_instance()
        value, _ = estimate_value(
            inst.problem, inst.oracle, np.array([1.0]), 10_000, 1e-6,
            np.zeros(1), make_rng(1),
        )
        assert abs(value - 0.0) < 0.2

    def test_zero_count_rejected(self):
        inst = synthetic_instance()
        with pytest.raises(ConfigurationError):
            estimate_value(
                inst.problem, inst.oracle, np.array([1.0]), 0, 1e-6, np.zeros(1), make_rng(0)
            )


class TestAcceptanceRule:
    CONFIG = TRConfig(delta0=0.5, delta_max=2.0, gamma=2.0, eta1=0.5, eta2=1.0)

    def test_both_conditions_hold(self):
        accepted, delta_next = acceptance_update(0.9, 1.0, 0.5, self.CONFIG)
        assert accepted and delta_next == pytest.approx(min(2.0 * 0.5, 2.0))

    def test_ratio_fails(self):
        accepted, delta_next = acceptance_update(0.1, 1.0, 0.5, self.CONFIG)
        assert not accepted and delta_next == pytest.approx(0.25)

    def test_gradient_test_fails_alone(self):
        accepted, delta_next = acceptance_update(0.9, 0.4, 0.5, self.CONFIG)
        assert not accepted and delta_next == pytest.approx(0.25)

    def test_both_fail(self):
        accepted, delta_next = acceptance_update(-0.5, 0.1, 0.5, self.CONFIG)
        assert not accepted and delta_next == pytest.approx(0.25)

    def test_radius_cap(self):
        accepted, delta_next = acceptance_update(0.9, 5.0, 1.5, self.CONFIG)
        assert accepted and delta_next == pytest.approx(2.0)


class TestIterate:
    def test_history_invariants_on_synthetic(self):
        inst = synthetic_instance()
        config = small_config(max_iters=60, seed=2)
        state, history = solve(np.array([3.0]), inst.problem, inst.oracle, config)
        assert len(history) == 60
        for rec in history:
            assert 0.0 < rec.delta <= config.delta_max
            assert 0.0 < rec.delta_next <= config.delta_max
            ratio = rec.delta_next / rec.delta
            assert (
                ratio == pytest.approx(config.gamma)
                or ratio == pytest.approx(1.0 / config.gamma)
                or rec.delta_next == pytest.approx(config.delta_max)
            )
            expected_accept = (rec.rho >= config.eta1) and (
                rec.grad_norm_surrogate >= config.eta2 * rec.delta
            )
            assert rec.accepted == expected_accept
            if rec.accepted:
                assert rec.descent_lhs >= rec.descent_rhs
                assert math.isfinite(rec.v_k) and math.isfinite(rec.v_k_half)
            else:
                assert np.array_equal(rec.x_after, rec.x_before)

    def test_rejected_iteration_keeps_x_bitwise(self):
        inst = synthetic_instance()
        config = small_config(max_iters=120, seed=5)
        state, history = solve(np.array([9.8]), inst.problem, inst.oracle, config)
        rejected = [r for r in history if not r.accepted]
        assert rejected, "expected at least one rejected iteration"
        for rec in rejected:
            assert rec.x_after.tobytes() == rec.x_before.tobytes()

    def test_value_estimates_skipped_on_descent_failure(self):
        inst = synthetic_instance()
        config = small_config(max_iters=200, seed=8)
        _, history = solve(np.array([9.8]), inst.problem, inst.oracle, config)
        skipped = [r for r in history if not r.descent_ok]
        for rec in skipped:
            assert rec.rho == -math.inf
            assert math.isnan(rec.v_k) and math.isnan(rec.v_k_half)
            assert not rec.accepted


class TestSolve:
    def test_zero_iterations(self):
        inst = synthetic_instance()
        state, history = solve(
            np.array([2.0]), inst.problem, inst.oracle, small_config(max_iters=0)
        )
        assert history == []
        assert state.x[0] == pytest.approx(2.0)
        assert state.k == 0

    def test_deterministic_affine_map_instance_converges(self):
        # Noiseless map w = x - 3 with loss w^2 - y^2: the primal function is
        # (x - 3)^2, so iterates should approach x = 3.
        problem, oracle = affine_map_problem(slope=1.0, intercept=-3.0)
        config = small_config(max_iters=100, seed=4, llr_schedule=SampleSchedule(fixed=12))
        state, history = solve(np.array([0.0]), problem, oracle, config)
        assert abs(state.x[0] - 3.0) < 0.05

    def test_reproducible_histories(self):
        inst = synthetic_instance()
        runs = []
        for _ in range(2):
            _, history = solve(
                np.array([8.0]), inst.problem, inst.oracle, small_config(max_iters=25, seed=77)
            )
            runs.append(history)
        for a, b in zip(*runs):
            assert a.x_after.tobytes() == b.x_after.tobytes()
            assert a.rho == b.rho or (math.isnan(a.rho) and math.isnan(b.rho))
            assert a.delta == b.delta and a.v_k == b.v_k or (math.isnan(a.v_k) and math.isnan(b.v_k))

    def test_optional_stopping_rule(self):
        problem, oracle = affine_map_problem()
        config = small_config(
            max_iters=200,
            seed=4,
            llr_schedule=SampleSchedule(fixed=12),
            stop_grad_tol=1e-3,
            stop_delta_tol=1e-3,
            stop_patience=5,
        )
        state, history = solve(np.array([2.9]), problem, oracle, config)
        assert len(history) < 200

    def test_gradient_trend_improves_across_seeds(self):
        # Statistical sanity: for every seed, the median true gradient over
        # the last 10 iterations is below its median over the first 10.
        inst = synthetic_instance()
        for seed in range(1, 6):
            x0 = 10.0 + 0.3 * make_rng(seed).uniform(-1, 1)
            config = TRConfig(
                llr_schedule=SampleSchedule(fixed=300),
                value_schedule=SampleSchedule(fixed=100),
                max_iters=300,
                seed=seed,
            )
            _, history = solve(np.array([x0]), inst.problem, inst.oracle, config)
            grads = [abs(synthetic_primal_grad(float(r.x_after[0]))) for r in history]
            assert np.median(grads[-10:]) < np.median(grads[:10])


class TestSampleSchedule:
    def test_fixed(self):
        assert SampleSchedule(fixed=300).count(0.01) == 300

    def test_adaptive_regression_count_floors_at_dimension(self):
        # With an adaptive schedule the regression count never drops below
        # n + 5 even when the schedule's own minimum is lower.
        inst = synthetic_instance()
        config = small_config(
            max_iters=1,
            llr_schedule=SampleSchedule(fixed=None, coeff=1.0, power=4.0, minimum=2),
        )
        _, history = solve(np.array([2.0]), inst.problem, inst.oracle, config)
        assert history[0].n_llr == inst.problem.n + 5

    def test_adaptive_growth_and_clamp(self):
        sched = SampleSchedule(fixed=None, coeff=1.0, power=4.0, minimum=10, maximum=5000)
        assert sched.count(1.0) == 10
        assert sched.count(0.3) == math.ceil(0.3**-4)
        assert sched.count(0.01) == 5000

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TRConfig(delta0=3.0, delta_max=2.0)
        with pytest.raises(ConfigurationError):
            TRConfig(gamma=1.0)
        with pytest.raises(ConfigurationError):
            TRConfig(eta1=1.5)
