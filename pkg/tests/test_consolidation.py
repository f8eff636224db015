import numpy as np
import pytest

from alasso import nn
from alasso.consolidation import (ConsolidationState, Hyperparams,
                                  RegularizerKind, accumulate_importance,
                                  alpha, consolidate, load_state, save_state,
                                  surrogate_grad, surrogate_loss,
                                  total_loss_and_grad)


def make_state(omega, center, side_ref, hyper, task_index=2):
    omega = np.asarray(omega, dtype=np.float64)
    return ConsolidationState(
        omega_big=omega,
        theta_center=np.asarray(center, dtype=np.float64),
        theta_side_ref=np.asarray(side_ref, dtype=np.float64),
        omega_accum=np.zeros_like(omega),
        hyper=hyper,
        task_index=task_index,
    )


class TestAlpha:
    def test_zero_at_center(self):
        assert alpha(0.5, 0.5, 0.0) == 0.0

    def test_observed_side_positive(self):
        assert alpha(0.2, 0.5, 0.0) == pytest.approx(0.15)

    def test_unobserved_side_negative(self):
        assert alpha(0.8, 0.5, 0.0) == pytest.approx(-0.15)

    def test_vectorized(self):
        out = alpha(np.array([0.2, 0.8]), np.array([0.5, 0.5]), np.array([0.0, 0.0]))
        assert out == pytest.approx([0.15, -0.15])


class TestSurrogateLoss:
    HYPER = Hyperparams(a=2.0, epsilon=0.01, xi=0.0)

    def state(self):
        return make_state([4.0], [0.5], [0.0], self.HYPER)

    def test_zero_at_center(self):
        assert surrogate_loss(self.state(), np.array([0.5])) == 0.0

    def test_observed_side_value(self):
        # omega * d^2 = 4 * 0.25^2
        assert surrogate_loss(self.state(), np.array([0.25])) == pytest.approx(0.25, abs=1e-15)

    def test_unobserved_side_value(self):
        # (a*omega + eps) * d^2 = (2*4 + 0.01) * 0.25^2
        assert surrogate_loss(self.state(), np.array([0.75])) == pytest.approx(0.500625, abs=1e-15)

    def test_zero_while_first_task(self):
        state = make_state([4.0], [0.5], [0.0], self.HYPER, task_index=1)
        assert surrogate_loss(state, np.array([123.0])) == 0.0

    def test_primed_factor(self):
        hyper = Hyperparams(a=2.0, a_prime=3.0, epsilon=0.0, xi=0.0)
        state = make_state([4.0], [0.5], [0.0], hyper)
        plain = surrogate_loss(state, np.array([0.75]))
        primed = surrogate_loss(state, np.array([0.75]), use_primed=True)
        assert plain == pytest.approx(2.0 * 4.0 * 0.0625)
        assert primed == pytest.approx(3.0 * 4.0 * 0.0625)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            surrogate_loss(self.state(), np.array([np.inf]))

    def test_non_negative_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            state = make_state(rng.uniform(0, 5, 3), rng.normal(size=3), rng.normal(size=3),
                               Hyperparams(a=rng.uniform(1, 4), epsilon=rng.uniform(0, 0.1)))
            assert surrogate_loss(state, rng.normal(size=3)) >= 0.0

    def test_symmetric_degeneration(self):
        # a = 1 and eps = 0 collapse both branches to omega * d^2
        rng = np.random.default_rng(1)
        hyper = Hyperparams(a=1.0, epsilon=0.0)
        for _ in range(100):
            omega = rng.uniform(0, 5, 4)
            center = rng.normal(size=4)
            state = make_state(omega, center, rng.normal(size=4), hyper)
            theta = rng.normal(size=4)
            expected = float((omega * (theta - center) ** 2).sum())
            assert surrogate_loss(state, theta) == pytest.approx(expected, rel=1e-12)

    def test_overestimation_strict_on_unobserved_side(self):
        rng = np.random.default_rng(2)
        hyper = Hyperparams(a=2.0, epsilon=1e-3)
        for _ in range(100):
            omega = rng.uniform(0, 3)
            center, side = rng.normal(), rng.normal()
            state = make_state([omega], [center], [side], hyper)
            # pick theta on the unobserved side: opposite side from side_ref
            direction = -np.sign(side - center) or 1.0
            theta = np.array([center + direction * rng.uniform(0.1, 2.0)])
            symmetric = omega * (theta[0] - center) ** 2
            assert surrogate_loss(state, theta) > symmetric

    def test_overestimated_even_with_zero_importance(self):
        state = make_state([0.0], [0.0], [-1.0], Hyperparams(a=2.0, epsilon=1e-3))
        assert surrogate_loss(state, np.array([1.0])) == pytest.approx(1e-3)

    def test_continuity_across_kink(self):
        state = self.state()
        for h in (1e-3, 1e-6, 1e-9):
            assert surrogate_loss(state, np.array([0.5 - h])) < 4.1 * h * h
            assert surrogate_loss(state, np.array([0.5 + h])) < 8.1 * h * h


class TestSurrogateGrad:
    HYPER = Hyperparams(a=2.0, epsilon=0.01, xi=0.0)

    def state(self):
        return make_state([4.0], [0.5], [0.0], self.HYPER)

    def test_zero_at_center(self):
        assert np.array_equal(surrogate_grad(self.state(), np.array([0.5])), [0.0])

    def test_observed_side_value(self):
        # 2 * omega * d = 2 * 4 * (-0.25)
        assert surrogate_grad(self.state(), np.array([0.25]))[0] == pytest.approx(-2.0)

    def test_zero_while_first_task(self):
        state = make_state([4.0], [0.5], [0.0], self.HYPER, task_index=1)
        assert np.array_equal(surrogate_grad(state, np.array([9.0])), [0.0])

    def test_matches_finite_differences_off_kink(self):
        rng = np.random.default_rng(3)
        h = 1e-7
        checked = 0
        while checked < 100:
            omega = rng.uniform(0, 5, 2)
            center = rng.normal(size=2)
            state = make_state(omega, center, rng.normal(size=2),
                               Hyperparams(a=rng.uniform(1, 3), epsilon=1e-3))
            theta = rng.normal(size=2)
            if np.any(np.abs(theta - center) < 10 * h):
                continue
            grad = surrogate_grad(state, theta)
            for k in range(2):
                up, down = theta.copy(), theta.copy()
                up[k] += h
                down[k] -= h
                fd = (surrogate_loss(state, up) - surrogate_loss(state, down)) / (2 * h)
                assert abs(grad[k] - fd) < 1e-5
            checked += 1

    def test_one_sided_limits_vanish_at_kink(self):
        state = self.state()
        for h in (1e-4, 1e-6):
            left = (surrogate_loss(state, np.array([0.5])) -
                    surrogate_loss(state, np.array([0.5 - h]))) / h
            right = (surrogate_loss(state, np.array([0.5 + h])) -
                     surrogate_loss(state, np.array([0.5]))) / h
            assert abs(left) < 4.1 * h and abs(right) < 8.1 * h


class TestTotalLossAndGrad:
    def setup_method(self):
        self.spec = nn.NetworkSpec((3, 2, 2))
        self.params = nn.init_params(self.spec, 0)
        rng = np.random.default_rng(4)
        self.batch = rng.normal(size=(4, 3))
        self.labels = np.array([0, 1, 1, 0])

    def state(self, hyper=None, task_index=2):
        n = self.spec.param_count
        rng = np.random.default_rng(5)
        return ConsolidationState(
            omega_big=rng.uniform(0, 2, n),
            theta_center=rng.normal(size=n) * 0.1,
            theta_side_ref=rng.normal(size=n) * 0.1,
            omega_accum=np.zeros(n),
            hyper=hyper or Hyperparams(),
            task_index=task_index,
        )

    def test_kind_none_passthrough(self):
        state = self.state()
        total, grad, task_l, task_g = total_loss_and_grad(
            self.spec, self.params, self.batch, self.labels, state, RegularizerKind.NONE)
        assert total == task_l
        assert np.array_equal(grad, task_g)

    def test_zero_weight_bitwise_equal_to_none(self):
        state = self.state(hyper=Hyperparams(c=0.0))
        for kind in (RegularizerKind.SI, RegularizerKind.ALASSO):
            total, grad, task_l, task_g = total_loss_and_grad(
                self.spec, self.params, self.batch, self.labels, state, kind)
            assert total == task_l
            assert np.array_equal(grad, task_g)

    def test_first_task_has_no_penalty(self):
        state = self.state(task_index=1)
        total, grad, task_l, task_g = total_loss_and_grad(
            self.spec, self.params, self.batch, self.labels, state, RegularizerKind.ALASSO)
        assert total == task_l
        assert np.array_equal(grad, task_g)

    def test_alasso_composition(self):
        state = self.state(hyper=Hyperparams(c=0.7))
        total, grad, task_l, task_g = total_loss_and_grad(
            self.spec, self.params, self.batch, self.labels, state, RegularizerKind.ALASSO)
        assert total == pytest.approx(task_l + 0.7 * surrogate_loss(state, self.params), rel=1e-12)
        expected = task_g + 0.7 * surrogate_grad(state, self.params)
        assert np.allclose(grad, expected, rtol=1e-12, atol=0)

    def test_si_uses_symmetric_quadratic(self):
        state = self.state(hyper=Hyperparams(c=1.0, a=5.0, epsilon=0.5))
        total, grad, task_l, task_g = total_loss_and_grad(
            self.spec, self.params, self.batch, self.labels, state, RegularizerKind.SI)
        d = self.params - state.theta_center
        sym_loss = float((state.omega_big * d * d).sum())
        assert total == pytest.approx(task_l + sym_loss, rel=1e-12)
        assert np.allclose(grad - task_g, 2.0 * state.omega_big * d, rtol=1e-12, atol=1e-15)

    def test_single_param_hand_example(self):
        # total = task + c * a * omega * d^2 with the first weight on the
        # unobserved side of its penalty and every other parameter at rest
        spec = nn.NetworkSpec((1, 1, 2))
        params = np.array([0.75, 0.0, 0.0, 0.0, 0.0, 0.0])
        state = make_state([4.0, 0, 0, 0, 0, 0], [0.5, 0, 0, 0, 0, 0], [0.0, 0, 0, 0, 0, 0],
                           Hyperparams(a=2.0, epsilon=0.0, c=1.0))
        batch = np.array([[1.0]])
        labels = [0]
        total, grad, task_l, task_g = total_loss_and_grad(
            spec, params, batch, labels, state, RegularizerKind.ALASSO)
        assert total == pytest.approx(task_l + 2.0 * 4.0 * 0.0625, rel=1e-12)
        assert grad[0] == pytest.approx(task_g[0] + 2.0 * (2.0 * 4.0) * 0.25, rel=1e-12)


class TestAccumulateImportance:
    def test_zero_displacement_no_change(self):
        state = make_state([0.0, 0.0], [0.0, 0.0], [0.0, 0.0], Hyperparams(), task_index=1)
        accumulate_importance(state, np.array([3.0, -2.0]), np.zeros(2))
        assert np.array_equal(state.omega_accum, np.zeros(2))

    def test_loss_decrease_counts_positive(self):
        state = make_state([0.0], [0.0], [0.0], Hyperparams(), task_index=1)
        accumulate_importance(state, np.array([-1.0]), np.array([0.1]))
        assert state.omega_accum[0] == pytest.approx(0.1)

    def test_misaligned_rejected(self):
        state = make_state([0.0], [0.0], [0.0], Hyperparams(), task_index=1)
        with pytest.raises(ValueError):
            accumulate_importance(state, np.zeros(2), np.zeros(2))

    def test_quadratic_descent_matches_loss_difference(self):
        # gradient descent on L(t) = t^2 from 1.0; the accumulated importance
        # must approximate L(start) - L(end) (analytic oracle) within 2%
        state = make_state([0.0], [1.0], [1.0], Hyperparams(), task_index=1)
        theta = np.array([1.0])
        for _ in range(200):
            grad = 2.0 * theta
            delta = -0.01 * grad
            theta = theta + delta
            accumulate_importance(state, grad, delta)
        true_drop = 1.0 - float(theta[0]) ** 2
        assert state.omega_accum[0] == pytest.approx(true_drop, rel=0.02)


class TestConsolidate:
    def test_first_task_matches_direct_formula_both_kinds(self):
        # theta moved 0 -> 0.5 with omega 1.0: importance 1.0 / 0.5^2 = 4.0
        for kind in (RegularizerKind.SI, RegularizerKind.ALASSO):
            state = make_state([0.0], [0.0], [0.0], Hyperparams(xi=0.0), task_index=1)
            state.omega_accum[:] = 1.0
            new = consolidate(state, np.array([0.5]), kind)
            assert new.omega_big[0] == pytest.approx(4.0, rel=1e-15), kind
            assert new.task_index == 2
            assert np.array_equal(new.theta_center, [0.5])
            assert np.array_equal(new.theta_side_ref, [0.0])
            assert np.array_equal(new.omega_accum, [0.0])

    def test_second_task_alasso_hand_example(self):
        # previous penalty: omega 4, centre 0.5, side ref 0; theta ends at 0.2
        # (observed side), so pen = 4 * 0.3^2 = 0.36 and the new curvature is
        # (0.9 - 0.36) / 0.3^2 = 6.0
        hyper = Hyperparams(a=2.0, a_prime=1.0, c=1.0, c_prime=1.0, epsilon=0.0, xi=0.0)
        state = make_state([4.0], [0.5], [0.0], hyper, task_index=2)
        state.omega_accum[:] = 0.9
        new = consolidate(state, np.array([0.2]), RegularizerKind.ALASSO)
        assert new.omega_big[0] == pytest.approx(6.0, rel=1e-12)
        assert new.task_index == 3
        assert np.array_equal(new.theta_side_ref, [0.5])

    def test_si_adds_onto_previous(self):
        hyper = Hyperparams(xi=0.0)
        state = make_state([4.0], [0.5], [0.0], hyper, task_index=2)
        state.omega_accum[:] = 0.9
        new = consolidate(state, np.array([0.2]), RegularizerKind.SI)
        assert new.omega_big[0] == pytest.approx(0.9 / 0.09 + 4.0, rel=1e-12)

    def test_negative_numerator_clamped(self):
        state = make_state([0.0], [0.0], [0.0], Hyperparams(xi=0.0), task_index=1)
        state.omega_accum[:] = -5.0
        for kind in (RegularizerKind.SI, RegularizerKind.ALASSO):
            new = consolidate(state, np.array([0.5]), kind)
            assert new.omega_big[0] == 0.0

    def test_damping_in_denominator(self):
        state = make_state([0.0], [0.0], [0.0], Hyperparams(xi=1e-3), task_index=1)
        state.omega_accum[:] = 1.0
        new = consolidate(state, np.array([0.5]), RegularizerKind.SI)
        assert new.omega_big[0] == pytest.approx(1.0 / (0.25 + 1e-3), rel=1e-12)

    def test_untouched_parameter_with_zero_damping(self):
        hyper = Hyperparams(xi=0.0)
        state = make_state([2.0, 0.0], [0.5, 0.0], [0.0, 0.0], hyper, task_index=2)
        state.omega_accum[:] = [0.0, 1.0]
        new = consolidate(state, np.array([0.5, 0.5]), RegularizerKind.SI)
        assert new.omega_big[0] == 2.0  # kept: no movement, no new evidence
        assert np.isfinite(new.omega_big).all()

    def test_kind_none_rejected(self):
        state = make_state([0.0], [0.0], [0.0], Hyperparams(), task_index=1)
        with pytest.raises(ValueError):
            consolidate(state, np.array([0.1]), RegularizerKind.NONE)

    def test_non_finite_rejected(self):
        state = make_state([0.0], [0.0], [0.0], Hyperparams(), task_index=1)
        with pytest.raises(ValueError):
            consolidate(state, np.array([np.nan]), RegularizerKind.SI)


class TestExactReconstruction:
    def test_identity_on_random_states(self):
        # after an ALASSO boundary with xi = 0, movement and an unclamped
        # numerator: new_omega * (new_centre - old_centre)^2 must reproduce
        # omega_accum - c' * pen(theta_new) exactly
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 1000:
            hyper = Hyperparams(a=rng.uniform(1, 4), a_prime=rng.uniform(0.5, 3),
                                c=1.0, c_prime=rng.uniform(0.2, 2),
                                epsilon=rng.uniform(0, 0.01), xi=0.0)
            state = make_state([rng.uniform(0, 5)], [rng.normal()], [rng.normal()],
                               hyper, task_index=int(rng.integers(2, 6)))
            state.omega_accum[:] = rng.normal() * 2
            theta_new = np.array([rng.normal()])
            dtheta = theta_new[0] - state.theta_center[0]
            if abs(dtheta) < 1e-9:
                continue
            d = theta_new - state.theta_center
            side = alpha(theta_new, state.theta_center, state.theta_side_ref)
            coeff = np.where(side > 0, state.omega_big,
                             hyper.a_prime * state.omega_big + hyper.epsilon)
            numer = state.omega_accum[0] - hyper.c_prime * float(coeff[0] * d[0] * d[0])
            if numer < 0:
                continue  # clamped case, covered elsewhere
            new = consolidate(state, theta_new, RegularizerKind.ALASSO)
            recon = new.omega_big[0] * dtheta * dtheta
            assert recon == pytest.approx(numer, rel=1e-12, abs=1e-300)
            checked += 1

    def test_si_equals_alasso_after_first_task(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            n = 5
            hyper = Hyperparams(a=rng.uniform(1, 4), epsilon=1e-3, xi=0.0)
            init = rng.normal(size=n)
            theta_new = init + rng.normal(size=n)  # moves every parameter
            omega = rng.normal(size=n)
            results = []
            for kind in (RegularizerKind.SI, RegularizerKind.ALASSO):
                state = ConsolidationState.fresh(init, hyper)
                state.omega_accum[:] = omega
                results.append(consolidate(state, theta_new, kind).omega_big)
            assert np.array_equal(results[0], results[1])


class TestStateSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        hyper = Hyperparams(a=1.7, a_prime=0.9, c=0.8, c_prime=1.1, epsilon=2e-3, xi=5e-4)
        state = make_state(rng.uniform(0, 3, 17), rng.normal(size=17), rng.normal(size=17),
                           hyper, task_index=4)
        path = tmp_path / "state.bin"
        save_state(state, path)
        loaded = load_state(path)
        assert loaded.task_index == 4
        assert loaded.hyper == hyper
        assert np.array_equal(loaded.omega_big, state.omega_big)
        assert np.array_equal(loaded.theta_center, state.theta_center)
        assert np.array_equal(loaded.theta_side_ref, state.theta_side_ref)
        assert np.array_equal(loaded.omega_accum, np.zeros(17))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "state.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 100)
        with pytest.raises(ValueError, match="magic"):
            load_state(path)

    def test_truncated_rejected(self, tmp_path):
        state = make_state([1.0, 2.0], [0.0, 0.0], [0.0, 0.0], Hyperparams())
        path = tmp_path / "state.bin"
        save_state(state, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_state(path)


class TestHyperparams:
    def test_defaults(self):
        h = Hyperparams()
        assert (h.a, h.a_prime, h.c, h.c_prime) == (2.0, 1.0, 1.0, 1.0)
        assert h.epsilon == 1e-3 and h.xi == 1e-3

    def test_validation(self):
        with pytest.raises(ValueError):
            Hyperparams(a=0.0)
        with pytest.raises(ValueError):
            Hyperparams(epsilon=-1e-9)
        with pytest.raises(ValueError):
            Hyperparams(xi=-1.0)
        with pytest.raises(ValueError):
            Hyperparams(c=-0.1)
        Hyperparams(a=0.8)  # ablation values below 1 are allowed
