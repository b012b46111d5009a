import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowalign import tensor as T
from flowalign.flow import (FlowState, SolverConfig, euler_solve,
                            flow_matching_loss, interpolate_state, target_velocity)
from flowalign.tensor import DomainError, NumericError, ShapeError, Tensor


def const_field(vx, vy, shape=(4, 4)):
    w = np.zeros(shape + (2,))
    w[..., 0] = vx
    w[..., 1] = vy
    return w


class TestInterpolant:
    def test_t0_is_zero_field(self):
        w = np.random.default_rng(0).normal(size=(3, 3, 2))
        st0 = interpolate_state(w, 0.0)
        np.testing.assert_array_equal(st0.x, np.zeros_like(w))
        assert st0.t == 0.0

    def test_t1_is_target_exactly(self):
        w = np.random.default_rng(1).normal(size=(3, 3, 2))
        np.testing.assert_array_equal(interpolate_state(w, 1.0).x, w)

    def test_midpoint_constant_field(self):
        st_mid = interpolate_state(const_field(4.0, -2.0), 0.5)
        np.testing.assert_allclose(st_mid.x, const_field(2.0, -1.0))

    def test_time_outside_unit_interval(self):
        with pytest.raises(DomainError):
            interpolate_state(const_field(1.0, 1.0), 1.5)
        with pytest.raises(DomainError):
            FlowState(x=np.zeros((2, 2, 2)), t=-0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5.0, 5.0), st.floats(0.0, 1.0))
    def test_linearity_in_field(self, a, t):
        w = np.random.default_rng(7).normal(size=(2, 2, 2))
        lhs = interpolate_state(a * w, t).x
        rhs = a * interpolate_state(w, t).x
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestTargetVelocity:
    def test_zero_field(self):
        np.testing.assert_array_equal(target_velocity(np.zeros((2, 2, 2))),
                                      np.zeros((2, 2, 2)))

    def test_independent_of_time(self):
        w = np.random.default_rng(2).normal(size=(3, 3, 2))
        np.testing.assert_array_equal(target_velocity(w), w)

    def test_finite_difference_of_path(self):
        # (x_{t+h} - x_t) / h -> w_gt for the linear path
        w = np.random.default_rng(3).normal(size=(4, 4, 2))
        h = 1e-6
        for t in (0.0, 0.3, 0.9):
            fd = (interpolate_state(w, t + h).x - interpolate_state(w, t).x) / h
            np.testing.assert_allclose(fd, target_velocity(w), atol=1e-9)


class TestEulerSolve:
    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_constant_oracle_velocity_exact(self, n):
        w_gt = np.random.default_rng(4).normal(size=(5, 5, 2)).astype(np.float32)
        out = euler_solve(lambda s, c: w_gt, SolverConfig(n), x0=np.zeros_like(w_gt))
        assert np.abs(out - w_gt).max() < 1e-6

    def test_zero_velocity_stays_zero(self):
        for n in (1, 3, 7):
            out = euler_solve(lambda s, c: np.zeros((2, 2, 2)), SolverConfig(n),
                              x0=np.zeros((2, 2, 2)))
            np.testing.assert_array_equal(out, np.zeros((2, 2, 2)))

    def test_time_varying_oracle_hand_unrolled(self):
        # v(t) = 2 t w_gt with N=4: sum dt * 2 t_n = (2/4)(0 + .25 + .5 + .75) = 0.75
        w_gt = np.random.default_rng(5).normal(size=(3, 3, 2))
        out = euler_solve(lambda s, c: 2.0 * s.t * w_gt, SolverConfig(4),
                          x0=np.zeros_like(w_gt))
        np.testing.assert_allclose(out, 0.75 * w_gt, atol=1e-12)

    def test_velocity_times_fed_are_previous_grid_points(self):
        seen = []

        def v(s, c):
            seen.append(s.t)
            return np.zeros((2, 2, 2))

        euler_solve(v, SolverConfig(4), x0=np.zeros((2, 2, 2)))
        assert seen == [0.0, 0.25, 0.5, 0.75]

    def test_nonfinite_velocity_aborts_with_step(self):
        def v(s, c):
            return np.full((2, 2, 2), np.nan) if s.t >= 0.5 else np.ones((2, 2, 2))

        with pytest.raises(NumericError, match="step 3"):
            euler_solve(v, SolverConfig(4), x0=np.zeros((2, 2, 2)))

    def test_nonzero_x0_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            euler_solve(lambda s, c: s.x, SolverConfig(2), x0=np.ones((2, 2, 2)))

    def test_state_independence_of_n_for_constant_velocity(self):
        w = np.random.default_rng(6).normal(size=(4, 4, 2)).astype(np.float32) * 3
        outs = [euler_solve(lambda s, c: w, SolverConfig(n), x0=np.zeros_like(w))
                for n in (1, 2, 4, 8, 16)]
        for o in outs[1:]:
            assert np.abs(o - outs[0]).max() / np.abs(outs[0]).max() < 1e-5

    def test_context_passed_through(self):
        ctx = object()
        received = []
        euler_solve(lambda s, c: received.append(c) or np.zeros((1, 1, 2)),
                    SolverConfig(1), ctx, x0=np.zeros((1, 1, 2)))
        assert received == [ctx]

    def test_solver_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(0)
        assert SolverConfig(4).dt == 0.25


class TestFlowMatchingLoss:
    def test_zero_residual_both_costs(self):
        w = np.random.default_rng(8).normal(size=(4, 4, 2))
        assert flow_matching_loss(w, w, cost="l2") == 0.0
        assert flow_matching_loss(w, w, cost="charbonnier") == pytest.approx(0.0, abs=1e-12)

    def test_constant_residual_pythagoras(self):
        w_n = const_field(3.0, 4.0)
        w_gt = np.zeros_like(w_n)
        assert flow_matching_loss(w_n, w_gt, cost="l2") == pytest.approx(5.0)

    def test_constant_residual_charbonnier(self):
        w_n = const_field(3.0, 4.0)
        expected = np.sqrt(25.0 + 1e-6) - 1e-3  # direct evaluation of the cost
        assert flow_matching_loss(w_n, np.zeros_like(w_n), cost="charbonnier") == \
            pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            flow_matching_loss(np.zeros((2, 2, 2)), np.zeros((3, 3, 2)))

    def test_unknown_cost(self):
        with pytest.raises(ValueError):
            flow_matching_loss(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), cost="huber")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative_and_zero_iff_equal(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(3, 3, 2))
        b = rng.normal(size=(3, 3, 2))
        val = flow_matching_loss(a, b)
        assert val >= 0.0
        assert (val == 0.0) == bool(np.array_equal(a, b))

    def test_tensor_inputs_stay_on_graph(self):
        a = Tensor(np.random.default_rng(9).normal(size=(1, 2, 4, 4)), requires_grad=True)
        b = Tensor(np.zeros((1, 2, 4, 4)))
        loss = flow_matching_loss(a, b, channel_axis=1)
        assert isinstance(loss, Tensor)
        loss.backward()
        assert a.grad is not None

    def test_gradient_through_unrolled_solver(self):
        # covered at FD precision by the gradcheck suite; here: runs and is finite
        rng = np.random.default_rng(10)
        kernel = Tensor(rng.normal(size=(2, 4, 3, 3)) * 0.3, requires_grad=True)
        ctx = Tensor(rng.normal(size=(1, 2, 4, 4)))
        target = Tensor(rng.normal(size=(1, 2, 4, 4)))

        def v_fn(state, context):
            return T.conv2d(T.concat([state.x, context], axis=1), kernel, pad=1)

        w_n = euler_solve(v_fn, SolverConfig(2), ctx, x0=Tensor(np.zeros((1, 2, 4, 4))))
        loss = flow_matching_loss(w_n, target, channel_axis=1)
        loss.backward()
        assert np.isfinite(kernel.grad).all() and np.abs(kernel.grad).max() > 0
