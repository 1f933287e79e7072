import numpy as np
import pytest

from deer.core import (
    DeerConfig,
    DeerReport,
    DynamicsSpec,
    InputSequence,
    NumericDomainError,
    StateSequence,
    TimeGrid,
    finite_difference_jacobian,
)


class TestTimeGrid:
    def test_deltas(self):
        grid = TimeGrid(np.array([0.0, 0.5, 1.5, 3.0]))
        np.testing.assert_allclose(grid.deltas, [0.5, 1.0, 1.5])
        assert grid.num_steps == 3

    def test_rejects_non_increasing(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0, 1.0, 1.0]))

    def test_uniform(self):
        grid = TimeGrid.uniform(0.0, 1.0, 4)
        np.testing.assert_allclose(grid.times, [0.0, 0.25, 0.5, 0.75, 1.0])


class TestSequences:
    def test_state_shape_fields(self):
        seq = StateSequence(np.zeros((7, 3)))
        assert (seq.L, seq.n, seq.batched) == (7, 3, False)
        seq_b = StateSequence(np.zeros((2, 7, 3)))
        assert (seq_b.L, seq_b.n, seq_b.batched) == (7, 3, True)

    def test_rejects_non_finite(self):
        data = np.zeros((4, 2))
        data[1, 0] = np.nan
        with pytest.raises(ValueError):
            StateSequence(data)
        with pytest.raises(ValueError):
            InputSequence(np.array([[np.inf]]))


class TestFiniteDifferenceJacobian:
    def test_identity_map(self):
        dyn = DynamicsSpec(eval=lambda s, x, th: s[0])
        J = finite_difference_jacobian(dyn, [np.array([0.3, -1.2, 2.0])], None, h=1e-5)
        np.testing.assert_allclose(J, np.eye(3), atol=1e-10)

    def test_linear_map(self):
        A = np.array([[1.0, 2.0], [3.0, 4.0]])
        dyn = DynamicsSpec(eval=lambda s, x, th: s[0] @ A.T)
        J = finite_difference_jacobian(dyn, [np.array([0.7, -0.4])], None)
        np.testing.assert_allclose(J, A, atol=1e-9)

    def test_tanh_diagonal(self):
        # analytic oracle: d tanh(y)/dy = 1 - tanh(y)^2
        y = np.array([0.5, -0.3])
        dyn = DynamicsSpec(eval=lambda s, x, th: np.tanh(s[0]))
        J = finite_difference_jacobian(dyn, [y], None)
        np.testing.assert_allclose(J, np.diag(1.0 - np.tanh(y) ** 2), atol=1e-8)

    def test_vectorized_over_leading_axis(self):
        y = np.linspace(-1, 1, 12).reshape(4, 3)
        dyn = DynamicsSpec(eval=lambda s, x, th: np.sin(s[0]))
        J = finite_difference_jacobian(dyn, [y], None)
        assert J.shape == (4, 3, 3)
        for l in range(4):
            np.testing.assert_allclose(J[l], np.diag(np.cos(y[l])), atol=1e-8)

    def test_non_finite_eval_raises(self):
        dyn = DynamicsSpec(eval=lambda s, x, th: np.log(s[0]))
        with pytest.raises(NumericDomainError):
            finite_difference_jacobian(dyn, [np.array([1e-300])], None, h=1e-5)

    def test_agrees_with_analytic_on_random_points(self, rng):
        # nonlinear coupled map with a hand-derived Jacobian
        def f(s, x, th):
            y = s[0]
            return np.stack(
                [np.tanh(y[..., 0] + 2.0 * y[..., 1]), y[..., 0] * y[..., 1]], axis=-1
            )

        def jac(y):
            t = 1.0 - np.tanh(y[..., 0] + 2.0 * y[..., 1]) ** 2
            J = np.empty(y.shape[:-1] + (2, 2))
            J[..., 0, 0] = t
            J[..., 0, 1] = 2.0 * t
            J[..., 1, 0] = y[..., 1]
            J[..., 1, 1] = y[..., 0]
            return J

        dyn = DynamicsSpec(eval=f)
        pts = rng.uniform(-2, 2, size=(100, 2))
        J_fd = finite_difference_jacobian(dyn, [pts], None, h=1e-6)
        J_an = jac(pts)
        rel = np.abs(J_fd - J_an) / np.maximum(1.0, np.abs(J_an))
        assert rel.max() < 1e-5


class TestDeerConfig:
    def test_defaults_per_precision(self):
        assert DeerConfig().resolved_tolerance() == 1e-7
        assert DeerConfig(precision="f32").resolved_tolerance() == 1e-4
        assert DeerConfig(tolerance=3e-5).resolved_tolerance() == 3e-5

    def test_validation(self):
        with pytest.raises(ValueError):
            DeerConfig(tolerance=-1.0)
        with pytest.raises(ValueError):
            DeerConfig(max_iters=0)
        with pytest.raises(ValueError):
            DeerConfig(precision="f16")


class TestDeerReport:
    def test_history_length_must_match(self):
        with pytest.raises(ValueError):
            DeerReport(iterations=2, residual_history=(1.0,), converged=False, wall_time=0.1)

    def test_converged_monotone_in_tolerance(self):
        # on a fixed run trace, loosening the tolerance can only keep (or
        # gain) convergence, never lose it
        history = (1.0, 0.1, 3e-4, 2e-8)
        decisions = [history[-1] <= tol for tol in (1e-9, 1e-7, 1e-4, 1e-2)]
        for earlier, later in zip(decisions, decisions[1:]):
            assert later or not earlier
