import numpy as np
import pytest

from deer.core import DeerConfig, DynamicsSpec, InputSequence, TimeGrid
from deer.engine import solve_linear_system
from deer.ode import (
    OdeProblem,
    deer_solve_ode,
    discretize_linear,
    linear_problem,
    logistic_exact,
    logistic_problem,
    reference_rk4,
    sequential_deer_fixed_point,
    van_der_pol_problem,
)


class TestDiscretizeLinear:
    def test_zero_g_is_trapezoid_quadrature(self):
        grid = TimeGrid(np.array([0.0, 0.1, 0.3]))
        G = np.zeros((3, 1, 1))
        z = np.array([[1.0], [2.0], [4.0]])
        sys = discretize_linear(G, z, grid, np.zeros(1))
        np.testing.assert_allclose(sys.A, np.ones((2, 1, 1)))
        np.testing.assert_allclose(sys.b.ravel(), [0.1 * 1.5, 0.2 * 3.0])

    def test_scalar_exponential_decay(self):
        grid = TimeGrid(np.array([0.0, 0.1]))
        sys = discretize_linear(np.ones((2, 1, 1)), np.zeros((2, 1)), grid, np.ones(1))
        np.testing.assert_allclose(sys.A[0, 0, 0], np.exp(-0.1), rtol=1e-13)

    def test_scalar_forcing_weight(self):
        # constant G = z = 1: b = (1 - e^{-0.1}), the closed-form step weight
        grid = TimeGrid(np.array([0.0, 0.1]))
        sys = discretize_linear(np.ones((2, 1, 1)), np.ones((2, 1)), grid, np.ones(1))
        np.testing.assert_allclose(sys.b[0, 0], 1.0 - np.exp(-0.1), rtol=1e-12)

    def test_direct_inverse_formula_identity(self):
        # nonsingular scalar G: b equals G^{-1}(I - e^{-G d}) z
        grid = TimeGrid(np.array([0.0, 0.25]))
        g, z = 1.7, 0.6
        sys = discretize_linear(
            np.full((2, 1, 1), g), np.full((2, 1), z), grid, np.zeros(1)
        )
        want = (1.0 - np.exp(-g * 0.25)) * z / g
        np.testing.assert_allclose(sys.b[0, 0], want, rtol=1e-12)

    def test_left_mode_samples_left_endpoint(self):
        grid = TimeGrid(np.array([0.0, 0.1]))
        G = np.array([[[1.0]], [[3.0]]])
        z = np.array([[1.0], [5.0]])
        mid = discretize_linear(G, z, grid, np.zeros(1), mode="midpoint")
        left = discretize_linear(G, z, grid, np.zeros(1), mode="left")
        np.testing.assert_allclose(mid.A[0, 0, 0], np.exp(-0.2))
        np.testing.assert_allclose(left.A[0, 0, 0], np.exp(-0.1))

    def test_unknown_mode(self):
        grid = TimeGrid(np.array([0.0, 0.1]))
        with pytest.raises(ValueError):
            discretize_linear(np.zeros((2, 1, 1)), np.zeros((2, 1)), grid, np.zeros(1), mode="right")


class TestDeerSolveOde:
    def test_linear_decay(self):
        prob = linear_problem(num_steps=200)
        sol, report = deer_solve_ode(prob, DeerConfig(tolerance=1e-12))
        assert report.converged and report.iterations <= 2
        # constant-G exponential steps are exact for linear dynamics
        np.testing.assert_allclose(
            sol.data[:, 0], np.exp(-prob.grid.times), rtol=1e-12, atol=1e-13
        )

    def test_logistic_matches_closed_form(self):
        prob = logistic_problem(num_steps=2000)
        sol, report = deer_solve_ode(prob, DeerConfig(tolerance=1e-10))
        assert report.converged
        err = np.max(np.abs(sol.data[:, 0] - logistic_exact(prob.grid.times)))
        assert err <= 1e-4

    def test_van_der_pol_matches_fine_rk4(self):
        prob = van_der_pol_problem(num_steps=5000)
        sol, report = deer_solve_ode(prob, DeerConfig(tolerance=1e-10))
        assert report.converged
        ref = reference_rk4(prob, substeps=200)  # one-million-point reference
        assert np.max(np.abs(sol.data - ref.data)) < 1e-3

    def test_solution_starts_at_y0(self):
        prob = logistic_problem(num_steps=50)
        sol, _ = deer_solve_ode(prob, DeerConfig())
        np.testing.assert_array_equal(sol.data[0], prob.y0)


class TestReferenceRk4:
    def test_zero_rhs_constant(self):
        dyn = DynamicsSpec(eval=lambda s, x, th: np.zeros_like(s[0]))
        prob = OdeProblem(dyn, np.array([2.5]), TimeGrid.uniform(0, 1, 10))
        out = reference_rk4(prob)
        np.testing.assert_array_equal(out.data, np.full((11, 1), 2.5))

    def test_scalar_linear_decay(self):
        prob = linear_problem(num_steps=1000)
        out = reference_rk4(prob)
        np.testing.assert_allclose(
            out.data[:, 0], np.exp(-prob.grid.times), atol=1e-10
        )

    def test_logistic_closed_form(self):
        prob = logistic_problem(num_steps=500)
        out = reference_rk4(prob, substeps=4)
        err = np.max(np.abs(out.data[:, 0] - logistic_exact(prob.grid.times)))
        assert err < 1e-9

    def test_inputs_interpolated(self):
        # y' = x(t) with x sampled on the grid: quadrature of a ramp is exact
        dyn = DynamicsSpec(eval=lambda s, x, th: x)
        grid = TimeGrid.uniform(0.0, 1.0, 20)
        inputs = InputSequence(grid.times[:, None])
        prob = OdeProblem(dyn, np.zeros(1), grid, inputs=inputs)
        out = reference_rk4(prob, substeps=2)
        np.testing.assert_allclose(out.data[:, 0], grid.times**2 / 2.0, atol=1e-12)


class TestSequentialFixedPointOracle:
    def test_linear_identical(self):
        prob = linear_problem(num_steps=300)
        config = DeerConfig(tolerance=1e-12)
        par, _ = deer_solve_ode(prob, config)
        ser = sequential_deer_fixed_point(prob, config)
        assert np.max(np.abs(par.data - ser.data)) < 1e-12

    def test_logistic_within_tolerance(self):
        prob = logistic_problem(num_steps=1000)
        config = DeerConfig(tolerance=1e-9)
        par, _ = deer_solve_ode(prob, config)
        ser = sequential_deer_fixed_point(prob, config)
        assert np.max(np.abs(par.data - ser.data)) <= 10 * config.resolved_tolerance()

    def test_quadrature_problem_identical(self, rng):
        # G == 0 (dynamics independent of y): both paths do the same sums
        vals = rng.normal(size=(101, 1))
        dyn = DynamicsSpec(
            eval=lambda s, x, th: x,
            jacobian=lambda s, x, th, p: np.zeros(s[0].shape + (1,)),
        )
        grid = TimeGrid.uniform(0.0, 1.0, 100)
        prob = OdeProblem(dyn, np.zeros(1), grid, inputs=InputSequence(vals))
        config = DeerConfig(tolerance=1e-12)
        par, _ = deer_solve_ode(prob, config)
        ser = sequential_deer_fixed_point(prob, config)
        assert np.max(np.abs(par.data - ser.data)) < 1e-13

    def test_left_mode_agrees(self):
        prob = logistic_problem(num_steps=500)
        config = DeerConfig(tolerance=1e-11)
        par, _ = deer_solve_ode(prob, config, mode="left")
        ser = sequential_deer_fixed_point(prob, config, mode="left")
        assert np.max(np.abs(par.data - ser.data)) <= 10 * config.resolved_tolerance()


def _operator_order_ratios(mode, lengths):
    """Error of one inverse-operator application on the logistic linearized at
    a fixed smooth guess, against a fine RK4 solve of that linear ODE.

    This isolates the discretization order of the operator itself; the
    self-consistent solve hides the left-value first-order term because its
    coefficient is proportional to the iterate error.
    """
    y_guess = lambda t: 0.1 + 0.05 * np.sin(2.0 * t)
    G_of = lambda t: -(1.0 - 2.0 * y_guess(t))
    z_of = lambda t: y_guess(t) * (1.0 - y_guess(t)) + G_of(t) * y_guess(t)
    y0 = 0.1

    errs = []
    for L in lengths:
        grid = TimeGrid.uniform(0.0, 5.0, L)
        ts = grid.times
        G = G_of(ts)[:, None, None]
        z = z_of(ts)[:, None]
        sys = discretize_linear(G, z, grid, np.array([y0]), mode=mode)
        vs = solve_linear_system(sys)
        # fine reference on the same grid
        y = y0
        ref = np.empty(L)
        f = lambda tt, yy: -G_of(tt) * yy + z_of(tt)
        for i in range(L):
            h = (ts[i + 1] - ts[i]) / 64
            t = ts[i]
            for _ in range(64):
                k1 = f(t, y)
                k2 = f(t + h / 2, y + h / 2 * k1)
                k3 = f(t + h / 2, y + h / 2 * k2)
                k4 = f(t + h, y + h * k3)
                y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
            ref[i] = y
        errs.append(np.max(np.abs(vs[:, 0] - ref)))
    return [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]


class TestDiscretizationOrder:
    def test_midpoint_converged_solve_is_second_order(self):
        errs = []
        for L in (250, 500, 1000, 2000):
            prob = logistic_problem(num_steps=L)
            sol, _ = deer_solve_ode(prob, DeerConfig(tolerance=1e-13))
            errs.append(np.max(np.abs(sol.data[:, 0] - logistic_exact(prob.grid.times))))
        ratios = [errs[i] / errs[i + 1] for i in range(3)]
        assert all(3.4 <= r <= 4.6 for r in ratios), ratios

    def test_midpoint_operator_is_second_order(self):
        ratios = _operator_order_ratios("midpoint", (125, 250, 500, 1000))
        assert all(3.4 <= r <= 4.6 for r in ratios), ratios

    def test_left_value_operator_is_first_order(self):
        ratios = _operator_order_ratios("left", (125, 250, 500, 1000))
        assert all(1.7 <= r <= 2.3 for r in ratios), ratios

    def test_left_value_converged_solve_superconverges(self):
        # at the fixed point the left-value scheme is the exponential
        # Rosenbrock-Euler step, which is second order on autonomous
        # problems: the generic first-order term carries a factor of the
        # iterate error and vanishes at convergence
        errs = []
        for L in (250, 500, 1000):
            prob = logistic_problem(num_steps=L)
            sol, _ = deer_solve_ode(prob, DeerConfig(tolerance=1e-13), mode="left")
            errs.append(np.max(np.abs(sol.data[:, 0] - logistic_exact(prob.grid.times))))
        ratios = [errs[i] / errs[i + 1] for i in range(2)]
        assert all(r > 3.0 for r in ratios), ratios
