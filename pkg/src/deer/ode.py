"""ODE front end: exponential discretization of the linearized system plus
sequential reference integrators.

The solver iterate lives on the full time grid (L + 1 points including t_0);
each pass samples G = -df/dy and z = f + G y at every grid point, averages
them per interval (midpoint mode, cubic local truncation error) or takes the
left value (quadratic), and maps the linear ODE segment exactly:

    A_i = exp(-G_i * dt_i),   b_i = dt_i * phi1(-G_i * dt_i) z_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DeerConfig, DeerReport, DynamicsSpec, InputSequence, StateSequence, TimeGrid
from .engine import LinearRecurrenceSystem, deer_solve
from .smallmat import expm, phi1

__all__ = [
    "OdeProblem",
    "discretize_linear",
    "deer_solve_ode",
    "reference_rk4",
    "sequential_deer_fixed_point",
    "logistic_problem",
    "van_der_pol_problem",
    "linear_problem",
]

INTERPOLATION_MODES = ("midpoint", "left")


@dataclass(frozen=True)
class OdeProblem:
    """Initial-value problem dy/dt = f(y, x(t), theta) sampled on a grid.

    `inputs`, when present, holds x sampled at all grid points (L + 1 rows).
    """

    dynamics: DynamicsSpec
    y0: np.ndarray
    grid: TimeGrid
    inputs: Optional[InputSequence] = None
    theta: object = None

    def __post_init__(self):
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=np.float64))
        if y0.ndim != 1:
            raise ValueError("y0 must be a vector")
        if self.dynamics.num_shifts != 1:
            raise ValueError("ODE problems use a single (zero) shift")
        if self.inputs is not None and self.inputs.L != self.grid.times.size:
            raise ValueError("inputs must be sampled at all grid points")
        object.__setattr__(self, "y0", y0)

    @property
    def n(self) -> int:
        return self.y0.shape[0]


def discretize_linear(
    G: np.ndarray,
    z: np.ndarray,
    grid: TimeGrid,
    y0: np.ndarray,
    mode: str = "midpoint",
) -> LinearRecurrenceSystem:
    """Turn grid samples of (G, z) into the per-interval linear recurrence.

    G and z are sampled at all L + 1 grid points; midpoint mode averages the
    endpoint samples per interval, left mode keeps the left sample.  The
    phi1-weighted quadrature matrices are stored as the system's input_map so
    tangents can later be pushed through the identical discretization.
    """
    G = np.asarray(G)
    z = np.asarray(z)
    npts = grid.times.size
    if G.shape[0] != npts or z.shape[0] != npts:
        raise ValueError("G and z must be sampled at all grid points")
    if mode not in INTERPOLATION_MODES:
        raise ValueError(f"mode must be one of {INTERPOLATION_MODES}")
    if mode == "midpoint":
        Gi = 0.5 * (G[:-1] + G[1:])
        zi = 0.5 * (z[:-1] + z[1:])
    else:
        Gi = G[:-1]
        zi = z[:-1]
    deltas = grid.deltas.astype(G.dtype)
    arg = -Gi * deltas[:, None, None]
    A = expm(arg)
    weights = deltas[:, None, None] * phi1(arg)
    b = np.einsum("lij,lj->li", weights, zi)
    return LinearRecurrenceSystem(A, b, np.asarray(y0, dtype=G.dtype), input_map=weights)


def _grid_linearizer(problem: OdeProblem, grid: TimeGrid, mode: str, dtype):
    y0 = problem.y0.astype(dtype)

    def linearize(Gs, z):
        return discretize_linear(Gs[0], z, grid, y0, mode=mode)

    return linearize


def deer_solve_ode(
    problem: OdeProblem,
    config: DeerConfig,
    mode: str = "midpoint",
    *,
    return_system: bool = False,
):
    """Solve the ODE by the fixed-point iteration; states cover all grid points.

    Returns (StateSequence over t_0..t_L, DeerReport); linear dynamics
    converge after a single effective iteration.
    """
    dtype = config.dtype
    npts = problem.grid.times.size
    inputs = None if problem.inputs is None else problem.inputs.data.astype(dtype)
    result = deer_solve(
        problem.dynamics,
        lambda y: [y],
        _grid_linearizer(problem, problem.grid, mode, dtype),
        inputs,
        problem.theta,
        config,
        shape=(npts, problem.n),
        return_system=return_system,
    )
    if return_system:
        y, report, system = result
        return StateSequence(y), report, system
    y, report = result
    return StateSequence(y), report


def _input_interpolator(problem: OdeProblem):
    if problem.inputs is None:
        return lambda t: None
    times = problem.grid.times
    data = problem.inputs.data

    def interp(t: float) -> np.ndarray:
        return np.array(
            [np.interp(t, times, data[:, c]) for c in range(data.shape[1])]
        )

    return interp


def reference_rk4(problem: OdeProblem, substeps: int = 1) -> StateSequence:
    """Classical fourth-order Runge-Kutta on a grid refined `substeps`-fold.

    Inputs are interpolated linearly between grid samples; the returned states
    are sub-sampled back onto the problem grid.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    f = problem.dynamics.eval
    theta = problem.theta
    x_at = _input_interpolator(problem)
    times = problem.grid.times
    out = np.empty((times.size, problem.n), dtype=np.float64)
    y = problem.y0.astype(np.float64).copy()
    out[0] = y
    for i in range(times.size - 1):
        h = (times[i + 1] - times[i]) / substeps
        t = times[i]
        for _ in range(substeps):
            k1 = f([y], x_at(t), theta)
            k2 = f([y + 0.5 * h * k1], x_at(t + 0.5 * h), theta)
            k3 = f([y + 0.5 * h * k2], x_at(t + 0.5 * h), theta)
            k4 = f([y + h * k3], x_at(t + h), theta)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        out[i + 1] = y
    return StateSequence(out)


def sequential_deer_fixed_point(
    problem: OdeProblem,
    config: DeerConfig,
    mode: str = "midpoint",
) -> StateSequence:
    """March the discrete equations forward one step at a time.

    Solves, per interval, the same self-consistent exponential-step equation
    the parallel iteration converges to (an inner fixed point per step in
    midpoint mode; explicit in left mode), so it defines the exact solution
    the parallel path must reproduce.
    """
    dtype = config.dtype
    f = problem.dynamics.eval
    theta = problem.theta
    times = problem.grid.times
    deltas = problem.grid.deltas
    inputs = None if problem.inputs is None else problem.inputs.data.astype(dtype)
    inner_tol = min(config.resolved_tolerance() * 1e-2, 1e-12)

    def g_and_z(y, x):
        J = np.asarray(problem.dynamics.jacobian_p([y], x, theta, 0), dtype=dtype)
        G = -J
        z = np.asarray(f([y], x, theta), dtype=dtype) + G @ y
        return G, z

    out = np.empty((times.size, problem.n), dtype=dtype)
    y = problem.y0.astype(dtype).copy()
    out[0] = y
    for i in range(times.size - 1):
        x_i = None if inputs is None else inputs[i]
        x_n = None if inputs is None else inputs[i + 1]
        G_i, z_i = g_and_z(y, x_i)
        if mode == "left":
            arg = -G_i * dtype(deltas[i])
            y = expm(arg) @ y + dtype(deltas[i]) * (phi1(arg) @ z_i)
        else:
            u = y.copy()
            for _ in range(100):
                G_n, z_n = g_and_z(u, x_n)
                arg = -0.5 * (G_i + G_n) * dtype(deltas[i])
                u_new = expm(arg) @ y + dtype(deltas[i]) * (
                    phi1(arg) @ (0.5 * (z_i + z_n))
                )
                if np.max(np.abs(u_new - u)) <= inner_tol:
                    u = u_new
                    break
                u = u_new
            y = u
        out[i + 1] = y
    return StateSequence(out)


# ---------------------------------------------------------------------------
# Built-in problems (named, versioned in cli.PROBLEMS).


def logistic_problem(
    t0: float = 0.0, t1: float = 5.0, num_steps: int = 2000, y0: float = 0.1
) -> OdeProblem:
    """dy/dt = y (1 - y); closed form y(t) = 1 / (1 + (1/y0 - 1) exp(-t))."""

    def f(states, x, theta):
        y = states[0]
        return y * (1.0 - y)

    def jac(states, x, theta, p):
        y = states[0]
        return (1.0 - 2.0 * y)[..., None]

    dyn = DynamicsSpec(eval=f, jacobian=jac)
    return OdeProblem(dyn, np.array([y0]), TimeGrid.uniform(t0, t1, num_steps))


def logistic_exact(times: np.ndarray, y0: float = 0.1) -> np.ndarray:
    return 1.0 / (1.0 + (1.0 / y0 - 1.0) * np.exp(-np.asarray(times)))


def van_der_pol_problem(
    mu: float = 1.0,
    t0: float = 0.0,
    t1: float = 10.0,
    num_steps: int = 5000,
    y0=(2.0, 0.0),
) -> OdeProblem:
    """Van der Pol oscillator: y0' = y1, y1' = mu (1 - y0^2) y1 - y0."""

    def f(states, x, theta):
        y = states[0]
        return np.stack(
            [y[..., 1], mu * (1.0 - y[..., 0] ** 2) * y[..., 1] - y[..., 0]], axis=-1
        )

    def jac(states, x, theta, p):
        y = states[0]
        J = np.zeros(y.shape + (2,), dtype=y.dtype)
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -2.0 * mu * y[..., 0] * y[..., 1] - 1.0
        J[..., 1, 1] = mu * (1.0 - y[..., 0] ** 2)
        return J

    dyn = DynamicsSpec(eval=f, jacobian=jac)
    return OdeProblem(dyn, np.asarray(y0, dtype=np.float64), TimeGrid.uniform(t0, t1, num_steps))


def linear_problem(
    rate: float = -1.0,
    t0: float = 0.0,
    t1: float = 1.0,
    num_steps: int = 1000,
    y0: float = 1.0,
) -> OdeProblem:
    """dy/dt = rate * y; exact solution y0 * exp(rate * t)."""

    def f(states, x, theta):
        return rate * states[0]

    def jac(states, x, theta, p):
        y = states[0]
        return np.full(y.shape + (1,), rate, dtype=y.dtype)

    dyn = DynamicsSpec(eval=f, jacobian=jac)
    return OdeProblem(dyn, np.array([y0]), TimeGrid.uniform(t0, t1, num_steps))
