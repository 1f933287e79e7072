"""Parallel-in-time evaluation of nonlinear sequential models.

Discrete recurrences (GRU and friends) and nonlinear ODE initial-value
problems are solved by a quadratically convergent fixed-point iteration:
each pass linearizes the dynamics at the current iterate and solves the
resulting linear time-varying recurrence with a deterministic parallel scan.
Exact sequential oracles, forward/backward derivative operators, and a
benchmarking CLI are included.
"""

from .core import (
    DeerConfig,
    DeerReport,
    DivergenceError,
    DynamicsSpec,
    InputSequence,
    NumericDomainError,
    SingularMatrixError,
    StateSequence,
    TimeGrid,
    finite_difference_jacobian,
)
from .engine import LinearRecurrenceSystem, deer_solve, lag_shifter, residual
from .ode import (
    OdeProblem,
    deer_solve_ode,
    discretize_linear,
    reference_rk4,
    sequential_deer_fixed_point,
)
from .pscan import ScanElement, combine, scan_inclusive, sequential_scan
from .rnn import (
    GruParams,
    HeadLayout,
    deer_eval_rnn,
    eval_strided,
    gru_cell,
    gru_jacobian,
    gru_params_init,
    gru_step,
    sequential_eval_rnn,
)
from .sensitivity import backward_gradient, forward_sensitivity
from .smallmat import expm, matmul, phi1, solve

__version__ = "0.1.0"

__all__ = [
    "DeerConfig",
    "DeerReport",
    "DivergenceError",
    "DynamicsSpec",
    "GruParams",
    "HeadLayout",
    "InputSequence",
    "LinearRecurrenceSystem",
    "NumericDomainError",
    "OdeProblem",
    "ScanElement",
    "SingularMatrixError",
    "StateSequence",
    "TimeGrid",
    "backward_gradient",
    "combine",
    "deer_eval_rnn",
    "deer_solve",
    "deer_solve_ode",
    "discretize_linear",
    "eval_strided",
    "expm",
    "finite_difference_jacobian",
    "forward_sensitivity",
    "gru_cell",
    "gru_jacobian",
    "gru_params_init",
    "gru_step",
    "lag_shifter",
    "matmul",
    "phi1",
    "reference_rk4",
    "residual",
    "scan_inclusive",
    "sequential_deer_fixed_point",
    "sequential_eval_rnn",
    "sequential_scan",
    "solve",
]
