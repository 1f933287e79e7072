"""Shared domain types: sequences, dynamics contract, solver config, diagnostics.

All types are immutable once constructed and safe to share across threads.
Dynamics callables must be reentrant and vectorized: they receive arrays with
arbitrary leading batch/sequence dimensions and operate elementwise over them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "NumericDomainError",
    "SingularMatrixError",
    "DivergenceError",
    "TimeGrid",
    "StateSequence",
    "InputSequence",
    "DynamicsSpec",
    "DeerConfig",
    "DeerReport",
    "finite_difference_jacobian",
]

DTYPES = {"f32": np.float32, "f64": np.float64}

# Default convergence tolerances per working precision.
DEFAULT_TOLERANCE = {"f32": 1e-4, "f64": 1e-7}


class NumericDomainError(ArithmeticError):
    """A computation produced a non-finite value from finite inputs."""


class SingularMatrixError(ArithmeticError):
    """A linear solve hit a pivot too small to trust."""


class DivergenceError(ArithmeticError):
    """The fixed-point iteration diverged (non-finite iterate or runaway residual).

    Attributes:
        iteration: zero-based index of the iteration that diverged.
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing sample times t_0..t_L; `deltas` holds the L step sizes."""

    times: np.ndarray

    def __post_init__(self):
        t = _as_float_array(self.times, "times")
        if t.ndim != 1 or t.size < 2:
            raise ValueError("times must be a 1-D array with at least two entries")
        if not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def num_steps(self) -> int:
        return self.times.size - 1

    @classmethod
    def uniform(cls, t0: float, t1: float, num_steps: int) -> "TimeGrid":
        return cls(np.linspace(t0, t1, num_steps + 1))


@dataclass(frozen=True)
class StateSequence:
    """Discretized state signal: (L, n) array, or (B, L, n) with a batch axis."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.data, "state data")
        if arr.ndim not in (2, 3):
            raise ValueError("state data must have shape (L, n) or (B, L, n)")
        object.__setattr__(self, "data", arr)

    @property
    def batched(self) -> bool:
        return self.data.ndim == 3

    @property
    def L(self) -> int:
        return self.data.shape[-2]

    @property
    def n(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True)
class InputSequence:
    """External input signal: (L, m) array, or (B, L, m) with a batch axis."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.data, "input data")
        if arr.ndim not in (2, 3):
            raise ValueError("input data must have shape (L, m) or (B, L, m)")
        object.__setattr__(self, "data", arr)

    @property
    def batched(self) -> bool:
        return self.data.ndim == 3

    @property
    def L(self) -> int:
        return self.data.shape[-2]

    @property
    def m(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True)
class DynamicsSpec:
    """Contract for the nonlinear step/right-hand-side function and its derivatives.

    `eval(states, x, theta)` maps a list of P shifted state arrays (each
    shaped (..., n)), an input array (..., m) or None, and opaque parameters
    to the next-state/derivative values (..., n).  Implementations must be
    vectorized over leading dimensions and reentrant.

    `jacobian(states, x, theta, p)` returns the (..., n, n) Jacobian of the
    output with respect to the p-th shifted state, laid out as
    J[..., j, k] = d out_j / d states[p][..., k].  When omitted it falls back
    to central finite differences of `eval`.
    """

    eval: Callable[[Sequence[np.ndarray], Optional[np.ndarray], object], np.ndarray]
    jacobian: Optional[
        Callable[[Sequence[np.ndarray], Optional[np.ndarray], object, int], np.ndarray]
    ] = None
    num_shifts: int = 1

    def __post_init__(self):
        if self.num_shifts < 1:
            raise ValueError("num_shifts must be a positive integer")

    def jacobian_p(self, states, x, theta, p: int) -> np.ndarray:
        if self.jacobian is not None:
            return self.jacobian(states, x, theta, p)
        return finite_difference_jacobian(self, states, x, theta, p)


def finite_difference_jacobian(
    dynamics: DynamicsSpec,
    states: Sequence[np.ndarray],
    x: Optional[np.ndarray],
    theta=None,
    p: int = 0,
    h: Optional[float] = None,
) -> np.ndarray:
    """Central-difference Jacobian of `dynamics.eval` w.r.t. the p-th shifted state.

    Step size defaults to cbrt(machine eps) * max(1, |y|) per coordinate,
    balancing truncation against rounding error.  O(h^2) accurate.
    """
    states = [np.asarray(s) for s in states]
    if not 0 <= p < len(states):
        raise ValueError(f"shift index {p} out of range for {len(states)} states")
    base = states[p]
    n = base.shape[-1]
    dtype = base.dtype if base.dtype.kind == "f" else np.float64
    out = np.empty(base.shape + (n,), dtype=dtype)
    eps = np.finfo(dtype).eps
    for k in range(n):
        if h is None:
            hk = np.cbrt(eps) * np.maximum(1.0, np.abs(base[..., k]))
        else:
            hk = np.full(base.shape[:-1], h, dtype=dtype)
        plus = base.copy()
        plus[..., k] += hk
        minus = base.copy()
        minus[..., k] -= hk
        f_plus = dynamics.eval(_replace(states, p, plus), x, theta)
        f_minus = dynamics.eval(_replace(states, p, minus), x, theta)
        for name, val in (("f(y+h)", f_plus), ("f(y-h)", f_minus)):
            if not np.all(np.isfinite(val)):
                idx = np.argwhere(~np.isfinite(val))[0]
                raise NumericDomainError(
                    f"non-finite {name} at entry {tuple(idx)} while differencing "
                    f"coordinate {k}"
                )
        out[..., k] = (f_plus - f_minus) / (2.0 * hk)[..., None]
    return out


def _replace(states, p, value):
    out = list(states)
    out[p] = value
    return out


@dataclass(frozen=True)
class DeerConfig:
    """Solver configuration.

    tolerance: max-abs iterate deviation that counts as converged; None picks
        the per-precision default (1e-4 for f32, 1e-7 for f64).
    init_guess: None for an all-zeros start, or a user-supplied array matching
        the iterate shape (warm start).
    relative: when True the deviation is scaled by max(1, max|iterate|);
        off by default.
    chunk_size / threads: parallel-scan schedule knobs; the chunk size fixes
        the floating-point combination tree independently of thread count.
    """

    tolerance: Optional[float] = None
    max_iters: int = 100
    init_guess: Optional[np.ndarray] = None
    precision: str = "f64"
    relative: bool = False
    chunk_size: int = 256
    threads: Optional[int] = None

    def __post_init__(self):
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def resolved_tolerance(self) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return DEFAULT_TOLERANCE[self.precision]


@dataclass(frozen=True)
class DeerReport:
    """Per-solve diagnostics: one residual per fixed-point iteration."""

    iterations: int
    residual_history: tuple
    converged: bool
    wall_time: float

    def __post_init__(self):
        hist = tuple(float(r) for r in self.residual_history)
        object.__setattr__(self, "residual_history", hist)
        if len(hist) != self.iterations:
            raise ValueError("residual_history length must equal iterations")
