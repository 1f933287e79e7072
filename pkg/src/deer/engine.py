"""The fixed-point engine: linearize at the current iterate, solve the linear
recurrence by parallel scan, repeat until the iterate stops moving.

Each iteration evaluates the dynamics and its Jacobians at the current guess,
builds the per-step linear system through a problem-specific linearizer, and
applies the inverse linear operator (one scan).  With the Jacobian choice used
here the iteration is a Newton step, so convergence near the solution is
quadratic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import DeerConfig, DeerReport, DivergenceError, DynamicsSpec
from .pscan import ScanElement, scan_inclusive

__all__ = [
    "LinearRecurrenceSystem",
    "lag_shifter",
    "deer_solve",
    "solve_linear_system",
    "residual",
]

# A residual this many times the first one is treated as divergence.
_GROWTH_LIMIT = 1e6


@dataclass(frozen=True)
class LinearRecurrenceSystem:
    """Per-step linear system y_i = A_i y_{i-1} + b_i with initial state y0.

    `input_map`, when present, holds per-step matrices that map a raw
    perturbation of the dynamics output into the b slot (identity for plain
    recurrences; the quadrature weight for exponential discretizations).  The
    sensitivity module uses it to push tangents through the same
    discretization as b.
    """

    A: np.ndarray
    b: np.ndarray
    y0: np.ndarray
    input_map: Optional[np.ndarray] = None

    def __post_init__(self):
        A, b, y0 = np.asarray(self.A), np.asarray(self.b), np.asarray(self.y0)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError(f"A must be (L, n, n), got {A.shape}")
        if b.shape != A.shape[:2]:
            raise ValueError(f"b shape {b.shape} does not match A shape {A.shape}")
        if y0.shape != (A.shape[1],):
            raise ValueError(f"y0 shape {y0.shape} does not match state size {A.shape[1]}")
        if self.input_map is not None and np.asarray(self.input_map).shape != A.shape:
            raise ValueError("input_map must match A's shape")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "y0", y0)

    @property
    def num_steps(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


def lag_shifter(y0: np.ndarray, shifts: Sequence[int] = (1,)) -> Callable:
    """Build a shifter returning the iterate at positions i - s for each lag s.

    Positions before the start are filled with the initial state.  Lag 0
    returns the iterate unchanged.
    """
    y0 = np.asarray(y0)
    shifts = tuple(int(s) for s in shifts)
    if any(s < 0 for s in shifts):
        raise ValueError("shifts must be non-negative")

    def shift(y: np.ndarray) -> List[np.ndarray]:
        out = []
        for s in shifts:
            if s == 0:
                out.append(y)
            else:
                pad = np.broadcast_to(y0, (s,) + y0.shape)
                out.append(np.concatenate([pad, y[:-s]], axis=0))
        return out

    return shift


def solve_linear_system(
    system: LinearRecurrenceSystem,
    *,
    chunk_size: int = 256,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Apply the inverse linear operator: run the recurrence from y0 by scan."""
    init = ScanElement(np.eye(system.n, dtype=system.y0.dtype), system.y0)
    return scan_inclusive(
        init, (system.A, system.b), chunk_size=chunk_size, threads=threads
    )


def residual(prev: np.ndarray, new: np.ndarray) -> float:
    """Maximum absolute entrywise deviation between two iterates."""
    prev = np.asarray(prev)
    new = np.asarray(new)
    if prev.shape != new.shape:
        raise ValueError(f"shape mismatch {prev.shape} vs {new.shape}")
    if prev.size == 0:
        return 0.0
    return float(np.max(np.abs(new - prev)))


def deer_solve(
    dynamics: DynamicsSpec,
    shifter: Callable[[np.ndarray], List[np.ndarray]],
    linearizer: Callable[[List[np.ndarray], np.ndarray], LinearRecurrenceSystem],
    inputs: Optional[np.ndarray],
    theta,
    config: DeerConfig,
    *,
    shape: Tuple[int, int],
    return_system: bool = False,
):
    """Run the fixed-point iteration to convergence.

    The iterate is an array of the given (L, n) shape.  Each pass computes
    f and the per-shift Jacobians at the shifted iterate, forms
    G_p = -Jacobian_p and z = f + sum_p G_p y_shifted, hands (G, z) to the
    linearizer, and solves the resulting linear recurrence.  When the
    linearizer returns one step fewer than the iterate has rows, the first
    row is pinned to the system's initial state (grid-style problems);
    otherwise the scan output is the whole new iterate.

    Returns (states, report), plus the last linear system when
    `return_system` is set (the saved linearization for gradient reuse).
    """
    t_start = time.perf_counter()
    dtype = config.dtype
    L_pts, n = shape
    if config.init_guess is not None:
        y = np.asarray(config.init_guess, dtype=dtype).copy()
        if y.shape != (L_pts, n):
            raise ValueError(f"init_guess shape {y.shape} does not match {(L_pts, n)}")
    else:
        y = np.zeros((L_pts, n), dtype=dtype)
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=dtype)
    tol = config.resolved_tolerance()

    history: List[float] = []
    converged = False
    system = None
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for it in range(config.max_iters):
            shifted = shifter(y)
            f_vals = np.asarray(dynamics.eval(shifted, inputs, theta), dtype=dtype)
            if not np.all(np.isfinite(f_vals)):
                raise DivergenceError(
                    f"dynamics produced non-finite values at iteration {it}", it
                )
            z = f_vals
            Gs = []
            for p in range(dynamics.num_shifts):
                G = -np.asarray(dynamics.jacobian_p(shifted, inputs, theta, p), dtype=dtype)
                Gs.append(G)
                z = z + np.einsum("lij,lj->li", G, shifted[p])
            system = linearizer(Gs, z)
            if not (np.all(np.isfinite(system.A)) and np.all(np.isfinite(system.b))):
                raise DivergenceError(
                    f"linearized system non-finite at iteration {it}", it
                )
            vs = solve_linear_system(
                system, chunk_size=config.chunk_size, threads=config.threads
            )
            if system.num_steps == L_pts - 1:
                y_new = np.concatenate([system.y0[None].astype(dtype), vs], axis=0)
            elif system.num_steps == L_pts:
                y_new = vs
            else:
                raise ValueError(
                    f"linearizer returned {system.num_steps} steps for iterate "
                    f"length {L_pts}"
                )
            r = residual(y, y_new)
            if config.relative:
                r /= max(1.0, float(np.max(np.abs(y_new))))
            history.append(r)
            y = y_new
            if not np.all(np.isfinite(y)):
                raise DivergenceError(f"iterate non-finite at iteration {it}", it)
            if r <= tol:
                converged = True
                break
            if history[0] > 0 and r > _GROWTH_LIMIT * history[0]:
                raise DivergenceError(
                    f"residual grew {r / history[0]:.2e}-fold by iteration {it}", it
                )

    report = DeerReport(
        iterations=len(history),
        residual_history=tuple(history),
        converged=converged,
        wall_time=time.perf_counter() - t_start,
    )
    if return_system:
        return y, report, system
    return y, report
