"""Forward sensitivities and backward gradients of a converged solve.

Both directions are single applications of the solved linear operator: the
forward tangent runs the same recurrence with a zero initial perturbation;
the backward adjoint runs the transposed recurrence in reverse time, realized
with the identical scan machinery on time-reversed, transposed elements.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .engine import LinearRecurrenceSystem
from .pscan import ScanElement, scan_inclusive

__all__ = ["forward_sensitivity", "backward_gradient", "apply_input_map_transpose"]


def _weighted(system: LinearRecurrenceSystem, delta_f: np.ndarray) -> np.ndarray:
    if system.input_map is None:
        return delta_f
    return np.einsum("lij,lj->li", system.input_map, delta_f)


def forward_sensitivity(
    system: LinearRecurrenceSystem,
    delta_f: np.ndarray,
    *,
    chunk_size: int = 256,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Propagate per-step output perturbations through the solved recurrence.

    delta_f holds the raw perturbation of the dynamics output at each step;
    it is pushed through the system's discretization weights (input_map) when
    present and then through dy_i = A_i dy_{i-1} + db_i with dy_0 = 0.
    """
    delta_f = np.asarray(delta_f)
    if delta_f.shape != system.b.shape:
        raise ValueError(
            f"delta_f shape {delta_f.shape} does not match system steps {system.b.shape}"
        )
    b = _weighted(system, delta_f)
    n = system.n
    init = ScanElement(np.eye(n, dtype=b.dtype), np.zeros(n, dtype=b.dtype))
    return scan_inclusive(init, (system.A, b), chunk_size=chunk_size, threads=threads)


def backward_gradient(
    system: LinearRecurrenceSystem,
    cotangent: np.ndarray,
    *,
    chunk_size: int = 256,
    threads: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Solve the adjoint recurrence w_i = g_i + A_{i+1}^T w_{i+1} (w_L = g_L).

    `cotangent` is dLoss/dy per step.  Returns (w, dLoss/dy0) where
    w pairs with per-step perturbations of the b slot (contract it against
    the dynamics' parameter/input derivatives to finish the chain rule) and
    dLoss/dy0 = A_1^T w_1.  One scan pass total, run over time-reversed
    transposed transitions.
    """
    g = np.asarray(cotangent)
    if g.shape != system.b.shape:
        raise ValueError(
            f"cotangent shape {g.shape} does not match system steps {system.b.shape}"
        )
    L, n = g.shape
    dtype = np.result_type(system.A.dtype, g.dtype)
    M = np.empty((L, n, n), dtype=dtype)
    M[0] = np.eye(n, dtype=dtype)
    if L > 1:
        M[1:] = np.swapaxes(system.A[:0:-1], -1, -2)
    v = g[::-1].astype(dtype, copy=False)
    init = ScanElement(np.eye(n, dtype=dtype), np.zeros(n, dtype=dtype))
    rev = scan_inclusive(init, (M, np.ascontiguousarray(v)), chunk_size=chunk_size, threads=threads)
    w = rev[::-1].copy()
    dy0 = system.A[0].T @ w[0]
    return w, dy0


def apply_input_map_transpose(
    system: LinearRecurrenceSystem, w: np.ndarray
) -> np.ndarray:
    """Pull a b-slot adjoint back to the raw dynamics-output slot."""
    if system.input_map is None:
        return np.asarray(w)
    return np.einsum("lji,lj->li", system.input_map, np.asarray(w))
