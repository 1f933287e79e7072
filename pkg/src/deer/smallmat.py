"""Dense kernels for small square matrices: multiply, solve, expm, and phi1.

Everything here accepts stacked operands: an array of shape (..., n, n) is
treated as a batch of n-by-n matrices and processed in one vectorized pass.
n is expected to stay small (the solver's cost model is cubic in n).
"""

from __future__ import annotations

import numpy as np

from .core import NumericDomainError, SingularMatrixError

__all__ = ["matmul", "solve", "expm", "phi1"]

# [6/6] Pade coefficients of exp(x): p(x) = sum c_j x^j, q(x) = p(-x).
_PADE6 = np.array(
    [1.0, 1 / 2, 5 / 44, 1 / 66, 1 / 792, 1 / 15840, 1 / 665280]
)

# Largest scaled 1-norm for which the [6/6] approximant is accurate to
# double-precision roundoff.
_PADE6_THETA = 0.5


def _check_square(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit conformability checking."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"non-conformable shapes {a.shape} and {b.shape}")
    return a @ b


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b by row-pivoted Gaussian elimination.

    Raises SingularMatrixError when the best available pivot falls below
    1e3 * eps * ||a||_1, rather than silently amplifying noise.
    """
    a = _check_square(a, "a")
    if a.ndim != 2:
        raise ValueError("solve operates on a single matrix")
    b = np.asarray(b)
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"rhs length {b.shape[0]} does not match matrix order {a.shape[0]}")
    n = a.shape[0]
    dtype = np.result_type(a.dtype, b.dtype, np.float64)
    lu = a.astype(dtype, copy=True)
    x = b.astype(dtype, copy=True)
    pivot_floor = 1e3 * np.finfo(dtype).eps * np.abs(a).sum(axis=0).max()
    for col in range(n):
        piv = col + np.argmax(np.abs(lu[col:, col]))
        if np.abs(lu[piv, col]) < pivot_floor:
            raise SingularMatrixError(
                f"pivot {lu[piv, col]:.3e} below threshold {pivot_floor:.3e} "
                f"at column {col}"
            )
        if piv != col:
            lu[[col, piv]] = lu[[piv, col]]
            x[[col, piv]] = x[[piv, col]]
        factors = lu[col + 1 :, col] / lu[col, col]
        lu[col + 1 :, col:] -= factors[:, None] * lu[col, col:]
        x[col + 1 :] -= np.multiply.outer(factors, x[col]) if x.ndim > 1 else factors * x[col]
    for col in range(n - 1, -1, -1):
        x[col] = (x[col] - lu[col, col + 1 :] @ x[col + 1 :]) / lu[col, col]
    return x


def _eye_like(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    eye = np.zeros(a.shape, dtype=a.dtype)
    idx = np.arange(n)
    eye[..., idx, idx] = 1.0
    return eye


def _pade6(a: np.ndarray) -> np.ndarray:
    """[6/6] Pade approximant of exp(a) for ||a||_1 <= theta; batched."""
    c = _PADE6.astype(a.dtype)
    eye = _eye_like(a)
    a2 = a @ a
    a4 = a2 @ a2
    u = a @ (c[1] * eye + c[3] * a2 + c[5] * a4)
    v = c[0] * eye + c[2] * a2 + c[4] * a4 + c[6] * (a4 @ a2)
    return np.linalg.solve(v - u, v + u)


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a [6/6] Pade core.

    Accepts stacked matrices; the squaring count is shared across the batch
    (taken from the largest 1-norm) so results are deterministic regardless
    of batch composition order.
    """
    a = _check_square(a, "a")
    if not np.all(np.isfinite(a)):
        raise NumericDomainError("expm input contains non-finite entries")
    work = a.astype(np.result_type(a.dtype, np.float32), copy=False)
    norm = np.abs(work).sum(axis=-2).max() if work.size else 0.0
    squarings = max(0, int(np.ceil(np.log2(norm / _PADE6_THETA)))) if norm > _PADE6_THETA else 0
    scaled = work / work.dtype.type(2.0**squarings)
    result = _pade6(scaled)
    for _ in range(squarings):
        result = result @ result
    return result


def phi1(a: np.ndarray) -> np.ndarray:
    """phi1(a) = a^{-1} (exp(a) - I), extended continuously through singular a.

    Evaluated through the exponential of the augmented block matrix
    [[a, I], [0, 0]], whose top-right block is exactly phi1(a); small-norm
    inputs use a 12-term series instead.  Accepts stacked matrices.
    """
    a = _check_square(a, "a")
    if not np.all(np.isfinite(a)):
        raise NumericDomainError("phi1 input contains non-finite entries")
    work = a.astype(np.result_type(a.dtype, np.float32), copy=False)
    norm = np.abs(work).sum(axis=-2).max() if work.size else 0.0
    if norm < 1e-2:
        return _phi1_series(work)
    n = work.shape[-1]
    aug = np.zeros(work.shape[:-2] + (2 * n, 2 * n), dtype=work.dtype)
    aug[..., :n, :n] = work
    idx = np.arange(n)
    aug[..., idx, n + idx] = 1.0
    return expm(aug)[..., :n, n:]


def _phi1_series(a: np.ndarray) -> np.ndarray:
    # phi1(a) = sum_{k>=0} a^k / (k+1)!, truncated at k=11; for ||a|| < 1e-2
    # the remainder is far below roundoff.
    term = _eye_like(a)
    total = term.copy()
    for k in range(1, 12):
        term = (term @ a) / a.dtype.type(k + 1)
        total += term
    return total
