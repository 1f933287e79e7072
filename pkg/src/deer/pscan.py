"""Deterministic chunked parallel scan over (matrix | vector) pairs.

The associative element is a pair (M | v) combined as

    combine(earlier, later) = (later.M @ earlier.M | later.M @ earlier.v + later.v)

so scanning elements (A_i | b_i) from an initial value (I | y_0) evaluates the
linear time-varying recurrence y_i = A_i y_{i-1} + b_i for all i at once.

The parallel path splits the sequence into fixed-size chunks, scans each chunk
locally (parallel), combines the chunk aggregates serially, then applies each
chunk's prefix (parallel).  The combination tree depends only on the chunk
size, never on the worker count, so outputs are bitwise reproducible across
thread counts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numba
import numpy as np
from numba import njit, prange

__all__ = [
    "ScanElement",
    "identity_element",
    "combine",
    "scan_inclusive",
    "sequential_scan",
    "resolve_threads",
    "scan_call_count",
]

DEFAULT_CHUNK_SIZE = 256

# Counts scan_inclusive invocations; used to assert single-pass cost bounds.
_scan_calls = 0
_scan_calls_lock = threading.Lock()

# Test hook: when True, the parallel scan flips the sign of its combine
# results, simulating a broken operator.  Never set outside fault-injection
# tests (see cli.run_check_suite).
_FAULT_SIGN_FLIP = False


def scan_call_count() -> int:
    return _scan_calls


def resolve_threads(threads: Optional[int]) -> int:
    """Clamp a requested worker count to what the runtime can provide."""
    limit = numba.config.NUMBA_NUM_THREADS
    if threads is None:
        return limit
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return min(threads, limit)


@dataclass(frozen=True)
class ScanElement:
    """One (M | v) pair; M is (n, n), v is (n,)."""

    M: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M)
        v = np.asarray(self.v)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"M must be square, got shape {M.shape}")
        if v.ndim != 1 or v.shape[0] != M.shape[0]:
            raise ValueError(f"v shape {v.shape} does not match M shape {M.shape}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(v))):
            raise ValueError("scan element contains non-finite entries")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.v.shape[0]


def identity_element(n: int, dtype=np.float64) -> ScanElement:
    return ScanElement(np.eye(n, dtype=dtype), np.zeros(n, dtype=dtype))


def combine(a: ScanElement, b: ScanElement) -> ScanElement:
    """Compose two elements; `a` is the earlier-in-time one."""
    if a.n != b.n:
        raise ValueError(f"element sizes differ: {a.n} vs {b.n}")
    return ScanElement(b.M @ a.M, b.M @ a.v + b.v)


Elems = Union[Sequence[ScanElement], Tuple[np.ndarray, np.ndarray]]


def _stack_elems(elems: Elems) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(elems, tuple) and len(elems) == 2 and not isinstance(elems[0], ScanElement):
        M, v = np.asarray(elems[0]), np.asarray(elems[1])
    else:
        M = np.stack([e.M for e in elems]) if len(elems) else np.zeros((0, 1, 1))
        v = np.stack([e.v for e in elems]) if len(elems) else np.zeros((0, 1))
    M = np.ascontiguousarray(M)
    v = np.ascontiguousarray(v)
    if M.ndim != 3 or v.ndim != 2 or M.shape[0] != v.shape[0] or M.shape[1:] != (v.shape[1],) * 2:
        raise ValueError(f"inconsistent stacked shapes {M.shape} / {v.shape}")
    return M, v


def scan_inclusive(
    init: ScanElement,
    elems: Elems,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Inclusive scan; returns the v-components of init * e_1 * ... * e_i.

    `elems` is either a sequence of ScanElements or a pre-stacked
    (M, v) pair of shapes (L, n, n) and (L, n).  With init = (I | y0) the
    i-th output row is y_i of the recurrence y_i = M_i y_{i-1} + v_i.
    """
    global _scan_calls
    with _scan_calls_lock:
        _scan_calls += 1
    M, v = _stack_elems(elems)
    L, n = v.shape
    if init.n != n and L:
        raise ValueError(f"init size {init.n} does not match element size {n}")
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    dtype = np.result_type(M.dtype, v.dtype, init.v.dtype)
    if L == 0:
        return np.zeros((0, init.n), dtype=dtype)
    M = M.astype(dtype, copy=False)
    v = v.astype(dtype, copy=False)
    v0 = init.v.astype(dtype, copy=False)
    out = np.empty_like(v)
    m_cum = np.empty_like(M)
    v_loc = np.empty_like(v)
    nchunks = (L + chunk_size - 1) // chunk_size
    prefixes = np.empty((nchunks, n), dtype=dtype)
    nthreads = resolve_threads(threads)
    old = numba.get_num_threads()
    numba.set_num_threads(nthreads)
    try:
        _scan_chunked(M, v, v0, int(chunk_size), m_cum, v_loc, prefixes, out)
    finally:
        numba.set_num_threads(old)
    if _FAULT_SIGN_FLIP:
        out = -out
    return out


def sequential_scan(init: ScanElement, elems: Elems) -> np.ndarray:
    """Strictly serial reference for scan_inclusive (the oracle side)."""
    M, v = _stack_elems(elems)
    L, n = v.shape
    if init.n != n and L:
        raise ValueError(f"init size {init.n} does not match element size {n}")
    dtype = np.result_type(M.dtype, v.dtype, init.v.dtype)
    out = np.empty((L, n), dtype=dtype)
    state = init.v.astype(dtype)
    for i in range(L):
        state = M[i] @ state + v[i]
        out[i] = state
    return out


@njit(parallel=True, cache=True)
def _scan_chunked(M, v, v0, chunk, m_cum, v_loc, prefixes, out):  # pragma: no cover - compiled
    L, n = v.shape
    nchunks = (L + chunk - 1) // chunk

    # Local inclusive scans, one chunk per worker.
    for c in prange(nchunks):
        s = c * chunk
        e = min(s + chunk, L)
        for a in range(n):
            v_loc[s, a] = v[s, a]
            for b in range(n):
                m_cum[s, a, b] = M[s, a, b]
        for j in range(s + 1, e):
            for a in range(n):
                acc_v = v[j, a]
                for k in range(n):
                    acc_v += M[j, a, k] * v_loc[j - 1, k]
                v_loc[j, a] = acc_v
                for b in range(n):
                    acc = M[j, a, 0] * m_cum[j - 1, 0, b]
                    for k in range(1, n):
                        acc += M[j, a, k] * m_cum[j - 1, k, b]
                    m_cum[j, a, b] = acc

    # Serial left-to-right combine of chunk aggregates: prefix value entering
    # each chunk.
    for a in range(n):
        prefixes[0, a] = v0[a]
    for c in range(nchunks - 1):
        last = min((c + 1) * chunk, L) - 1
        for a in range(n):
            acc = v_loc[last, a]
            for k in range(n):
                acc += m_cum[last, a, k] * prefixes[c, k]
            prefixes[c + 1, a] = acc

    # Apply each chunk's prefix, one chunk per worker.
    for c in prange(nchunks):
        s = c * chunk
        e = min(s + chunk, L)
        for j in range(s, e):
            for a in range(n):
                acc = v_loc[j, a]
                for k in range(n):
                    acc += m_cum[j, a, k] * prefixes[c, k]
                out[j, a] = acc
