"""Discrete-recurrence front end: GRU cell with analytic derivatives, the
fixed-point evaluator, the exact sequential oracle, and strided multi-head
evaluation.

Gate convention (reset applied before the candidate, update gate blends
toward the candidate):

    z_i = sigmoid(x_i W_z + y_{i-1} U_z + b_z)
    r_i = sigmoid(x_i W_r + y_{i-1} U_r + b_r)
    c_i = tanh(x_i W_h + (r_i * y_{i-1}) U_h + b_h)
    y_i = (1 - z_i) * y_{i-1} + z_i * c_i

W_* are (m, n) input weights, U_* are (n, n) recurrent weights, b_* are (n,)
biases; states and inputs are row vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import DeerConfig, DeerReport, DynamicsSpec, InputSequence, StateSequence
from .engine import LinearRecurrenceSystem, deer_solve, lag_shifter

__all__ = [
    "GruParams",
    "HeadLayout",
    "gru_params_init",
    "gru_step",
    "gru_jacobian",
    "gru_cell",
    "gru_param_vjp",
    "gru_param_jvp",
    "deer_eval_rnn",
    "sequential_eval_rnn",
    "linearize_recurrence",
    "eval_strided",
]

# Serialization field order; also the order used by flatten/unflatten below.
_PARAM_FIELDS = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # clip keeps exp from overflowing; the induced error is ~1e-27, far
    # below either working precision
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


@dataclass(frozen=True)
class GruParams:
    """GRU weights; see the module docstring for the gate equations."""

    w_z: np.ndarray
    w_r: np.ndarray
    w_h: np.ndarray
    u_z: np.ndarray
    u_r: np.ndarray
    u_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        for name in _PARAM_FIELDS:
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        m, n = self.w_z.shape
        for name in ("w_z", "w_r", "w_h"):
            if getattr(self, name).shape != (m, n):
                raise ValueError(f"{name} must have shape {(m, n)}")
        for name in ("u_z", "u_r", "u_h"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"{name} must have shape {(n, n)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape {(n,)}")
        if any(not np.all(np.isfinite(getattr(self, name))) for name in _PARAM_FIELDS):
            raise ValueError("parameters contain non-finite entries")

    @property
    def m(self) -> int:
        return self.w_z.shape[0]

    @property
    def n(self) -> int:
        return self.w_z.shape[1]

    def astype(self, dtype) -> "GruParams":
        return GruParams(**{f: getattr(self, f).astype(dtype) for f in _PARAM_FIELDS})

    def to_json(self) -> str:
        """Serialize with the documented field order w_z,w_r,w_h,u_z,u_r,u_h,b_z,b_r,b_h."""
        payload = {"m": self.m, "n": self.n}
        payload.update({f: getattr(self, f).tolist() for f in _PARAM_FIELDS})
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "GruParams":
        payload = json.loads(text)
        return cls(**{f: np.asarray(payload[f], dtype=np.float64) for f in _PARAM_FIELDS})


def gru_params_init(n: int, m: Optional[int] = None, seed: int = 0) -> GruParams:
    """Benchmark initialization: uniform(-1/sqrt(n), 1/sqrt(n)) weights, zero biases."""
    if m is None:
        m = n
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(n)
    mk = lambda *shape: rng.uniform(-bound, bound, size=shape)
    zeros = lambda: np.zeros(n)
    return GruParams(
        w_z=mk(m, n), w_r=mk(m, n), w_h=mk(m, n),
        u_z=mk(n, n), u_r=mk(n, n), u_h=mk(n, n),
        b_z=zeros(), b_r=zeros(), b_h=zeros(),
    )


def _gates(params: GruParams, y_prev: np.ndarray, x: np.ndarray):
    z = _sigmoid(x @ params.w_z + y_prev @ params.u_z + params.b_z)
    r = _sigmoid(x @ params.w_r + y_prev @ params.u_r + params.b_r)
    c = np.tanh(x @ params.w_h + (r * y_prev) @ params.u_h + params.b_h)
    return z, r, c


def gru_step(params: GruParams, y_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One GRU update; vectorized over any leading dimensions."""
    y_prev = np.asarray(y_prev)
    x = np.asarray(x)
    if y_prev.shape[-1] != params.n or x.shape[-1] != params.m:
        raise ValueError(
            f"state/input sizes {y_prev.shape[-1]}/{x.shape[-1]} do not match "
            f"parameters ({params.n}/{params.m})"
        )
    z, r, c = _gates(params, y_prev, x)
    return (1.0 - z) * y_prev + z * c


def gru_jacobian(params: GruParams, y_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Jacobian of gru_step w.r.t. y_prev, shaped (..., n, n).

    J[..., j, k] = d y_j / d y_prev_k.  Matches central finite differences of
    gru_step to first order.
    """
    y_prev = np.asarray(y_prev)
    x = np.asarray(x)
    z, r, c = _gates(params, y_prev, x)
    e_z = (c - y_prev) * z * (1.0 - z)
    e_c = z * (1.0 - c * c)
    w = y_prev * r * (1.0 - r)
    # d a_h / d y_prev: direct path through r*y, plus the path through r
    d_ah = r[..., None, :] * params.u_h.T + params.u_h.T @ (w[..., :, None] * params.u_r.T)
    J = e_z[..., :, None] * params.u_z.T + e_c[..., :, None] * d_ah
    diag = np.arange(params.n)
    J[..., diag, diag] += 1.0 - z
    return J


def gru_cell() -> DynamicsSpec:
    """DynamicsSpec wrapping the GRU; theta is the GruParams instance."""
    return DynamicsSpec(
        eval=lambda states, x, theta: gru_step(theta, states[0], x),
        jacobian=lambda states, x, theta, p: gru_jacobian(theta, states[0], x),
    )


def gru_param_vjp(
    params: GruParams,
    y_prev: np.ndarray,
    x: np.ndarray,
    w_adj: np.ndarray,
) -> Tuple[GruParams, np.ndarray]:
    """Contract per-step adjoints against the parameter and input derivatives.

    Given w_adj[i] = dLoss/d f(y_{i-1}, x_i, theta) (states held fixed),
    returns (parameter gradients as a GruParams, dLoss/dx per step).
    """
    y_prev = np.asarray(y_prev)
    x = np.asarray(x)
    w_adj = np.asarray(w_adj)
    z, r, c = _gates(params, y_prev, x)
    u_c = w_adj * z * (1.0 - c * c)
    u_z = w_adj * (c - y_prev) * z * (1.0 - z)
    u_r = (u_c @ params.u_h.T) * y_prev * r * (1.0 - r)
    grads = GruParams(
        w_z=x.T @ u_z, w_r=x.T @ u_r, w_h=x.T @ u_c,
        u_z=y_prev.T @ u_z, u_r=y_prev.T @ u_r, u_h=(r * y_prev).T @ u_c,
        b_z=u_z.sum(axis=0), b_r=u_r.sum(axis=0), b_h=u_c.sum(axis=0),
    )
    dx = u_z @ params.w_z.T + u_r @ params.w_r.T + u_c @ params.w_h.T
    return grads, dx


def gru_param_jvp(
    params: GruParams,
    dparams: GruParams,
    y_prev: np.ndarray,
    x: np.ndarray,
) -> np.ndarray:
    """Directional derivative of gru_step along a parameter perturbation,
    holding states and inputs fixed."""
    y_prev = np.asarray(y_prev)
    x = np.asarray(x)
    z, r, c = _gates(params, y_prev, x)
    da_z = x @ dparams.w_z + y_prev @ dparams.u_z + dparams.b_z
    da_r = x @ dparams.w_r + y_prev @ dparams.u_r + dparams.b_r
    dz = z * (1.0 - z) * da_z
    dr = r * (1.0 - r) * da_r
    da_c = x @ dparams.w_h + (r * y_prev) @ dparams.u_h + (dr * y_prev) @ params.u_h
    dc = (1.0 - c * c) * da_c
    return (c - y_prev) * dz + z * dc


def _check_rnn_args(inputs: InputSequence, y0: np.ndarray):
    y0 = np.asarray(y0)
    if y0.ndim != 1:
        raise ValueError("y0 must be a vector")
    return y0


def sequential_eval_rnn(
    cell: DynamicsSpec,
    inputs: InputSequence,
    y0: np.ndarray,
    theta=None,
    dtype=np.float64,
) -> StateSequence:
    """Exact left-to-right evaluation of the recurrence (the ground truth).

    Batched inputs (B, L, m) are evaluated per step across the batch.
    """
    y0 = _check_rnn_args(inputs, y0).astype(dtype)
    x = inputs.data.astype(dtype)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    B, L, _ = x.shape
    n = y0.shape[0]
    out = np.empty((B, L, n), dtype=dtype)
    state = np.broadcast_to(y0, (B, n)).copy()
    for i in range(L):
        state = np.asarray(cell.eval([state], x[:, i], theta), dtype=dtype)
        out[:, i] = state
    return StateSequence(out if batched else out[0])


def _rnn_linearizer(y0):
    def linearize(Gs, z):
        return LinearRecurrenceSystem(-Gs[0], z, y0)

    return linearize


def deer_eval_rnn(
    cell: DynamicsSpec,
    inputs: InputSequence,
    y0: np.ndarray,
    config: DeerConfig,
    theta=None,
    *,
    return_system: bool = False,
):
    """Evaluate the recurrence y_i = f(y_{i-1}, x_i, theta) by fixed-point
    iteration over the whole sequence.

    Per iteration the linear system is A_i = df/dy_{i-1} at the previous
    iterate and b_i = f(prev) - A_i prev_{i-1}; its scan solution is the next
    iterate.  Batched inputs (B, L, m) run as independent per-batch solves
    sharing one schedule; the returned report then aggregates the batch
    (max iterations, all-converged, per-iteration max residual).
    """
    y0 = _check_rnn_args(inputs, y0).astype(config.dtype)
    data = inputs.data
    if data.ndim == 3:
        outs, reports, systems = [], [], []
        for b in range(data.shape[0]):
            res = deer_eval_rnn(
                cell,
                InputSequence(data[b]),
                y0,
                config,
                theta,
                return_system=return_system,
            )
            outs.append(res[0].data)
            reports.append(res[1])
            if return_system:
                systems.append(res[2])
        merged = _merge_reports(reports)
        if return_system:
            return StateSequence(np.stack(outs)), merged, systems
        return StateSequence(np.stack(outs)), merged

    L = inputs.L
    n = y0.shape[0]
    result = deer_solve(
        cell,
        lag_shifter(y0, shifts=(1,)),
        _rnn_linearizer(y0),
        data,
        theta,
        config,
        shape=(L, n),
        return_system=return_system,
    )
    if return_system:
        y, report, system = result
        return StateSequence(y), report, system
    y, report = result
    return StateSequence(y), report


def _merge_reports(reports: Sequence[DeerReport]) -> DeerReport:
    iters = max(r.iterations for r in reports)
    hist = []
    for k in range(iters):
        vals = [
            r.residual_history[k] if k < r.iterations else r.residual_history[-1]
            for r in reports
        ]
        hist.append(max(vals))
    return DeerReport(
        iterations=iters,
        residual_history=tuple(hist),
        converged=all(r.converged for r in reports),
        wall_time=sum(r.wall_time for r in reports),
    )


def linearize_recurrence(
    cell: DynamicsSpec,
    states: StateSequence,
    inputs: InputSequence,
    y0: np.ndarray,
    theta=None,
) -> LinearRecurrenceSystem:
    """Recompute the linearization at a given trajectory (the memory-saving
    alternative to keeping the system from the forward solve)."""
    y = states.data
    if y.ndim != 2:
        raise ValueError("linearize_recurrence expects an unbatched trajectory")
    prev = np.concatenate([np.asarray(y0)[None], y[:-1]], axis=0)
    A = np.asarray(cell.jacobian_p([prev], inputs.data, theta, 0))
    f_vals = np.asarray(cell.eval([prev], inputs.data, theta))
    b = f_vals - np.einsum("lij,lj->li", A, prev)
    return LinearRecurrenceSystem(A, b, np.asarray(y0))


# ---------------------------------------------------------------------------
# Strided multi-head evaluation.


@dataclass(frozen=True)
class HeadLayout:
    """Channel partition with per-head strides: ((start, stop, stride), ...)."""

    heads: Tuple[Tuple[int, int, int], ...]

    def __post_init__(self):
        heads = tuple((int(a), int(b), int(s)) for a, b, s in self.heads)
        object.__setattr__(self, "heads", heads)
        if any(s < 1 for _, _, s in heads):
            raise ValueError("strides must be >= 1")

    def validate_partition(self, n: int):
        covered = sorted((a, b) for a, b, _ in self.heads)
        cursor = 0
        for a, b in covered:
            if a != cursor or b <= a:
                raise ValueError(f"head ranges {covered} do not partition [0, {n})")
            cursor = b
        if cursor != n:
            raise ValueError(f"head ranges {covered} do not partition [0, {n})")

    @classmethod
    def exponential(cls, n: int, num_heads: int) -> "HeadLayout":
        """Equal channel blocks with strides 2^0, 2^1, ... per head."""
        if n % num_heads:
            raise ValueError("num_heads must divide n")
        width = n // num_heads
        return cls(tuple((h * width, (h + 1) * width, 2**h) for h in range(num_heads)))


def eval_strided(
    cells: Sequence[DynamicsSpec],
    layout: HeadLayout,
    inputs: InputSequence,
    y0: np.ndarray,
    config: DeerConfig,
    thetas: Optional[Sequence] = None,
) -> StateSequence:
    """Evaluate one independent recurrence per head over strided lanes.

    A head with stride s sees its channels evolve as s interleaved
    subsequences: lane j visits positions j, j+s, j+2s, ...; every lane starts
    from the head's slice of y0.  Lane outputs are re-interleaved to full
    length.  Heads and lanes are independent solves.
    """
    y0 = np.asarray(y0)
    layout.validate_partition(y0.shape[0])
    if len(cells) != len(layout.heads):
        raise ValueError("one cell per head required")
    if thetas is None:
        thetas = [None] * len(cells)
    x = inputs.data
    if x.ndim != 2:
        raise ValueError("eval_strided expects unbatched inputs")
    L = x.shape[0]
    out = np.empty((L, y0.shape[0]), dtype=config.dtype)
    for cell, theta, (a, b, stride) in zip(cells, thetas, layout.heads):
        head_y0 = y0[a:b]
        for lane in range(stride):
            pos = np.arange(lane, L, stride)
            if pos.size == 0:
                continue
            lane_states, report = deer_eval_rnn(
                cell, InputSequence(x[pos]), head_y0, config, theta
            )
            out[pos, a:b] = lane_states.data
    return StateSequence(out)
