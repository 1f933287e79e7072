"""Benchmark harness: timed DEER-vs-sequential grids over untrained GRUs,
with machine-readable CSV/JSON-lines output.

Cells run strictly one at a time so timings are honest; accuracy is checked
before speed (a non-converged cell aborts the grid rather than producing a
misleading row).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import DeerConfig, InputSequence
from .rnn import deer_eval_rnn, gru_cell, gru_params_init, sequential_eval_rnn

__all__ = [
    "BenchRecord",
    "SkippedCell",
    "run_grid",
    "compare_outputs",
    "records_to_csv",
    "records_to_jsonl",
    "records_from_csv",
    "speedup",
    "CSV_HEADER",
]

CSV_HEADER = "method,seq_len,dims,batch,seed,wall_time_s,iterations,max_abs_diff"

# Rough per-solve footprint: scan scratch plus the linear system, about four
# (n^2 + n)-sized arrays per step per batch element, in the working dtype.
DEFAULT_MEMORY_BUDGET = 4 * 2**30


@dataclass(frozen=True)
class BenchRecord:
    method: str
    seq_len: int
    dims: int
    batch: int
    seed: int
    wall_time: float
    iterations: Optional[int]
    max_abs_diff: float

    def __post_init__(self):
        if self.method not in ("deer", "sequential"):
            raise ValueError("method must be 'deer' or 'sequential'")
        if not self.wall_time > 0:
            raise ValueError("wall_time must be positive")
        if not self.max_abs_diff >= 0:
            raise ValueError("max_abs_diff must be non-negative")


@dataclass(frozen=True)
class SkippedCell:
    """Marker row for a grid cell skipped by the memory pre-screen."""

    seq_len: int
    dims: int
    batch: int
    seed: int
    reason: str


def estimate_bytes(seq_len: int, dims: int, batch: int, itemsize: int = 8) -> int:
    return 4 * batch * seq_len * (dims * dims + dims) * itemsize


def _median_time(fn, warmup: int, repeats: int) -> Tuple[float, object]:
    result = None
    for _ in range(warmup):
        result = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), result


def run_grid(
    lengths: Sequence[int],
    dims: Sequence[int],
    batches: Sequence[int],
    seeds: Sequence[int],
    config: Optional[DeerConfig] = None,
    *,
    warmup: int = 2,
    repeats: int = 5,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> Tuple[List[BenchRecord], List[SkippedCell]]:
    """Time DEER and sequential evaluation of an untrained GRU per grid cell.

    Weights use the seeded uniform(-1/sqrt(n), 1/sqrt(n)) initialization with
    Gaussian inputs and an all-zeros initial guess.  Each cell is timed as the
    median of `repeats` runs after `warmup` untimed ones.  Cells whose
    estimated footprint exceeds the budget are skipped with a marker.
    """
    if not (lengths and dims and batches and seeds):
        raise ValueError("all grid axes must be non-empty")
    config = config or DeerConfig()
    cell = gru_cell()
    records: List[BenchRecord] = []
    skipped: List[SkippedCell] = []
    for L in lengths:
        for n in dims:
            for B in batches:
                for seed in seeds:
                    est = estimate_bytes(L, n, B, np.dtype(config.dtype).itemsize)
                    if est > memory_budget:
                        skipped.append(
                            SkippedCell(L, n, B, seed, f"estimated {est} B > budget")
                        )
                        continue
                    params = gru_params_init(n, n, seed=seed).astype(config.dtype)
                    rng = np.random.default_rng(seed + 1)
                    data = rng.standard_normal((B, L, n)).astype(config.dtype)
                    inputs = InputSequence(data if B > 1 else data[0])
                    y0 = np.zeros(n, dtype=config.dtype)

                    t_seq, seq_out = _median_time(
                        lambda: sequential_eval_rnn(
                            cell, inputs, y0, theta=params, dtype=config.dtype
                        ),
                        warmup,
                        repeats,
                    )
                    t_deer, deer_res = _median_time(
                        lambda: deer_eval_rnn(cell, inputs, y0, config, theta=params),
                        warmup,
                        repeats,
                    )
                    deer_out, report = deer_res
                    if not report.converged:
                        raise RuntimeError(
                            f"DEER did not converge at cell (L={L}, n={n}, B={B}, "
                            f"seed={seed}); refusing to report timings"
                        )
                    diff = compare_outputs(seq_out.data, deer_out.data)
                    records.append(
                        BenchRecord("sequential", L, n, B, seed, t_seq, None, diff["max_abs"])
                    )
                    records.append(
                        BenchRecord(
                            "deer", L, n, B, seed, t_deer, report.iterations, diff["max_abs"]
                        )
                    )
    return records, skipped


def compare_outputs(a: np.ndarray, b: np.ndarray) -> dict:
    """Elementwise difference statistics: max, mean, and argmax location."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    flat_arg = int(np.argmax(diff)) if diff.size else 0
    return {
        "max_abs": float(diff.max()) if diff.size else 0.0,
        "mean_abs": float(diff.mean()) if diff.size else 0.0,
        "argmax": tuple(int(i) for i in np.unravel_index(flat_arg, diff.shape))
        if diff.size
        else (),
    }


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def records_to_csv(records, skipped=()) -> str:
    """RFC-4180 CSV; floats carry 17 significant digits so rows round-trip."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for r in records:
        writer.writerow(
            [
                r.method,
                r.seq_len,
                r.dims,
                r.batch,
                r.seed,
                _fmt(r.wall_time),
                "" if r.iterations is None else r.iterations,
                _fmt(r.max_abs_diff),
            ]
        )
    for s in skipped:
        writer.writerow(["deer", s.seq_len, s.dims, s.batch, s.seed, "", "", ""])
    return buf.getvalue()


def records_from_csv(text: str) -> List[BenchRecord]:
    """Parse records_to_csv output; skipped-cell marker rows are dropped."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER.split(","):
        raise ValueError("unrecognized CSV header")
    out = []
    for row in rows[1:]:
        if row[5] == "":
            continue
        out.append(
            BenchRecord(
                method=row[0],
                seq_len=int(row[1]),
                dims=int(row[2]),
                batch=int(row[3]),
                seed=int(row[4]),
                wall_time=float(row[5]),
                iterations=None if row[6] == "" else int(row[6]),
                max_abs_diff=float(row[7]),
            )
        )
    return out


def records_to_jsonl(records, skipped=()) -> str:
    lines = [json.dumps(asdict(r)) for r in records]
    lines += [json.dumps({**asdict(s), "skipped": True}) for s in skipped]
    return "\n".join(lines) + ("\n" if lines else "")


def speedup(records: Sequence[BenchRecord], seq_len: int, dims: int, batch: int) -> float:
    """Median sequential time over median DEER time for one cell (all seeds)."""
    seq = [r.wall_time for r in records
           if r.method == "sequential" and (r.seq_len, r.dims, r.batch) == (seq_len, dims, batch)]
    dee = [r.wall_time for r in records
           if r.method == "deer" and (r.seq_len, r.dims, r.batch) == (seq_len, dims, batch)]
    if not seq or not dee:
        raise ValueError(f"no records for cell ({seq_len}, {dims}, {batch})")
    return float(np.median(seq) / np.median(dee))
