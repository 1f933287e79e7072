"""Command-line entry point: solve, check, convergence study, and benchmark.

Exit codes form a stable contract: 0 success, 1 usage or configuration
error, 2 numerical failure (non-convergence or a failed equivalence check).

Config files are flat key = value text ('#' comments, blank lines allowed);
a file whose first non-blank character is '{' is parsed as JSON with the same
keys.  Recognized keys:

    kind        ode | rnn
    problem     logistic | van-der-pol | linear | gru  (built-in, versioned)
    t0, t1      time span (ode)
    steps       number of grid steps L
    n, m        state/input widths (gru)
    seq_len     sequence length (rnn)
    seed        RNG seed for gru weights and inputs
    tolerance, max_iters, precision, chunk_size, threads, interpolation
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import bench as bench_mod
from . import pscan
from .core import DeerConfig, DivergenceError, InputSequence
from .ode import (
    OdeProblem,
    deer_solve_ode,
    linear_problem,
    logistic_exact,
    logistic_problem,
    sequential_deer_fixed_point,
    van_der_pol_problem,
)
from .rnn import deer_eval_rnn, gru_cell, gru_params_init, sequential_eval_rnn

__all__ = [
    "main",
    "cmd_solve",
    "cmd_check",
    "cmd_convergence",
    "cmd_bench",
    "parse_config",
    "run_check_suite",
    "PROBLEMS",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

# Built-in problems are named and versioned so downstream checks can pin them.
PROBLEMS = {
    "logistic": {"kind": "ode", "version": 1},
    "van-der-pol": {"kind": "ode", "version": 1},
    "linear": {"kind": "ode", "version": 1},
    "gru": {"kind": "rnn", "version": 1},
}


class ConfigError(ValueError):
    pass


def parse_config(text: str, filename: str = "<config>") -> Dict[str, str]:
    """Parse flat key = value text (or JSON) into a string-valued dict."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{filename}:{exc.lineno}: invalid JSON: {exc.msg}")
        if not isinstance(payload, dict):
            raise ConfigError(f"{filename}:1: JSON config must be an object")
        return {str(k): str(v) for k, v in payload.items()}
    out: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{filename}:{lineno}: expected 'key = value', got {body!r}")
        key, value = body.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{filename}:{lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{filename}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _get(cfg: Dict[str, str], key: str, cast, default, filename: str):
    if key not in cfg:
        return default
    try:
        return cast(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{filename}: bad value for {key!r}: {cfg[key]!r}")


def _build_deer_config(cfg: Dict[str, str], filename: str, overrides) -> DeerConfig:
    tolerance = overrides.tolerance
    if tolerance is None:
        tolerance = _get(cfg, "tolerance", float, None, filename)
    max_iters = overrides.max_iters or _get(cfg, "max_iters", int, 100, filename)
    precision = overrides.precision or cfg.get("precision", "f64")
    chunk = overrides.chunk_size or _get(cfg, "chunk_size", int, 256, filename)
    threads = overrides.threads
    if threads is None:
        threads = _get(cfg, "threads", int, None, filename)
    try:
        return DeerConfig(
            tolerance=tolerance,
            max_iters=max_iters,
            precision=precision,
            chunk_size=chunk,
            threads=threads,
        )
    except ValueError as exc:
        raise ConfigError(f"{filename}: {exc}")


def _build_problem(cfg: Dict[str, str], filename: str):
    name = cfg.get("problem")
    if name not in PROBLEMS:
        raise ConfigError(
            f"{filename}: unknown problem {name!r}; choose from {sorted(PROBLEMS)}"
        )
    kind = cfg.get("kind", PROBLEMS[name]["kind"])
    if kind != PROBLEMS[name]["kind"]:
        raise ConfigError(f"{filename}: problem {name!r} has kind {PROBLEMS[name]['kind']}")
    steps = _get(cfg, "steps", int, 2000, filename)
    if steps < 1:
        raise ConfigError(f"{filename}: steps must be >= 1")
    if name == "logistic":
        t0 = _get(cfg, "t0", float, 0.0, filename)
        t1 = _get(cfg, "t1", float, 5.0, filename)
        return "ode", logistic_problem(t0, t1, steps)
    if name == "van-der-pol":
        t0 = _get(cfg, "t0", float, 0.0, filename)
        t1 = _get(cfg, "t1", float, 10.0, filename)
        mu = _get(cfg, "mu", float, 1.0, filename)
        return "ode", van_der_pol_problem(mu, t0, t1, steps)
    if name == "linear":
        t0 = _get(cfg, "t0", float, 0.0, filename)
        t1 = _get(cfg, "t1", float, 1.0, filename)
        rate = _get(cfg, "rate", float, -1.0, filename)
        return "ode", linear_problem(rate, t0, t1, steps)
    n = _get(cfg, "n", int, 2, filename)
    m = _get(cfg, "m", int, n, filename)
    seq_len = _get(cfg, "seq_len", int, _get(cfg, "steps", int, 10000, filename), filename)
    seed = _get(cfg, "seed", int, 0, filename)
    params = gru_params_init(n, m, seed=seed)
    rng = np.random.default_rng(seed + 1)
    inputs = InputSequence(rng.standard_normal((seq_len, m)))
    return "rnn", (params, inputs, np.zeros(n))


def _write_solution_csv(path: Optional[str], ts: np.ndarray, states: np.ndarray):
    n = states.shape[1]
    lines = ["t," + ",".join(f"y_{j}" for j in range(n))]
    for t, row in zip(ts, states):
        lines.append(",".join(format(float(v), ".17g") for v in (t, *row)))
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read(), args.config)
        config = _build_deer_config(cfg, args.config, args)
        kind, problem = _build_problem(cfg, args.config)
        mode = cfg.get("interpolation", "midpoint")
        if mode not in ("midpoint", "left"):
            raise ConfigError(f"{args.config}: interpolation must be midpoint or left")
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if kind == "ode":
            states, report = deer_solve_ode(problem, config, mode=mode)
            ts = problem.grid.times
            data = states.data
        else:
            params, inputs, y0 = problem
            states, report = deer_eval_rnn(
                gru_cell(), inputs, y0, config, theta=params
            )
            ts = np.arange(inputs.L + 1, dtype=np.float64)
            data = np.concatenate([y0[None], states.data], axis=0)
    except DivergenceError as exc:
        print(f"diverged: {exc} (iteration {exc.iteration})", file=sys.stderr)
        return EXIT_NUMERICAL

    _write_solution_csv(args.out, ts, data)
    last = report.residual_history[-1] if report.residual_history else float("nan")
    print(
        f"converged={report.converged} iterations={report.iterations} "
        f"residual={last:.3e} wall_time={report.wall_time:.3f}s"
    )
    return EXIT_OK if report.converged else EXIT_NUMERICAL


def run_check_suite(
    precision: str = "f64",
    threads: Optional[int] = None,
    inject_fault: bool = False,
    seed: int = 0,
) -> List[Tuple[str, float, float, bool]]:
    """DEER-vs-sequential equivalence suite; returns (name, diff, limit, ok) rows.

    `inject_fault` flips the sign of the parallel combine results (a test
    hook) to prove the suite actually detects broken scans.
    """
    gru_limit = 1e-9 if precision == "f64" else 2e-6
    ode_limit = 1e-8 if precision == "f64" else 1e-4
    config = DeerConfig(precision=precision, threads=threads)
    rows = []

    old_fault = pscan._FAULT_SIGN_FLIP
    pscan._FAULT_SIGN_FLIP = inject_fault
    try:
        cell = gru_cell()
        for n, L in ((2, 10000), (32, 2000)):
            params = gru_params_init(n, n, seed=seed).astype(config.dtype)
            rng = np.random.default_rng(seed + 1)
            inputs = InputSequence(rng.standard_normal((L, n)).astype(config.dtype))
            y0 = np.zeros(n, dtype=config.dtype)
            seq = sequential_eval_rnn(cell, inputs, y0, theta=params, dtype=config.dtype)
            try:
                deer_out, report = deer_eval_rnn(cell, inputs, y0, config, theta=params)
                diff = float(np.max(np.abs(seq.data - deer_out.data)))
                ok = report.converged and diff <= gru_limit
            except DivergenceError:
                diff, ok = float("inf"), False
            rows.append((f"gru n={n} L={L}", diff, gru_limit, ok))

        prob = logistic_problem(num_steps=2000)
        try:
            sol, report = deer_solve_ode(prob, config)
            seq_fp = sequential_deer_fixed_point(prob, config)
            diff = float(np.max(np.abs(sol.data - seq_fp.data)))
            tol10 = 10.0 * config.resolved_tolerance()
            rows.append(("logistic deer-vs-marching", diff, tol10, report.converged and diff <= tol10))
            exact = logistic_exact(prob.grid.times)
            diff2 = float(np.max(np.abs(sol.data[:, 0] - exact)))
            limit2 = max(1e-4, 10.0 * config.resolved_tolerance())
            rows.append(("logistic vs closed form", diff2, limit2, diff2 <= limit2))
        except DivergenceError:
            rows.append(("logistic deer-vs-marching", float("inf"), 0.0, False))

        lp = linear_problem(num_steps=500)
        try:
            sol, _ = deer_solve_ode(lp, config)
            exact = np.exp(-lp.grid.times)
            diff = float(np.max(np.abs(sol.data[:, 0] - exact)))
            rows.append(("linear ode vs exp(-t)", diff, ode_limit, diff <= ode_limit))
        except DivergenceError:
            rows.append(("linear ode vs exp(-t)", float("inf"), ode_limit, False))
    finally:
        pscan._FAULT_SIGN_FLIP = old_fault
    return rows


def cmd_check(args) -> int:
    rows = run_check_suite(
        precision=args.precision or "f64",
        threads=args.threads,
        inject_fault=getattr(args, "inject_fault", False),
    )
    width = max(len(name) for name, *_ in rows)
    for name, diff, limit, ok in rows:
        status = "pass" if ok else "FAIL"
        print(f"{name:<{width}}  max_abs={diff:.3e}  limit={limit:.1e}  {status}")
    return EXIT_OK if all(ok for *_, ok in rows) else EXIT_NUMERICAL


def cmd_convergence(args) -> int:
    try:
        tolerances = [float(t) for t in args.tolerances.split(",") if t]
        if not tolerances or any(t <= 0 for t in tolerances):
            raise ValueError
    except ValueError:
        print(f"error: bad tolerance list {args.tolerances!r}", file=sys.stderr)
        return EXIT_USAGE
    if args.problem not in PROBLEMS or PROBLEMS[args.problem]["kind"] != "rnn":
        print(f"error: unknown convergence problem {args.problem!r}", file=sys.stderr)
        return EXIT_USAGE
    precision = args.precision or "f64"
    eps = float(np.finfo(np.float32 if precision == "f32" else np.float64).eps)
    n, L = args.n, args.seq_len
    cell = gru_cell()
    lines = ["tolerance,iterations_mean,iterations_std"]
    for tol in tolerances:
        if tol < eps:
            print(
                f"warning: tolerance {tol:g} is below {precision} epsilon {eps:g}",
                file=sys.stderr,
            )
        counts = []
        for seed in range(args.seeds):
            params = gru_params_init(n, n, seed=seed)
            rng = np.random.default_rng(seed + 1)
            inputs = InputSequence(rng.standard_normal((L, n)))
            config = DeerConfig(
                tolerance=tol, precision=precision, threads=args.threads,
                max_iters=args.max_iters or 100,
            )
            _, report = deer_eval_rnn(
                cell, inputs, np.zeros(n), config, theta=params.astype(config.dtype)
            )
            counts.append(report.iterations)
        lines.append(
            f"{tol:.17g},{np.mean(counts):.17g},{np.std(counts):.17g}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_axis(text: str, name: str) -> List[int]:
    try:
        vals = [int(float(v)) for v in text.split(",") if v]
        if not vals or any(v < 1 for v in vals):
            raise ValueError
        return vals
    except ValueError:
        raise ConfigError(f"unparseable {name} axis: {text!r}")


def cmd_bench(args) -> int:
    try:
        lengths = _parse_axis(args.lengths, "lengths")
        dims = _parse_axis(args.dims, "dims")
        batches = _parse_axis(args.batches, "batches")
        seeds = [int(s) for s in args.seeds.split(",") if s] or [0]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = DeerConfig(
        precision=args.precision or "f64",
        threads=args.threads,
        chunk_size=args.chunk_size or 256,
        tolerance=args.tolerance,
    )
    try:
        records, skipped = bench_mod.run_grid(lengths, dims, batches, seeds, config)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    csv_text = bench_mod.records_to_csv(records, skipped)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
        if args.jsonl:
            with open(args.jsonl, "w") as fh:
                fh.write(bench_mod.records_to_jsonl(records, skipped))
    else:
        sys.stdout.write(csv_text)
    for s in skipped:
        print(f"skipped (L={s.seq_len}, n={s.dims}, B={s.batch}): {s.reason}", file=sys.stderr)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--tolerance", type=float, default=None)
    parser.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--chunk-size", dest="chunk_size", type=int, default=None)
    parser.add_argument("--precision", choices=("f32", "f64"), default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deer",
        description="Parallel-in-time evaluation of sequential models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a configured problem, write t,y CSV")
    p_solve.add_argument("--config", required=True)
    _add_common(p_solve)

    p_check = sub.add_parser("check", help="run the DEER-vs-sequential equivalence suite")
    _add_common(p_check)

    p_conv = sub.add_parser("convergence", help="iterations vs tolerance study")
    p_conv.add_argument("--problem", default="gru")
    p_conv.add_argument("--tolerances", default="1e-2,1e-4,1e-7")
    p_conv.add_argument("--seeds", type=int, default=16)
    p_conv.add_argument("--n", type=int, default=2)
    p_conv.add_argument("--seq-len", dest="seq_len", type=int, default=10000)
    _add_common(p_conv)

    p_bench = sub.add_parser("bench", help="timed DEER-vs-sequential grid, CSV out")
    p_bench.add_argument("--lengths", default="1000,10000")
    p_bench.add_argument("--dims", default="1,2,4")
    p_bench.add_argument("--batches", default="1")
    p_bench.add_argument("--seeds", default="0")
    p_bench.add_argument("--jsonl", default=None)
    _add_common(p_bench)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is None:
        env = os.environ.get("DEER_THREADS")
        if env:
            try:
                args.threads = int(env)
            except ValueError:
                print(f"error: bad DEER_THREADS value {env!r}", file=sys.stderr)
                return EXIT_USAGE
    handler = {
        "solve": cmd_solve,
        "check": cmd_check,
        "convergence": cmd_convergence,
        "bench": cmd_bench,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
