"""Command-line front end: estimate / mse-cost / validate / sivr-demo.

Configuration is one YAML file (nested key-value with arrays; schema in the
README). The seed is always explicit: it must come from the config, the
``MLPIC_SEED`` environment variable or ``--seed`` (flag > env > config).
Output files are CSV by default (JSON-lines with ``--format jsonl``) and are
byte-for-byte reproducible for a fixed config and seed; ``--timings`` adds a
wall-clock column next to the Euler-step cost column and is excluded from
that guarantee.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 estimator failure recorded in at least one output row.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from .errors import ConfigError, MlpicError
from .estimate import (
    cost_of,
    default_level_burn_in,
    level_schedule,
    loglog_fit,
    mc_single_level,
    multilevel_estimate,
    pimh_single_level,
)
from .model import LqgParams, SivrParams, build_lqg, build_sivr
from .rng import Streams
from .simulate import LevelGrid, controlled_euler_step
from .validate import run_checks

__all__ = ["main", "load_config", "serialize_config", "build_problem",
           "run_estimate", "run_mse_cost", "run_sivr_demo", "run_validate"]

_MODES = ("estimate", "mse-cost", "validate", "sivr-demo")
_METHODS = ("mc", "pimh", "mlmc")

_TOP_KEYS = {
    "seed", "out", "mode", "problem", "method", "n_particles", "M", "level",
    "epsilon", "iterations", "samples", "burn_in", "repetitions", "schedule",
    "resampling", "mse_cost", "sivr_demo", "validate",
}

ESTIMATE_COLUMNS = [
    "record", "mode", "method", "problem", "epsilon", "level_min", "level_max",
    "m_trunc", "repetition", "u", "cost_steps", "acceptance_rate", "std_error",
    "n_retained", "ess", "mse", "mean_cost", "slope", "intercept", "seed",
    "config_hash", "error",
]
DEMO_COLUMNS = ["t", "S", "I", "V", "R", "u", "segment", "error", "seed", "config_hash"]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping at the top level")
    return cfg


def serialize_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)


def config_hash(cfg: dict) -> str:
    """Provenance hash over everything that can change the numbers (the
    output path is excluded so relocating results keeps the hash)."""
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:12]


def _req(cfg, key, typ, mode):
    if key not in cfg:
        raise ConfigError(f"mode {mode}: missing required field {key!r}")
    val = cfg[key]
    if typ is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, typ):
        raise ConfigError(f"field {key!r} must be {typ.__name__}, got {type(val).__name__}")
    return val


def validate_config(cfg: dict, mode: str) -> dict:
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    declared = cfg.get("mode")
    if declared is not None and declared != mode:
        raise ConfigError(f"config declares mode {declared!r} but the {mode!r} command was invoked")
    if "seed" not in cfg:
        raise ConfigError("seed is required (config field, MLPIC_SEED or --seed); "
                          "there is no silent time-based seeding")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {cfg['seed']!r}")
    prob = cfg.get("problem", {})
    if not isinstance(prob, dict) or prob.get("name") not in ("lqg", "sivr"):
        raise ConfigError("problem.name must be 'lqg' or 'sivr'")
    if cfg.get("resampling", "multinomial") not in ("multinomial", "systematic"):
        raise ConfigError("resampling must be 'multinomial' or 'systematic'")
    if mode == "estimate":
        method = cfg.get("method", "mlmc")
        if method not in _METHODS:
            raise ConfigError(f"method must be one of {_METHODS}, got {method!r}")
        if method == "mlmc":
            if "epsilon" not in cfg and "level" not in cfg:
                raise ConfigError("mode estimate with method mlmc needs 'epsilon' or 'level'")
        else:
            _req(cfg, "level", int, mode)
            if method == "pimh":
                _req(cfg, "iterations", int, mode)
            elif "samples" not in cfg and "iterations" not in cfg:
                raise ConfigError("mode estimate with method mc needs 'samples'")
    elif mode == "mse-cost":
        sub = _req(cfg, "mse_cost", dict, mode)
        grid = sub.get("epsilon_grid")
        if not isinstance(grid, list) or not grid or not all(
            isinstance(e, (int, float)) and e > 0 for e in grid
        ):
            raise ConfigError("mse_cost.epsilon_grid must be a nonempty list of positive numbers")
        for m in sub.get("methods", ["pimh", "mlmc"]):
            if m not in _METHODS:
                raise ConfigError(f"mse_cost.methods entries must be in {_METHODS}, got {m!r}")
    elif mode == "sivr-demo":
        if prob.get("name") != "sivr":
            raise ConfigError("sivr-demo requires problem.name == 'sivr'")
    return cfg


def build_problem(cfg: dict):
    prob = cfg.get("problem", {})
    name = prob.get("name")
    params = prob.get("params", {}) or {}
    try:
        if name == "lqg":
            return build_lqg(LqgParams(**params))
        if name == "sivr":
            if "x0" in params:
                params = dict(params, x0=tuple(params["x0"]))
            return build_sivr(SivrParams(**params))
    except TypeError as exc:
        raise ConfigError(f"bad problem.params for {name!r}: {exc}")
    except (ValueError, MlpicError) as exc:
        raise ConfigError(f"invalid {name!r} parameters: {exc}")
    raise ConfigError(f"unknown problem {name!r}")


# ---------------------------------------------------------------------------
# Row assembly
# ---------------------------------------------------------------------------


def _blank_row():
    return {c: "" for c in ESTIMATE_COLUMNS}


def _estimate_row(cfg, mode, method, problem_name, rep, est=None, epsilon=None,
                  error=None, wall=None):
    row = _blank_row()
    row.update(record="estimate", mode=mode, method=method, problem=problem_name,
               repetition=rep, seed=cfg["seed"], config_hash=config_hash(cfg))
    if epsilon is not None:
        row["epsilon"] = epsilon
    if est is not None:
        diag = est.diagnostics
        se = diag.get("std_error")
        row.update(
            u=float(est.value[0]),
            level_min=est.level_min,
            level_max=est.level_max,
            cost_steps=est.cost,
            acceptance_rate=_maybe(diag.get("acceptance_rate")),
            std_error=(float(np.max(se)) if se is not None and np.all(np.isfinite(se)) else ""),
            n_retained=diag.get("n_retained", ""),
            ess=_maybe(diag.get("ess")),
        )
    if error is not None:
        row["error"] = error
    if wall is not None:
        row["wall_time_s"] = wall
    return row


def _maybe(x):
    return "" if x is None else float(x)


def _scheme(cfg):
    return cfg.get("resampling", "multinomial")


def _schedule_constants(cfg):
    sub = cfg.get("schedule", {}) or {}
    return (float(sub.get("c_bias", 1.0)), float(sub.get("c_var", 1.0)),
            float(sub.get("c_single", 1.0)))


def _single_iters(eps, c_single):
    return max(1, math.ceil(c_single / (eps * eps)))


def _run_one(cfg, problem, method, streams, rep, epsilon=None):
    n_p = int(cfg.get("n_particles", 500))
    M = int(cfg.get("M", 4))
    T = problem.horizon
    scheme = _scheme(cfg)
    c_bias, c_var, c_single = _schedule_constants(cfg)
    if method == "mlmc":
        if epsilon is None:
            epsilon = cfg.get("epsilon")
        if epsilon is None:
            # explicit top level: pick the epsilon whose schedule lands on it
            L = int(cfg["level"])
            epsilon = math.sqrt(c_bias * 2.0 ** (-L)) if L > M else math.sqrt(c_bias * 2.0 ** (-M))
        schedule = level_schedule(float(epsilon), M, c_bias, c_var, T)
        return multilevel_estimate(problem, schedule, n_p, None,
                                   streams.scoped("mlmc", rep), resampling=scheme)
    level = int(cfg["level"]) if epsilon is None else level_schedule(
        float(epsilon), M, c_bias, c_var, T).L
    grid = LevelGrid(level, M, T)
    if method == "pimh":
        n = int(cfg["iterations"]) if epsilon is None else _single_iters(float(epsilon), c_single)
        burn = cfg.get("burn_in")
        if burn is None:
            burn = default_level_burn_in(n)
        return pimh_single_level(problem, grid, n_p, n + int(burn), int(burn),
                                 streams.child("pimh", rep), resampling=scheme)
    if method == "mc":
        if epsilon is None:
            n_samples = int(cfg.get("samples") or cfg["iterations"])
        else:
            n_samples = _single_iters(float(epsilon), c_single) * n_p  # cost parity with pimh
        return mc_single_level(problem, grid, n_samples, streams.child("mc", rep))
    raise ConfigError(f"unknown method {method!r}")


def run_estimate(cfg: dict, threads: int = 1, method=None):
    cfg = validate_config(cfg, "estimate")
    problem = build_problem(cfg)
    method = method or cfg.get("method", "mlmc")
    reps = int(cfg.get("repetitions", 1))
    streams = Streams(cfg["seed"], "estimate", method, problem.name)
    rows = []

    def task(rep):
        t0 = time.perf_counter()
        eps = cfg.get("epsilon") if method == "mlmc" else None
        try:
            est = _run_one(cfg, problem, method, streams, rep, eps)
            return _estimate_row(cfg, "estimate", method, problem.name, rep, est,
                                 epsilon=cfg.get("epsilon"), wall=time.perf_counter() - t0)
        except (MlpicError, ValueError) as exc:
            return _estimate_row(cfg, "estimate", method, problem.name, rep,
                                 error=f"{type(exc).__name__}: {exc}",
                                 wall=time.perf_counter() - t0)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(task, range(reps)))
    rows.sort(key=lambda r: (r["method"], str(r["epsilon"]), r["repetition"]))
    return rows


def run_mse_cost(cfg: dict, threads: int = 1):
    cfg = validate_config(cfg, "mse-cost")
    problem = build_problem(cfg)
    sub = cfg["mse_cost"]
    grid = [float(e) for e in sub["epsilon_grid"]]
    methods = list(sub.get("methods", ["pimh", "mlmc"]))
    reps = int(sub.get("repetitions", 20))
    n_p = int(cfg.get("n_particles", 500))
    M = int(cfg.get("M", 4))
    T = problem.horizon
    c_bias, c_var, c_single = _schedule_constants(cfg)
    streams = Streams(cfg["seed"], "mse-cost", problem.name)

    schedules = {e: level_schedule(e, M, c_bias, c_var, T) for e in grid}
    point_costs = []
    for e in grid:
        if "mlmc" in methods:
            point_costs.append(cost_of(schedules[e], n_p))
        if "pimh" in methods or "mc" in methods:
            point_costs.append(_single_iters(e, c_single) * n_p * 2 ** schedules[e].L)
    gt_cfg = sub.get("ground_truth", {}) or {}
    gt_level = int(gt_cfg.get("level") or (max(s.L for s in schedules.values()) + 1))
    if gt_cfg.get("iterations"):
        gt_iters = int(gt_cfg["iterations"])
    else:
        budget = float(gt_cfg.get("budget_factor", 16.0)) * max(point_costs)
        gt_iters = max(200, int(budget // (n_p * 2 ** gt_level)))
    gt_burn = max(100, gt_iters // 10)
    gt = pimh_single_level(problem, LevelGrid(gt_level, M, T), n_p,
                           gt_iters + gt_burn, gt_burn, streams.child("ground-truth"),
                           resampling=_scheme(cfg))
    gt_value = gt.value.copy()

    tasks = [(m, i, rep) for m in methods for i in range(len(grid)) for rep in range(reps)]

    def task(args):
        m, i, rep = args
        eps = grid[i]
        t0 = time.perf_counter()
        try:
            est = _run_one(cfg, problem, m, streams.scoped("point", m, i), rep, eps)
            row = _estimate_row(cfg, "mse-cost", m, problem.name, rep, est, epsilon=eps,
                                wall=time.perf_counter() - t0)
        except (MlpicError, ValueError) as exc:
            row = _estimate_row(cfg, "mse-cost", m, problem.name, rep, epsilon=eps,
                                error=f"{type(exc).__name__}: {exc}",
                                wall=time.perf_counter() - t0)
        return (m, i, rep), row

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = dict(pool.map(task, tasks))

    rows = [results[k] for k in sorted(results, key=lambda k: (k[0], k[1], k[2]))]
    # ground-truth row
    gt_row = _estimate_row(cfg, "mse-cost", "pimh", problem.name, 0, gt)
    gt_row.update(record="ground_truth", level_min=gt_level, level_max=gt_level)
    rows.append(gt_row)

    summary = []
    for m in methods:
        points = []
        for i, eps in enumerate(grid):
            vals = [results[(m, i, rep)]["u"] for rep in range(reps)
                    if results[(m, i, rep)]["error"] == ""]
            costs = [results[(m, i, rep)]["cost_steps"] for rep in range(reps)
                     if results[(m, i, rep)]["error"] == ""]
            if not vals:
                continue
            mse = float(np.mean([(v - gt_value[0]) ** 2 for v in vals]))
            mean_cost = float(np.mean(costs))
            points.append((eps, mse, mean_cost))
            row = _blank_row()
            row.update(record="mse_point", mode="mse-cost", method=m, problem=problem.name,
                       epsilon=eps, mse=mse, mean_cost=mean_cost, n_retained=len(vals),
                       seed=cfg["seed"], config_hash=config_hash(cfg))
            summary.append(row)
        if len(points) >= 2:
            slope, intercept = loglog_fit([p[1] for p in points], [p[2] for p in points])
            row = _blank_row()
            row.update(record="mse_slope", mode="mse-cost", method=m, problem=problem.name,
                       slope=slope, intercept=intercept, n_retained=len(points),
                       seed=cfg["seed"], config_hash=config_hash(cfg))
            summary.append(row)
    return rows + summary


def run_sivr_demo(cfg: dict, threads: int = 1):
    cfg = validate_config(cfg, "sivr-demo")
    problem = build_problem(cfg)
    sub = cfg.get("sivr_demo", {}) or {}
    segments = int(sub.get("segments", 12))
    substeps = int(sub.get("substeps", 8))
    level = int(sub.get("level", 5))
    M = int(sub.get("M", 3))
    n_p = int(sub.get("n_particles", 100))
    iters = int(sub.get("iterations", 200))
    burn = int(sub.get("burn_in", max(1, iters // 10)))
    control_on = bool(sub.get("control", True))
    T = problem.horizon
    h_sim = T / (segments * substeps)
    streams = Streams(cfg["seed"], "sivr-demo")
    chash = config_hash(cfg)

    rows = []
    state = problem.x0.copy()
    any_error = False
    for j in range(segments):
        t_j = j * T / segments
        u_j = 0.0
        err = ""
        if control_on:
            try:
                sub_params = SivrParams(**{**(cfg["problem"].get("params", {}) or {}),
                                           "x0": tuple(state), "T": T - t_j})
                sub_problem = build_sivr(sub_params)
                est = pimh_single_level(sub_problem, LevelGrid(level, M, T - t_j),
                                        n_p, iters + burn, burn,
                                        streams.child("estimate", j),
                                        resampling=_scheme(cfg))
                u_j = float(est.value[0])
            except (MlpicError, ValueError) as exc:
                err = f"{type(exc).__name__}: {exc}"
                any_error = True
        sim_rng = streams.child("simulate", j)
        for s in range(substeps):
            t = t_j + s * h_sim
            rows.append({"t": t, "S": state[0], "I": state[1], "V": state[2],
                         "R": state[3], "u": u_j, "segment": j, "error": err,
                         "seed": cfg["seed"], "config_hash": chash})
            w = sim_rng.standard_normal(problem.d) * np.sqrt(h_sim)
            state = controlled_euler_step(problem, state, u_j, w, h_sim)
            if abs(float(state.sum()) - 1.0) > 1e-10:
                raise MlpicError(f"simplex invariant violated at t={t + h_sim}: sum={state.sum()!r}")
    rows.append({"t": T, "S": state[0], "I": state[1], "V": state[2], "R": state[3],
                 "u": "", "segment": segments - 1, "error": "", "seed": cfg["seed"],
                 "config_hash": chash})
    return rows, any_error


def run_validate(cfg: dict, _tamper=None):
    cfg_v = cfg.get("validate", {}) or {}
    report, ok = run_checks(cfg_v, seed=cfg["seed"], _tamper=_tamper)
    report["seed"] = cfg["seed"]
    report["config_hash"] = config_hash(cfg)
    return report, ok


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _format_cell(v):
    if isinstance(v, float):
        return repr(float(v))
    return "" if v is None else str(v)


def write_rows(path, rows, columns, fmt="csv"):
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(json.dumps({c: row.get(c, "") for c in columns}, sort_keys=True))
                fh.write("\n")
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row.get(c, "")) for c in columns])


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser():
    parser = argparse.ArgumentParser(
        prog="mlpic",
        description="Path-integral optimal-control estimation with multilevel particle MCMC",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("estimate", "run the configured estimator and write one row per repetition"),
        ("mse-cost", "sweep an accuracy grid and report MSE vs cost per method"),
        ("validate", "run the invariant battery; exit 1 on failure"),
        ("sivr-demo", "simulate the controlled epidemic with receding-horizon re-estimation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=(name != "validate"), help="YAML config path")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", default=None, help="override the output path")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        p.add_argument("--timings", action="store_true",
                       help="add a wall_time_s column (not byte-reproducible)")
        if name == "estimate":
            p.add_argument("--method", choices=_METHODS, default=None)
    return parser


def _resolve_cfg(args):
    cfg = load_config(args.config) if args.config else {}
    env_seed = os.environ.get("MLPIC_SEED")
    if env_seed is not None:
        cfg["seed"] = int(env_seed)
    if args.seed is not None:
        cfg["seed"] = args.seed
    env_out = os.environ.get("MLPIC_OUT")
    if env_out is not None:
        cfg["out"] = env_out
    if args.out is not None:
        cfg["out"] = args.out
    if "seed" not in cfg:
        raise ConfigError("seed is required (config field, MLPIC_SEED or --seed)")
    return cfg


def _out_path(cfg, mode):
    out = cfg.get("out")
    if not out:
        raise ConfigError(f"mode {mode}: output path required (config 'out', MLPIC_OUT or --out)")
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve_cfg(args)
        if args.command == "estimate":
            rows = run_estimate(cfg, threads=args.threads, method=args.method)
            cols = list(ESTIMATE_COLUMNS)
            if args.timings:
                cols.insert(cols.index("cost_steps") + 1, "wall_time_s")
            write_rows(_out_path(cfg, "estimate"), rows, cols, args.format)
            return 3 if any(r["error"] for r in rows) else 0
        if args.command == "mse-cost":
            rows = run_mse_cost(cfg, threads=args.threads)
            cols = list(ESTIMATE_COLUMNS)
            if args.timings:
                cols.insert(cols.index("cost_steps") + 1, "wall_time_s")
            write_rows(_out_path(cfg, "mse-cost"), rows, cols, args.format)
            return 3 if any(r.get("error") for r in rows) else 0
        if args.command == "sivr-demo":
            rows, any_error = run_sivr_demo(cfg)
            write_rows(_out_path(cfg, "sivr-demo"), rows, DEMO_COLUMNS, args.format)
            return 3 if any_error else 0
        if args.command == "validate":
            report, ok = run_validate(cfg)
            text = json.dumps(report, indent=2, sort_keys=True, default=float)
            if cfg.get("out"):
                with open(cfg["out"], "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            print(text)
            return 0 if ok else 1
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
