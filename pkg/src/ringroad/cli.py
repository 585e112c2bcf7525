"""Command-line entry points: train, sweep, evaluate, score, trace.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
Outputs are byte-stable across reruns with the same inputs and seed;
wall-clock timestamps are confined to the run_meta.json sidecar.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .agents.train import load_agent, save_agent, train, write_curve_csv
from .config import (
    ConfigError,
    RunConfig,
    default_run_config,
    dump_run_config,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
)
from .env import DrivingEnv
from .evaluation import (
    DEFAULT_INDICATOR_WEIGHTS,
    INDICATOR_NAMES,
    indicators_csv,
    run_evaluation,
    score,
)

TRACE_COLUMNS = (
    "t", "x", "y", "speed", "throttle", "steer",
    "r_lc", "r_ttc", "r_safe", "r_efficient", "r_comfort", "r_energy",
    "r_arrive", "r_total", "ttc",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringroad",
        description="Driving micro-simulator with multi-objective rewards and compact RL trainers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an agent and write checkpoint + learning curve")
    _add_config_args(p_train)
    p_train.add_argument("--algorithm", choices=("ddpg", "ppo", "trpo"))
    p_train.add_argument("--episodes", type=int)
    p_train.add_argument("--output-dir")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="grid-search hyperparameters at a short budget")
    _add_config_args(p_sweep)
    p_sweep.add_argument("--algorithm", choices=("ddpg", "ppo", "trpo"))
    p_sweep.add_argument("--episodes", type=int, help="full-run episode count the budget is derived from")
    p_sweep.add_argument("--grid", required=True, help="YAML mapping of dotted keys to value lists")
    p_sweep.add_argument("--budget-episodes", type=int, help="episodes per combination (default 20%% of the run's episodes)")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--output-dir")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint over seeded rounds")
    _add_config_args(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--rounds", type=int, default=50)
    p_eval.add_argument("--weights", help="YAML file with five indicator weights")
    p_eval.add_argument("--output-dir")
    p_eval.set_defaults(func=cmd_evaluate)

    p_score = sub.add_parser("score", help="weighted total from an indicators CSV")
    p_score.add_argument("--indicators", required=True, help="CSV with columns " + ",".join(INDICATOR_NAMES))
    p_score.add_argument("--weights", help="YAML file with five indicator weights")
    p_score.add_argument("--output")
    p_score.set_defaults(func=cmd_score)

    p_trace = sub.add_parser("trace", help="per-step CSV of one deterministic episode")
    _add_config_args(p_trace)
    p_trace.add_argument("--checkpoint", required=True)
    p_trace.add_argument("--output", default="trace.csv")
    p_trace.set_defaults(func=cmd_trace)
    return parser


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML run configuration (defaults are used when omitted)")
    p.add_argument("--scenario", choices=("roundabout", "highway", "merge"))
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. hyperparams.policy_lr=1e-3",
    )


def _resolve_config(args) -> RunConfig:
    overrides: dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    for name in ("algorithm", "episodes", "seed", "scenario"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = str(value)
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    if args.config:
        return load_run_config(args.config, overrides)
    return run_config_from_dict({}, overrides)


def _write_sidecar(out_dir: Path, started: float, extra: dict | None = None):
    meta = {"wall_time_s": time.time() - started, "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    meta.update(extra or {})
    (out_dir / "run_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def cmd_train(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg.algorithm, cfg.scenario, cfg.hyperparams, cfg.seed, cfg.episodes)
    save_agent(
        out / "checkpoint.bin",
        result.agent,
        cfg.algorithm,
        {"scenario": cfg.scenario.scenario, "seed": cfg.seed, "episodes": cfg.episodes},
    )
    write_curve_csv(out / "learning_curve.csv", result)
    dump_run_config(cfg, out / "resolved_config.yaml")
    _write_sidecar(out, started, {"episodes_trained": len(result.curve), "env_steps": result.total_steps})
    tail = result.trailing_mean(20)
    print(f"trained {cfg.algorithm} for {len(result.curve)} episodes; trailing-20 mean return {tail:.3f}")
    print(f"outputs in {out}")
    return 0


def _sweep_worker(payload):
    index, base_data, assignments, algorithm = payload
    try:
        cfg = run_config_from_dict(base_data, {k: v for k, v in assignments})
        result = train(cfg.algorithm, cfg.scenario, cfg.hyperparams, cfg.seed, cfg.episodes)
        window = max(1, round(0.1 * len(result.curve))) if result.curve else 1
        metric = result.trailing_mean(window) if result.curve else float("nan")
        return index, metric, "ok"
    except Exception as exc:  # a failed combination is recorded, not fatal
        return index, float("nan"), f"failed: {exc}"


def cmd_sweep(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    grid_path = Path(args.grid)
    if not grid_path.exists():
        raise ConfigError(f"grid file not found: {grid_path}")
    grid = yaml.safe_load(grid_path.read_text())
    if not isinstance(grid, dict) or not grid:
        raise ConfigError(f"{grid_path}: grid must be a non-empty mapping of dotted keys to value lists")
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{grid_path}: {key} must map to a non-empty list")
    budget = args.budget_episodes if args.budget_episodes is not None else max(1, cfg.episodes // 5)
    base_data = run_config_to_dict(cfg)
    base_data["episodes"] = budget
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    payloads = []
    for index, combo in enumerate(combos):
        data = dict(base_data)
        data["output_dir"] = str(out / f"combo_{index:03d}")
        payloads.append((index, data, tuple(zip(keys, combo)), cfg.algorithm))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    else:
        results = [_sweep_worker(p) for p in payloads]
    by_index = {index: (metric, status) for index, metric, status in results}
    rows = []
    for index, combo in enumerate(combos):
        metric, status = by_index[index]
        sort_key = metric if status == "ok" and np.isfinite(metric) else -np.inf
        rows.append((sort_key, index, combo, metric, status))
    rows.sort(key=lambda r: (-r[0], r[1]))
    lines = ["rank,metric,status," + ",".join(keys)]
    for rank, (_, index, combo, metric, status) in enumerate(rows, start=1):
        metric_cell = repr(float(metric)) if np.isfinite(metric) else ""
        lines.append(
            f"{rank},{metric_cell},{status.split(':')[0]}," + ",".join(str(v) for v in combo)
        )
    (out / "ranking.csv").write_text("\n".join(lines) + "\n")
    _write_sidecar(out, started, {"combinations": len(combos), "budget_episodes": budget})
    print(f"swept {len(combos)} combinations; ranking in {out / 'ranking.csv'}")
    return 0


def _load_weights(path) -> tuple:
    if path is None:
        return DEFAULT_INDICATOR_WEIGHTS
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"weights file not found: {p}")
    data = yaml.safe_load(p.read_text())
    if isinstance(data, dict):
        data = data.get("weights")
    if not isinstance(data, list) or len(data) != 5:
        raise ConfigError(f"{p}: expected five weights")
    return tuple(float(v) for v in data)


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = _resolve_config(args)
    if args.rounds < 1:
        raise ConfigError("rounds must be >= 1")
    weights = _load_weights(args.weights)
    report = run_evaluation(
        args.checkpoint, cfg.scenario, rounds=args.rounds, seed=cfg.seed, weights=weights
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metric_report.json").write_text(report.to_json())
    (out / "indicators.csv").write_text(indicators_csv([(cfg.scenario.scenario, report)]))
    _write_sidecar(out, started)
    print(f"rounds={report.rounds} steps={report.total_steps} collisions={report.collisions}")
    for name, value in zip(INDICATOR_NAMES, report.indicators()):
        print(f"{name}: {value:.4f}")
    print(f"total_score: {report.total_score:.4f}")
    print(f"report in {out / 'metric_report.json'}")
    return 0


def cmd_score(args) -> int:
    path = Path(args.indicators)
    if not path.exists():
        raise ConfigError(f"indicators file not found: {path}")
    weights = _load_weights(args.weights)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in INDICATOR_NAMES if c not in (reader.fieldnames or ())]
        if missing:
            raise ConfigError(f"{path}: missing indicator column(s) {missing}")
        out_lines = ["label,total_score"]
        for i, row in enumerate(reader):
            label = row.get("label") or str(i)
            try:
                values = [float(row[c]) for c in INDICATOR_NAMES]
            except (TypeError, ValueError):
                raise ConfigError(f"{path}: row {i} holds non-numeric indicator values") from None
            total = score(values, weights)
            out_lines.append(f"{label},{repr(total)}")
            print(f"{label}: {total:.4f}")
    if args.output:
        Path(args.output).write_text("\n".join(out_lines) + "\n")
    return 0


def cmd_trace(args) -> int:
    cfg = _resolve_config(args)
    agent, meta = load_agent(args.checkpoint)
    env = DrivingEnv(cfg.scenario)
    rows, cols = env.observation_shape
    if int(meta.get("obs_dim", rows * cols)) != rows * cols:
        raise ConfigError("checkpoint observation shape does not match the scenario")
    policy = agent.policy_fn()
    obs = env.reset(cfg.seed)
    lines = [",".join(TRACE_COLUMNS)]
    while not env.terminated:
        action = np.clip(np.asarray(policy(obs.ravel()), dtype=np.float64), -1.0, 1.0)
        res = env.step(action)
        obs = res.observation
        rew = res.reward
        values = (
            res.info["t"], env.ego.x, env.ego.y, res.info["speed"],
            float(action[0]), float(action[1]),
            rew.r_lc, rew.r_ttc, rew.r_safe, rew.r_efficient, rew.r_comfort,
            rew.r_energy, rew.r_arrive, rew.r_total, res.info["ttc"],
        )
        lines.append(",".join(repr(float(v)) for v in values))
    Path(args.output).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} steps to {args.output} (cause: {env.termination_cause})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
