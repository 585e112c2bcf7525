import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from ringroad.cli import main

FAST_TRAIN = [
    "--set", "env.ambient_vehicles=0",
    "--set", "hyperparams.rollout_steps=128",
    "--set", "hyperparams.ppo_epochs=2",
    "--set", "hyperparams.value_epochs=2",
    "--set", "hyperparams.hidden=[16, 16]",
]


def train_args(out_dir, episodes=2, seed=3, extra=()):
    return [
        "train",
        "--algorithm", "ppo",
        "--episodes", str(episodes),
        "--seed", str(seed),
        "--output-dir", str(out_dir),
        *FAST_TRAIN,
        *extra,
    ]


def test_missing_config_file_exits_2(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.yaml")])
    assert code == 2
    assert "nope.yaml" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("algorithm: ppo\nbananas: 7\n")
    code = main(["train", "--config", str(cfg)])
    assert code == 2
    assert "bananas" in capsys.readouterr().err


def test_train_zero_episodes_writes_initial_checkpoint(tmp_path):
    out = tmp_path / "run0"
    code = main(train_args(out, episodes=0))
    assert code == 0
    assert (out / "checkpoint.bin").exists()
    curve = (out / "learning_curve.csv").read_text().strip().split("\n")
    assert len(curve) == 1  # header only
    assert curve[0].startswith("episode,steps,episode_return,mean_step_reward")
    assert (out / "resolved_config.yaml").exists()
    assert (out / "run_meta.json").exists()


def test_train_is_byte_identical_across_runs(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(train_args(out_a)) == 0
    assert main(train_args(out_b)) == 0
    curve_a = (out_a / "learning_curve.csv").read_bytes()
    curve_b = (out_b / "learning_curve.csv").read_bytes()
    assert curve_a == curve_b
    assert (out_a / "checkpoint.bin").read_bytes() == (out_b / "checkpoint.bin").read_bytes()
    # resolved configs agree apart from the requested output directory
    norm = lambda p: [l for l in (p / "resolved_config.yaml").read_text().splitlines() if not l.startswith("output_dir")]
    assert norm(out_a) == norm(out_b)


def test_resolved_config_reproduces_the_run(tmp_path):
    out_a = tmp_path / "a"
    assert main(train_args(out_a)) == 0
    out_b = tmp_path / "b"
    code = main(
        ["train", "--config", str(out_a / "resolved_config.yaml"), "--output-dir", str(out_b)]
    )
    assert code == 0
    assert (out_a / "learning_curve.csv").read_bytes() == (out_b / "learning_curve.csv").read_bytes()


def test_evaluate_writes_identical_reports(tmp_path):
    out = tmp_path / "run"
    assert main(train_args(out)) == 0
    eval_a, eval_b = tmp_path / "ea", tmp_path / "eb"
    args = [
        "evaluate",
        "--checkpoint", str(out / "checkpoint.bin"),
        "--rounds", "3",
        "--seed", "11",
        "--set", "env.ambient_vehicles=2",
    ]
    assert main(args + ["--output-dir", str(eval_a)]) == 0
    assert main(args + ["--output-dir", str(eval_b)]) == 0
    rep_a = (eval_a / "metric_report.json").read_bytes()
    rep_b = (eval_b / "metric_report.json").read_bytes()
    assert rep_a == rep_b
    data = json.loads(rep_a)
    assert data["rounds"] == 3
    for value in data["indicators"].values():
        assert 0.0 <= value <= 1.0


def test_evaluate_rejects_zero_rounds(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(train_args(out)) == 0
    code = main(
        ["evaluate", "--checkpoint", str(out / "checkpoint.bin"), "--rounds", "0"]
    )
    assert code == 2
    assert "rounds" in capsys.readouterr().err


def test_score_reproduces_published_totals(tmp_path, capsys):
    csv_path = tmp_path / "indicators.csv"
    csv_path.write_text(
        "label,collision_rate,lane_centering,efficiency,comfort,energy\n"
        "first,0.43,0.8653,0.8872,0.8846,0.8058\n"
        "second,0.68,0.8385,0.8784,0.9836,0.8103\n"
        "third,0.73,0.9322,0.9295,0.8627,0.7995\n"
    )
    out_csv = tmp_path / "totals.csv"
    code = main(["score", "--indicators", str(csv_path), "--output", str(out_csv)])
    assert code == 0
    lines = out_csv.read_text().strip().split("\n")[1:]
    totals = {line.split(",")[0]: float(line.split(",")[1]) for line in lines}
    assert totals["first"] == pytest.approx(0.6606, abs=1e-3)
    assert totals["second"] == pytest.approx(0.7769, abs=1e-3)
    assert totals["third"] == pytest.approx(0.8267, abs=1e-3)


def test_score_with_custom_weights(tmp_path):
    csv_path = tmp_path / "ind.csv"
    csv_path.write_text(
        "label,collision_rate,lane_centering,efficiency,comfort,energy\nx,1,0,0,0,0\n"
    )
    weights = tmp_path / "w.yaml"
    weights.write_text("weights: [1.0, 0.0, 0.0, 0.0, 0.0]\n")
    out_csv = tmp_path / "out.csv"
    assert main(["score", "--indicators", str(csv_path), "--weights", str(weights), "--output", str(out_csv)]) == 0
    assert float(out_csv.read_text().strip().split("\n")[1].split(",")[1]) == 1.0


def test_score_missing_columns_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["score", "--indicators", str(bad)]) == 2


def test_trace_writes_documented_columns(tmp_path):
    out = tmp_path / "run"
    assert main(train_args(out)) == 0
    trace = tmp_path / "trace.csv"
    code = main(
        [
            "trace",
            "--checkpoint", str(out / "checkpoint.bin"),
            "--seed", "4",
            "--output", str(trace),
            "--set", "env.ambient_vehicles=2",
        ]
    )
    assert code == 0
    lines = trace.read_text().strip().split("\n")
    assert lines[0] == "t,x,y,speed,throttle,steer,r_lc,r_ttc,r_safe,r_efficient,r_comfort,r_energy,r_arrive,r_total,ttc"
    assert len(lines) > 1
    first = lines[1].split(",")
    assert len(first) == 15


def test_sweep_ranks_combinations(tmp_path):
    grid = tmp_path / "grid.yaml"
    grid.write_text("hyperparams.policy_lr: [0.0003, 0.001]\nhyperparams.gae_lambda: [0.9, 0.95]\n")
    out = tmp_path / "sweep"
    code = main(
        [
            "sweep",
            "--grid", str(grid),
            "--episodes", "2",
            "--budget-episodes", "1",
            "--seed", "1",
            "--output-dir", str(out),
            *FAST_TRAIN,
        ]
    )
    assert code == 0
    lines = (out / "ranking.csv").read_text().strip().split("\n")
    assert lines[0] == "rank,metric,status,hyperparams.gae_lambda,hyperparams.policy_lr"
    assert len(lines) == 5  # header + 4 combinations
    metrics = [float(line.split(",")[1]) for line in lines[1:] if line.split(",")[1]]
    assert metrics == sorted(metrics, reverse=True)
    assert lines[1].split(",")[0] == "1"


def test_sweep_single_cell_grid(tmp_path):
    grid = tmp_path / "grid.yaml"
    grid.write_text("hyperparams.policy_lr: [0.0003]\n")
    out = tmp_path / "sweep1"
    code = main(
        ["sweep", "--grid", str(grid), "--episodes", "1", "--seed", "0",
         "--output-dir", str(out), *FAST_TRAIN]
    )
    assert code == 0
    lines = (out / "ranking.csv").read_text().strip().split("\n")
    assert len(lines) == 2


def test_sweep_missing_grid_exits_2(tmp_path):
    assert main(["sweep", "--grid", str(tmp_path / "none.yaml"), "--output-dir", str(tmp_path)]) == 2


def test_help_available_on_every_subcommand(capsys):
    for sub in ("train", "sweep", "evaluate", "score", "trace"):
        code = main([sub, "--help"])
        assert code == 0
        assert "usage" in capsys.readouterr().out.lower()


def test_resolved_config_round_trips_via_loader(tmp_path):
    out = tmp_path / "run"
    assert main(train_args(out)) == 0
    from ringroad.config import load_run_config

    cfg = load_run_config(out / "resolved_config.yaml")
    assert cfg.algorithm == "ppo"
    assert cfg.scenario.env.ambient_vehicles == 0
    assert cfg.hyperparams.rollout_steps == 128
