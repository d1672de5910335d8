import subprocess
import sys

import pytest

from dinorl.cli import run_cli
from dinorl.harness import SUMMARY_HEADER, METRICS_HEADER, checkpoint_load, parse_summary

SMALL_CONFIG = """\
observe_steps=20
explore_until=200
batch_size=4
replay_capacity=200
conv1_filters=2
conv2_filters=4
conv3_filters=4
dense_units=8
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path


def train(out, config, agent="dqn", seed=1, steps=120, *extra):
    return run_cli(["train", "--agent", agent, "--seed", str(seed), "--timesteps", str(steps),
                    "--out", str(out), "--config", str(config), *extra])


def test_train_writes_outputs(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert train(out, config) == 0
    metrics = (out / "metrics.csv").read_text()
    assert metrics.startswith(METRICS_HEADER)
    assert len(metrics.splitlines()) == 121
    assert checkpoint_load(out / "checkpoint.ckpt").t == 120
    assert (out / "summary.csv").read_text().startswith(SUMMARY_HEADER)
    assert (out / "weights.bin").read_bytes()[:6] == b"DINOQ1"
    assert (out / "epochs.csv").exists()
    assert "Max Score" in capsys.readouterr().out


def test_unknown_agent_is_usage_error(tmp_path, config):
    out = tmp_path / "run"
    assert train(out, config, "sarsa") == 2
    assert not out.exists()


def test_bad_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("gamma=2\n")
    out = tmp_path / "run"
    assert train(out, bad) == 2
    assert not out.exists()


def test_resume_continues(tmp_path, config):
    out = tmp_path / "run"
    assert train(out, config, "ddqn", 2, 60) == 0
    assert run_cli(["train", "--agent", "ddqn", "--timesteps", "40", "--out", str(out),
                    "--resume", str(out / "checkpoint.ckpt")]) == 0
    assert checkpoint_load(out / "checkpoint.ckpt").t == 100


def test_compare_three_runs(tmp_path, config, capsys):
    dirs = []
    for agent in ("dqn", "ddqn", "esarsa"):
        dirs.append(tmp_path / agent)
        assert train(dirs[-1], config, agent, 3, 150) == 0
    capsys.readouterr()
    summary = tmp_path / "summary.csv"
    assert run_cli(["compare", *map(str, dirs), "--out", str(summary)]) == 0
    rows = parse_summary(summary.read_text())
    assert [r.run for r in rows] == ["dqn", "ddqn", "esarsa"]
    table = capsys.readouterr().out
    assert len(table.splitlines()) == 4
    for header in ("Timestep", "Max Score", "No. of Episodes", "Average length of episode"):
        assert header in table


def test_eval_and_render(tmp_path, config):
    out = tmp_path / "run"
    assert train(out, config) == 0
    scores = tmp_path / "scores.txt"
    assert run_cli(["eval", "--weights", str(out / "checkpoint.ckpt"), "--seed", "4", "--episodes", "3",
                    "--out", str(scores)]) == 0
    first = scores.read_text()
    assert len(first.splitlines()) == 3
    assert run_cli(["eval", "--weights", str(out / "checkpoint.ckpt"), "--seed", "4", "--episodes", "3",
                    "--out", str(scores)]) == 0
    assert scores.read_text() == first
    frames = tmp_path / "frames"
    assert run_cli(["render-rollout", "--weights", str(out / "checkpoint.ckpt"), "--seed", "1",
                    "--ticks", "25", "--out-dir", str(frames)]) == 0
    assert len(list(frames.glob("*.pgm"))) == 25


def test_missing_weights_file(tmp_path):
    assert run_cli(["eval", "--weights", str(tmp_path / "nope.bin")]) == 1


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "dinorl.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "render-rollout" in proc.stdout
