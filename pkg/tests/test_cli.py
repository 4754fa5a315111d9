import hashlib
import json
import subprocess
import sys

import pytest

from latentlob.cli import main

SMALL = """
[model]
mu = 0.1
lambda_w = 5e-3
nu = 1e-3

[meta]
phi = 0.316
q = 20
post_horizon = 50

[measure]
trades = 5000
max_lag = 1000
hurst_range = 10 1000
q_grid = 1 5 20
q_fit_range = 1 20
markov_episodes = 10
markov_lags = 20
sweep_values1 = 0.5
sweep_param2 = zeta
sweep_values2 = 0.5 2.0
prop_t_points = 10 50 100
prop_paths = 300

[run]
seed = 11
replicas = 3
warmup_time = 50
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def run(cmd, config, out, *extra):
    return main([cmd, "--config", str(config), "--out", str(out), *extra])


def csvs(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


EXPECTED = {
    "simulate": {"variogram.csv", "bestvol.csv", "profile.csv", "summary.json"},
    "sweep": {"phase.csv"},
    "impact": {"impact.csv", "decay.csv", "markov.csv", "summary.json"},
    "propagator": {"propagator.csv", "summary.json"},
    "markov-check": {"markov.csv", "summary.json"},
}


@pytest.mark.parametrize("cmd", sorted(EXPECTED))
def test_commands_succeed_and_manifest_digests_match(cmd, config, tmp_path):
    out = tmp_path / cmd
    assert run(cmd, config, out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert EXPECTED[cmd] | {"config.ini"} == set(man["outputs"])
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert man["master_seed"] == 11 and man["command"] == cmd
    assert len(man["replica_seeds"]) == man["replica_count"] or len(man["replica_seeds"]) == 1000


def test_thread_count_does_not_change_output(config, tmp_path):
    assert run("simulate", config, tmp_path / "a", "--threads", "1") == 0
    assert run("simulate", config, tmp_path / "b", "--threads", "3") == 0
    assert csvs(tmp_path / "a") == csvs(tmp_path / "b")


def test_thread_env_fallback(config, tmp_path, monkeypatch):
    monkeypatch.setenv("LATENTLOB_THREADS", "2")
    assert run("sweep", config, tmp_path / "a") == 0
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["threads"] == 2


def test_rerun_from_manifest_is_identical(config, tmp_path):
    assert run("impact", config, tmp_path / "a", "--seed", "99") == 0
    assert run("impact", tmp_path / "a" / "manifest.json", tmp_path / "b") == 0
    assert csvs(tmp_path / "a") == csvs(tmp_path / "b")


def test_svg_does_not_change_csvs(config, tmp_path):
    pytest.importorskip("matplotlib")
    assert run("simulate", config, tmp_path / "a") == 0
    assert run("simulate", config, tmp_path / "b", "--svg") == 0
    assert csvs(tmp_path / "a") == csvs(tmp_path / "b")
    assert list((tmp_path / "b").glob("*.svg"))


def test_missing_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(SMALL.replace("mu = 0.1\n", ""))
    assert run("simulate", bad, tmp_path / "o") == 2
    assert "mu" in capsys.readouterr().err


def test_impact_without_meta_exits_2(tmp_path):
    text = SMALL.split("[meta]")[0] + "[measure]" + SMALL.split("[measure]")[1]
    path = tmp_path / "nometa.ini"
    path.write_text(text)
    assert run("impact", path, tmp_path / "o") == 2


def test_runtime_failure_exits_3(tmp_path, capsys):
    # a four-level window cannot absorb greedy trading on a sparse book
    path = tmp_path / "tiny.ini"
    path.write_text(SMALL.replace("nu = 1e-3", "nu = 1e-2\npolicy = greedy\nhalf_width = 4"))
    assert run("simulate", path, tmp_path / "o") == 3
    assert "WindowExhausted" in capsys.readouterr().err


def test_module_entry_point(config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "latentlob.cli", "propagator", "--config",
                           str(config), "--out", str(tmp_path / "p")], capture_output=True)
    assert proc.returncode == 0, proc.stderr
