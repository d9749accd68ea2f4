"""Command-line interface: artifacts, exit codes, determinism."""
import json

import pytest

from evgrid.cli import main

TINY_TOML = """\
[microgrid]
buildings = 1
stages = 2
stage_hours = 12.0
window_stages = 2

[tariff]
rmb_per_kwh = [0.8135, 0.3515]

[load]
stage_kw = [[100.0, 100.0]]

[wind]
forecast_stage_kw = [[50.0, 50.0]]
capacity_kw = [200.0]
rel_std = 0.0

[ev]
battery_kwh = 36.0
charge_kw = 5.0
charge_eff = 1.0

[hes]
capacity_kwh = 100.0
power_kw = 20.0
eff_charge = 0.82
eff_discharge = 0.62
initial_soc = 0.5

[limits]
g_lo_kw = -5600.0
g_hi_kw = 5600.0

[piles]
per_building = [2]

[optimizer]
paths = 16
eps_stop = 0.05
step_xi = 0.1
max_iter = 30
actions = 2

[fleet]
model = "explicit"

[[fleet.ev]]
segments = [[0, 1, 24.0, 30.0]]

[[fleet.ev]]
segments = [[0, 1, 24.0, 30.0]]
"""


@pytest.fixture
def tiny_toml(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


def test_simulate_rule_writes_artifacts(tiny_toml, tmp_path):
    out = tmp_path / "rule"
    rc = main(["simulate", "--config", str(tiny_toml), "--seed", "0",
               "--mode", "rule", "--out", str(out)])
    assert rc == 0
    for name in ("trace.csv", "scenario.csv", "run.json", "report.txt"):
        assert (out / name).exists()
    summary = json.loads((out / "run.json").read_text())
    assert summary["label"] == "rule"
    assert summary["violation_stages"] == []


def test_simulate_event_writes_policy_and_logs(tiny_toml, tmp_path):
    out = tmp_path / "event"
    rc = main(["simulate", "--config", str(tiny_toml), "--seed", "0",
               "--mode", "event", "--out", str(out)])
    assert rc == 0
    for name in ("policy.ckpt", "iters.csv", "diagnostics.jsonl"):
        assert (out / name).exists()
    head = (out / "iters.csv").read_text().split("\n")[0]
    assert head == "stage,iteration,step,grad_norm,exchange_kw,violation_kw,adjusted,converged_by"


def test_optimize_subcommand_with_overrides(tiny_toml, tmp_path):
    out = tmp_path / "opt"
    rc = main(["optimize", "--config", str(tiny_toml), "--seed", "0",
               "--out", str(out), "--paths", "8", "--max-iter", "10", "--eps", "0.2"])
    assert rc == 0
    assert (out / "policy.ckpt").exists()
    summary = json.loads((out / "run.json").read_text())
    assert summary["iterations"]["max"] <= 10


def test_simulate_event_replays_saved_policy(tiny_toml, tmp_path):
    trained = tmp_path / "trained"
    main(["simulate", "--config", str(tiny_toml), "--seed", "0",
          "--mode", "event", "--out", str(trained)])
    replay = tmp_path / "replay"
    rc = main(["simulate", "--config", str(tiny_toml), "--seed", "0",
               "--mode", "event", "--policy", str(trained / "policy.ckpt"),
               "--out", str(replay)])
    assert rc == 0
    a = json.loads((trained / "run.json").read_text())
    b = json.loads((replay / "run.json").read_text())
    assert b["total_cost_rmb"] == pytest.approx(a["total_cost_rmb"], abs=1e-9)


def test_missing_config_is_exit_2(tmp_path):
    rc = main(["simulate", "--config", str(tmp_path / "nope.toml"), "--seed", "0",
               "--mode", "rule", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_invalid_config_is_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(TINY_TOML.replace("stages = 2", "stages = 3"))
    rc = main(["simulate", "--config", str(bad), "--seed", "0",
               "--mode", "rule", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_reported_infeasibility_is_exit_3(tiny_toml, tmp_path):
    # band tighter than the irreducible load: even alpha = 0 violates
    squeezed = tmp_path / "squeezed.toml"
    squeezed.write_text(TINY_TOML.replace("g_hi_kw = 5600.0", "g_hi_kw = 10.0"))
    rc = main(["simulate", "--config", str(squeezed), "--seed", "0",
               "--mode", "event", "--out", str(tmp_path / "sq")])
    assert rc == 3
    summary = json.loads((tmp_path / "sq" / "run.json").read_text())
    assert summary["infeasible_stages"]


def test_compare_runs_and_hash_guard(tiny_toml, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(tiny_toml), "--seed", "0", "--mode", "rule", "--out", str(a)])
    main(["simulate", "--config", str(tiny_toml), "--seed", "0", "--mode", "event", "--out", str(b)])
    rc = main(["compare", "--runs", str(a), str(b), "--out", str(tmp_path / "cmp")])
    assert rc == 0
    text = (tmp_path / "cmp" / "report.txt").read_text()
    assert "per-stage exchange kW" in text
    capsys.readouterr()

    other = tmp_path / "c"
    main(["simulate", "--config", str(tiny_toml), "--seed", "1", "--mode", "rule", "--out", str(other)])
    rc = main(["compare", "--runs", str(a), str(other)])
    assert rc == 2


def test_dump_policy_prints_nonuniform_cells(tiny_toml, tmp_path, capsys):
    out = tmp_path / "event"
    main(["simulate", "--config", str(tiny_toml), "--seed", "0",
          "--mode", "event", "--out", str(out)])
    capsys.readouterr()
    rc = main(["dump-policy", "--checkpoint", str(out / "policy.ckpt")])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "alpha" in printed
    assert "greedy" in printed


def test_simulate_trace_is_deterministic(tiny_toml, tmp_path):
    runs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        main(["simulate", "--config", str(tiny_toml), "--seed", "0",
              "--mode", "event", "--out", str(out)])
        runs.append((out / "trace.csv").read_bytes())
    assert runs[0] == runs[1]
