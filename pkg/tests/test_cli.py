import csv
import json
import os

import pytest

from rhsim.cli import (EXIT_CONFIG, EXIT_OK, main)
from rhsim.engine import ScenarioConfig, desk_scenario


@pytest.fixture()
def small_cfg(tmp_path):
    cfg = desk_scenario(strategy="none", seed=1)
    cfg.demand.total_users = 100
    cfg.demand.window_s = 2400.0
    cfg.horizon_s = 3600.0
    cfg.warmup_s = 600.0
    cfg.disruption.start_s, cfg.disruption.end_s = 1200.0, 2100.0
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg.to_dict()))
    return p


def test_run_writes_all_seven_files(small_cfg, tmp_path):
    out = tmp_path / "r1"
    code = main(["run", "--config", str(small_cfg), "--run-dir", str(out)])
    assert code == EXIT_OK
    for name in ("users.csv", "fleet_states.csv", "matches.csv",
                 "performance.csv", "resilience.json", "region_traffic.csv",
                 "manifest.json"):
        assert (out / name).exists(), name


def test_run_same_seed_identical_manifest_hash(small_cfg, tmp_path):
    hashes = []
    for k in (1, 2):
        out = tmp_path / f"r{k}"
        assert main(["run", "--config", str(small_cfg), "--seed", "7",
                     "--run-dir", str(out)]) == EXIT_OK
        man = json.loads((out / "manifest.json").read_text())
        hashes.append(man["config_hash"])
    assert hashes[0] == hashes[1]


def test_missing_config_exits_2_without_outputs(tmp_path):
    out = tmp_path / "never"
    code = main(["run", "--config", str(tmp_path / "nope.json"),
                 "--run-dir", str(out)])
    assert code == EXIT_CONFIG
    assert not out.exists()


def test_bad_strategy_rejected(small_cfg, tmp_path):
    blob = json.loads(small_cfg.read_text())
    blob["strategy"] = "telepathy"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(blob))
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG


def test_marl_requires_checkpoint(small_cfg, tmp_path):
    code = main(["run", "--config", str(small_cfg), "--strategy", "marl",
                 "--run-dir", str(tmp_path / "x")])
    assert code == EXIT_CONFIG


def test_sweep_single_cell_aggregate(small_cfg, tmp_path):
    root = tmp_path / "sweep"
    code = main(["sweep", "--config", str(small_cfg),
                 "--strategies", "none", "--noises", "0", "--delays", "0",
                 "--seeds", "3", "--run-dir", str(root)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(root / "aggregate.csv")))
    assert len(rows) == 1
    assert rows[0]["strategy"] == "none" and rows[0]["seed"] == "3"
    assert float(rows[0]["R"]) > 0


def test_sweep_rerun_identical(small_cfg, tmp_path):
    blobs = []
    for k in (1, 2):
        root = tmp_path / f"s{k}"
        assert main(["sweep", "--config", str(small_cfg),
                     "--strategies", "none,random", "--noises", "0",
                     "--delays", "0", "--seeds", "1",
                     "--run-dir", str(root)]) == EXIT_OK
        blobs.append((root / "aggregate.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_sweep_worker_count_does_not_change_results(small_cfg, tmp_path):
    blobs = []
    for k, workers in ((1, "1"), (2, "2")):
        root = tmp_path / f"w{k}"
        assert main(["sweep", "--config", str(small_cfg),
                     "--strategies", "none,random", "--noises", "0",
                     "--delays", "0", "--seeds", "1", "--workers", workers,
                     "--run-dir", str(root)]) == EXIT_OK
        blobs.append((root / "aggregate.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_train_zero_sessions_checkpoint_is_random_init(small_cfg, tmp_path):
    out = tmp_path / "train"
    code = main(["train", "--config", str(small_cfg), "--sessions", "0",
                 "--run-dir", str(out)])
    assert code == EXIT_OK   # nothing trained, exits cleanly


def test_train_resume_curve_continuous(small_cfg, tmp_path):
    out = tmp_path / "train2"
    assert main(["train", "--config", str(small_cfg), "--sessions", "2",
                 "--checkpoint-every", "1", "--run-dir", str(out)]) == EXIT_OK
    rows1 = list(csv.DictReader(open(out / "training_curve.csv")))
    assert [r["session"] for r in rows1] == ["0", "1"]
    assert main(["train", "--config", str(small_cfg), "--sessions", "4",
                 "--checkpoint-every", "1", "--run-dir", str(out)]) == EXIT_OK
    rows2 = list(csv.DictReader(open(out / "training_curve.csv")))
    assert [r["session"] for r in rows2] == ["0", "1", "2", "3"]
    assert rows2[:2] == rows1


def test_report_lists_runs(small_cfg, tmp_path, capsys):
    out = tmp_path / "r"
    main(["run", "--config", str(small_cfg), "--run-dir", str(out)])
    assert main(["report", str(out)]) == EXIT_OK
    assert "none" in capsys.readouterr().out
