import hashlib
import json
import os

import numpy as np
import pandas as pd
import pytest

from rhsim_analysis import (RunBundle, load_bundles, plot_fleet_states,
                            plot_noise_delay_contour, plot_performance,
                            plot_resilience_bars, plot_tt_vs_distance,
                            upper_envelope)


def synth_run(tmp_path, name="run1", strategy="centralized", seed=0,
              with_disruption=True, n_users=200):
    """Fabricate a run directory following the documented output schema."""
    d = tmp_path / name
    d.mkdir()
    rng = np.random.default_rng(seed)
    cfg = {"strategy": strategy, "seed": seed,
           "operator": {"noise_p": 0.1},
           "disruption": {"stations": [[0, 1]], "start_s": 2400.0,
                          "end_s": 4200.0, "response_delay_s": 0.0}
           if with_disruption else None}
    h = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
    (d / "manifest.json").write_text(json.dumps(
        {"format": 1, "config_hash": h, "seed": seed, "config": cfg,
         "baseline_travel_time_s": 2000.0}))
    t = np.arange(0, 7200, 30.0)
    dip = np.where((t > 2400) & (t < 5000),
                   300 * np.sin((t - 2400) / 2600 * np.pi), 0.0)
    pd.DataFrame({"t": t, "F": 2000.0 - dip}).to_csv(d / "performance.csv",
                                                     index=False)
    fleet = pd.DataFrame({
        "t": t,
        "idle": 60 - (dip / 10).astype(int),
        "relocating": 10, "pickup": 10,
        "serving": 20 + (dip / 10).astype(int)})
    fleet.to_csv(d / "fleet_states.csv", index=False)
    dist = rng.uniform(500, 15000, n_users)
    speed = rng.uniform(3, 13, n_users)
    pd.DataFrame({
        "user_id": np.arange(n_users),
        "total_time_s": dist / speed,
        "total_dist_m": dist,
        "transfers": rng.integers(0, 3, n_users),
        "waits_s": rng.uniform(0, 600, n_users),
        "modes": ["rh"] * n_users,
        "completed": 1}).to_csv(d / "users.csv", index=False)
    pd.DataFrame({"t": [], "user_id": [], "veh_id": [], "wait_s": [],
                  "pickup_dist_m": []}).to_csv(d / "matches.csv", index=False)
    (d / "resilience.json").write_text(json.dumps(
        {"R1": 0.15, "R2": 0.2, "R3": 0.4, "R4": 0.35, "R": 1.1,
         "t0": 2400.0, "td": 3600.0, "tr": 5100.0}))
    return d


def test_bundle_reads_and_verifies_hash(tmp_path):
    d = synth_run(tmp_path)
    b = RunBundle(str(d))
    assert b.verify_hash()
    assert b.strategy == "centralized"
    assert b.frame("performance") is not None
    assert b.disruption_window() == (2400.0, 4200.0)


def test_bundle_missing_file_warns_not_fatal(tmp_path):
    d = synth_run(tmp_path)
    os.remove(d / "users.csv")
    b = RunBundle(str(d))
    with pytest.warns(UserWarning):
        assert b.frame("users") is None


def test_bundle_never_mutates_run_dir(tmp_path):
    d = synth_run(tmp_path)
    before = {p.name: p.stat().st_mtime_ns for p in d.iterdir()}
    b = RunBundle(str(d))
    plot_performance([b], str(tmp_path / "perf.svg"))
    plot_tt_vs_distance([b], str(tmp_path / "tt.svg"))
    after = {p.name: p.stat().st_mtime_ns for p in d.iterdir()}
    assert before == after


def test_performance_plot_with_window_and_hash(tmp_path):
    bundles = [RunBundle(str(synth_run(tmp_path, f"r{i}", s, i)))
               for i, s in enumerate(["none", "centralized"])]
    out = plot_performance(bundles, str(tmp_path / "perf.svg"))
    assert out and os.path.exists(out)
    blob = open(out).read()
    for b in bundles:
        assert b.config_hash in blob
    assert os.path.exists(tmp_path / "perf_data.csv")


def test_fleet_plot(tmp_path):
    b = RunBundle(str(synth_run(tmp_path)))
    out = plot_fleet_states(b, str(tmp_path / "fleet.svg"))
    assert out and os.path.exists(out)
    assert b.config_hash in open(out).read()


def test_resilience_bars(tmp_path):
    bundles = [RunBundle(str(synth_run(tmp_path, f"rr{i}", s, i)))
               for i, s in enumerate(["none", "random", "marl"])]
    out = plot_resilience_bars(bundles, str(tmp_path / "res.svg"))
    assert out and os.path.exists(out)
    side = pd.read_csv(tmp_path / "res_data.csv")
    assert len(side) == 3


def test_frontier_monotone_property():
    rng = np.random.default_rng(0)
    d = rng.uniform(100, 20000, 500)
    t = d / rng.uniform(2, 16, 500)
    fr = upper_envelope(d, t)
    assert len(fr) > 3
    assert (np.diff(fr["time_s"]) >= -1e-9).all()


def test_tt_distance_single_user_one_dot(tmp_path):
    d = synth_run(tmp_path, n_users=1)
    out = plot_tt_vs_distance([RunBundle(str(d))], str(tmp_path / "tt.svg"))
    assert out and os.path.exists(out)


def test_contour_from_aggregate(tmp_path):
    rows = []
    for p in (0, 0.1, 0.2):
        for delay in (0, 10, 20, 30):
            for seed in (0, 1):
                rows.append({"strategy": "centralized", "p": p, "delay": delay,
                             "seed": seed, "R1": 0.1, "R2": 0.2, "R3": 0.4,
                             "R4": 0.3, "R": 1.0 + p + delay / 100,
                             "mean_wait_s": 300.0})
    agg = tmp_path / "aggregate.csv"
    pd.DataFrame(rows).to_csv(agg, index=False)
    out = plot_noise_delay_contour(str(agg), str(tmp_path / "contour.svg"))
    assert out and os.path.exists(out)
    pivot = pd.read_csv(tmp_path / "contour_data.csv", index_col=0)
    assert pivot.shape == (4, 3)


def test_empty_series_skipped(tmp_path):
    d = synth_run(tmp_path)
    pd.DataFrame({"t": [], "F": []}).to_csv(d / "performance.csv", index=False)
    out = plot_performance([RunBundle(str(d))], str(tmp_path / "p.svg"))
    assert out is None
