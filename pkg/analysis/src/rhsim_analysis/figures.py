"""Paper-style figures from run bundles. Every figure embeds the manifest
hashes of its inputs and writes a data sidecar CSV next to the image."""
from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .bundle import RunBundle

STRATEGY_COLORS = {
    "none": "black", "random": "tab:gray", "centralized": "tab:red",
    "decentralized": "tab:blue", "marl": "tab:green",
}


def _hash_note(bundles) -> str:
    return "runs: " + ", ".join(sorted({b.config_hash for b in bundles}))


def _finish(fig, axes_note: str, bundles, out_path: str, sidecar: pd.DataFrame):
    fig.text(0.01, 0.01, axes_note + " | " + _hash_note(bundles),
             fontsize=5, color="gray")
    meta = {"Title": axes_note, "Description": _hash_note(bundles)}
    fig.savefig(out_path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    sidecar.to_csv(os.path.splitext(out_path)[0] + "_data.csv", index=False)
    return out_path


def plot_performance(bundles: list[RunBundle], out_path: str,
                     xi_fraction: float = 0.85) -> str | None:
    """Overlaid F(t) per strategy with the robustness threshold and the
    disruption window shaded."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    rows = []
    plotted = []
    window = None
    for b in bundles:
        perf = b.frame("performance")
        if perf is None or perf.empty:
            continue
        baseline = b.manifest.get("baseline_travel_time_s")
        t_h = perf["t"] / 3600.0
        ax.plot(t_h, perf["F"], label=b.label,
                color=STRATEGY_COLORS.get(b.strategy), lw=1.0, alpha=0.9)
        plotted.append(b)
        window = window or b.disruption_window()
        if baseline:
            ax.axhline(xi_fraction * baseline, ls=":", lw=0.8,
                       color=STRATEGY_COLORS.get(b.strategy, "gray"))
        rows.append(pd.DataFrame({"t": perf["t"], "F": perf["F"],
                                  "strategy": b.strategy, "seed": b.seed}))
    if not plotted:
        return None
    if window:
        ax.axvspan(window[0] / 3600.0, window[1] / 3600.0, color="red",
                   alpha=0.12, label="disruption")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("system performance F(t) [s]")
    ax.legend(fontsize=7)
    return _finish(fig, "system performance under disruption", plotted,
                   out_path, pd.concat(rows))


def plot_fleet_states(bundle: RunBundle, out_path: str) -> str | None:
    """Stacked areas of idle / relocating / pickup / serving counts."""
    fs = bundle.frame("fleet_states")
    if fs is None or fs.empty:
        return None
    fig, ax = plt.subplots(figsize=(8, 4.5))
    t_h = fs["t"] / 3600.0
    parts = ["serving", "pickup", "relocating", "idle"]
    colors = ["tab:red", "tab:green", "tab:cyan", "tab:blue"]
    ax.stackplot(t_h, [fs[p] for p in parts], labels=parts, colors=colors,
                 alpha=0.85)
    window = bundle.disruption_window()
    if window:
        ax.axvline(window[0] / 3600.0, color="k", ls="--", lw=0.8)
        ax.axvline(window[1] / 3600.0, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("vehicles")
    ax.legend(loc="upper left", fontsize=7)
    return _finish(fig, f"fleet states: {bundle.label}", [bundle],
                   out_path, fs)


def plot_resilience_bars(bundles: list[RunBundle], out_path: str) -> str | None:
    """Stacked R1..R4 per run, grouped by strategy."""
    rows = []
    for b in bundles:
        r = b.resilience()
        if not r or "R1" not in r:
            continue
        rows.append({"label": b.label, "strategy": b.strategy,
                     "R1": r["R1"], "R2": r["R2"], "R3": r["R3"],
                     "R4": r["R4"], "R": r["R"]})
    if not rows:
        return None
    df = pd.DataFrame(rows).sort_values(["strategy", "label"])
    fig, ax = plt.subplots(figsize=(max(6, len(df) * 0.9), 4.5))
    bottom = np.zeros(len(df))
    for comp, color in [("R1", "tab:red"), ("R2", "tab:orange"),
                        ("R3", "tab:blue"), ("R4", "tab:green")]:
        ax.bar(df["label"], df[comp], bottom=bottom, label=comp, color=color)
        bottom += df[comp].to_numpy()
    ax.set_ylabel("resilience index components")
    ax.tick_params(axis="x", rotation=30, labelsize=7)
    ax.legend(fontsize=7)
    used = [b for b in bundles if b.resilience() and "R1" in b.resilience()]
    return _finish(fig, "resilience indicators", used, out_path, df)


def upper_envelope(dist_m: np.ndarray, time_s: np.ndarray,
                   n_bins: int = 24) -> pd.DataFrame:
    """Fastest-trip frontier: per distance bin, the minimum travel time, made
    monotone non-decreasing in distance (a longer trip cannot beat the best
    shorter one)."""
    ok = (dist_m > 0) & (time_s > 0)
    d, t = dist_m[ok], time_s[ok]
    if len(d) == 0:
        return pd.DataFrame(columns=["dist_m", "time_s"])
    edges = np.linspace(0, d.max() * 1.001, n_bins + 1)
    rows = []
    for i in range(n_bins):
        sel = (d >= edges[i]) & (d < edges[i + 1])
        if sel.any():
            rows.append((edges[i + 1], t[sel].min()))
    frontier = pd.DataFrame(rows, columns=["dist_m", "time_s"])
    frontier["time_s"] = np.maximum.accumulate(frontier["time_s"])
    return frontier


def plot_tt_vs_distance(bundles: list[RunBundle], out_path: str) -> str | None:
    """Scatter of completed trips with per-strategy fastest-trip frontiers and
    a 60 km/h reference slope."""
    fig, ax = plt.subplots(figsize=(8, 5))
    plotted = []
    frames = []
    max_d = 0.0
    for b in bundles:
        users = b.frame("users")
        if users is None or users.empty:
            continue
        done = users[(users["completed"] == 1) & (users["total_dist_m"] > 0)]
        if done.empty:
            continue
        color = STRATEGY_COLORS.get(b.strategy)
        ax.scatter(done["total_dist_m"] / 1000.0, done["total_time_s"] / 60.0,
                   s=4, alpha=0.25, color=color)
        fr = upper_envelope(done["total_dist_m"].to_numpy(),
                            done["total_time_s"].to_numpy())
        ax.plot(fr["dist_m"] / 1000.0, fr["time_s"] / 60.0, color=color,
                lw=1.6, label=f"{b.strategy} frontier")
        fr["strategy"] = b.strategy
        fr["seed"] = b.seed
        frames.append(fr)
        plotted.append(b)
        max_d = max(max_d, done["total_dist_m"].max() / 1000.0)
    if not plotted:
        return None
    ref = np.linspace(0, max_d, 50)
    ax.plot(ref, ref / 60.0 * 60.0, "k--", lw=0.8, label="60 km/h")
    ax.set_xlabel("total travel distance [km]")
    ax.set_ylabel("total travel time [min]")
    ax.legend(fontsize=7)
    return _finish(fig, "travel time vs distance", plotted, out_path,
                   pd.concat(frames) if frames else pd.DataFrame())


def plot_noise_delay_contour(aggregate_csv: str, out_path: str,
                             strategy: str = "centralized") -> str | None:
    """R-index contour over the prediction-noise x response-delay grid from a
    sweep aggregate file."""
    if not os.path.exists(aggregate_csv):
        return None
    df = pd.read_csv(aggregate_csv)
    df = df[df["strategy"] == strategy]
    if df.empty:
        return None
    pivot = df.groupby(["delay", "p"])["R"].mean().unstack()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    X, Y = np.meshgrid(pivot.columns.to_numpy(), pivot.index.to_numpy())
    cs = ax.contourf(X, Y, pivot.to_numpy(), levels=12, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="R index")
    ax.set_xlabel("prediction noise p")
    ax.set_ylabel("response delay [min]")
    ax.set_title(f"{strategy}: resilience index", fontsize=9)
    fig.text(0.01, 0.01, f"source: {aggregate_csv}", fontsize=5, color="gray")
    fig.savefig(out_path, bbox_inches="tight")
    plt.close(fig)
    pivot.to_csv(os.path.splitext(out_path)[0] + "_data.csv")
    return out_path
