"""System performance F(t) and the vulnerability / adaptability / robustness /
recoverability indicators with their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ResilienceConfig:
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    xi_fraction: float = 0.85          # robustness threshold as share of baseline
    smooth_window: int = 5             # samples, moving average before detection
    recovery_fraction: float = 0.99    # smoothed F >= fraction * baseline
    recovery_sustain: int = 10         # samples the recovery must hold


@dataclass
class PerformanceCurve:
    t: np.ndarray                      # seconds, increasing
    f: np.ndarray
    baseline: float                    # F-bar from a nominal run
    t0: float                          # disruption onset
    td: float | None = None            # low peak (detected if absent)
    tr: float | None = None            # full recovery (detected if absent)
    weights: np.ndarray | None = None  # active-user counts behind each sample
    regular_level: float | None = None  # pre-disruption plateau of F

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.t.shape != self.f.shape or self.t.ndim != 1:
            raise ValueError("curve arrays must be equal-length 1-D")
        if len(self.t) >= 2 and np.any(np.diff(self.t) <= 0):
            raise ValueError("time samples must increase")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.f.shape:
                raise ValueError("weights must match the curve shape")


def performance(baseline: float, waits_by_od: dict) -> float:
    """F(t): baseline travel time minus the demand-weighted mean post-match
    waiting time. Empty table means no active OD pairs, so F = baseline."""
    counts = {od: len(w) for od, w in waits_by_od.items() if len(w) > 0}
    total = sum(counts.values())
    if total == 0:
        return baseline
    weighted = sum((counts[od] / total) * (sum(waits_by_od[od]) / counts[od])
                   for od in counts)
    return baseline - weighted


def _smooth(f: np.ndarray, window: int, weights: np.ndarray | None = None,
            baseline: float = 0.0) -> np.ndarray:
    """Moving average for detection. With per-sample weights (active-user
    counts) the window is pooled so that thin-population spikes cannot
    dominate the dip search; unweighted samples fall back to the baseline."""
    if window <= 1 or len(f) < 2:
        return f.astype(float)
    w = min(window, len(f))
    kernel = np.ones(w)
    if weights is None:
        pad = np.concatenate([np.full(w // 2, f[0]), f,
                              np.full(w - 1 - w // 2, f[-1])])
        return np.convolve(pad, kernel / w, mode="valid")
    gap = baseline - f          # wait mass per sample
    def padded(x, lo, hi):
        return np.concatenate([np.full(w // 2, lo), x, np.full(w - 1 - w // 2, hi)])
    num = np.convolve(padded(gap * weights, 0.0, 0.0), kernel, mode="valid")
    den = np.convolve(padded(weights, 0.0, 0.0), kernel, mode="valid")
    pooled = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return baseline - pooled


def _trapz_window(t: np.ndarray, f: np.ndarray, a: float, b: float) -> float:
    """Trapezoidal integral of the sampled curve over [a, b] with interpolated
    endpoints."""
    if b <= a:
        return 0.0
    inner = (t > a) & (t < b)
    ts = np.concatenate([[a], t[inner], [b]])
    fs = np.concatenate([[np.interp(a, t, f)], f[inner], [np.interp(b, t, f)]])
    return float(np.trapezoid(fs, ts))


def time_below(t: np.ndarray, f: np.ndarray, xi: float, a: float, b: float) -> float:
    """Total time with f < xi inside [a, b]; crossings located by linear
    interpolation, intermittent intervals summed."""
    if b <= a:
        return 0.0
    inner = (t > a) & (t < b)
    ts = np.concatenate([[a], t[inner], [b]])
    fs = np.concatenate([[np.interp(a, t, f)], f[inner], [np.interp(b, t, f)]])
    total = 0.0
    for i in range(len(ts) - 1):
        dt = ts[i + 1] - ts[i]
        f1, f2 = fs[i], fs[i + 1]
        if f1 < xi and f2 < xi:
            total += dt
        elif f1 < xi <= f2:
            total += dt * (xi - f1) / (f2 - f1)
        elif f2 < xi <= f1:
            total += dt * (f1 - xi) / (f1 - f2)
    return total


def detect_key_times(curve: PerformanceCurve, config: ResilienceConfig) -> tuple:
    """(td, tr, flags). The low peak is where smoothed system distress peaks:
    without sample weights that is the argmin of the moving-average F; with
    weights (active-user counts) it is the maximum of windowed wait mass, so a
    couple of late stragglers cannot outvote a crowded dip. Recovery is the
    first sustained return above recovery_fraction * baseline."""
    flags: list[str] = []
    t, f = curve.t, curve.f
    fs = _smooth(f, config.smooth_window, curve.weights, curve.baseline)
    after = t >= curve.t0
    if not after.any():
        return curve.t0, curve.t0, ["no samples after onset"]
    # recovery target: the pre-disruption plateau (the baseline itself when no
    # plateau is given), with a slack of (1 - recovery_fraction) * baseline
    plateau = curve.regular_level if curve.regular_level is not None \
        else curve.baseline
    thr = plateau - (1.0 - config.recovery_fraction) * curve.baseline
    if fs[after].min() >= thr:
        flags.append("no disruption detected")
        return None, None, flags
    idx_after = np.flatnonzero(after)
    if curve.weights is None:
        td_idx = idx_after[int(np.argmin(fs[after]))]
    else:
        w = min(max(config.smooth_window, 1), len(f))
        mass = np.convolve(
            np.pad((curve.baseline - f) * curve.weights,
                   (w // 2, w - 1 - w // 2)),
            np.ones(w), mode="valid")
        td_idx = idx_after[int(np.argmax(mass[after]))]
    td = float(t[td_idx])
    tr = None
    ok = fs >= thr
    for i in range(td_idx + 1, len(t)):
        if ok[i] and ok[i:min(i + config.recovery_sustain, len(t))].all():
            tr = float(t[i])
            break
    if tr is None:
        tr = float(t[-1])
        flags.append("no recovery before horizon")
    return td, tr, flags


def resilience_indicators(curve: PerformanceCurve, config: ResilienceConfig) -> dict:
    """R1 vulnerability, R2 adaptability, R3 robustness, R4 recoverability,
    and the weighted sum R (lower = more resilient)."""
    t0 = curve.t0
    td, tr = curve.td, curve.tr
    flags: list[str] = []
    if td is None or tr is None:
        td, tr, flags = detect_key_times(curve, config)
    if td is None:   # degenerate: curve never dips
        r = {"R1": 0.0, "R2": 0.0, "R3": 1.0, "R4": 0.0}
    else:
        fbar = curve.baseline
        t, f = curve.t, curve.f
        r = {}
        denom1 = fbar * (td - t0)
        r["R1"] = 1.0 - _trapz_window(t, f, t0, td) / denom1 if denom1 > 0 else 0.0
        denom2 = fbar * (tr - td)
        r["R2"] = 1.0 - _trapz_window(t, f, td, tr) / denom2 if denom2 > 0 else 0.0
        span = tr - t0
        xi = config.xi_fraction * fbar
        h_xi = time_below(t, f, xi, t0, tr)
        r["R3"] = 1.0 - h_xi / span if span > 0 else 1.0
        r["R4"] = (tr - td) / span if span > 0 else 0.0
        r["H_xi"] = h_xi
    a1, a2, a3, a4 = config.weights
    r["R"] = a1 * r["R1"] + a2 * r["R2"] + a3 * r["R3"] + a4 * r["R4"]
    r.setdefault("H_xi", 0.0)
    r.update({"t0": t0, "td": td, "tr": tr, "flags": flags})
    return r
