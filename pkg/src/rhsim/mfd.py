"""Trip-based MFD dynamics: accumulation counts, regional speeds, trip advance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Layer, MultiModalGraph


@dataclass
class MfdParams:
    """Exponential (Underwood) speed-accumulation relation per region.

    Speed never reaches zero: it is clamped at `v_min` however large the
    weighted accumulation grows. Critical accumulation scales with the
    road length inside each region.
    """
    v_max_car: float = 14.0        # m/s, cars and RH vehicles
    bus_factor: float = 0.7        # bus speed = factor * car speed
    v_min: float = 1.0             # m/s, gridlock floor; must stay > 0
    critical_per_km: float = 20.0  # vehicles per km of road at the e-fold point
    pce_car: float = 1.0           # passenger-car equivalents
    pce_rh: float = 1.0
    pce_bus: float = 2.0
    v_metro: float = 13.0          # fixed, not MFD-governed
    v_train: float = 30.0

    def __post_init__(self):
        if self.v_min <= 0:
            raise ValueError("v_min must be positive")
        if self.v_max_car < self.v_min:
            raise ValueError("v_max below v_min")

    def critical_accumulation(self, road_length_m: np.ndarray) -> np.ndarray:
        return np.maximum(self.critical_per_km * road_length_m / 1000.0, 1.0)


@dataclass
class RegionAccumulation:
    """Moving-vehicle counts per region for one step."""
    n_car: np.ndarray
    n_bus: np.ndarray
    n_rh: np.ndarray

    def weighted_total(self, params: MfdParams) -> np.ndarray:
        return (params.pce_car * self.n_car + params.pce_bus * self.n_bus
                + params.pce_rh * self.n_rh)


def region_speed(acc: RegionAccumulation, params: MfdParams, n_crit: np.ndarray,
                 vehicle_type: str = "car") -> np.ndarray:
    """Per-region speed for `vehicle_type` in m/s; always positive."""
    total = acc.weighted_total(params)
    v = np.maximum(params.v_max_car * np.exp(-total / n_crit), params.v_min)
    if vehicle_type == "bus":
        return np.maximum(params.bus_factor * v, params.v_min)
    if vehicle_type in ("car", "rh"):
        return v
    raise ValueError(f"not an MFD vehicle type: {vehicle_type}")


@dataclass
class TripProgress:
    """Remaining distance on a node-sequence leg, advanced step by step."""
    nodes: list[int]
    seg_lengths: list[float]
    seg_index: int = 0
    into_segment: float = 0.0

    @property
    def done(self) -> bool:
        return self.seg_index >= len(self.seg_lengths)

    @property
    def remaining(self) -> float:
        if self.done:
            return 0.0
        rest = self.seg_lengths[self.seg_index] - self.into_segment
        return rest + sum(self.seg_lengths[self.seg_index + 1:])

    @property
    def current_node(self) -> int:
        """Last node passed."""
        return self.nodes[min(self.seg_index, len(self.nodes) - 1)]

    @property
    def next_node(self) -> int:
        return self.nodes[min(self.seg_index + 1, len(self.nodes) - 1)]

    def position(self, graph: MultiModalGraph) -> tuple[float, float]:
        if self.done:
            n = graph.nodes[self.nodes[-1]]
            return n.x, n.y
        a = graph.nodes[self.nodes[self.seg_index]]
        b = graph.nodes[self.nodes[self.seg_index + 1]]
        f = self.into_segment / self.seg_lengths[self.seg_index] \
            if self.seg_lengths[self.seg_index] > 0 else 0.0
        return a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)


def advance_trip(progress: TripProgress, speed: float, dt: float) -> float:
    """Advance up to speed*dt along the leg, rolling over segment boundaries.

    Returns the distance actually covered (less than speed*dt only when the
    leg completes mid-step)."""
    if speed <= 0 or dt <= 0:
        raise ValueError("advance_trip needs positive speed and dt")
    budget = speed * dt
    covered = 0.0
    while budget > 1e-12 and not progress.done:
        seg_rest = progress.seg_lengths[progress.seg_index] - progress.into_segment
        step = min(seg_rest, budget)
        progress.into_segment += step
        covered += step
        budget -= step
        if progress.into_segment >= progress.seg_lengths[progress.seg_index] - 1e-9:
            progress.seg_index += 1
            progress.into_segment = 0.0
    return covered


def update_accumulations(graph: MultiModalGraph, rh_positions, bus_positions,
                         background_cars: np.ndarray) -> RegionAccumulation:
    """Exact recount of moving vehicles per region.

    `rh_positions` / `bus_positions` are (x, y) pairs of vehicles that are
    moving this step; parked or dwelling vehicles must not be passed in.
    Background cars enter as a fixed per-region count."""
    nz = graph.n_zones
    n_rh = np.zeros(nz)
    n_bus = np.zeros(nz)
    for x, y in rh_positions:
        n_rh[graph.zone_of_point(x, y)] += 1
    for x, y in bus_positions:
        n_bus[graph.zone_of_point(x, y)] += 1
    n_car = np.asarray(background_cars, dtype=float)
    if n_car.shape != (nz,):
        raise ValueError(f"background car counts must have shape ({nz},)")
    return RegionAccumulation(n_car=n_car, n_bus=n_bus, n_rh=n_rh)
