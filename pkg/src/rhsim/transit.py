"""Scheduled metro/train/bus operations, boarding, and train-line disruptions."""
from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .network import Layer, MultiModalGraph, TransitLineRef


@dataclass
class TransitConfig:
    capacity_metro: int = 600
    capacity_train: int = 1000
    capacity_bus: int = 80
    line_start_s: float = 0.0    # first departures from both terminals

    def capacity(self, mode: Layer) -> int:
        return {Layer.METRO: self.capacity_metro,
                Layer.TRAIN: self.capacity_train,
                Layer.BUS: self.capacity_bus}[mode]


@dataclass
class DisruptionSpec:
    affected_stations: tuple[int, ...]   # train-layer node ids
    start_s: float = 5400.0
    end_s: float = 9000.0
    response_delay_s: float = 0.0

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.end_s


@dataclass
class TransitVehicle:
    id: int
    line: TransitLineRef
    direction: int               # +1 toward the end of the station tuple
    station_idx: int             # last station reached / being departed
    dist_to_next: float = 0.0    # meters toward the next station
    at_station: bool = True      # dwell step pending
    onboard: dict[int, int] = field(default_factory=dict)  # user -> alight node
    capacity: int = 0
    out_of_service: bool = False

    @property
    def next_station_idx(self) -> int:
        return self.station_idx + self.direction

    def position(self, graph: MultiModalGraph) -> tuple[float, float]:
        a = graph.nodes[self.line.stations[self.station_idx]]
        if self.at_station or self.dist_to_next <= 0:
            return a.x, a.y
        b = graph.nodes[self.line.stations[self.next_station_idx]]
        full = math.hypot(b.x - a.x, b.y - a.y)
        f = 1.0 - self.dist_to_next / full if full > 0 else 1.0
        return a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)


class TransitFleet:
    """Runs every line: headway departures from both terminals, station dwells,
    FIFO boarding up to capacity, and the disruption discharge protocol."""

    def __init__(self, graph: MultiModalGraph, config: TransitConfig,
                 mfd_params=None):
        self.graph = graph
        self.config = config
        self.mfd_params = mfd_params
        self.vehicles: list[TransitVehicle] = []
        self._next_vid = 0
        # (line_id, terminal 0|1) -> next departure time
        self.next_departure: dict[tuple[int, int], float] = {}
        # (line_id, terminal) -> queue of vehicles waiting to turn around
        self.turnaround: dict[tuple[int, int], deque] = defaultdict(deque)
        # (line_id, direction, station_node) -> FIFO [(enqueue order, user, alight)]
        self.waiting: dict[tuple[int, int, int], deque] = defaultdict(deque)
        self.closed_stations: set[int] = set()
        self.suspended_lines: set[int] = set()
        for line in graph.lines:
            for term in (0, 1):
                self.next_departure[(line.id, term)] = config.line_start_s
        self._station_gap: dict[int, list[float]] = {}
        for line in graph.lines:
            pos = [graph.nodes[s] for s in line.stations]
            self._station_gap[line.id] = [
                math.hypot(pos[i + 1].x - pos[i].x, pos[i + 1].y - pos[i].y)
                for i in range(len(pos) - 1)]

    # -- queue interface ------------------------------------------------------

    def enqueue(self, line_id: int, direction: int, station: int, user_id: int,
                alight_station: int) -> None:
        self.waiting[(line_id, direction, station)].append((user_id, alight_station))

    def dequeue_user(self, user_id: int) -> None:
        for q in self.waiting.values():
            for item in list(q):
                if item[0] == user_id:
                    q.remove(item)

    def waiting_count(self) -> int:
        return sum(len(q) for q in self.waiting.values())

    def _speed(self, line: TransitLineRef, veh: TransitVehicle,
               bus_speed_by_zone: np.ndarray | None) -> float:
        if line.mode is Layer.TRAIN:
            return self.mfd_params.v_train if self.mfd_params else 30.0
        if line.mode is Layer.METRO:
            return self.mfd_params.v_metro if self.mfd_params else 13.0
        if bus_speed_by_zone is None:
            return 9.8
        x, y = veh.position(self.graph)
        return float(bus_speed_by_zone[self.graph.zone_of_point(x, y)])

    # -- stepping ---------------------------------------------------------------

    def step(self, t: float, dt: float,
             bus_speed_by_zone: np.ndarray | None = None) -> list[tuple]:
        """Advance all vehicles one step; returns user events:
        ('alight', user, station_node), ('board', user, vehicle_id),
        ('discharge', user, station_node)."""
        events: list[tuple] = []
        self._dispatch(t)
        self._retiring: list[TransitVehicle] = []
        for veh in sorted(self.vehicles, key=lambda v: (v.line.id, v.id)):
            if veh.at_station:
                self._dwell(veh, events)
            else:
                v = self._speed(veh.line, veh, bus_speed_by_zone)
                if veh.dist_to_next <= v * dt + 1e-9:
                    veh.station_idx = veh.next_station_idx
                    veh.dist_to_next = 0.0
                    veh.at_station = True   # exchange happens next step
                else:
                    veh.dist_to_next -= v * dt
        gone = set(id(v) for v in self._retiring)
        if gone:
            self.vehicles = [v for v in self.vehicles if id(v) not in gone]
        return events

    def _dispatch(self, t: float) -> None:
        for line in self.graph.lines:
            if line.id in self.suspended_lines:
                continue
            for term in (0, 1):
                key = (line.id, term)
                while self.next_departure[key] <= t + 1e-9:
                    self.next_departure[key] += line.headway
                    direction = 1 if term == 0 else -1
                    start_idx = 0 if term == 0 else len(line.stations) - 1
                    q = self.turnaround[key]
                    if q:
                        veh = q.popleft()
                        veh.direction = direction
                        veh.station_idx = start_idx
                        veh.at_station = True
                        self.vehicles.append(veh)
                    else:
                        veh = TransitVehicle(
                            id=self._next_vid, line=line, direction=direction,
                            station_idx=start_idx, at_station=True,
                            capacity=self.config.capacity(line.mode))
                        self._next_vid += 1
                        self.vehicles.append(veh)

    def _dwell(self, veh: TransitVehicle, events: list[tuple]) -> None:
        line = veh.line
        station = line.stations[veh.station_idx]
        terminal = veh.station_idx in (0, len(line.stations) - 1)
        if veh.out_of_service:
            if terminal:
                self._retiring.append(veh)
                return
            # discharge everyone at the first station reached, then run empty
            for uid in list(veh.onboard):
                events.append(("discharge", uid, station))
            veh.onboard.clear()
            self._depart(veh)
            return
        # alight users whose leg ends here (everyone at a terminal)
        for uid, alight in list(veh.onboard.items()):
            if alight == station or terminal:
                del veh.onboard[uid]
                events.append(("alight", uid, station))
        # board FIFO up to capacity, unless the station is closed
        if station not in self.closed_stations:
            q = self.waiting[(line.id, veh.direction, station)]
            while q and len(veh.onboard) < veh.capacity:
                uid, alight = q.popleft()
                veh.onboard[uid] = alight
                events.append(("board", uid, veh.id))
        if terminal and veh.next_station_idx not in range(len(line.stations)):
            # wait at the terminal for the next scheduled opposite departure
            term = 0 if veh.station_idx == 0 else 1
            self.turnaround[(line.id, term)].append(veh)
            self._retiring.append(veh)   # re-enters through dispatch
            return
        self._depart(veh)

    def _depart(self, veh: TransitVehicle) -> None:
        veh.at_station = False
        gaps = self._station_gap[veh.line.id]
        idx = veh.station_idx if veh.direction > 0 else veh.station_idx - 1
        veh.dist_to_next = gaps[idx]

    # -- disruption protocol ------------------------------------------------------

    def apply_disruption(self, spec: DisruptionSpec, t: float) -> list[tuple]:
        """Close stations, flag onboard trains for discharge, strand waiters.
        Returns ('stranded_waiting', user, station) events."""
        events: list[tuple] = []
        if self.closed_stations:
            return events   # already applied
        self.closed_stations = set(spec.affected_stations)
        affected_edges = []
        for st in spec.affected_stations:
            affected_edges.extend(self.graph.edges_incident(st, Layer.TRAIN))
        self.graph.deactivate_edges(sorted(set(affected_edges)))
        for line in self.graph.lines:
            if line.mode is Layer.TRAIN and set(line.stations) & self.closed_stations:
                self.suspended_lines.add(line.id)
                for veh in self.vehicles:
                    if veh.line.id == line.id:
                        veh.out_of_service = True
        # users waiting anywhere on suspended lines or at closed stations
        for (line_id, direction, station), q in self.waiting.items():
            if line_id in self.suspended_lines or station in self.closed_stations:
                while q:
                    uid, _ = q.popleft()
                    events.append(("stranded_waiting", uid, station))
        return events

    def lift_disruption(self, spec: DisruptionSpec, t: float) -> None:
        """Reopen stations; suspended lines restart from their terminals at the
        next headway boundary."""
        if not self.closed_stations:
            return
        restored = []
        for st in spec.affected_stations:
            restored.extend(self.graph.edges_incident(st, Layer.TRAIN))
        self.graph.activate_edges(sorted(set(restored)))
        self.closed_stations.clear()
        for line_id in sorted(self.suspended_lines):
            line = self.graph.lines[line_id]
            k = math.ceil((t - self.config.line_start_s) / line.headway)
            restart = self.config.line_start_s + k * line.headway
            for term in (0, 1):
                self.next_departure[(line_id, term)] = restart
                self.turnaround[(line_id, term)].clear()
        self.suspended_lines.clear()

    def counts(self) -> dict[str, int]:
        out = {"onboard": sum(len(v.onboard) for v in self.vehicles),
               "vehicles": len(self.vehicles)}
        return out
