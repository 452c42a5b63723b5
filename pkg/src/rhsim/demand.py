"""OD demand generation, candidate multi-modal paths, and logit path choice."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .network import Layer, MultiModalGraph

WALK_SPEED = 1.4  # m/s

# Fixed menu of mode combinations searched per OD pair. Each maps a layer to
# the travel mode used on it; connection edges are always walkable.
MODE_COMBOS: dict[str, dict[Layer, str]] = {
    "rh_only": {Layer.VEHICLE: "rh"},
    "pt_walk": {Layer.TRAIN: "train", Layer.METRO: "metro", Layer.BUS: "bus",
                Layer.VEHICLE: "walk"},
    "train_rh": {Layer.TRAIN: "train", Layer.VEHICLE: "rh"},
    "metro_bus_walk": {Layer.METRO: "metro", Layer.BUS: "bus",
                       Layer.VEHICLE: "walk"},
    "bus_rh": {Layer.BUS: "bus", Layer.VEHICLE: "rh"},
}
RH_COMBOS = {"rh_only", "train_rh", "bus_rh"}
# last-resort option when no combination from the menu is feasible
WALK_FALLBACK = {Layer.VEHICLE: "walk"}


class UserState(Enum):
    NOT_DEPARTED = "not_departed"
    CHOOSING_PATH = "choosing_path"
    WAITING_FOR_MODE = "waiting_for_mode"
    WALKING = "walking"
    ONBOARD = "onboard"
    IN_RH_VEHICLE = "in_rh_vehicle"
    COMPLETED = "completed"
    ABANDONED = "abandoned"


@dataclass
class Leg:
    mode: str                 # 'rh' | 'walk' | 'train' | 'metro' | 'bus'
    nodes: list[int]
    edges: list[int]
    length: float             # meters (0 for pure transfer hops)
    duration_est: float       # seconds, planning estimate
    line_id: int | None = None


@dataclass
class CandidatePath:
    combo: str
    nodes: list[int]
    edges: list[int]
    legs: list[Leg]
    utility_min: float        # V_i, deterministic utility in minutes

    @property
    def modes(self) -> str:
        seen = []
        for leg in self.legs:
            if leg.mode != "walk" and (not seen or seen[-1] != leg.mode):
                seen.append(leg.mode)
        return "+".join(seen) if seen else "walk"


@dataclass
class UserAgent:
    id: int
    origin: int
    destination: int
    depart_s: float
    uses_rh: bool = True          # has access to ride-hailing (market share)
    state: UserState = UserState.NOT_DEPARTED
    path: CandidatePath | None = None
    leg_index: int = 0
    current_node: int = -1
    wait_started: float = -1.0
    match_time: float = -1.0        # set when matched with an RH vehicle
    replans: int = 0
    total_wait_s: float = 0.0
    total_dist_m: float = 0.0
    transfers: int = 0
    completed_at: float = -1.0
    leg_timer: float = 0.0              # walking countdown, engine-managed
    riding_vehicle: int | None = None
    stranded_area: int | None = None    # operator's surge attribution

    def __post_init__(self):
        if self.current_node < 0:
            self.current_node = self.origin

    @property
    def current_leg(self) -> Leg | None:
        if self.path and self.leg_index < len(self.path.legs):
            return self.path.legs[self.leg_index]
        return None


@dataclass
class DemandConfig:
    total_users: int = 5729
    window_s: float = 12600.0           # departure window; mean gap = window/users
    origin_zone_weights: np.ndarray | None = None
    dest_zone_weights: np.ndarray | None = None
    rh_market_share: float = 0.10       # operator-side estimate of RH uptake
    rh_access_share: float | None = None  # None: everyone may hail; else gate
    stranded_rh_access: bool = True     # stranded users may hail regardless
    theta_per_min: float = 0.1          # logit dispersion on utilities in minutes
    match_timeout_s: float = 600.0
    max_replans: int = 3
    transfer_penalty_s: float = 0.0

    @property
    def mean_gap_s(self) -> float:
        return self.window_s / max(self.total_users, 1)


def class_zone_weights(graph: MultiModalGraph, by_class: dict[str, float]) -> np.ndarray:
    w = np.array([by_class.get(c, 0.0) for c in graph.zone_classes], dtype=float)
    if w.sum() <= 0:
        raise ValueError("zone weights sum to zero")
    return w / w.sum()


def generate_demand(graph: MultiModalGraph, config: DemandConfig,
                    rng: np.random.Generator) -> list[UserAgent]:
    """Exponential departure gaps; origins/destinations drawn zone-first, then
    uniform node within the zone. Deterministic under a fixed generator."""
    ow = config.origin_zone_weights
    dw = config.dest_zone_weights
    if ow is None:
        ow = np.ones(graph.n_zones) / graph.n_zones
    if dw is None:
        dw = np.ones(graph.n_zones) / graph.n_zones
    ow = np.asarray(ow, dtype=float)
    dw = np.asarray(dw, dtype=float)
    nodes_by_zone: dict[int, list[int]] = {}
    for nid in graph.vehicle_nodes:
        nodes_by_zone.setdefault(int(graph.node_zone[nid]), []).append(nid)
    # zones without road nodes cannot host demand
    ow = ow * np.array([1.0 if z in nodes_by_zone else 0.0 for z in range(graph.n_zones)])
    dw = dw * np.array([1.0 if z in nodes_by_zone else 0.0 for z in range(graph.n_zones)])
    ow, dw = ow / ow.sum(), dw / dw.sum()

    n = config.total_users
    times = np.cumsum(rng.exponential(config.mean_gap_s, size=n))
    cum_o, cum_d = np.cumsum(ow), np.cumsum(dw)
    o_zones = np.searchsorted(cum_o, rng.random(n), side="right")
    d_zones = np.searchsorted(cum_d, rng.random(n), side="right")
    o_pick, d_pick = rng.random(n), rng.random(n)
    access = rng.random(n)
    has_rh = access < config.rh_access_share \
        if config.rh_access_share is not None else np.ones(n, dtype=bool)

    def node_in(z, u):
        pool = nodes_by_zone[int(z)]
        return pool[min(int(u * len(pool)), len(pool) - 1)]

    users = []
    for uid in range(n):
        onode = node_in(o_zones[uid], o_pick[uid])
        dnode = node_in(d_zones[uid], d_pick[uid])
        while dnode == onode:
            dz = np.searchsorted(cum_d, rng.random(), side="right")
            dnode = node_in(dz, rng.random())
        users.append(UserAgent(id=uid, origin=onode, destination=dnode,
                               depart_s=round(float(times[uid]), 3),
                               uses_rh=bool(has_rh[uid])))
    return users


def save_demand_csv(users: list[UserAgent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "origin_node", "dest_node", "depart_s", "uses_rh"])
        for u in users:
            w.writerow([u.id, u.origin, u.destination, f"{u.depart_s:.3f}",
                        int(u.uses_rh)])


def load_demand_csv(path) -> list[UserAgent]:
    users = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            users.append(UserAgent(id=int(row["user_id"]),
                                   origin=int(row["origin_node"]),
                                   destination=int(row["dest_node"]),
                                   depart_s=float(row["depart_s"]),
                                   uses_rh=bool(int(row.get("uses_rh", 1)))))
    return users


# ---------------------------------------------------------------------------
# path planning
# ---------------------------------------------------------------------------

class PathPlanner:
    """Per-combo shortest paths with caching keyed on the active-edge mask.

    Planning uses free-flow speeds; realized speeds come from the MFD during
    simulation."""

    def __init__(self, graph: MultiModalGraph, plan_speeds: dict[str, float] | None = None,
                 transfer_penalty_s: float = 0.0):
        self.graph = graph
        sp = {"rh": 14.0, "walk": WALK_SPEED, "bus": 9.8, "metro": 13.0, "train": 30.0}
        if plan_speeds:
            sp.update(plan_speeds)
        self.speeds = sp
        self.transfer_penalty_s = transfer_penalty_s
        self.combos = dict(MODE_COMBOS)
        self.combos["walk_fallback"] = WALK_FALLBACK
        self._weights: dict[str, np.ndarray] = {}
        self._lookup: dict[tuple[str, int], dict] = {}
        self._sssp: dict[tuple[str, int, int], tuple] = {}
        for combo, layer_modes in self.combos.items():
            w = np.full(len(graph.edges), np.inf)
            for e in graph.edges:
                if e.layer is Layer.CONNECTION:
                    w[e.id] = e.base_time
                elif e.layer in layer_modes:
                    w[e.id] = e.length / sp[layer_modes[e.layer]]
            self._weights[combo] = w

    def _edge_lookup(self, combo: str) -> dict:
        key = (combo, self.graph.mask_version)
        if key not in self._lookup:
            w = self._weights[combo]
            lut: dict[tuple[int, int], int] = {}
            for e in self.graph.edges:
                if not np.isfinite(w[e.id]) or not self.graph.active[e.id]:
                    continue
                for pair in ((e.u, e.v), (e.v, e.u)):
                    old = lut.get(pair)
                    if old is None or (w[e.id], e.id) < (w[old], old):
                        lut[pair] = e.id
            if len(self._lookup) > 64:
                self._lookup.clear()
            self._lookup[key] = lut
        return self._lookup[key]

    def _from_source(self, combo: str, src: int):
        key = (combo, self.graph.mask_version, src)
        if key not in self._sssp:
            m = self.graph.csr(self._weights[combo])
            dist, pred = _csgraph_dijkstra(m, directed=False, indices=src,
                                           return_predecessors=True)
            if len(self._sssp) > 50_000:
                self._sssp.clear()
            self._sssp[key] = (dist, pred)
        return self._sssp[key]

    def route(self, combo: str, src: int, dst: int):
        """(cost_s, node_list, edge_list) or None if unreachable."""
        dist, pred = self._from_source(combo, src)
        if not np.isfinite(dist[dst]):
            return None
        nodes = [dst]
        cur = dst
        while cur != src:
            cur = int(pred[cur])
            nodes.append(cur)
        nodes.reverse()
        lut = self._edge_lookup(combo)
        edges = [lut[(a, b)] for a, b in zip(nodes, nodes[1:])]
        return float(dist[dst]), nodes, edges

    def decompose(self, combo: str, nodes: list[int], edges: list[int]) -> list[Leg]:
        """Split an edge path into mode legs; consecutive same-line transit
        edges merge into a single riding leg."""
        g = self.graph
        layer_modes = self.combos[combo]
        legs: list[Leg] = []
        for idx, eid in enumerate(edges):
            e = g.edges[eid]
            if e.layer is Layer.CONNECTION:
                mode, line = "walk", None
                dur = e.base_time
            elif e.layer is Layer.VEHICLE:
                mode, line = layer_modes[Layer.VEHICLE], None
                dur = e.length / self.speeds[mode]
            else:
                mode, line = layer_modes[e.layer], e.line_id
                dur = e.length / self.speeds[mode]
            u, v = nodes[idx], nodes[idx + 1]
            if legs and legs[-1].mode == mode and legs[-1].line_id == line:
                leg = legs[-1]
                leg.nodes.append(v)
                leg.edges.append(eid)
                leg.length += e.length
                leg.duration_est += dur
            else:
                legs.append(Leg(mode, [u, v], [eid], e.length, dur, line))
        return legs


def candidate_paths(graph: MultiModalGraph, planner: PathPlanner,
                    origin: int, destination: int, k: int = 5,
                    allow_rh: bool = True) -> list[CandidatePath]:
    """Up to k distinct candidates, one shortest path per mode combination.

    Users without ride-hailing access skip the RH combinations; if nothing in
    the menu is feasible a plain walking path is offered as a last resort."""
    if origin == destination:
        raise ValueError("origin equals destination")
    out: list[CandidatePath] = []
    seen: set[tuple] = set()

    def admit(combo, got):
        cost_s, nodes, edges = got
        sig = tuple(edges)
        if sig in seen:
            return
        seen.add(sig)
        legs = planner.decompose(combo, nodes, edges)
        rides = [l for l in legs if l.mode != "walk"]
        penalty = planner.transfer_penalty_s * max(len(rides) - 1, 0)
        out.append(CandidatePath(combo, nodes, edges, legs,
                                 utility_min=(cost_s + penalty) / 60.0))

    for combo, layer_modes in MODE_COMBOS.items():
        if not allow_rh and combo in RH_COMBOS:
            continue
        got = planner.route(combo, origin, destination)
        if got is None:
            continue
        transit_wanted = [l for l in layer_modes if l is not Layer.VEHICLE]
        if transit_wanted and not any(graph.edges[e].layer in transit_wanted
                                      for e in got[2]):
            continue  # combination degenerated to no transit use: not a PT option
        admit(combo, got)
    if not out:
        got = planner.route("walk_fallback", origin, destination)
        if got is not None:
            admit("walk_fallback", got)
    out.sort(key=lambda c: c.utility_min)
    return out[:k]


def choice_probabilities(utilities_min: np.ndarray, theta_per_min: float) -> np.ndarray:
    """Logit P_i = exp(-theta U_i) / sum_j exp(-theta U_j), shift-stable."""
    u = -theta_per_min * np.asarray(utilities_min, dtype=float)
    u -= u.max()
    e = np.exp(u)
    return e / e.sum()


def choose_path(candidates: list[CandidatePath], theta_per_min: float,
                rng: np.random.Generator) -> CandidatePath:
    if not candidates:
        raise ValueError("no candidates to choose from")
    p = choice_probabilities(np.array([c.utility_min for c in candidates]),
                             theta_per_min)
    return candidates[int(rng.choice(len(candidates), p=p))]


def replan(user: UserAgent, graph: MultiModalGraph, planner: PathPlanner,
           config: DemandConfig, t: float, rng: np.random.Generator) -> bool:
    """Pick a fresh path from the user's current node; False means abandoned."""
    user.replans += 1
    if user.replans > config.max_replans:
        user.state = UserState.ABANDONED
        user.path = None
        return False
    if user.current_node == user.destination:
        user.state = UserState.COMPLETED
        user.completed_at = t
        return True
    cands = candidate_paths(graph, planner, user.current_node, user.destination,
                            allow_rh=user.uses_rh)
    if not cands:
        user.state = UserState.ABANDONED
        user.path = None
        return False
    user.path = choose_path(cands, config.theta_per_min, rng)
    user.leg_index = 0
    user.wait_started = t
    user.state = UserState.CHOOSING_PATH
    return True
