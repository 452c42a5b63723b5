"""Deterministic time-stepped simulation loop wiring network, demand, transit,
ride-hailing, strategies, and metric recording together."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .demand import (DemandConfig, PathPlanner, UserAgent, UserState,
                     candidate_paths, choose_path, class_zone_weights,
                     generate_demand, replan)
from .marl import MaddpgConfig, MaddpgPolicy, noise_schedule, observation_vector
from .marl import reward as marl_reward
from .mfd import (MfdParams, TripProgress, advance_trip, region_speed,
                  update_accumulations)
from .network import (Layer, MultiModalGraph, build_manhattan_grid,
                      default_grid_config, desk_grid_config,
                      road_distances_from)
from .resilience import (PerformanceCurve, ResilienceConfig, performance,
                         resilience_indicators)
from .ridehail import (DemandHistory, EconomicsConfig, OperatorConfig,
                       RhVehicle, RideRequest, VehicleState, area_mean_fare,
                       driver_utility, match_requests, max_offer_count,
                       operator_select, predict_demand, relocation_offer_count,
                       step_vehicle_state, survival_probability)
from .strategies import STRATEGIES, RebalanceDecision, StrategyContext
from .transit import DisruptionSpec, TransitConfig, TransitFleet

GRID_PRESETS = {
    "paper-30km": default_grid_config,
    "desk-12km": desk_grid_config,
}

OUTPUT_FILES = ["users.csv", "fleet_states.csv", "matches.csv",
                "performance.csv", "resilience.json", "region_traffic.csv",
                "manifest.json"]


class ConfigError(Exception):
    pass


class InvariantError(Exception):
    pass


@dataclass
class DisruptionConfig:
    """Disruption window plus the affected stations given as (line, station)
    indices into the grid's line list; resolved to node ids at build time."""
    stations: list[tuple[int, int]]
    start_s: float
    end_s: float
    response_delay_s: float = 0.0


@dataclass
class ScenarioConfig:
    grid_preset: str = "desk-12km"
    network_fixture: str | None = None
    fleet_size: int = 100
    strategy: str = "none"
    horizon_s: float = 7200.0
    warmup_s: float = 1800.0
    dt_s: float = 30.0
    seed: int = 0
    demand: DemandConfig = field(default_factory=lambda: DemandConfig(
        total_users=1000, window_s=5400.0))
    mfd: MfdParams = field(default_factory=MfdParams)
    transit: TransitConfig = field(default_factory=TransitConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    econ: EconomicsConfig = field(default_factory=EconomicsConfig)
    marl: MaddpgConfig = field(default_factory=MaddpgConfig)
    resilience: ResilienceConfig = field(default_factory=ResilienceConfig)
    disruption: DisruptionConfig | None = None
    origin_class_weights: dict = field(default_factory=lambda: {
        "urban": 6.0, "intermediate": 2.0, "suburban": 1.0})
    dest_class_weights: dict = field(default_factory=lambda: {
        "urban": 0.5, "intermediate": 1.5, "suburban": 4.0})
    background_cars: dict = field(default_factory=lambda: {
        "urban": 60.0, "intermediate": 30.0, "suburban": 10.0})
    depot_capacity: int | None = None   # override every depot when set
    baseline_travel_time_s: float | None = None
    record_region_traffic: bool = True
    debug_checks: bool = False

    def validate(self) -> list[str]:
        errors = []
        if self.grid_preset not in GRID_PRESETS and not self.network_fixture:
            errors.append(f"unknown grid preset {self.grid_preset!r}")
        if self.strategy not in list(STRATEGIES) + ["marl"]:
            errors.append(f"unknown strategy {self.strategy!r}")
        if self.warmup_s >= self.horizon_s:
            errors.append("warmup must end before the horizon")
        if self.dt_s <= 0:
            errors.append("dt must be positive")
        if self.disruption is not None:
            d = self.disruption
            if not (0 <= d.start_s < d.end_s <= self.horizon_s):
                errors.append("disruption window must fit inside the horizon")
        return errors

    def to_dict(self) -> dict:
        def scrub(x):
            if isinstance(x, dict):
                return {k: scrub(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [scrub(v) for v in x]
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, (np.floating, np.integer)):
                return x.item()
            return x
        return scrub(asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        for key, typ in (("demand", DemandConfig), ("mfd", MfdParams),
                         ("transit", TransitConfig), ("operator", OperatorConfig),
                         ("econ", EconomicsConfig), ("marl", MaddpgConfig),
                         ("resilience", ResilienceConfig)):
            if key in d and isinstance(d[key], dict):
                sub = d[key]
                if key == "marl" and "hidden" in sub:
                    sub["hidden"] = tuple(sub["hidden"])
                if key == "resilience" and "weights" in sub:
                    sub["weights"] = tuple(sub["weights"])
                d[key] = typ(**sub)
        if d.get("disruption") and isinstance(d["disruption"], dict):
            dd = d["disruption"]
            dd["stations"] = [tuple(s) for s in dd["stations"]]
            d["disruption"] = DisruptionConfig(**dd)
        return cls(**d)

    @classmethod
    def load_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def desk_scenario(strategy: str = "none", seed: int = 0,
                  noise_p: float = 0.0, response_delay_s: float = 0.0,
                  disruption: bool = True) -> ScenarioConfig:
    """The scaled 12 km scenario: 1000 users, 100 vehicles, 2 h horizon with a
    30 min train disruption. RH market share runs higher than the full-size
    instance so the small fleet sees comparable load."""
    cfg = ScenarioConfig(grid_preset="desk-12km", fleet_size=100,
                         strategy=strategy, seed=seed,
                         horizon_s=7200.0, warmup_s=1500.0)
    cfg.demand = DemandConfig(total_users=1000, window_s=5400.0,
                              rh_market_share=0.30, rh_access_share=0.30,
                              match_timeout_s=900.0)
    cfg.operator = OperatorConfig(market_share=0.30, noise_p=noise_p,
                                  response_delay_s=response_delay_s)
    cfg.resilience = ResilienceConfig(smooth_window=11)
    cfg.depot_capacity = 10
    # vacant times on the small fleet run long; keep the reward sigmoid in its
    # responsive band
    cfg.marl = MaddpgConfig(vacant_threshold_s=900.0)
    cfg.origin_class_weights = {"urban": 10.0, "intermediate": 2.0,
                                "suburban": 1.0}
    cfg.background_cars = {"urban": 150.0, "intermediate": 60.0,
                           "suburban": 40.0}
    if disruption:
        cfg.disruption = DisruptionConfig(
            stations=[(0, 1), (0, 2), (0, 3)], start_s=2400.0, end_s=4200.0,
            response_delay_s=response_delay_s)
    return cfg


def paper_scenario(strategy: str = "none", seed: int = 0,
                   noise_p: float = 0.0, response_delay_s: float = 0.0,
                   disruption: bool = True) -> ScenarioConfig:
    """The full 30 km instance: 5729 users, 600 vehicles, 4 h horizon,
    1 h disruption closing seven train stations."""
    cfg = ScenarioConfig(grid_preset="paper-30km", fleet_size=600,
                         strategy=strategy, seed=seed,
                         horizon_s=14400.0, warmup_s=3600.0)
    cfg.demand = DemandConfig(total_users=5729, window_s=12600.0,
                              rh_market_share=0.10, rh_access_share=0.10)
    cfg.operator = OperatorConfig(market_share=0.10, noise_p=noise_p,
                                  response_delay_s=response_delay_s)
    if disruption:
        cfg.disruption = DisruptionConfig(
            stations=[(0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2), (1, 3)],
            start_s=5400.0, end_s=9000.0, response_delay_s=response_delay_s)
    return cfg


@dataclass
class RunReport:
    config: ScenarioConfig
    baseline_travel_time_s: float
    mean_wait_s: float                  # request -> pickup, completed pickups
    mean_postmatch_wait_s: float        # match -> pickup
    completed_users: int
    abandoned_users: int
    mean_travel_time_s: float
    resilience: dict | None
    fleet_series: dict
    performance: PerformanceCurve | None
    run_dir: str | None = None
    marl_session_rewards: list = field(default_factory=list)


class Simulation:
    """One deterministic scenario run. External callers interact only between
    steps; all phase ordering is fixed."""

    def __init__(self, config: ScenarioConfig,
                 marl_policy: MaddpgPolicy | None = None,
                 marl_train: bool = False, marl_sigma: float = 0.0):
        errors = config.validate()
        if errors:
            raise ConfigError("; ".join(errors))
        self.cfg = config
        self.graph = self._build_graph(config)
        if config.depot_capacity is not None:
            for d in self.graph.depots:
                d.capacity = config.depot_capacity
        ss = np.random.SeedSequence(config.seed)
        keys = ["demand", "choice", "noise", "strategy", "explore", "train",
                "fleet"]
        self.rng = {k: np.random.default_rng(s)
                    for k, s in zip(keys, ss.spawn(len(keys)))}
        g = self.graph
        dm = config.demand
        if dm.origin_zone_weights is None:
            dm = replace(dm, origin_zone_weights=class_zone_weights(
                g, config.origin_class_weights))
        if dm.dest_zone_weights is None:
            dm = replace(dm, dest_zone_weights=class_zone_weights(
                g, config.dest_class_weights))
        self.demand_cfg = dm
        self.users = generate_demand(g, dm, self.rng["demand"])
        self.planner = PathPlanner(g, {
            "rh": config.mfd.v_max_car,
            "bus": config.mfd.bus_factor * config.mfd.v_max_car,
            "metro": config.mfd.v_metro, "train": config.mfd.v_train,
        }, transfer_penalty_s=dm.transfer_penalty_s)
        self.transit = TransitFleet(g, config.transit, config.mfd)
        self.disruption = self._resolve_disruption(config)
        self.vehicles = self._spawn_fleet(config.fleet_size)
        self.depot_nodes = [d.node for d in g.depots]
        self._depot_node_set = set(self.depot_nodes)
        self._depot_node_area = {d.node: d.id for d in g.depots}
        self.area_of_node = {}
        for d in g.depots:
            for n in d.service_area:
                self.area_of_node[n] = d.id
        self.depot_dist = road_distances_from(g, self.depot_nodes,
                                              respect_mask=False)
        self.gbar = np.array([
            area_mean_fare(self.depot_dist[i, sorted(d.service_area)], config.econ)
            for i, d in enumerate(g.depots)])
        self.station_area = self._station_areas()
        self.pt_near_depot = self._pt_stations_near_depots(radius_m=1000.0)
        self.background = np.array([config.background_cars.get(c, 0.0)
                                    for c in g.zone_classes])
        self.n_crit = config.mfd.critical_accumulation(g.road_length_by_zone())
        self.history = DemandHistory(len(g.depots), self._window_prior(),
                                     config.operator)
        self._dep_windows = self._departures_by_window()
        # mutable state
        self.t = 0.0
        self.step_idx = 0
        self._next_user = 0
        self.choosing: list[int] = []
        self.requests: dict[int, RideRequest] = {}
        self.window_stats: dict[int, dict] = {
            d.id: {"k": 0.0, "k_hat": 0, "k_max": 0, "d": 0, "q": 0.0,
                   "p_khat": 0.5, "p_kmax": 0.5, "g": 0.0}
            for d in g.depots}
        self._window_requests = np.zeros(len(g.depots))
        self.stranded_open = np.zeros(len(g.depots))
        self._disruption_on = False
        self.car_speed = np.full(g.n_zones, config.mfd.v_max_car)
        self.bus_speed = np.full(g.n_zones,
                                 config.mfd.bus_factor * config.mfd.v_max_car)
        # recorders
        self.fleet_rows: list[tuple] = []
        self.match_rows: list[tuple] = []
        self.stranded_rows: list[tuple] = []
        self.rebalance_rows: list[tuple] = []
        self.region_rows: list[tuple] = []
        self.wait_series: list[float] = []
        self.wait_counts: list[int] = []
        self.postmatch_waits: list[float] = []
        self.prematch_waits: list[float] = []
        # marl runtime
        self.marl_policy = marl_policy
        self.marl_train = marl_train
        self.marl_sigma = marl_sigma
        self.needs_action: set[int] = set(v.id for v in self.vehicles)
        self.pending: dict[int, dict] = {}
        self.session_rewards: list[float] = []

    # -- construction helpers ---------------------------------------------------

    @staticmethod
    def _build_graph(config: ScenarioConfig) -> MultiModalGraph:
        if config.network_fixture:
            return MultiModalGraph.load_json(config.network_fixture)
        return build_manhattan_grid(GRID_PRESETS[config.grid_preset]())

    def _resolve_disruption(self, config: ScenarioConfig) -> DisruptionSpec | None:
        if config.disruption is None:
            return None
        nodes = []
        for line_idx, st_idx in config.disruption.stations:
            try:
                nodes.append(self.graph.lines[line_idx].stations[st_idx])
            except IndexError:
                raise ConfigError(
                    f"disruption station ({line_idx},{st_idx}) not in grid")
        return DisruptionSpec(affected_stations=tuple(nodes),
                              start_s=config.disruption.start_s,
                              end_s=config.disruption.end_s,
                              response_delay_s=config.disruption.response_delay_s)

    def _spawn_fleet(self, n: int) -> list[RhVehicle]:
        """Uniform spread over road nodes: the warm-up lets each strategy shape
        its own spatial distribution."""
        road = self.graph.vehicle_nodes
        picks = self.rng["fleet"].integers(0, len(road), size=n)
        out = []
        for i in range(n):
            node = road[int(picks[i])]
            nd = self.graph.nodes[node]
            out.append(RhVehicle(id=i, node=node, x=nd.x, y=nd.y))
        return out

    def _station_areas(self) -> dict[int, int]:
        """Transit station node -> service area of its road position."""
        out = {}
        for line in self.graph.lines:
            for st in line.stations:
                sn = self.graph.nodes[st]
                road = min(self.graph.vehicle_nodes,
                           key=lambda n: (self.graph.nodes[n].x - sn.x) ** 2
                           + (self.graph.nodes[n].y - sn.y) ** 2)
                out[st] = self.area_of_node[road]
        return out

    def _pt_stations_near_depots(self, radius_m: float) -> list[list[int]]:
        out = []
        for d in self.graph.depots:
            dn = self.graph.nodes[d.node]
            near = []
            for line in self.graph.lines:
                for st in line.stations:
                    sn = self.graph.nodes[st]
                    if math.hypot(sn.x - dn.x, sn.y - dn.y) <= radius_m:
                        near.append(st)
            out.append(near)
        return out

    def _window_prior(self) -> np.ndarray:
        """Analytic expected RH requests per area per prediction window."""
        g = self.graph
        dm = self.demand_cfg
        w = np.asarray(dm.origin_zone_weights, dtype=float)
        nodes_per_zone = np.bincount(g.node_zone[g.vehicle_nodes],
                                     minlength=g.n_zones)
        p_area = np.zeros(len(g.depots))
        for d in g.depots:
            for n in d.service_area:
                z = g.node_zone[n]
                if nodes_per_zone[z] > 0:
                    p_area[d.id] += w[z] / nodes_per_zone[z]
        rate = dm.total_users / dm.window_s
        return self.cfg.operator.market_share * rate \
            * self.cfg.operator.window_s * p_area

    def _departures_by_window(self) -> np.ndarray:
        """Scheduled departures per (window, area): the operator's knowledge."""
        win = self.cfg.operator.window_s
        n_win = int(self.cfg.horizon_s // win) + 2
        out = np.zeros((n_win, len(self.graph.depots)))
        for u in self.users:
            k = int(u.depart_s // win)
            if k < n_win:
                out[k, self.area_of_node[u.origin]] += 1
        return out

    # -- public API ----------------------------------------------------------------

    def run(self) -> None:
        steps = int(round(self.cfg.horizon_s / self.cfg.dt_s))
        for _ in range(steps):
            self.step()

    def step(self) -> None:
        t, dt = self.t, self.cfg.dt_s
        self._phase_departures(t)
        self._phase_path_choice(t)
        self._phase_disruption(t)
        self._phase_transit(t, dt)
        self._phase_ridehail(t, dt)
        self._phase_speeds(t)
        self._phase_movement(t, dt)
        self._phase_record(t)
        if self.cfg.debug_checks:
            self._check_invariants()
        self.t = round(self.t + dt, 6)
        self.step_idx += 1

    # -- phases ---------------------------------------------------------------------

    def _phase_departures(self, t: float) -> None:
        while (self._next_user < len(self.users)
               and self.users[self._next_user].depart_s <= t):
            u = self.users[self._next_user]
            self._next_user += 1
            if u.depart_s > self.cfg.horizon_s:
                break
            u.state = UserState.CHOOSING_PATH
            self.choosing.append(u.id)

    def _phase_path_choice(self, t: float) -> None:
        for uid in sorted(self.choosing):
            u = self.users[uid]
            if u.state is not UserState.CHOOSING_PATH:
                continue
            cands = candidate_paths(self.graph, self.planner,
                                    u.current_node, u.destination,
                                    allow_rh=u.uses_rh)
            if not cands:
                u.state = UserState.ABANDONED
                continue
            u.path = choose_path(cands, self.demand_cfg.theta_per_min,
                                 self.rng["choice"])
            u.leg_index = 0
            self._enter_leg(u, t)
        self.choosing.clear()

    def _enter_leg(self, u: UserAgent, t: float) -> None:
        leg = u.current_leg
        if leg is None:
            self._complete_user(u, t)
            return
        if leg.mode == "walk":
            u.state = UserState.WALKING
            u.leg_timer = leg.duration_est
        elif leg.mode == "rh":
            u.state = UserState.WAITING_FOR_MODE
            u.wait_started = t
            u.match_time = -1.0
            node = leg.nodes[0]
            nd = self.graph.nodes[node]
            self.requests[u.id] = RideRequest(u.id, node, nd.x, nd.y, t)
            self._window_requests[self.area_of_node[node]] += 1
        else:
            u.state = UserState.WAITING_FOR_MODE
            u.wait_started = t
            line_id = leg.line_id
            line = self.graph.lines[line_id]
            board, alight = leg.nodes[0], leg.nodes[-1]
            direction = 1 if line.stations.index(board) < \
                line.stations.index(alight) else -1
            if board in self.transit.closed_stations:
                self._strand(u, board, t, "closed station on arrival")
                return
            self.transit.enqueue(line_id, direction, board, u.id, alight)

    def _complete_user(self, u: UserAgent, t: float) -> None:
        u.state = UserState.COMPLETED
        u.completed_at = t
        self._clear_stranded(u)
        if u.current_node != u.destination:
            raise InvariantError(
                f"user {u.id} completed away from destination at t={t}")

    def _clear_stranded(self, u: UserAgent) -> None:
        if u.stranded_area is not None:
            self.stranded_open[u.stranded_area] -= 1
            u.stranded_area = None

    def _strand(self, u: UserAgent, station: int, t: float, cause: str) -> None:
        u.current_node = station
        self.stranded_rows.append((t, u.id, station, cause))
        if self.disruption and self.disruption.active(t):
            area = self.station_area.get(station)
            if area is not None:
                self._clear_stranded(u)
                self.stranded_open[area] += 1
                u.stranded_area = area
            if self.demand_cfg.stranded_rh_access:
                u.uses_rh = True
        if u.wait_started >= 0:
            u.total_wait_s += max(t - u.wait_started, 0.0)
        replan(u, self.graph, self.planner, self.demand_cfg, t,
               self.rng["choice"])
        if u.state is UserState.CHOOSING_PATH:
            self._enter_leg(u, t)
        elif u.state in (UserState.ABANDONED, UserState.COMPLETED):
            self._clear_stranded(u)

    def _phase_disruption(self, t: float) -> None:
        if self.disruption is None:
            return
        if self.disruption.active(t) and not self._disruption_on:
            self._disruption_on = True
            events = self.transit.apply_disruption(self.disruption, t)
            for kind, uid, station in events:
                u = self.users[uid]
                self._strand(u, station, t, "waiting at closed station")
        elif t >= self.disruption.end_s and self._disruption_on:
            self._disruption_on = False
            self.transit.lift_disruption(self.disruption, t)

    def _phase_transit(self, t: float, dt: float) -> None:
        events = self.transit.step(t, dt, self.bus_speed)
        for ev in events:
            kind, uid, info = ev
            u = self.users[uid]
            if kind == "board":
                u.state = UserState.ONBOARD
                u.total_wait_s += max(t - u.wait_started, 0.0)
                u.wait_started = -1.0
                self._clear_stranded(u)
            elif kind == "alight":
                leg = u.current_leg
                u.state = UserState.WAITING_FOR_MODE
                u.current_node = info
                if leg is not None and info == leg.nodes[-1]:
                    u.total_dist_m += leg.length
                    u.transfers += 1
                    u.leg_index += 1
                    self._enter_leg(u, t)
                else:
                    self._strand(u, info, t, "ride cut short")
            elif kind == "discharge":
                u.state = UserState.WAITING_FOR_MODE
                self._strand(u, info, t, "train taken out of service")

    def _phase_ridehail(self, t: float, dt: float) -> None:
        win = self.cfg.operator.window_s
        boundary = self.step_idx % max(int(win // dt), 1) == 0
        if boundary:
            self._operator_update(t)
            if self.cfg.strategy in ("random", "centralized", "decentralized"):
                self._apply_decision(self._run_strategy(t), t)
        if self.cfg.strategy == "marl" and self.marl_policy is not None:
            self._marl_act(t)
        self._match_phase(t)
        self._timeout_phase(t)

    def _operator_update(self, t: float) -> None:
        win = self.cfg.operator.window_s
        k_idx = int(t // win)
        if k_idx > 0:   # previous window realized counts feed the history
            for aid in range(len(self.graph.depots)):
                self.history.record(aid, int(self._window_requests[aid]))
        self._window_requests[:] = 0.0
        op = self.cfg.operator
        informed = (self.disruption is not None and self._disruption_on
                    and t >= self.disruption.start_s + op.response_delay_s)
        for d in self.graph.depots:
            stats = self.window_stats[d.id]
            k_reg = op.market_share * (
                self._dep_windows[k_idx, d.id]
                if k_idx < len(self._dep_windows) else 0.0)
            surge = int(self.stranded_open[d.id]) if informed else 0
            mu, sigma = self.history.mu_sigma(d.id)
            # prediction noise applies to the surge-augmented expectation and
            # to the operator's stranded-count estimate itself
            k_hat = predict_demand(k_reg + surge, op.noise_p, self.rng["noise"])
            surge_hat = predict_demand(surge, op.noise_p, self.rng["noise"]) \
                if surge > 0 else 0
            k_max = max_offer_count(mu, sigma, op.threshold)
            offers = relocation_offer_count(k_hat, mu, sigma, op.threshold,
                                            surge=surge_hat)
            stats.update({
                "k": k_reg + surge, "k_hat": k_hat, "k_max": k_max, "d": offers,
                "q": k_hat,
                "p_khat": survival_probability(k_hat, mu, sigma),
                "p_kmax": survival_probability(k_max, mu, sigma),
            })
            stats["g"] = self.gbar[d.id] * max(stats["p_khat"], stats["p_kmax"])

    def _vacant_per_area(self) -> np.ndarray:
        """Vacant supply attributable to each area: idle vehicles in the area
        plus vehicles relocating toward its depot."""
        out = np.zeros(len(self.graph.depots))
        for v in self.vehicles:
            if v.state is VehicleState.IDLE:
                out[self.area_of_node[v.node]] += 1
            elif v.state is VehicleState.RELOCATING and v.depot_id is not None:
                out[v.depot_id] += 1
        return out

    def _parked_per_depot(self) -> np.ndarray:
        """Occupied parking: idle at the depot node plus inbound relocations.
        Depot vacancy (capacity minus this) caps new offers."""
        out = np.zeros(len(self.graph.depots))
        for v in self.vehicles:
            if v.state is VehicleState.IDLE and v.node in self._depot_node_area:
                out[self._depot_node_area[v.node]] += 1
            elif v.state is VehicleState.RELOCATING and v.depot_id is not None:
                out[v.depot_id] += 1
        return out

    def _run_strategy(self, t: float) -> RebalanceDecision:
        g = self.graph
        idle = sorted(v.id for v in self.vehicles
                      if v.state is VehicleState.IDLE)
        if not idle:
            return RebalanceDecision()
        present = self._parked_per_depot()
        caps = np.array([d.capacity for d in g.depots], dtype=float)
        vacancy = np.maximum(caps - present, 0.0)
        if self.cfg.strategy == "random":
            slots = vacancy
        else:
            offers = np.array([self.window_stats[d.id]["d"] for d in g.depots],
                              dtype=float)
            slots = np.minimum(offers, vacancy)
        dist = np.array([[self.depot_dist[a, self.vehicles[v].node]
                          for a in range(len(g.depots))] for v in idle])
        mu_s = dist / self.cfg.mfd.v_max_car
        op = self.cfg.operator
        u_o = np.zeros(len(g.depots))
        for a, dep in enumerate(g.depots):
            stats = self.window_stats[dep.id]
            u_o[a], _, _ = operator_select(
                idle, dist[:, a], self.cfg.mfd.v_max_car, op.rho,
                vacancy=int(vacancy[a]), offers=int(stats["d"]),
                expected_requests=stats["q"], present=int(present[a]),
                rng=self.rng["strategy"])
        u_v = np.empty((len(idle), len(g.depots)))
        for a, dep in enumerate(g.depots):
            stats = self.window_stats[dep.id]
            for i in range(len(idle)):
                u_v[i, a] = driver_utility(self.gbar[a], stats["p_khat"],
                                           stats["p_kmax"], dist[i, a],
                                           self.cfg.econ)
        ctx = StrategyContext(depot_ids=[d.id for d in g.depots],
                              idle_ids=idle, slots=slots.astype(int),
                              dist_m=dist, utility_operator=u_o,
                              utility_driver=u_v, arrival_mu_s=mu_s,
                              rho=op.rho)
        return STRATEGIES[self.cfg.strategy](ctx, self.rng["strategy"])

    def _apply_decision(self, decision: RebalanceDecision, t: float) -> None:
        for vid in sorted(decision.assignments):
            depot_id = decision.assignments[vid]
            veh = self.vehicles[vid]
            target = self.graph.depots[depot_id].node
            if target == veh.node:
                continue
            step_vehicle_state(veh, "offer_accepted", depot_id=depot_id)
            self._set_route(veh, target)
            self.rebalance_rows.append((t, vid, depot_id, self.cfg.strategy))

    def _set_route(self, veh: RhVehicle, target: int) -> None:
        from .network import shortest_path
        p = shortest_path(self.graph, veh.node, target, layers=[Layer.VEHICLE],
                          respect_mask=False)
        if p is None:
            raise InvariantError(f"vehicle {veh.id} cannot reach node {target}")
        lengths = [self.graph.edges[e].length for e in p.edges]
        veh.trip = TripProgress(nodes=p.nodes, seg_lengths=lengths)

    # -- marl ------------------------------------------------------------------------

    def _build_observation(self, veh: RhVehicle) -> np.ndarray:
        g = self.graph
        n_d = len(g.depots)
        relocated = np.zeros(n_d)
        for v in self.vehicles:
            if v.state is VehicleState.RELOCATING and v.depot_id is not None:
                relocated[v.depot_id] += 1
            elif v.state is VehicleState.IDLE and v.node in self._depot_node_set:
                relocated[self._depot_node_area[v.node]] += 1
        pt = np.array([sum(1 for st in near
                           if st not in self.transit.closed_stations)
                       for near in self.pt_near_depot], dtype=float)
        gains = np.array([self.window_stats[d.id]["g"] for d in g.depots])
        vacant = self._vacant_per_area()
        gap = np.array([self.window_stats[d.id]["q"] for d in g.depots]) - vacant
        radius = self.cfg.marl.local_radius_m
        n_local = sum(1 for v in self.vehicles
                      if v.id != veh.id and v.state is VehicleState.IDLE
                      and math.hypot(v.x - veh.x, v.y - veh.y) <= radius)
        raw = observation_vector(gains, relocated, pt, gap, n_local)
        return self.marl_policy.observe(raw, update_norm=self.marl_train)

    def _marl_act(self, t: float) -> None:
        pol = self.marl_policy
        acting = sorted(vid for vid in self.needs_action
                        if self.vehicles[vid].state is VehicleState.IDLE)
        if not acting:
            return
        present = self._parked_per_depot()
        caps = np.array([d.capacity for d in self.graph.depots], dtype=float)
        vacancy = np.maximum(caps - present, 0.0)
        for vid in acting:
            veh = self.vehicles[vid]
            obs = self._build_observation(veh)
            if self.marl_train and vid in self.pending \
                    and self.pending[vid].get("r") is not None:
                p = self.pending.pop(vid)
                pol.buffer.insert(p["s"], p["a"], p["r"], obs)
                self.session_rewards.append(p["r"])
                pol.maybe_train(self.rng["train"])
            a, choice = pol.act(obs, self.marl_sigma if self.marl_train else 0.0,
                                self.rng["explore"])
            depot_idx = choice - 1
            if depot_idx >= 0 and vacancy[depot_idx] > 0 \
                    and self.graph.depots[depot_idx].node != veh.node:
                vacancy[depot_idx] -= 1
                step_vehicle_state(veh, "offer_accepted", depot_id=depot_idx)
                self._set_route(veh, self.graph.depots[depot_idx].node)
                self.rebalance_rows.append((t, vid, depot_idx, "marl"))
            if self.marl_train:
                self.pending[vid] = {"s": obs, "a": a, "r": None,
                                     "vacant_from": veh.vacant_since}
            self.needs_action.discard(vid)

    def flush_marl_episode(self) -> None:
        """Close open experiences at episode end (truncation bootstrap)."""
        if not (self.marl_train and self.marl_policy):
            return
        for vid, p in sorted(self.pending.items()):
            veh = self.vehicles[vid]
            r = p["r"]
            if r is None:
                r = marl_reward(self.t - p["vacant_from"],
                                self.cfg.marl.vacant_threshold_s,
                                self.cfg.marl.reward_scale,
                                self.cfg.marl.reward_slope_per_min)
            obs = self._build_observation(veh)
            self.marl_policy.buffer.insert(p["s"], p["a"], r, obs)
            self.session_rewards.append(r)
            self.marl_policy.maybe_train(self.rng["train"])
        self.pending.clear()

    # -- matching / movement ------------------------------------------------------------

    def _match_phase(self, t: float) -> None:
        if not self.requests:
            return
        got = match_requests(list(self.requests.values()), self.vehicles,
                             self.cfg.operator.matching_radius_m)
        for uid, vid, dist in got:
            u = self.users[uid]
            veh = self.vehicles[vid]
            if self.marl_train and self.marl_policy and vid in self.pending \
                    and self.pending[vid]["r"] is None:
                self.pending[vid]["r"] = marl_reward(
                    t - veh.vacant_since, self.cfg.marl.vacant_threshold_s,
                    self.cfg.marl.reward_scale,
                    self.cfg.marl.reward_slope_per_min)
            step_vehicle_state(veh, "matched", user_id=uid)
            self._route_to(veh, u.current_node)
            u.match_time = t
            self._clear_stranded(u)
            del self.requests[uid]
            self.match_rows.append((t, uid, vid, t - u.wait_started, dist))
            self.prematch_waits.append(t - u.wait_started)

    def _route_to(self, veh: RhVehicle, target: int) -> None:
        """Route from the vehicle's position; a mid-edge vehicle first finishes
        its current segment (no mid-block U-turns)."""
        if veh.trip is not None and not veh.trip.done \
                and veh.trip.into_segment > 1e-9:
            trip = veh.trip
            nxt = trip.nodes[trip.seg_index + 1]
            from .network import shortest_path
            p = shortest_path(self.graph, nxt, target, layers=[Layer.VEHICLE],
                              respect_mask=False)
            if p is None:
                raise InvariantError(f"vehicle {veh.id} cut off from {target}")
            veh.trip = TripProgress(
                nodes=[trip.nodes[trip.seg_index]] + p.nodes,
                seg_lengths=[trip.seg_lengths[trip.seg_index]]
                + [self.graph.edges[e].length for e in p.edges],
                seg_index=0, into_segment=trip.into_segment)
        else:
            self._set_route(veh, target)

    def _timeout_phase(self, t: float) -> None:
        timeout = self.demand_cfg.match_timeout_s
        for uid in sorted(self.requests):
            u = self.users[uid]
            if u.match_time < 0 and t - u.wait_started >= timeout:
                del self.requests[uid]
                u.total_wait_s += t - u.wait_started
                replan(u, self.graph, self.planner, self.demand_cfg, t,
                       self.rng["choice"])
                if u.state is UserState.CHOOSING_PATH:
                    self._enter_leg(u, t)
                elif u.state is UserState.ABANDONED:
                    self._clear_stranded(u)
        # transit waiters re-plan too
        for (line_id, direction, station), q in list(self.transit.waiting.items()):
            for uid, _alight in list(q):
                u = self.users[uid]
                if u.wait_started >= 0 and t - u.wait_started >= timeout:
                    q.remove((uid, _alight))
                    u.total_wait_s += t - u.wait_started
                    u.current_node = station
                    replan(u, self.graph, self.planner, self.demand_cfg, t,
                           self.rng["choice"])
                    if u.state is UserState.CHOOSING_PATH:
                        self._enter_leg(u, t)
                    elif u.state is UserState.ABANDONED:
                        self._clear_stranded(u)

    def _phase_speeds(self, t: float) -> None:
        rh_pos = [v.trip.position(self.graph) for v in self.vehicles
                  if v.state is not VehicleState.IDLE and v.trip is not None
                  and not v.trip.done]
        bus_pos = []
        for tv in self.transit.vehicles:
            if tv.line.mode is Layer.BUS and not tv.at_station:
                bus_pos.append(tv.position(self.graph))
        acc = update_accumulations(self.graph, rh_pos, bus_pos, self.background)
        self.car_speed = region_speed(acc, self.cfg.mfd, self.n_crit, "car")
        self.bus_speed = region_speed(acc, self.cfg.mfd, self.n_crit, "bus")
        self._last_acc = acc

    def _phase_movement(self, t: float, dt: float) -> None:
        for veh in self.vehicles:
            if veh.trip is None or veh.state is VehicleState.IDLE:
                continue
            zone = self.graph.zone_of_point(veh.x, veh.y)
            speed = float(self.car_speed[zone])
            advance_trip(veh.trip, speed, dt)
            veh.x, veh.y = veh.trip.position(self.graph)
            veh.node = veh.trip.current_node
            if veh.trip.done:
                veh.node = veh.trip.nodes[-1]
                self._vehicle_arrival(veh, t)
        for u in self.users:
            if u.state is UserState.WALKING:
                u.leg_timer -= dt
                if u.leg_timer <= 1e-9:
                    leg = u.current_leg
                    u.current_node = leg.nodes[-1]
                    u.total_dist_m += leg.length
                    u.leg_index += 1
                    self._enter_leg(u, t)
            elif u.state is UserState.IN_RH_VEHICLE:
                veh = self.vehicles[u.riding_vehicle]
                u.current_node = veh.node

    def _vehicle_arrival(self, veh: RhVehicle, t: float) -> None:
        veh.trip = None
        if veh.state is VehicleState.RELOCATING:
            step_vehicle_state(veh, "depot_arrived")
        elif veh.state is VehicleState.PICKUP:
            u = self.users[veh.user_id]
            step_vehicle_state(veh, "picked_up")
            u.state = UserState.IN_RH_VEHICLE
            u.riding_vehicle = veh.id
            if u.match_time >= 0:
                self.postmatch_waits.append(t - u.match_time)
                u.total_wait_s += t - u.match_time
            u.wait_started = -1.0
            u.match_time = -1.0
            self._route_to(veh, u.current_leg.nodes[-1])
        elif veh.state is VehicleState.SERVING:
            uid = veh.user_id
            step_vehicle_state(veh, "dropped_off", t=t)
            self.needs_action.add(veh.id)
            u = self.users[uid]
            leg = u.current_leg
            u.current_node = leg.nodes[-1]
            u.total_dist_m += leg.length
            u.transfers += 1
            u.riding_vehicle = None
            u.leg_index += 1
            self._enter_leg(u, t)

    def _phase_record(self, t: float) -> None:
        counts = {s: 0 for s in VehicleState}
        for v in self.vehicles:
            counts[v.state] += 1
        self.fleet_rows.append((t, counts[VehicleState.IDLE],
                                counts[VehicleState.RELOCATING],
                                counts[VehicleState.PICKUP],
                                counts[VehicleState.SERVING]))
        waits_by_od = defaultdict(list)
        for u in self.users:
            # everyone currently waiting on the RH service, queued or matched
            if u.state is UserState.WAITING_FOR_MODE and u.wait_started >= 0 \
                    and (u.id in self.requests or u.match_time >= 0):
                od = (int(self.graph.node_zone[u.origin]),
                      int(self.graph.node_zone[u.destination]))
                waits_by_od[od].append(t - u.wait_started)
        # F(t) = baseline - weighted wait; store the wait term, F comes later
        self.wait_series.append(-performance(0.0, waits_by_od))
        self.wait_counts.append(sum(len(v) for v in waits_by_od.values()))
        if self.cfg.record_region_traffic and hasattr(self, "_last_acc"):
            acc = self._last_acc
            for z in range(self.graph.n_zones):
                self.region_rows.append(
                    (z, t, acc.n_car[z], acc.n_bus[z], acc.n_rh[z],
                     self.car_speed[z], self.bus_speed[z]))

    # -- invariants ---------------------------------------------------------------------

    def _check_invariants(self) -> None:
        states = defaultdict(int)
        for u in self.users:
            states[u.state] += 1
        if sum(states.values()) != len(self.users):
            raise InvariantError("user conservation violated")
        counts = defaultdict(int)
        for v in self.vehicles:
            counts[v.state] += 1
        if sum(counts.values()) != self.cfg.fleet_size:
            raise InvariantError("fleet partition violated")
        for tv in self.transit.vehicles:
            if len(tv.onboard) > tv.capacity:
                raise InvariantError("transit capacity exceeded")

    # -- summary -------------------------------------------------------------------------

    def summary(self) -> dict:
        done = [u for u in self.users if u.state is UserState.COMPLETED]
        abandoned = [u for u in self.users if u.state is UserState.ABANDONED]
        tt = [u.completed_at - u.depart_s for u in done]
        return {
            "completed": len(done),
            "abandoned": len(abandoned),
            "mean_travel_time_s": float(np.mean(tt)) if tt else 0.0,
            "mean_wait_s": float(np.mean(self.prematch_waits))
            if self.prematch_waits else 0.0,
            "mean_postmatch_wait_s": float(np.mean(self.postmatch_waits))
            if self.postmatch_waits else 0.0,
        }


# ---------------------------------------------------------------------------
# run orchestration and output files
# ---------------------------------------------------------------------------

def run(config: ScenarioConfig, run_dir: str | None = None,
        marl_policy: MaddpgPolicy | None = None) -> RunReport:
    """Execute a scenario (computing the nominal baseline first when a
    disruption is present) and optionally write the output bundle."""
    baseline = config.baseline_travel_time_s
    if baseline is None and config.disruption is not None:
        nominal = replace(config, disruption=None, record_region_traffic=False,
                          baseline_travel_time_s=0.0)
        sim0 = Simulation(nominal, marl_policy=marl_policy)
        sim0.run()
        baseline = sim0.summary()["mean_travel_time_s"]
    sim = Simulation(config, marl_policy=marl_policy)
    sim.run()
    s = sim.summary()
    if baseline is None:
        baseline = s["mean_travel_time_s"]

    t_axis = np.arange(len(sim.wait_series)) * config.dt_s
    curve = None
    res = None
    if config.disruption is not None:
        f_vals = baseline - np.array(sim.wait_series)
        counts = np.array(sim.wait_counts, dtype=float)
        pre = (t_axis >= config.warmup_s) & (t_axis < config.disruption.start_s)
        mass = counts[pre].sum()
        plateau = baseline - (float((counts[pre] * (baseline - f_vals[pre])).sum())
                              / mass if mass > 0 else 0.0)
        curve = PerformanceCurve(t=t_axis, f=f_vals, baseline=baseline,
                                 t0=config.disruption.start_s,
                                 weights=counts, regular_level=plateau)
        res = resilience_indicators(curve, config.resilience)

    report = RunReport(
        config=config, baseline_travel_time_s=baseline,
        mean_wait_s=s["mean_wait_s"],
        mean_postmatch_wait_s=s["mean_postmatch_wait_s"],
        completed_users=s["completed"], abandoned_users=s["abandoned"],
        mean_travel_time_s=s["mean_travel_time_s"], resilience=res,
        fleet_series={"rows": sim.fleet_rows}, performance=curve,
        run_dir=run_dir)
    if run_dir is not None:
        write_outputs(sim, report, run_dir)
    return report


def marl_dims(graph: MultiModalGraph) -> tuple[int, int]:
    """Observation and action sizes: 4 global channels per depot plus the
    local idle count; actions score each depot plus the stay option."""
    n = len(graph.depots)
    return 4 * n + 1, n + 1


def new_marl_policy(config: ScenarioConfig) -> MaddpgPolicy:
    graph = Simulation._build_graph(config)
    obs_dim, act_dim = marl_dims(graph)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xA11CE]))
    return MaddpgPolicy(obs_dim, act_dim, config.marl, rng)


def train_marl(config: ScenarioConfig, sessions: int,
               out_dir: str | None = None, checkpoint_every: int = 50,
               resume: bool = True) -> tuple[MaddpgPolicy, list[tuple]]:
    """Train the shared policy on repeated regular (no-disruption) episodes;
    each session runs a fresh seed. Checkpoints land in out_dir and a restart
    picks up from the last one."""
    from .marl import train_loop

    ckpt = os.path.join(out_dir, "checkpoint.npz") if out_dir else None
    curve_path = os.path.join(out_dir, "training_curve.csv") if out_dir else None
    policy = None
    prior: list[tuple] = []
    if resume and ckpt and os.path.exists(ckpt):
        policy = MaddpgPolicy.load(ckpt, config.marl)
        if curve_path and os.path.exists(curve_path):
            with open(curve_path) as fh:
                rows = list(csv.DictReader(fh))
            prior = [(int(r["session"]), float(r["mean_reward"]),
                      float(r["mean_wait_s"])) for r in rows]
    if policy is None:
        policy = new_marl_policy(config)

    def run_session(k: int, pol: MaddpgPolicy, sigma: float) -> dict:
        cfg = replace(config, seed=config.seed + 1000 + k, disruption=None,
                      strategy="marl", record_region_traffic=False,
                      baseline_travel_time_s=0.0)
        sim = Simulation(cfg, marl_policy=pol, marl_train=True,
                         marl_sigma=sigma)
        sim.run()
        sim.flush_marl_episode()
        s = sim.summary()
        rewards = sim.session_rewards
        return {"mean_reward": float(np.mean(rewards)) if rewards else 0.0,
                "mean_wait_s": s["mean_postmatch_wait_s"]}

    def on_checkpoint(k: int, pol: MaddpgPolicy, curve: list) -> None:
        if out_dir and ((k + 1) % checkpoint_every == 0 or k + 1 == sessions):
            os.makedirs(out_dir, exist_ok=True)
            pol.save(ckpt)
            with open(curve_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["session", "mean_reward", "mean_wait_s"])
                for row in prior + curve:
                    w.writerow([row[0], f"{row[1]:.4f}", f"{row[2]:.3f}"])

    curve = train_loop(run_session, policy, sessions, config.marl,
                       start_session=len(prior), on_checkpoint=on_checkpoint)
    return policy, prior + curve


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.3f}"
    return str(x)


def write_outputs(sim: Simulation, report: RunReport, run_dir: str) -> None:
    os.makedirs(run_dir, exist_ok=True)
    cfg = sim.cfg

    def w(name, header, rows):
        with open(os.path.join(run_dir, name), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(header)
            for row in rows:
                out.writerow([_fmt(x) for x in row])

    w("users.csv",
      ["user_id", "total_time_s", "total_dist_m", "transfers", "waits_s",
       "modes", "completed"],
      [(u.id,
        (u.completed_at - u.depart_s) if u.state is UserState.COMPLETED else -1.0,
        u.total_dist_m, max(u.transfers - 1, 0), u.total_wait_s,
        u.path.modes if u.path else "",
        int(u.state is UserState.COMPLETED)) for u in sim.users])
    w("fleet_states.csv", ["t", "idle", "relocating", "pickup", "serving"],
      sim.fleet_rows)
    w("matches.csv", ["t", "user_id", "veh_id", "wait_s", "pickup_dist_m"],
      sim.match_rows)
    f_vals = (report.performance.f if report.performance is not None
              else report.baseline_travel_time_s - np.array(sim.wait_series))
    w("performance.csv", ["t", "F"],
      [(i * cfg.dt_s, float(f)) for i, f in enumerate(np.atleast_1d(f_vals))])
    w("region_traffic.csv",
      ["region", "t", "n_car", "n_bus", "n_rh", "v_car", "v_bus"],
      sim.region_rows)
    w("stranded.csv", ["t", "user_id", "station_id", "cause"],
      sim.stranded_rows)
    w("rebalance_log.csv", ["t", "veh_id", "depot_id", "strategy"],
      sim.rebalance_rows)
    with open(os.path.join(run_dir, "resilience.json"), "w") as fh:
        json.dump(report.resilience or {"note": "no disruption configured"},
                  fh, indent=1, default=float)
    manifest = {
        "format": 1,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "rhsim_version": __version__,
        "config": cfg.to_dict(),
        "baseline_travel_time_s": report.baseline_travel_time_s,
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
