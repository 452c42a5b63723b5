"""Rebalancing strategies behind one interface: none, random, centralized
assignment, and the decentralized deferred-acceptance auction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class RebalanceDecision:
    assignments: dict[int, int] = field(default_factory=dict)  # vehicle -> depot
    converged: bool = True


@dataclass
class StrategyContext:
    """Frozen snapshot of one decision round.

    Arrays are indexed (vehicle row, depot column) following `idle_ids` and
    `depot_ids`; `slots` already folds the published offers into the depot
    vacancy."""
    depot_ids: list[int]
    idle_ids: list[int]
    slots: np.ndarray            # per-depot assignable count
    dist_m: np.ndarray           # idle x depot road distances
    utility_operator: np.ndarray  # per-depot U_o
    utility_driver: np.ndarray    # idle x depot U_v
    arrival_mu_s: np.ndarray      # idle x depot expected arrival times
    rho: float = 0.1

    def validate(self) -> None:
        n_v, n_d = len(self.idle_ids), len(self.depot_ids)
        assert self.dist_m.shape == (n_v, n_d)
        assert self.utility_driver.shape == (n_v, n_d)
        assert self.slots.shape == (n_d,)


def strategy_none(ctx: StrategyContext, rng=None) -> RebalanceDecision:
    """Vehicles stay where they dropped off."""
    return RebalanceDecision()


def strategy_random(ctx: StrategyContext, rng: np.random.Generator) -> RebalanceDecision:
    """Uniform choice among depots with remaining vacancy; no prediction used.
    Vehicles already sitting at a depot stay put."""
    slots = ctx.slots.astype(int).copy()
    out: dict[int, int] = {}
    for row, vid in sorted(enumerate(ctx.idle_ids), key=lambda t: t[1]):
        if ctx.dist_m[row].min() < 1.0:
            continue
        open_idx = np.flatnonzero(slots > 0)
        if open_idx.size == 0:
            break
        pick = int(open_idx[int(rng.integers(open_idx.size))])
        slots[pick] -= 1
        out[vid] = ctx.depot_ids[pick]
    return RebalanceDecision(out)


def strategy_centralized(ctx: StrategyContext, rng=None) -> RebalanceDecision:
    """Exact max-weight assignment of vehicles to depot slots, weight
    U_o(r) + U_v(v, r); pairs that would lower the objective stay unassigned."""
    n_v, n_d = len(ctx.idle_ids), len(ctx.depot_ids)
    if n_v == 0 or int(ctx.slots.sum()) == 0:
        return RebalanceDecision()
    w = ctx.utility_operator[None, :] + ctx.utility_driver
    slot_depot = [d for d in range(n_d) for _ in range(int(ctx.slots[d]))]
    n_s = len(slot_depot)
    big = 1e12
    # columns: depot slots then one personal stay slot per vehicle
    cost = np.full((n_v, n_s + n_v), big)
    for i in range(n_v):
        cost[i, n_s + i] = 0.0
        for j, d in enumerate(slot_depot):
            if w[i, d] > 0:
                cost[i, j] = -w[i, d]
    rows, cols = linear_sum_assignment(cost)
    out: dict[int, int] = {}
    for i, j in zip(rows, cols):
        if j < n_s and cost[i, j] < 0:
            out[ctx.idle_ids[i]] = ctx.depot_ids[slot_depot[j]]
    return RebalanceDecision(out)


def strategy_decentralized(ctx: StrategyContext, rng: np.random.Generator,
                           max_rounds: int = 50) -> RebalanceDecision:
    """Auction-style deferred acceptance: vehicles bid for areas by driver
    utility; over-capacity areas keep their earliest-arriving bidders and
    evict from the bottom rank. Stable w.r.t. the sampled preferences."""
    n_v, n_d = len(ctx.idle_ids), len(ctx.depot_ids)
    if n_v == 0:
        return RebalanceDecision()
    # vehicle preference lists: positive-utility areas, best first
    prefs: list[list[int]] = []
    for i in range(n_v):
        order = sorted(range(n_d), key=lambda d: (-ctx.utility_driver[i, d], d))
        prefs.append([d for d in order if ctx.utility_driver[i, d] > 0
                      and ctx.slots[d] > 0])
    # area preference over vehicles: sampled arrival times, frozen up front
    mu = ctx.arrival_mu_s
    if ctx.rho > 0:
        y = rng.normal(mu, np.maximum(ctx.rho * mu, 1e-12))
        y = np.where(y > 0, y, np.abs(y) + 1e-9)
    else:
        y = mu.copy()
    held: dict[int, list[int]] = {d: [] for d in range(n_d)}
    cursor = [0] * n_v
    assigned = [-1] * n_v
    converged = False
    for _ in range(max_rounds):
        changed = False
        for i in range(n_v):
            if assigned[i] >= 0 or cursor[i] >= len(prefs[i]):
                continue
            d = prefs[i][cursor[i]]
            cursor[i] += 1
            held[d].append(i)
            assigned[i] = d
            changed = True
        for d in range(n_d):
            cap = int(ctx.slots[d])
            while len(held[d]) > cap:
                worst = max(held[d], key=lambda i: (y[i, d], ctx.idle_ids[i]))
                held[d].remove(worst)
                assigned[worst] = -1
                changed = True
        if not changed:
            converged = True
            break
    out = {ctx.idle_ids[i]: ctx.depot_ids[assigned[i]]
           for i in range(n_v) if assigned[i] >= 0}
    return RebalanceDecision(out, converged=converged)


STRATEGIES = {
    "none": strategy_none,
    "random": strategy_random,
    "centralized": strategy_centralized,
    "decentralized": strategy_decentralized,
}
