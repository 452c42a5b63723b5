"""RH fleet state machine, nearest-vehicle matching, demand prediction with
survival-function offer capping, and operator/driver utilities."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import ndtri


class RhStateError(Exception):
    pass


class VehicleState(Enum):
    IDLE = "idle"
    RELOCATING = "relocating"
    PICKUP = "pickup"
    SERVING = "serving"


VACANT_STATES = (VehicleState.IDLE, VehicleState.RELOCATING)


@dataclass
class RhVehicle:
    id: int
    node: int                      # last node reached (position anchor)
    x: float
    y: float
    state: VehicleState = VehicleState.IDLE
    depot_id: int | None = None    # target while relocating
    user_id: int | None = None     # matched user while pickup/serving
    vacant_since: float = 0.0
    trip = None                    # TripProgress while moving, engine-owned

    @property
    def vacant(self) -> bool:
        return self.state in VACANT_STATES


def step_vehicle_state(veh: RhVehicle, event: str, t: float = 0.0,
                       depot_id: int | None = None,
                       user_id: int | None = None) -> RhVehicle:
    """Apply one state-machine event; illegal transitions fail fast."""
    s = veh.state
    if event == "none":
        return veh
    if event == "offer_accepted":
        if s is not VehicleState.IDLE:
            raise RhStateError(f"offer while {s}")
        veh.state = VehicleState.RELOCATING
        veh.depot_id = depot_id
    elif event == "depot_arrived":
        if s is not VehicleState.RELOCATING:
            raise RhStateError(f"depot arrival while {s}")
        veh.state = VehicleState.IDLE
        veh.depot_id = None
    elif event == "matched":
        if s not in VACANT_STATES:
            raise RhStateError(f"match while {s}")
        veh.state = VehicleState.PICKUP
        veh.depot_id = None        # relocation canceled by the match
        veh.user_id = user_id
    elif event == "picked_up":
        if s is not VehicleState.PICKUP:
            raise RhStateError(f"pickup completion while {s}")
        veh.state = VehicleState.SERVING
    elif event == "dropped_off":
        if s is not VehicleState.SERVING:
            raise RhStateError(f"dropoff while {s}")
        veh.state = VehicleState.IDLE
        veh.user_id = None
        veh.vacant_since = t       # vacant clock starts after serving only
    else:
        raise RhStateError(f"unknown event {event!r}")
    return veh


# ---------------------------------------------------------------------------
# operator: prediction, survival function, offers
# ---------------------------------------------------------------------------

@dataclass
class OperatorConfig:
    window_s: float = 300.0          # prediction horizon = mean relocation time
    market_share: float = 0.10
    noise_p: float = 0.0             # relative prediction noise level
    threshold: float = 0.2           # survival prob floor for offers
    rho: float = 0.1                 # arrival-time sigma factor
    response_delay_s: float = 0.0
    history_windows: int = 12
    min_sigma: float = 0.5
    matching_radius_m: float | None = None


@dataclass
class EconomicsConfig:
    ride_fare_per_m: float = 0.0015
    mileage_cost_per_m: float = 0.0003


def predict_demand(k: float, p: float, rng: np.random.Generator) -> int:
    """Noisy prediction k_hat = max(0, round(k + eps)),
    eps ~ N(0, sqrt(pi/2) * p * k) so that E|eps| = p*k."""
    if k < 0:
        raise ValueError("negative expected demand")
    sigma = math.sqrt(math.pi / 2.0) * p * k
    eps = rng.normal(0.0, sigma) if sigma > 0 else 0.0
    return max(0, int(round(k + eps)))


def survival_probability(k_hat: float, mu: float, sigma: float) -> float:
    """P(demand >= k_hat) under N(mu, sigma): the complementary normal CDF."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return 0.5 * math.erfc((k_hat - mu) / (sigma * math.sqrt(2.0)))


def max_offer_count(mu: float, sigma: float, threshold: float = 0.2) -> int:
    """Smallest integer k with survival_probability(k) <= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    z = float(ndtri(1.0 - threshold))
    return int(math.ceil(mu + z * sigma - 1e-12))


def relocation_offer_count(k_hat: int, mu: float, sigma: float,
                           threshold: float = 0.2, surge: int = 0) -> int:
    """Offers d = argmax over {k_hat, k_max} of P(.), i.e. min of the two since
    P decreases; an informed disruption surge is added on top and may push d
    past the cap."""
    k_max = max_offer_count(mu, sigma, threshold)
    return min(int(k_hat), k_max) + max(int(surge), 0)


class DemandHistory:
    """Rolling per-area request statistics feeding the survival function."""

    def __init__(self, n_areas: int, prior_mean: np.ndarray,
                 config: OperatorConfig):
        self.config = config
        self.prior_mean = np.maximum(np.asarray(prior_mean, dtype=float), 0.0)
        self.obs = [deque(maxlen=config.history_windows) for _ in range(n_areas)]

    def record(self, area: int, realized: int) -> None:
        self.obs[area].append(float(realized))

    def mu_sigma(self, area: int) -> tuple[float, float]:
        h = self.obs[area]
        if len(h) < 4:   # analytic Poisson prior until history accumulates
            mu = self.prior_mean[area]
            sigma = math.sqrt(mu) if mu > 0 else self.config.min_sigma
        else:
            arr = np.array(h)
            mu, sigma = float(arr.mean()), float(arr.std())
        return mu, max(sigma, self.config.min_sigma)


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------

def area_mean_fare(dists_m: np.ndarray, econ: EconomicsConfig) -> float:
    """Distance-weighted mean fare over routes from the depot to each node of
    its service area."""
    d = np.asarray(dists_m, dtype=float)
    d = d[np.isfinite(d)]
    total = d.sum()
    if total <= 0:
        return 0.0
    return float((d * (econ.ride_fare_per_m * d)).sum() / total)


def driver_utility(gbar: float, p_khat: float, p_kmax: float,
                   dist_to_area_m: float, econ: EconomicsConfig) -> float:
    """Expected earnings minus relocation cost; drivers accept only if > 0."""
    return gbar * max(p_khat, p_kmax) - econ.mileage_cost_per_m * dist_to_area_m


def sample_arrival_times(dists_m: np.ndarray, mean_speed: float, rho: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Y_v ~ N(mu_v, rho*mu_v) with mu_v = dist/speed, truncated positive."""
    mu = np.asarray(dists_m, dtype=float) / mean_speed
    y = rng.normal(mu, np.maximum(rho * mu, 1e-12))
    tiny = 1e-9
    for _ in range(8):   # resample the rare non-positive draws
        neg = y <= 0
        if not neg.any():
            break
        y[neg] = rng.normal(mu[neg], np.maximum(rho * mu[neg], 1e-12))
    return np.maximum(y, tiny)


def operator_select(candidate_ids: list[int], dists_m: np.ndarray,
                    mean_speed: float, rho: float, vacancy: int,
                    offers: int, expected_requests: float, present: int,
                    rng: np.random.Generator):
    """Greedy pick of the earliest-arriving candidates for one service area.

    Returns (U_o, selected ids, shortfall flag). The selection size is capped
    by both the published offers and the depot vacancy; shortfall flags
    i(r) + |D_r| < q(r)."""
    take = max(0, min(int(vacancy), int(offers)))
    if not candidate_ids or take == 0:
        picked: list[int] = []
    else:
        y = sample_arrival_times(dists_m, mean_speed, rho, rng)
        order = sorted(range(len(candidate_ids)),
                       key=lambda i: (y[i], candidate_ids[i]))
        picked = [candidate_ids[i] for i in order[:take]]
    shortfall = present + len(picked) < expected_requests
    return len(picked), picked, shortfall


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RideRequest:
    user_id: int
    node: int
    x: float
    y: float
    requested_at: float


def match_requests(requests: list[RideRequest], vehicles: list[RhVehicle],
                   radius_m: float | None = None) -> list[tuple[int, int, float]]:
    """Greedy in request-time order: each request takes the nearest vacant
    vehicle (straight-line), ties by lowest vehicle id.

    Returns (user_id, vehicle_id, distance_m) triples; unmatched requests are
    simply absent and stay queued."""
    free = {v.id: v for v in vehicles if v.vacant}
    out = []
    for req in sorted(requests, key=lambda r: (r.requested_at, r.user_id)):
        if not free:
            break
        best_id, best_d = -1, math.inf
        for vid in sorted(free):
            v = free[vid]
            d = math.hypot(v.x - req.x, v.y - req.y)
            if d < best_d - 1e-9:
                best_id, best_d = vid, d
        if best_id < 0:
            continue
        if radius_m is not None and best_d > radius_m:
            continue
        del free[best_id]
        out.append((req.user_id, best_id, best_d))
    return out
