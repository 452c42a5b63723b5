"""MADDPG rebalancing policy: shared actor-critic, replay buffer, reward,
and the training update rules."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .nets import Adam, Mlp, soft_update

CHECKPOINT_FORMAT = 1


def reward(vacant_s: float, threshold_s: float, scale: float = 20.0,
           slope_per_min: float = 0.3) -> float:
    """Sigmoid-shaped reward on vacant duration, in (-scale, scale); zero at
    the threshold. Times enter the exponent in minutes."""
    z = slope_per_min * (vacant_s - threshold_s) / 60.0
    z = min(max(z, -500.0), 500.0)
    return scale * (2.0 / (1.0 + math.exp(z)) - 1.0)


@dataclass
class MaddpgConfig:
    hidden: tuple[int, int] = (64, 64)
    lr: float = 0.01
    tau: float = 0.01
    gamma: float = 0.99
    buffer_capacity: int = 1_000_000
    update_every: int = 10         # buffer insertions between training events
    batch_size: int = 500
    n_recent_batches: int = 5
    n_random_batches: int = 5
    reward_scale: float = 20.0
    reward_slope_per_min: float = 0.3
    vacant_threshold_s: float = 300.0
    noise_sigma_start: float = 0.3
    noise_sigma_end: float = 0.05
    local_radius_m: float = 500.0
    critic_inputs: str = "own"     # 'own' | 'joint' (adds mean of others' actions)


class ReplayBuffer:
    """Shared FIFO ring buffer of (s, a, r, s') tuples."""

    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self._s = self._a = self._r = self._s2 = None
        self.head = 0
        self.count = 0
        self.inserted = 0

    def _alloc(self, obs_dim, act_dim):
        self._s = np.zeros((self.capacity, obs_dim))
        self._a = np.zeros((self.capacity, act_dim))
        self._r = np.zeros(self.capacity)
        self._s2 = np.zeros((self.capacity, obs_dim))

    def insert(self, s, a, r, s2) -> None:
        if self._s is None:
            self._alloc(len(s), len(a))
        i = self.head
        self._s[i], self._a[i], self._r[i], self._s2[i] = s, a, r, s2
        self.head = (self.head + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        self.inserted += 1

    def __len__(self) -> int:
        return self.count

    def _take(self, idx: np.ndarray):
        return self._s[idx], self._a[idx], self._r[idx], self._s2[idx]

    def recent_batch(self, k: int, size: int):
        """k-th most recent slice of `size` (k=0 is the newest)."""
        if self.count < (k + 1) * size:
            return None
        idx = (self.head - 1 - np.arange(k * size, (k + 1) * size)) % self.capacity
        return self._take(idx)

    def random_batch(self, size: int, rng: np.random.Generator):
        if self.count < size:
            return None
        idx = rng.choice(self.count, size=size, replace=False)
        if self.count == self.capacity:
            idx = (self.head + idx) % self.capacity
        return self._take(idx)


class RunningNorm:
    """Per-channel running min-max scaling into [0, 1]."""

    def __init__(self, dim: int):
        self.lo = np.full(dim, np.inf)
        self.hi = np.full(dim, -np.inf)

    def update(self, x: np.ndarray) -> None:
        x = np.atleast_2d(x)
        self.lo = np.minimum(self.lo, x.min(axis=0))
        self.hi = np.maximum(self.hi, x.max(axis=0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        lo = np.where(np.isfinite(self.lo), self.lo, 0.0)
        return np.clip((x - lo) / span, 0.0, 1.0)


@dataclass
class Experience:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray


class MaddpgPolicy:
    """One actor/critic pair shared by every homogeneous agent (CTDE): all
    experiences land in one buffer, execution reads only the agent's own
    observation."""

    def __init__(self, obs_dim: int, act_dim: int, config: MaddpgConfig,
                 rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.config = config
        h1, h2 = config.hidden
        critic_in = obs_dim + act_dim + (act_dim if config.critic_inputs == "joint" else 0)
        self.actor = Mlp([obs_dim, h1, h2, act_dim], rng)
        self.critic = Mlp([critic_in, h1, h2, 1], rng)
        self.actor_target = Mlp([obs_dim, h1, h2, act_dim], rng)
        self.critic_target = Mlp([critic_in, h1, h2, 1], rng)
        self.actor_target.copy_from(self.actor)
        self.critic_target.copy_from(self.critic)
        self.actor_opt = Adam(self.actor.params, lr=config.lr)
        self.critic_opt = Adam(self.critic.params, lr=config.lr)
        self.norm = RunningNorm(obs_dim)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.train_events = 0

    # -- acting ---------------------------------------------------------------

    def observe(self, raw_obs: np.ndarray, update_norm: bool = True) -> np.ndarray:
        raw = np.asarray(raw_obs, dtype=float)
        if update_norm:
            self.norm.update(raw)
        return self.norm.apply(raw)

    def act(self, obs: np.ndarray, noise_sigma: float,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, int]:
        """Action scores plus the executed choice: argmax index, 0 = stay,
        i >= 1 = relocate toward depot i-1."""
        scores, _ = self.actor.forward(obs)
        a = scores[0]
        if noise_sigma > 0 and rng is not None:
            a = a + rng.normal(0.0, noise_sigma, size=a.shape)
        return a, int(np.argmax(a))

    def act_batch(self, obs: np.ndarray, noise_sigma: float,
                  rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        scores, _ = self.actor.forward(obs)
        if noise_sigma > 0 and rng is not None:
            scores = scores + rng.normal(0.0, noise_sigma, size=scores.shape)
        return scores, scores.argmax(axis=1)

    # -- training -------------------------------------------------------------

    def _critic_in(self, s, a, mean_other=None):
        parts = [s, a]
        if self.config.critic_inputs == "joint":
            if mean_other is None:
                mean_other = np.zeros_like(a)
            parts.append(mean_other)
        return np.concatenate(parts, axis=1)

    def critic_loss(self, batch) -> tuple[float, list, list]:
        """Eq.-style TD loss; gradients flow into the eval critic only."""
        s, a, r, s2 = batch
        S = len(r)
        a2, _ = self.actor_target.forward(s2)
        q2, _ = self.critic_target.forward(self._critic_in(s2, a2))
        y = r[:, None] + self.config.gamma * q2
        q, cache = self.critic.forward(self._critic_in(s, a))
        diff = q - y
        loss = float((diff ** 2).mean())
        dW, db, _ = self.critic.backward(cache, 2.0 * diff / S)
        return loss, dW, db

    def actor_gradient(self, batch) -> tuple[list, list, float]:
        """Sampled deterministic policy gradient (ascent on Q)."""
        s, _, _, _ = batch
        S = len(s)
        a, actor_cache = self.actor.forward(s)
        q, critic_cache = self.critic.forward(self._critic_in(s, a))
        _, _, dq_din = self.critic.backward(critic_cache, np.ones_like(q) / S)
        dq_da = dq_din[:, self.obs_dim:self.obs_dim + self.act_dim]
        dW, db, _ = self.actor.backward(actor_cache, -dq_da)  # minimize -Q
        return dW, db, float(q.mean())

    def update_from_batch(self, batch) -> dict:
        loss, cdW, cdb = self.critic_loss(batch)
        self.critic_opt.step(cdW + cdb)
        adW, adb, qmean = self.actor_gradient(batch)
        self.actor_opt.step(adW + adb)
        soft_update(self.critic_target, self.critic, self.config.tau)
        soft_update(self.actor_target, self.actor, self.config.tau)
        return {"critic_loss": loss, "q_mean": qmean}

    def maybe_train(self, rng: np.random.Generator) -> list[dict]:
        """Training event every `update_every` insertions: the most recent
        batches plus uniformly random ones, skipped while the buffer warms up."""
        cfg = self.config
        if self.buffer.inserted == 0 or self.buffer.inserted % cfg.update_every != 0:
            return []
        stats = []
        for k in range(cfg.n_recent_batches):
            batch = self.buffer.recent_batch(k, cfg.batch_size)
            if batch is not None:
                stats.append(self.update_from_batch(batch))
        for _ in range(cfg.n_random_batches):
            batch = self.buffer.random_batch(cfg.batch_size, rng)
            if batch is not None:
                stats.append(self.update_from_batch(batch))
        if stats:
            self.train_events += 1
        return stats

    # -- persistence ------------------------------------------------------------

    def save(self, path) -> None:
        arrays = {}
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("actor_t", self.actor_target), ("critic_t", self.critic_target)):
            for i, p in enumerate(net.params):
                arrays[f"{tag}_{i}"] = p
        for tag, opt in (("aopt", self.actor_opt), ("copt", self.critic_opt)):
            for i, m in enumerate(opt.m):
                arrays[f"{tag}_m_{i}"] = m
            for i, v in enumerate(opt.v):
                arrays[f"{tag}_v_{i}"] = v
            arrays[f"{tag}_t"] = np.array([opt.t])
        arrays["norm_lo"] = self.norm.lo
        arrays["norm_hi"] = self.norm.hi
        meta = {"format": CHECKPOINT_FORMAT, "obs_dim": self.obs_dim,
                "act_dim": self.act_dim, "hidden": list(self.config.hidden),
                "critic_inputs": self.config.critic_inputs,
                "train_events": self.train_events}
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, config: MaddpgConfig | None = None) -> "MaddpgPolicy":
        blob = np.load(path)
        meta = json.loads(bytes(blob["meta"]).decode())
        if meta["format"] != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta['format']}")
        cfg = config or MaddpgConfig()
        cfg.hidden = tuple(meta["hidden"])
        cfg.critic_inputs = meta["critic_inputs"]
        pol = cls(meta["obs_dim"], meta["act_dim"], cfg, np.random.default_rng(0))
        for tag, net in (("actor", pol.actor), ("critic", pol.critic),
                         ("actor_t", pol.actor_target), ("critic_t", pol.critic_target)):
            for i, p in enumerate(net.params):
                p[...] = blob[f"{tag}_{i}"]
        for tag, opt in (("aopt", pol.actor_opt), ("copt", pol.critic_opt)):
            for i in range(len(opt.m)):
                opt.m[i][...] = blob[f"{tag}_m_{i}"]
                opt.v[i][...] = blob[f"{tag}_v_{i}"]
            opt.t = int(blob[f"{tag}_t"][0])
        pol.norm.lo = blob["norm_lo"].copy()
        pol.norm.hi = blob["norm_hi"].copy()
        pol.train_events = meta["train_events"]
        return pol


def train_loop(run_session, policy: "MaddpgPolicy", sessions: int,
               config: MaddpgConfig, start_session: int = 0,
               on_checkpoint=None) -> list[tuple]:
    """Drive training sessions with linearly decaying exploration noise.

    `run_session(k, policy, sigma)` executes one episode and returns
    {'mean_reward': float, 'mean_wait_s': float}; the curve rows are
    (session, mean_reward, mean_wait_s)."""
    curve = []
    for k in range(start_session, sessions):
        sigma = noise_schedule(config, k, sessions)
        stats = run_session(k, policy, sigma)
        curve.append((k, stats["mean_reward"], stats["mean_wait_s"]))
        if on_checkpoint is not None:
            on_checkpoint(k, policy, curve)
    return curve


def noise_schedule(config: MaddpgConfig, session: int, sessions: int) -> float:
    """Linear decay of exploration noise over the training run."""
    if sessions <= 1:
        return config.noise_sigma_end
    f = min(session / (sessions - 1), 1.0)
    return config.noise_sigma_start + f * (config.noise_sigma_end - config.noise_sigma_start)


def observation_vector(expected_revenue: np.ndarray, relocated: np.ndarray,
                       pt_nearby: np.ndarray, supply_gap: np.ndarray,
                       idle_nearby: int) -> np.ndarray:
    """Raw observation: [g_d, n_d_rh, n_d_pt, b_d, n_v] ordered by depot id."""
    return np.concatenate([expected_revenue, relocated, pt_nearby, supply_gap,
                           [float(idle_nearby)]])
