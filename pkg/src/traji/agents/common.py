"""Plumbing shared by the agents: action codecs, noise, replay buffer, rollouts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from ..env import EVAL_STREAM, FamilyEnv, TrajectoryEnv, episode_rng
from ..families import Trajectory, sample_family_trajectory

__all__ = [
    "TrainingDiverged",
    "PlanarCodec",
    "GeoCodec",
    "make_codec",
    "codec_from_dict",
    "NoiseProcess",
    "ReplayBuffer",
    "rollout",
]


class TrainingDiverged(RuntimeError):
    """A loss became non-finite. ``checkpoint`` holds the last finite agent state."""

    def __init__(self, message, checkpoint=None, agent=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.agent = agent


@dataclass(frozen=True)
class PlanarCodec:
    """Speed/heading actions.

    Networks emit three raw numbers: a speed logit squashed by tanh onto
    [0, u_max] and a heading vector whose direction gives xi. Networks
    consume the encoding ``(u / u_max, cos xi, sin xi)``, which is continuous
    across the +-pi cut.
    """

    u_max: float
    raw_dim = 3
    enc_dim = 3
    kind = "planar"

    def raw_to_enc(self, z):
        speed = (jnp.tanh(z[:, :1]) + 1.0) / 2.0
        norm = jnp.sqrt(z[:, 1:2] ** 2 + z[:, 2:3] ** 2 + 1e-12)
        return jnp.concatenate([speed, z[:, 1:2] / norm, z[:, 2:3] / norm], axis=1)

    def enc_to_action(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        u = np.clip(e[..., 0], 0.0, 1.0) * self.u_max
        return np.stack([u, np.arctan2(e[..., 2], e[..., 1])], axis=-1)

    def action_to_enc(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return np.stack([a[..., 0] / self.u_max, np.cos(a[..., 1]), np.sin(a[..., 1])], axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "u_max": self.u_max}


@dataclass(frozen=True)
class GeoCodec:
    """(SOG, COG, dt) actions; COG is encoded as (cos, sin) of the course."""

    sog_max: float
    dt_max: float
    raw_dim = 4
    enc_dim = 4
    kind = "geo"
    dt_floor = 1e-3

    def raw_to_enc(self, z):
        speed = (jnp.tanh(z[:, :1]) + 1.0) / 2.0
        norm = jnp.sqrt(z[:, 1:2] ** 2 + z[:, 2:3] ** 2 + 1e-12)
        dt = (jnp.tanh(z[:, 3:4]) + 1.0) / 2.0
        return jnp.concatenate([speed, z[:, 1:2] / norm, z[:, 2:3] / norm, dt], axis=1)

    def enc_to_action(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        sog = np.clip(e[..., 0], 0.0, 1.0) * self.sog_max
        cog = np.degrees(np.arctan2(e[..., 2], e[..., 1])) % 360.0
        dt = np.clip(e[..., 3], self.dt_floor, 1.0) * self.dt_max
        return np.stack([sog, cog, dt], axis=-1)

    def action_to_enc(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        c = np.radians(a[..., 1])
        return np.stack([a[..., 0] / self.sog_max, np.cos(c), np.sin(c), a[..., 2] / self.dt_max], axis=-1)

    def to_dict(self):
        return {"kind": self.kind, "sog_max": self.sog_max, "dt_max": self.dt_max}


def codec_from_dict(d):
    if d["kind"] == "planar":
        return PlanarCodec(d["u_max"])
    return GeoCodec(d["sog_max"], d["dt_max"])


def make_codec(env: TrajectoryEnv, references=None):
    """Action ranges derived from the environment's references.

    Synthetic: ``u_max`` is twice the largest perfect-policy speed along the
    boundary trajectories. Geographic: ``sog_max`` is twice and ``dt_max``
    equal to the 99th percentile over the given references.
    """
    if isinstance(env, FamilyEnv):
        lo, hi = env.spec.alpha_range
        speeds = []
        for a in (lo, hi):
            s = sample_family_trajectory(env.spec, a).states
            speeds.append(np.max(np.linalg.norm(np.diff(s, axis=0), axis=1)) / env.dt)
        return PlanarCodec(float(2 * max(speeds)))
    acts = []
    for ref in references:
        env.reset_to(ref)
        acts += [env.expert_action(i) for i in range(ref.n_steps)]
    acts = np.asarray(acts)
    sog = float(np.percentile(acts[:, 0], 99))
    dt = float(np.percentile(acts[:, 2], 99))
    return GeoCodec(2 * max(sog, 1e-3), max(dt, 1e-3))


class NoiseProcess:
    """Per-episode noise: i.i.d. Gaussian or Ornstein-Uhlenbeck."""

    def __init__(self, dim: int, kind: str = "gaussian", sigma: float = 0.3, mu: float = 0.0,
                 theta: float = 0.15, ou_sigma: float = 0.2, dt: float = 1e-2):
        if kind not in ("gaussian", "ou"):
            raise ValueError(f"unknown noise kind {kind!r}")
        self.dim, self.kind = dim, kind
        self.sigma, self.mu, self.theta, self.ou_sigma, self.dt = sigma, mu, theta, ou_sigma, dt
        self.state = np.full(dim, mu)

    def reset(self):
        self.state = np.full(self.dim, self.mu)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(self.mu, self.sigma, self.dim)
        x = self.state
        self.state = x + self.theta * (self.mu - x) * self.dt + \
            self.ou_sigma * math.sqrt(self.dt) * rng.normal(size=self.dim)
        return self.state.copy()


class ReplayBuffer:
    """Fixed-capacity buffer of named fields, sampled uniformly."""

    def __init__(self, capacity: int, fields: dict[str, int]):
        self.capacity = capacity
        self.data = {k: np.zeros((capacity, d)) for k, d in fields.items()}
        self.size = 0
        self.ptr = 0

    def add(self, **row):
        for k, arr in self.data.items():
            arr[self.ptr] = row[k]
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self):
        return self.size

    def sample(self, rng: np.random.Generator, batch: int, n: int | None = None) -> dict[str, np.ndarray]:
        """``batch`` rows, or ``n`` independent batches stacked on a leading axis."""
        shape = (batch,) if n is None else (n, batch)
        idx = rng.integers(0, self.size, size=shape)
        return {k: v[idx] for k, v in self.data.items()}


def rollout(env: TrajectoryEnv, reference: Trajectory, act) -> Trajectory:
    """Roll ``act(state, index, elapsed) -> action`` against ``reference``."""
    state = env.reset_to(reference)
    for i in range(reference.n_steps):
        state = env.step(act(state, i, env.elapsed)).next_state
    return env.rollout_trajectory()


def eval_references(env, n_refs: int, eval_seed: int):
    """Held-out references drawn from the evaluation stream."""
    return [env.reset(eval_seed, j, EVAL_STREAM)[1] for j in range(n_refs)]


def eval_rng(eval_seed: int, run_seed: int, ref_id: int) -> np.random.Generator:
    return episode_rng(eval_seed, 1_000_000 * (run_seed + 1) + ref_id, EVAL_STREAM + 1)
