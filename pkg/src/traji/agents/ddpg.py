"""DDPG with a learned time embedding (DDPG-TI).

Actor and critic read the same time embedding, whose parameters live
outside both networks and are trained through the critic loss. Exploration
noise is added to the actor's raw output before it is squashed into an
action. Decisions are taken on the agent's own (predicted) state.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .. import nn
from ..env import TRAIN_STREAM
from .common import NoiseProcess, ReplayBuffer, TrainingDiverged, make_codec

__all__ = ["DdpgConfig", "DdpgAgent", "ddpg_specs", "ddpg_train", "soft_update"]

LOSS_NAMES = ("critic_td", "actor_q")


@dataclass(frozen=True)
class DdpgConfig:
    episodes: int = 100
    warmup_episodes: int = 1
    update_every: int = 1
    batch_size: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 2e-4
    gamma: float = 0.9
    target_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    feature_width: int = 80
    time_dim: int = 76
    hidden: tuple[int, ...] = (32, 32, 32, 32)
    noise: str = "gaussian"
    noise_sigma: float = 0.3
    use_time: bool = True
    dtype: str = "float32"
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


def ddpg_specs(cfg: DdpgConfig, codec) -> dict[str, nn.NetworkSpec]:
    time = (nn.Slot("time", cfg.time_dim, "raw"),) if cfg.use_time else ()
    common = dict(feature_width=cfg.feature_width, time_dim=cfg.time_dim, hidden=cfg.hidden)
    return {
        "actor": nn.NetworkSpec((nn.Slot("state", 2), *time), codec.raw_dim, **common),
        "critic": nn.NetworkSpec((nn.Slot("state", 2), nn.Slot("action", codec.enc_dim), *time), 1,
                                 **common),
    }


def soft_update(target, learned, rate: float):
    """``target <- (1 - rate) * target + rate * learned``."""
    return (1.0 - rate) * target + rate * learned


def init_embedding(time_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Same draw as the in-network embeddings: ``[w, phi]`` flattened."""
    w = rng.normal(0.0, 2 * np.pi, time_dim)
    w[0] = rng.uniform(-1.0, 1.0)
    phi = rng.uniform(0.0, 2 * np.pi, time_dim)
    phi[0] = 0.0
    return np.concatenate([w, phi])


@functools.lru_cache(maxsize=16)
def _compiled(cfg: DdpgConfig, codec):
    specs = ddpg_specs(cfg, codec)
    adam = dict(beta1=cfg.beta1, beta2=cfg.beta2)
    opt_actor = nn.Adam(cfg.actor_lr, **adam)
    opt_critic = nn.Adam(cfg.critic_lr, **adam)
    k = cfg.time_dim

    def embed(e, t):
        return nn.time_embed(t, e[:k], e[k:])

    def pi(p, e, s, t, raw_noise=None):
        inputs = {"state": s}
        if cfg.use_time:
            inputs["time"] = embed(e, t)
        z = nn.forward(specs["actor"], p, inputs)
        if raw_noise is not None:
            z = z + raw_noise
        return codec.raw_to_enc(z)

    def q(p, e, s, a, t):
        inputs = {"state": s, "action": a}
        if cfg.use_time:
            inputs["time"] = embed(e, t)
        return nn.forward(specs["critic"], p, inputs)[:, 0]

    def critic_loss(pc, params, b):
        a_next = pi(params["actor_t"], params["emb_t"], b["s_next"], b["t_next"])
        q_next = q(params["critic_t"], params["emb_t"], b["s_next"], a_next, b["t_next"])
        y = b["r"][:, 0] + cfg.gamma * (1.0 - b["done"][:, 0]) * q_next
        y = jax.lax.stop_gradient(y)
        return jnp.mean((q(pc[0], pc[1], b["s"], b["a"], b["t"]) - y) ** 2)

    def actor_loss(pa, params, b):
        e = jax.lax.stop_gradient(params["emb"])
        return -jnp.mean(q(params["critic"], e, b["s"], pi(pa, e, b["s"], b["t"]), b["t"]))

    def update(params, opt, b):
        lc, gc = jax.value_and_grad(critic_loss)((params["critic"], params["emb"]), params, b)
        pc, oc = opt_critic.step(opt["critic"], params["critic"], gc[0])
        pe, oe = opt_critic.step(opt["emb"], params["emb"], gc[1])
        params = {**params, "critic": pc, "emb": pe}
        la, ga = jax.value_and_grad(actor_loss)(params["actor"], params, b)
        pa, oa = opt_actor.step(opt["actor"], params["actor"], ga)
        params = {**params, "actor": pa}
        for name in ("actor", "critic", "emb"):
            params[f"{name}_t"] = soft_update(params[f"{name}_t"], params[name], cfg.target_rate)
        return params, {"actor": oa, "critic": oc, "emb": oe}, jnp.stack([lc, la])

    def act(p, e, s, t, raw_noise):
        return pi(p, e, s[None], t[None], raw_noise[None])[0]

    return specs, jax.jit(act), jax.jit(update), (opt_actor, opt_critic)


class DdpgAgent:
    kind = "ddpg-ti"

    def __init__(self, cfg: DdpgConfig, codec, roi, time_scale: float, seed: int = 0, params=None):
        self.cfg, self.codec, self.roi, self.time_scale, self.seed = cfg, codec, roi, float(time_scale), seed
        self.specs, self._act, self._update, (opt_a, opt_c) = _compiled(cfg, codec)
        self.dtype = jnp.dtype(cfg.dtype)
        if params is None:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
            params = {"actor": nn.init_params(self.specs["actor"], rng, self.dtype),
                      "critic": nn.init_params(self.specs["critic"], rng, self.dtype),
                      "emb": jnp.asarray(init_embedding(cfg.time_dim, rng), self.dtype)}
            params.update({f"{k}_t": params[k] for k in ("actor", "critic", "emb")})
        self.params = params
        self.opt = {"actor": opt_a.init(params["actor"]), "critic": opt_c.init(params["critic"]),
                    "emb": opt_c.init(params["emb"])}
        self.history: list[tuple[int, str, float]] = []
        self.n_updates = 0

    def act_enc(self, state_norm, t_norm, raw_noise=None) -> np.ndarray:
        d = self.dtype
        if raw_noise is None:
            raw_noise = np.zeros(self.codec.raw_dim)
        return np.asarray(self._act(self.params["actor"], self.params["emb"], np.asarray(state_norm, d),
                                    np.asarray([t_norm], d), np.asarray(raw_noise, d)))

    def make_actor(self, rng: np.random.Generator | None = None):
        """Deterministic policy; ``rng`` is accepted for interface symmetry."""
        def act(state, i, elapsed):
            return self.codec.enc_to_action(self.act_enc(self.roi.normalize(state), elapsed / self.time_scale))
        return act

    def noise_process(self, dt: float = 1e-2) -> NoiseProcess:
        return NoiseProcess(self.codec.raw_dim, self.cfg.noise, self.cfg.noise_sigma, dt=dt)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> np.ndarray:
        raw = buffer.sample(rng, self.cfg.batch_size)
        batch = {k: np.asarray(v, self.dtype) for k, v in raw.items()}
        self.params, self.opt, losses = self._update(self.params, self.opt, batch)
        self.n_updates += 1
        losses = np.asarray(losses)
        if not np.all(np.isfinite(losses)):
            raise TrainingDiverged(f"non-finite DDPG-TI loss after {self.n_updates} updates")
        if self.n_updates % self.cfg.log_every == 0:
            self.history += [(self.n_updates, n, float(v)) for n, v in zip(LOSS_NAMES, losses)]
        return losses

    def state_dict(self) -> dict:
        return {"params": {k: np.asarray(v) for k, v in self.params.items()},
                "opt": {k: [np.asarray(x) for x in v] for k, v in self.opt.items()}}

    def load_state(self, state: dict):
        self.params = {k: jnp.asarray(v, self.dtype) for k, v in state["params"].items()}
        if "opt" in state:
            self.opt = {k: nn.AdamState(jnp.asarray(v[0], self.dtype), jnp.asarray(v[1], self.dtype),
                                        jnp.asarray(v[2], jnp.int32)) for k, v in state["opt"].items()}


def ddpg_train(env, cfg: DdpgConfig = DdpgConfig(), seed: int = 0, references=None,
               codec=None, progress=None, on_episode=None) -> DdpgAgent:
    """Train DDPG-TI on ``env``; one update every ``update_every`` steps after warm-up."""
    codec = codec or make_codec(env, references if references is not None else getattr(env, "tracks", None))
    agent = DdpgAgent(cfg, codec, env.roi, env.time_scale, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(8,)))
    max_len = max(len(t) for t in env.tracks) if hasattr(env, "tracks") else env.spec.n_steps + 1
    buffer = ReplayBuffer(cfg.episodes * max_len, {"s": 2, "a": codec.enc_dim, "r": 1, "s_next": 2,
                                                   "t": 1, "t_next": 1, "done": 1})
    noise = agent.noise_process(getattr(env, "dt", 1e-2))
    last_good = agent.state_dict()
    step = 0
    for ep in range(cfg.episodes):
        state, ref = env.reset(seed, ep, TRAIN_STREAM)
        noise.reset()
        for i in range(ref.n_steps):
            s_norm = agent.roi.normalize(state)
            t_norm = env.elapsed / agent.time_scale
            enc = agent.act_enc(s_norm, t_norm, noise.sample(rng))
            out = env.step(codec.enc_to_action(enc))
            buffer.add(s=s_norm, a=enc, r=out.reward, s_next=agent.roi.normalize(out.next_state),
                       t=t_norm, t_next=env.elapsed / agent.time_scale, done=float(out.done))
            state = out.next_state
            step += 1
            if ep >= cfg.warmup_episodes and step % cfg.update_every == 0:
                try:
                    agent.update(buffer, rng)
                except TrainingDiverged as exc:
                    exc.checkpoint, exc.agent = last_good, agent
                    raise
        last_good = agent.state_dict()
        if progress is not None:
            progress(ep, env.normalized_distance)
        if on_episode is not None:
            on_episode(ep, agent)
    return agent
