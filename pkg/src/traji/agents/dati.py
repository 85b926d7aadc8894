"""DATI: paired forward/backward actor-critics trained adversarially.

The forward actor maps (state, noise, time) to an action and is valued by a
reward-conditioned Wasserstein critic against perfect-policy actions. The
backward actor maps (action, noise, time) back to the state and is valued by
its own critic against the states the forward actor visited. Cycle losses in
both directions and an L1 pull of the forward action towards the expert
action complete the objective.
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

__all__ = ["DatiConfig", "DatiAgent", "dati_specs", "dati_train"]

NETS = ("fwd_actor", "fwd_critic", "bwd_actor", "bwd_critic")


@dataclass(frozen=True)
class DatiConfig:
    episodes: int = 100
    warmup_episodes: int = 1
    update_every: int = 4
    n_critic: int = 5
    batch_size: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 1e-5
    l1_lr: float = 1e-3
    l1_weight: float = 10.0
    gp_lambda: float = 10.0
    beta1: float = 0.5
    beta2: float = 0.9
    latent_dim: int = 64
    feature_width: int = 16
    time_dim: int = 76
    hidden: tuple[int, ...] = (32, 32, 32, 32)
    noise: str = "gaussian"
    noise_sigma: float = 0.3
    use_time: bool = True
    use_reward: bool = True
    dtype: str = "float32"
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


def dati_specs(cfg: DatiConfig, codec) -> dict[str, nn.NetworkSpec]:
    time = (nn.Slot("time", 1, "time"),) if cfg.use_time else ()
    rew = (nn.Slot("reward", 1, "reward"),) if cfg.use_reward else ()
    noise = nn.Slot("noise", cfg.latent_dim, "raw")
    common = dict(feature_width=cfg.feature_width, time_dim=cfg.time_dim, hidden=cfg.hidden)
    return {
        "fwd_actor": nn.NetworkSpec((nn.Slot("state", 2), noise, *time), codec.raw_dim, **common),
        "fwd_critic": nn.NetworkSpec((nn.Slot("action", codec.enc_dim), *time, *rew), 1,
                                     out_activation="elu", **common),
        "bwd_actor": nn.NetworkSpec((nn.Slot("action", codec.enc_dim), noise, *time), 2,
                                    out_activation="tanh", **common),
        "bwd_critic": nn.NetworkSpec((nn.Slot("state", 2), *time, *rew), 1,
                                     out_activation="elu", **common),
    }


@functools.lru_cache(maxsize=16)
def _compiled(cfg: DatiConfig, codec):
    """Jitted acting and update functions, shared by agents with equal settings."""
    specs = dati_specs(cfg, codec)
    adam = dict(beta1=cfg.beta1, beta2=cfg.beta2)
    opt_critic = {k: nn.Adam(cfg.critic_lr, mask=nn.nonneg_mask(specs[k]), **adam)
                  for k in ("fwd_critic", "bwd_critic")}
    opt_adv = nn.Adam(cfg.actor_lr, **adam)
    opt_l1 = nn.Adam(cfg.l1_lr, **adam)

    def ctx(b, reward=None):
        c = {}
        if cfg.use_time:
            c["time"] = b["t"]
        if cfg.use_reward:
            c["reward"] = b["r"] if reward is None else reward
        return c

    def fa(p, s, eta, b):
        z = nn.forward(specs["fwd_actor"], p, {"state": s, "noise": eta, **ctx(b)})
        return codec.raw_to_enc(z)

    def ba(p, a, eta, b):
        return nn.forward(specs["bwd_actor"], p, {"action": a, "noise": eta, **ctx(b)})

    def cf(p, a, b, reward=None):
        return nn.forward(specs["fwd_critic"], p, {"action": a, **ctx(b, reward)})[:, 0]

    def cb(p, s, b):
        return nn.forward(specs["bwd_critic"], p, {"state": s, **ctx(b)})[:, 0]

    def critic_losses(pc, params, b, u):
        p_cf, p_cb = pc
        fake_a = jax.lax.stop_gradient(fa(params["fwd_actor"], b["s"], b["eta"], b))
        expert_r = jnp.ones_like(b["r"])
        w_f = jnp.mean(cf(p_cf, fake_a, b)) - jnp.mean(cf(p_cf, b["a_star"], b, expert_r))
        gp_f = nn.gp_loss(specs["fwd_critic"], p_cf, b["a_star"], fake_a, u[0], cfg.gp_lambda,
                          "action", ctx(b))
        fake_s = jax.lax.stop_gradient(ba(params["bwd_actor"], b["a_hat"], b["eta"], b))
        w_b = jnp.mean(cb(p_cb, fake_s, b)) - jnp.mean(cb(p_cb, b["s"], b))
        gp_b = nn.gp_loss(specs["bwd_critic"], p_cb, b["s"], fake_s, u[1], cfg.gp_lambda,
                          "state", ctx(b))
        return w_f + gp_f + w_b + gp_b, jnp.stack([w_f, gp_f, w_b, gp_b])

    def adversarial(pa, params, b):
        a = fa(pa[0], b["s"], b["eta"], b)
        s_back = ba(pa[1], b["a_hat"], b["eta"], b)
        return -jnp.mean(cf(params["fwd_critic"], a, b)) - jnp.mean(cb(params["bwd_critic"], s_back, b))

    def l1_terms(pa, b):
        p_fa, p_ba = pa
        l1 = lambda x, y: jnp.mean(jnp.sum(jnp.abs(x - y), axis=1))
        a = fa(p_fa, b["s"], b["eta"], b)
        cycle_a = l1(fa(p_fa, ba(p_ba, b["a_hat"], b["eta"], b), b["eta"], b), b["a_hat"])
        cycle_s = l1(ba(p_ba, a, b["eta"], b), b["s"])
        sup = l1(a, b["a_star"])
        return jnp.stack([cycle_a, cycle_s, sup])

    def l1_loss(pa, b):
        terms = l1_terms(pa, b)
        return cfg.l1_weight * jnp.sum(terms), terms

    def update(params, opt, batches, batch_a, u):
        def critic_step(carry, xs):
            pc, oc = carry
            b, uu = xs
            (_, parts), g = jax.value_and_grad(critic_losses, has_aux=True)(pc, params, b, uu)
            new_f, of = opt_critic["fwd_critic"].step(oc[0], pc[0], g[0])
            new_b, ob = opt_critic["bwd_critic"].step(oc[1], pc[1], g[1])
            return ((new_f, new_b), (of, ob)), parts

        carry = ((params["fwd_critic"], params["bwd_critic"]), (opt["fwd_critic"], opt["bwd_critic"]))
        (pc, oc), parts = jax.lax.scan(critic_step, carry, (batches, u))
        params = {**params, "fwd_critic": pc[0], "bwd_critic": pc[1]}
        opt = {**opt, "fwd_critic": oc[0], "bwd_critic": oc[1]}

        pa = (params["fwd_actor"], params["bwd_actor"])
        adv, g_adv = jax.value_and_grad(adversarial)(pa, params, batch_a)
        (_, terms), g_l1 = jax.value_and_grad(l1_loss, has_aux=True)(pa, batch_a)
        new = {}
        for i, k in enumerate(("fwd_actor", "bwd_actor")):
            p, o_adv = opt_adv.step(opt[f"{k}_adv"], pa[i], g_adv[i])
            p, o_l1 = opt_l1.step(opt[f"{k}_l1"], p, g_l1[i])
            new[k], opt = p, {**opt, f"{k}_adv": o_adv, f"{k}_l1": o_l1}
        params = {**params, **new}
        losses = jnp.concatenate([jnp.mean(parts, axis=0), adv[None], terms])
        return params, opt, losses

    def act(p_fa, s, eta, t):
        b = {"t": t[None], "r": jnp.zeros((1, 1), p_fa.dtype)}
        return fa(p_fa, s[None], eta[None], b)[0]

    return specs, jax.jit(act), jax.jit(update), {"adv": opt_adv, "l1": opt_l1, **opt_critic}


LOSS_NAMES = ("critic_fwd", "gp_fwd", "critic_bwd", "gp_bwd", "actor_adv",
              "cycle_action", "cycle_state", "l1_supervision")


class DatiAgent:
    """Parameters, optimizer state and acting for one DATI run."""

    kind = "dati"

    def __init__(self, cfg: DatiConfig, codec, roi, time_scale: float, seed: int = 0, params=None):
        self.cfg, self.codec, self.roi, self.time_scale, self.seed = cfg, codec, roi, float(time_scale), seed
        self.specs, self._act, self._update, self._opts = _compiled(cfg, codec)
        self.dtype = jnp.dtype(cfg.dtype)
        if params is None:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
            params = {k: nn.init_params(self.specs[k], rng, self.dtype) for k in NETS}
        self.params = params
        self.opt = {
            "fwd_critic": self._opts["fwd_critic"].init(params["fwd_critic"]),
            "bwd_critic": self._opts["bwd_critic"].init(params["bwd_critic"]),
            **{f"{k}_{o}": self._opts[o].init(params[k]) for k in ("fwd_actor", "bwd_actor") for o in ("adv", "l1")},
        }
        self.history: list[tuple[int, str, float]] = []
        self.n_updates = 0

    def act_enc(self, state_norm, eta, t_norm) -> np.ndarray:
        d = self.dtype
        return np.asarray(self._act(self.params["fwd_actor"], np.asarray(state_norm, d),
                                    np.asarray(eta, d), np.asarray([t_norm], d)))

    def make_actor(self, rng: np.random.Generator):
        """Stochastic rollout policy ``act(state, index, elapsed) -> action``."""
        noise = self.noise_process()

        def act(state, i, elapsed):
            enc = self.act_enc(self.roi.normalize(state), noise.sample(rng), elapsed / self.time_scale)
            return self.codec.enc_to_action(enc)

        return act

    def noise_process(self, dt: float = 1e-2) -> NoiseProcess:
        return NoiseProcess(self.cfg.latent_dim, self.cfg.noise, self.cfg.noise_sigma, dt=dt)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        d = self.dtype
        raw = buffer.sample(rng, cfg.batch_size, cfg.n_critic + 1)
        batch = {k: np.asarray(v, d) for k, v in raw.items()}
        critic_b = {k: v[:-1] for k, v in batch.items()}
        actor_b = {k: v[-1] for k, v in batch.items()}
        u = np.asarray(rng.uniform(size=(cfg.n_critic, 2, cfg.batch_size)), d)
        self.params, self.opt, losses = self._update(self.params, self.opt, critic_b, actor_b, u)
        self.n_updates += 1
        losses = np.asarray(losses)
        if not np.all(np.isfinite(losses)):
            raise TrainingDiverged(f"non-finite DATI loss after {self.n_updates} updates")
        if self.n_updates % cfg.log_every == 0:
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


def dati_train(env, cfg: DatiConfig = DatiConfig(), seed: int = 0, references=None,
               codec=None, progress=None, on_episode=None) -> DatiAgent:
    """Train DATI for ``cfg.episodes`` episodes of ``env``.

    One update round (``n_critic`` critic batches, then one actor batch) runs
    every ``update_every`` environment steps once the warm-up episodes have
    filled the replay buffer.
    """
    codec = codec or make_codec(env, references if references is not None else getattr(env, "tracks", None))
    agent = DatiAgent(cfg, codec, env.roi, env.time_scale, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(8,)))
    max_len = max(len(t) for t in env.tracks) if hasattr(env, "tracks") else env.spec.n_steps + 1
    buffer = ReplayBuffer(cfg.episodes * max_len, {"s": 2, "eta": cfg.latent_dim, "t": 1,
                                                   "a_hat": codec.enc_dim, "a_star": codec.enc_dim, "r": 1})
    noise = agent.noise_process(getattr(env, "dt", 1e-2))
    last_good = agent.state_dict()
    step = 0
    for ep in range(cfg.episodes):
        state, ref = env.reset(seed, ep, TRAIN_STREAM)
        noise.reset()
        for i in range(ref.n_steps):
            s_norm = agent.roi.normalize(state)
            t_norm = env.elapsed / agent.time_scale
            eta = noise.sample(rng)
            enc = agent.act_enc(s_norm, eta, t_norm)
            a_star = env.expert_action(i)
            out = env.step(codec.enc_to_action(enc))
            buffer.add(s=s_norm, eta=eta, t=t_norm, a_hat=enc, a_star=codec.action_to_enc(a_star), r=out.reward)
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
