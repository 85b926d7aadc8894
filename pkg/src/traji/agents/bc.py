"""Behavioral cloning: a diagonal-Gaussian policy fitted to expert pairs.

The network maps the normalized state to the mean and (softplus) standard
deviation of the encoded action. Training maximizes log-likelihood plus a
small entropy bonus; rollouts use the mean.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .. import nn
from ..env import TRAIN_STREAM
from .common import make_codec

__all__ = ["BcConfig", "BcAgent", "bc_spec", "collect_demos", "bc_train", "gaussian_logpdf",
           "gaussian_entropy"]

LOG_2PI = math.log(2 * math.pi)
STD_FLOOR = 1e-4


@dataclass(frozen=True)
class BcConfig:
    episodes: int = 100
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    entropy_weight: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    feature_width: int = 156
    hidden: tuple[int, ...] = (32, 32, 32, 32)
    dtype: str = "float32"
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


def bc_spec(cfg: BcConfig, codec) -> nn.NetworkSpec:
    return nn.NetworkSpec((nn.Slot("state", 2),), 2 * codec.enc_dim, feature_width=cfg.feature_width,
                          hidden=cfg.hidden)


def split_head(out):
    """Network output -> (mean, std); the std is kept strictly positive."""
    d = out.shape[1] // 2
    return out[:, :d], jax.nn.softplus(out[:, d:]) + STD_FLOOR


def gaussian_logpdf(x, mean, std):
    return jnp.sum(-0.5 * ((x - mean) / std) ** 2 - jnp.log(std) - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(std):
    return jnp.sum(jnp.log(std) + 0.5 * (1.0 + LOG_2PI), axis=-1)


@functools.lru_cache(maxsize=16)
def _compiled(cfg: BcConfig, codec):
    spec = bc_spec(cfg, codec)
    opt = nn.Adam(cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)

    def head(p, s):
        return split_head(nn.forward(spec, p, {"state": s}))

    def loss(p, s, a):
        mean, std = head(p, s)
        nll = -jnp.mean(gaussian_logpdf(a, mean, std))
        ent = jnp.mean(gaussian_entropy(std))
        return nll - cfg.entropy_weight * ent, nll

    def update(p, o, s, a):
        (value, nll), g = jax.value_and_grad(loss, has_aux=True)(p, s, a)
        p, o = opt.step(o, p, g)
        return p, o, value, nll

    def mean_action(p, s):
        return head(p, s[None])[0][0]

    return spec, opt, jax.jit(update), jax.jit(mean_action), jax.jit(head)


class BcAgent:
    kind = "bc"

    def __init__(self, cfg: BcConfig, codec, roi, time_scale: float = 1.0, seed: int = 0, params=None):
        self.cfg, self.codec, self.roi, self.time_scale, self.seed = cfg, codec, roi, float(time_scale), seed
        self.spec, self._opt, self._update, self._mean, self._head = _compiled(cfg, codec)
        self.dtype = jnp.dtype(cfg.dtype)
        if params is None:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
            params = {"policy": nn.init_params(self.spec, rng, self.dtype)}
        self.params = params
        self.opt = {"policy": self._opt.init(params["policy"])}
        self.history: list[tuple[int, str, float]] = []
        self.n_updates = 0

    def distribution(self, states_norm):
        """(mean, std) of the encoded action for a batch of normalized states."""
        mean, std = self._head(self.params["policy"], np.asarray(states_norm, self.dtype))
        return np.asarray(mean), np.asarray(std)

    def make_actor(self, rng: np.random.Generator | None = None):
        def act(state, i, elapsed):
            s = np.asarray(self.roi.normalize(state), self.dtype)
            return self.codec.enc_to_action(np.asarray(self._mean(self.params["policy"], s)))
        return act

    def fit(self, states_norm: np.ndarray, actions_enc: np.ndarray, rng: np.random.Generator) -> list[float]:
        """Minibatch epochs over the demonstrations; returns the mean NLL per epoch."""
        s = np.asarray(states_norm, self.dtype)
        a = np.asarray(actions_enc, self.dtype)
        n = len(s)
        bs = min(self.cfg.batch_size, n)
        p, o = self.params["policy"], self.opt["policy"]
        curve = []
        for _ in range(self.cfg.epochs):
            perm = rng.permutation(n)
            nlls = []
            for j in range(0, n - bs + 1, bs):
                idx = perm[j: j + bs]
                p, o, value, nll = self._update(p, o, s[idx], a[idx])
                self.n_updates += 1
                if self.n_updates % self.cfg.log_every == 0:
                    self.history += [(self.n_updates, "loss", float(value)), (self.n_updates, "nll", float(nll))]
                nlls.append(nll)
            curve.append(float(np.mean(nlls)))
        self.params, self.opt = {"policy": p}, {"policy": o}
        return curve

    def state_dict(self) -> dict:
        return {"params": {k: np.asarray(v) for k, v in self.params.items()},
                "opt": {k: [np.asarray(x) for x in v] for k, v in self.opt.items()}}

    def load_state(self, state: dict):
        self.params = {k: jnp.asarray(v, self.dtype) for k, v in state["params"].items()}
        if "opt" in state:
            self.opt = {k: nn.AdamState(jnp.asarray(v[0], self.dtype), jnp.asarray(v[1], self.dtype),
                                        jnp.asarray(v[2], jnp.int32)) for k, v in state["opt"].items()}


def collect_demos(env, episodes: int, seed: int, codec):
    """(normalized state, encoded perfect action) pairs along training references."""
    states, actions = [], []
    for ep in range(episodes):
        _, ref = env.reset(seed, ep, TRAIN_STREAM)
        for i in range(ref.n_steps):
            states.append(env.roi.normalize(ref.states[i]))
            actions.append(codec.action_to_enc(env.expert_action(i)))
    return np.asarray(states), np.asarray(actions)


def bc_train(env, cfg: BcConfig = BcConfig(), seed: int = 0, references=None, codec=None,
             progress=None) -> BcAgent:
    codec = codec or make_codec(env, references if references is not None else getattr(env, "tracks", None))
    agent = BcAgent(cfg, codec, env.roi, env.time_scale, seed)
    states, actions = collect_demos(env, cfg.episodes, seed, codec)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(8,)))
    curve = agent.fit(states, actions, rng)
    if progress is not None:
        for ep, v in enumerate(curve):
            progress(ep, v)
    return agent
