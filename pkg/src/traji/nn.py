"""Small feed-forward networks over flat parameter vectors.

A network is described by a hashable :class:`NetworkSpec`; its parameters
live in a single flat vector whose layout is derived from the spec. Inputs
arrive as named slots, each with its own feature extractor:

``dense``  a dense layer of ``feature_width`` units (relu);
``raw``    passed through unchanged (the generator noise);
``time``   a learned embedding of a scalar time, one affine component and
           ``time_dim - 1`` sinusoids;
``reward`` a scalar tiled to the width of all other features and fed to a
           dense layer whose kernel is constrained to be non-negative.

Differentiation is delegated to JAX, which also provides the second-order
path needed by the gradient penalty.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

__all__ = [
    "Slot",
    "NetworkSpec",
    "layout",
    "n_params",
    "nonneg_mask",
    "init_params",
    "unflatten",
    "forward",
    "time_embed",
    "grad",
    "gp_loss",
    "gradient_penalty",
    "AdamState",
    "Adam",
    "ShapeError",
]

ACTIVATIONS: dict[str, Callable] = {
    "relu": jax.nn.relu,
    "elu": jax.nn.elu,
    "tanh": jnp.tanh,
    "linear": lambda x: x,
}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    name: str
    dim: int
    kind: str = "dense"

    def __post_init__(self):
        if self.kind not in ("dense", "raw", "time", "reward"):
            raise ValueError(f"unknown slot kind {self.kind!r}")
        if self.dim <= 0:
            raise ValueError("slot dims must be positive")


@dataclass(frozen=True)
class NetworkSpec:
    slots: tuple[Slot, ...]
    out_dim: int
    feature_width: int = 16
    time_dim: int = 76
    hidden: tuple[int, ...] = (32, 32, 32, 32)
    out_activation: str = "linear"
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if sum(s.kind == "reward" for s in self.slots) > 1:
            raise ValueError("at most one reward slot")
        if self.out_activation not in ACTIVATIONS or self.hidden_activation not in ACTIVATIONS:
            raise ValueError("unknown activation")

    def slot(self, name: str) -> Slot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def feature_dim(self, s: Slot) -> int:
        if s.kind == "dense":
            return self.feature_width
        if s.kind == "time":
            return self.time_dim
        if s.kind == "raw":
            return s.dim
        return self.base_features

    @property
    def base_features(self) -> int:
        return sum(self.feature_dim(s) for s in self.slots if s.kind != "reward")

    @property
    def trunk_in(self) -> int:
        return sum(self.feature_dim(s) for s in self.slots)

    def to_dict(self) -> dict:
        return {"slots": [[s.name, s.dim, s.kind] for s in self.slots], "out_dim": self.out_dim,
                "feature_width": self.feature_width, "time_dim": self.time_dim,
                "hidden": list(self.hidden), "out_activation": self.out_activation,
                "hidden_activation": self.hidden_activation}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        d = dict(d)
        d["slots"] = tuple(Slot(*s) for s in d["slots"])
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@functools.lru_cache(maxsize=None)
def layout(spec: NetworkSpec) -> tuple[tuple[str, tuple[int, ...], int], ...]:
    """``(name, shape, offset)`` for every parameter block, in flat order."""
    blocks = []
    for s in spec.slots:
        if s.kind == "dense":
            blocks += [(f"{s.name}.W", (s.dim, spec.feature_width)), (f"{s.name}.b", (spec.feature_width,))]
        elif s.kind == "time":
            blocks += [(f"{s.name}.w", (spec.time_dim,)), (f"{s.name}.phi", (spec.time_dim,))]
        elif s.kind == "reward":
            f = spec.base_features
            blocks += [(f"{s.name}.K", (f, f)), (f"{s.name}.b", (f,))]
    sizes = (spec.trunk_in, *spec.hidden, spec.out_dim)
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        name = "out" if i == len(sizes) - 2 else f"h{i}"
        blocks += [(f"{name}.W", (a, b)), (f"{name}.b", (b,))]
    out, off = [], 0
    for name, shape in blocks:
        out.append((name, shape, off))
        off += math.prod(shape)
    return tuple(out)


def n_params(spec: NetworkSpec) -> int:
    name, shape, off = layout(spec)[-1]
    return off + math.prod(shape)


@functools.lru_cache(maxsize=None)
def _mask(spec: NetworkSpec) -> np.ndarray:
    mask = np.zeros(n_params(spec), dtype=bool)
    for name, shape, off in layout(spec):
        if name.endswith(".K"):
            mask[off: off + math.prod(shape)] = True
    mask.setflags(write=False)
    return mask


def nonneg_mask(spec: NetworkSpec) -> np.ndarray:
    """Boolean mask of the entries constrained to stay non-negative."""
    return _mask(spec)


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32) -> jnp.ndarray:
    """He-uniform hidden layers, small uniform output layer, non-negative reward kernel."""
    parts = []
    for name, shape, _ in layout(spec):
        size = math.prod(shape)
        if name.endswith(".b"):
            v = np.zeros(size)
        elif name.endswith(".phi"):
            v = rng.uniform(0.0, 2 * np.pi, size)
            v[0] = 0.0
        elif name.endswith(".w"):
            v = rng.normal(0.0, 2 * np.pi, size)
            v[0] = rng.uniform(-1.0, 1.0)
        elif name.endswith(".K"):
            v = rng.uniform(0.0, 2.0 / shape[0], size)
        elif name.startswith("out."):
            v = rng.uniform(-3e-3, 3e-3, size)
        else:
            lim = math.sqrt(6.0 / shape[0])
            v = rng.uniform(-lim, lim, size)
        parts.append(v)
    return jnp.asarray(np.concatenate(parts), dtype=dtype)


def unflatten(spec: NetworkSpec, params) -> dict[str, jnp.ndarray]:
    if params.shape != (n_params(spec),):
        raise ShapeError(f"expected {n_params(spec)} parameters, got {params.shape}")
    return {name: params[off: off + math.prod(shape)].reshape(shape)
            for name, shape, off in layout(spec)}


def time_embed(t, w, phi):
    """``[w0*t + phi0, sin(w1*t + phi1), ..., sin(w_{k-1}*t + phi_{k-1})]``.

    ``t`` has shape (B,) or (B, 1); the result has shape (B, k).
    """
    t = jnp.reshape(t, (-1, 1))
    z = t * w + phi
    return jnp.concatenate([z[:, :1], jnp.sin(z[:, 1:])], axis=1)


def forward(spec: NetworkSpec, params, inputs: Mapping[str, jnp.ndarray]) -> jnp.ndarray:
    """Evaluate the network on a batch. Returns an array of shape (B, out_dim)."""
    p = unflatten(spec, params)
    act = ACTIVATIONS[spec.hidden_activation]
    feats, reward_slot = [], None
    for s in spec.slots:
        if s.name not in inputs:
            raise ShapeError(f"missing input slot {s.name!r}")
        x = jnp.asarray(inputs[s.name], dtype=params.dtype)
        if s.kind == "reward":
            reward_slot = (s, jnp.reshape(x, (-1, 1)))
            continue
        if s.kind == "time":
            if x.ndim == 2 and x.shape[1] != 1:
                raise ShapeError(f"time slot {s.name!r} takes a scalar per row")
            feats.append(time_embed(x, p[f"{s.name}.w"], p[f"{s.name}.phi"]))
            continue
        if x.ndim != 2 or x.shape[1] != s.dim:
            raise ShapeError(f"slot {s.name!r} expects (B, {s.dim}), got {x.shape}")
        feats.append(x if s.kind == "raw" else act(x @ p[f"{s.name}.W"] + p[f"{s.name}.b"]))
    h = jnp.concatenate(feats, axis=1)
    if reward_slot is not None:
        s, r = reward_slot
        tiled = jnp.tile(r, (1, spec.base_features))
        h = jnp.concatenate([h, tiled @ p[f"{s.name}.K"] + p[f"{s.name}.b"]], axis=1)
    for i in range(len(spec.hidden)):
        h = act(h @ p[f"h{i}.W"] + p[f"h{i}.b"])
    return ACTIVATIONS[spec.out_activation](h @ p["out.W"] + p["out.b"])


def grad(spec: NetworkSpec, params, loss_fn: Callable) -> jnp.ndarray:
    """Reverse-mode gradient of ``loss_fn(params)`` (a scalar) w.r.t. the flat params."""
    from .env import NumericError

    value, g = jax.value_and_grad(loss_fn)(params)
    if not bool(jnp.isfinite(value)):
        raise NumericError(f"non-finite loss {float(value)}")
    return g


def gp_loss(spec: NetworkSpec, params, real, fake, u, lam: float, slot: str,
            context: Mapping[str, jnp.ndarray]):
    """Gradient penalty on interpolates between real and fake samples of ``slot``.

    ``u`` holds one mixing coefficient per row; the other slots are taken
    from ``context`` and held fixed. The input gradient of the critic is
    computed inside the loss, so differentiating this function w.r.t.
    ``params`` goes through second-order reverse mode.
    """
    u = jnp.reshape(u, (-1, 1))
    x_hat = u * real + (1.0 - u) * fake

    def critic_sum(x):
        return jnp.sum(forward(spec, params, {**context, slot: x}))

    g = jax.grad(critic_sum)(x_hat)
    norms = jnp.sqrt(jnp.sum(g * g, axis=1) + 1e-12)
    return lam * jnp.mean((norms - 1.0) ** 2)


def gradient_penalty(spec: NetworkSpec, params, real, fake, lam: float = 10.0, *, u=None,
                     rng: np.random.Generator | None = None, slot: str = "action",
                     context: Mapping[str, jnp.ndarray] | None = None, method: str = "autodiff",
                     fd_step: float = 1e-6):
    """Penalty value and its gradient w.r.t. the critic parameters.

    ``method="fd"`` replaces the second-order reverse pass by central
    differences over every parameter; it is slow and meant for debugging.
    """
    real = jnp.asarray(real, dtype=params.dtype)
    fake = jnp.asarray(fake, dtype=params.dtype)
    if real.shape != fake.shape:
        raise ShapeError("real and fake samples differ in shape")
    if u is None:
        u = (rng or np.random.default_rng()).uniform(size=real.shape[0])
    u = jnp.asarray(u, dtype=params.dtype)
    loss = jax.jit(lambda p: gp_loss(spec, p, real, fake, u, lam, slot, context or {}))
    if method == "autodiff":
        return jax.value_and_grad(loss)(params)
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    g = np.zeros(params.shape)
    for i in range(params.shape[0]):
        e = jnp.zeros_like(params).at[i].set(fd_step)
        g[i] = (float(loss(params + e)) - float(loss(params - e))) / (2 * fd_step)
    return loss(params), jnp.asarray(g, dtype=params.dtype)


class AdamState(NamedTuple):
    m: jnp.ndarray
    v: jnp.ndarray
    count: jnp.ndarray


@dataclass(frozen=True)
class Adam:
    """Adam with bias correction and an optional non-negativity projection."""

    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    mask: np.ndarray | None = field(default=None, compare=False, hash=False)

    def init(self, params) -> AdamState:
        z = jnp.zeros_like(params)
        return AdamState(z, z, jnp.zeros((), dtype=jnp.int32))

    def step(self, state: AdamState, params, g) -> tuple[jnp.ndarray, AdamState]:
        if g.shape != params.shape:
            raise ShapeError("gradient and parameter shapes differ")
        count = state.count + 1
        m = self.beta1 * state.m + (1 - self.beta1) * g
        v = self.beta2 * state.v + (1 - self.beta2) * g * g
        c = count.astype(params.dtype)
        m_hat = m / (1 - self.beta1 ** c)
        v_hat = v / (1 - self.beta2 ** c)
        new = params - self.lr * m_hat / (jnp.sqrt(v_hat) + self.eps)
        if self.mask is not None:
            new = jnp.where(self.mask, jnp.maximum(new, 0.0), new)
        return new.astype(params.dtype), AdamState(m, v, count)
