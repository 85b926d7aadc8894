"""Closed-form families of reference trajectories.

A family maps a shape parameter ``alpha`` and a time grid to planar states.
The four built-in families are registered at import time; new ones can be
added with :func:`register_family`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import numpy as np

__all__ = [
    "State2",
    "Trajectory",
    "FamilySpec",
    "register_family",
    "family_names",
    "default_spec",
    "sample_family_trajectory",
    "ParameterError",
]


class ParameterError(ValueError):
    """Raised for out-of-range or inconsistent parameters."""


class State2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed sequence of states.

    ``states`` has shape (n, d) and ``times`` shape (n,). Planar trajectories
    use (x, y); geographic ones use (lon, lat) in degrees.
    """

    states: np.ndarray
    times: np.ndarray
    alpha: float | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        times = np.asarray(self.times, dtype=float)
        if states.ndim != 2 or times.ndim != 1 or len(states) != len(times):
            raise ParameterError("states and times lengths disagree")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ParameterError("times must be strictly increasing")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)

    def __len__(self):
        return len(self.states)

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    def to_csv(self, path) -> None:
        """Write the trajectory with header ``t,x,y``."""
        with open(path, "w", newline="") as fh:
            fh.write("t,x,y\n")
            for t, (x, y) in zip(self.times.tolist(), self.states[:, :2].tolist()):
                fh.write(f"{t!r},{x!r},{y!r}\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(states=data[:, 1:3], times=data[:, 0])


FamilyFn = Callable[[float, np.ndarray, Mapping[str, float]], np.ndarray]

_REGISTRY: dict[str, tuple[FamilyFn, dict]] = {}


def register_family(name: str, fn: FamilyFn, *, fixed_params: Mapping[str, float],
                    alpha_range: tuple[float, float]) -> None:
    """Register a family ``fn(alpha, t, params) -> (len(t), 2) array``.

    ``fixed_params`` must contain ``omega``; the horizon is ``2*pi/omega``.
    """
    if "omega" not in fixed_params:
        raise ParameterError("a family needs an 'omega' parameter to define its horizon")
    _REGISTRY[name] = (fn, {"fixed_params": dict(fixed_params), "alpha_range": tuple(alpha_range)})


def family_names() -> list[str]:
    return list(_REGISTRY)


def _fixed_start(alpha, t, p):
    return np.stack([np.sqrt(alpha * t), np.cos(p["omega"] * t) * np.exp(-p["kappa"] * t)], axis=-1)


def _u_shaped(alpha, t, p):
    w = p["omega"]
    return np.stack([w * t, np.cos(w * t) - alpha * np.cos(2 * w * t) / 2], axis=-1)


def _circles(alpha, t, p):
    w = p["omega"]
    return np.stack([alpha * np.cos(w * t), alpha * np.sin(w * t)], axis=-1)


def _ribbons(alpha, t, p):
    w = p["omega"]
    r = p["R1"] - p["R2"] * np.cos(w * t / 4)
    return np.stack([r * np.cos(w * t + alpha), r * np.sin(w * t + alpha)], axis=-1)


register_family("FixedStart", _fixed_start, fixed_params={"omega": 0.9, "kappa": 0.9}, alpha_range=(5.0, 10.0))
register_family("UShaped", _u_shaped, fixed_params={"omega": 0.9}, alpha_range=(0.2, 0.8))
register_family("Circles", _circles, fixed_params={"omega": 0.4}, alpha_range=(0.5, 1.0))
register_family("Ribbons", _ribbons, fixed_params={"omega": 0.4, "R1": 1.0, "R2": 2.0},
                alpha_range=(-math.pi, math.pi))


@dataclass(frozen=True)
class FamilySpec:
    """A family of reference trajectories with its shape parameters."""

    kind: str
    fixed_params: Mapping[str, float] = field(default_factory=dict)
    alpha_range: tuple[float, float] = (0.0, 1.0)
    n_steps: int = 200

    def __post_init__(self):
        if self.kind not in _REGISTRY:
            raise ParameterError(f"unknown family {self.kind!r}; known: {family_names()}")
        lo, hi = self.alpha_range
        if not lo < hi:
            raise ParameterError("alpha_range must satisfy lo < hi")
        if self.n_steps < 2:
            raise ParameterError("n_steps must be >= 2")
        params = dict(self.fixed_params)
        if not all(math.isfinite(v) for v in params.values()):
            raise ParameterError("fixed parameters must be finite")
        object.__setattr__(self, "fixed_params", params)
        object.__setattr__(self, "alpha_range", (float(lo), float(hi)))

    @property
    def horizon(self) -> float:
        return 2 * math.pi / self.fixed_params["omega"]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def to_dict(self) -> dict:
        return {"kind": self.kind, "fixed_params": dict(self.fixed_params),
                "alpha_range": list(self.alpha_range), "n_steps": self.n_steps}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FamilySpec":
        return cls(kind=d["kind"], fixed_params=d["fixed_params"],
                   alpha_range=tuple(d["alpha_range"]), n_steps=int(d["n_steps"]))


def default_spec(kind: str, n_steps: int = 200) -> FamilySpec:
    if kind not in _REGISTRY:
        raise ParameterError(f"unknown family {kind!r}; known: {family_names()}")
    defaults = _REGISTRY[kind][1]
    return FamilySpec(kind, defaults["fixed_params"], defaults["alpha_range"], n_steps)


def sample_family_trajectory(spec: FamilySpec, alpha: float, tau: int | None = None) -> Trajectory:
    """Evaluate the family at ``t_i = i*T/tau`` for ``i = 0..tau``."""
    lo, hi = spec.alpha_range
    if not lo <= alpha <= hi:
        raise ParameterError(f"alpha={alpha} outside [{lo}, {hi}]")
    tau = spec.n_steps if tau is None else tau
    if tau < 2:
        raise ParameterError("tau must be >= 2")
    t = np.arange(tau + 1) * (spec.horizon / tau)
    fn = _REGISTRY[spec.kind][0]
    return Trajectory(states=fn(alpha, t, spec.fixed_params), times=t, alpha=float(alpha))
