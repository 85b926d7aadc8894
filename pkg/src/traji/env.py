"""Episodic trajectory-imitation environment.

The agent sees only its own predicted state and moves it with a known
kinematic map ``g``; the hidden reference trajectory is used to score each
step with the sparse DTW reward. Steps that would leave the region of
interest keep the current state (sticking).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import geo
from .dtw import PrefixDtw, dtw_diameter, reward
from .families import (FamilySpec, ParameterError, State2, Trajectory,
                       sample_family_trajectory)

__all__ = [
    "Action2",
    "Roi",
    "EnvStep",
    "NumericError",
    "PlanarKinematics",
    "GeoKinematics",
    "env_step",
    "perfect_policy",
    "perfect_rollout",
    "compute_roi",
    "episode_rng",
    "sample_alpha",
    "env_reset",
    "TrajectoryEnv",
    "FamilyEnv",
    "TrackEnv",
    "TRAIN_STREAM",
    "EVAL_STREAM",
]

TRAIN_STREAM = 0
EVAL_STREAM = 1


class NumericError(ArithmeticError):
    """Non-finite numbers where finite ones are required."""


class Action2(NamedTuple):
    u: float
    xi: float


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class Roi:
    """Axis-aligned box; for geographic states x is longitude and y latitude."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ParameterError("empty region of interest")

    def contains(self, p) -> bool:
        return bool(self.x_min <= p[0] <= self.x_max and self.y_min <= p[1] <= self.y_max)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2])

    @property
    def half_extent(self) -> np.ndarray:
        return np.array([(self.x_max - self.x_min) / 2, (self.y_max - self.y_min) / 2])

    def normalize(self, p) -> np.ndarray:
        """Affine map of the box onto [-1, 1]^2."""
        return (np.asarray(p, dtype=float) - self.center) / self.half_extent

    def denormalize(self, q) -> np.ndarray:
        return np.asarray(q, dtype=float) * self.half_extent + self.center

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min, "y_max": self.y_max}


class EnvStep(NamedTuple):
    next_state: np.ndarray
    reward: int
    done: bool
    info: dict


class PlanarKinematics:
    """``s' = s + (u cos xi, u sin xi) dt`` with a fixed step ``dt``."""

    name = "planar"
    state_dim = 2
    action_dim = 2
    metric = "euclidean"

    def step(self, s, a, dt):
        u, xi = float(a[0]), float(a[1])
        return np.array([s[0] + u * math.cos(xi) * dt, s[1] + u * math.sin(xi) * dt])

    def perfect_action(self, s, s_next, dt):
        return np.array(perfect_policy(s, s_next, dt))

    def action_dt(self, a, dt):
        return dt


class GeoKinematics:
    """Vessel update on the sphere; the action carries its own ``dt`` (hours)."""

    name = "geo"
    state_dim = 2
    action_dim = 3
    metric = "great_circle"

    def step(self, s, a, dt):
        return np.array(geo.geo_step(s, a))

    def perfect_action(self, s, s_next, dt):
        return np.array(geo.geo_perfect_action(s, s_next, dt))

    def action_dt(self, a, dt):
        return float(a[2])


def env_step(current, action, dt: float, roi: Roi, kinematics=None) -> tuple[np.ndarray, bool]:
    """Apply the kinematic map with sticking. Returns ``(next_state, stuck)``."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if not np.all(np.isfinite(action)):
        raise NumericError(f"non-finite action {action!r}")
    kin = kinematics or _PLANAR
    candidate = kin.step(np.asarray(current, dtype=float), action, dt)
    if not np.all(np.isfinite(candidate)):
        raise NumericError("kinematic update produced a non-finite state")
    if roi.contains(candidate):
        return candidate, False
    return np.array(current, dtype=float), True


def perfect_policy(s_t, s_next, dt: float) -> Action2:
    """Speed and heading that move ``s_t`` exactly onto ``s_next`` in ``dt``.

    Zero displacement returns ``(0, 0)``.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    dx = float(s_next[0]) - float(s_t[0])
    dy = float(s_next[1]) - float(s_t[1])
    if dx == 0.0 and dy == 0.0:
        return Action2(0.0, 0.0)
    xi = math.atan2(dy, dx)
    return Action2(math.hypot(dx, dy) / dt, math.pi if xi == -math.pi else xi)


_PLANAR = PlanarKinematics()


def compute_roi(spec: FamilySpec, margin: float = 0.1, grid: int = 33) -> Roi:
    """Bounding box of the family's trajectories, widened by ``margin`` times its extent.

    The box covers the two boundary trajectories and an alpha grid between
    them, so families whose extremes are not at the boundaries (rotations)
    still fit.
    """
    if margin < 0:
        raise ParameterError("margin must be non-negative")
    lo, hi = spec.alpha_range
    pts = np.concatenate([sample_family_trajectory(spec, a).states
                          for a in np.linspace(lo, hi, grid)])
    return roi_from_points(pts, margin)


def roi_from_points(pts, margin: float = 0.1) -> Roi:
    pts = np.asarray(pts, dtype=float)
    mn, mx = pts.min(axis=0), pts.max(axis=0)
    ext = mx - mn
    ext = np.where(ext > 0, ext, 1.0)
    mn, mx = mn - margin * ext, mx + margin * ext
    return Roi(float(mn[0]), float(mx[0]), float(mn[1]), float(mx[1]))


def episode_rng(seed: int, episode: int = 0, stream: int = TRAIN_STREAM) -> np.random.Generator:
    """Independent generator for one episode of one stream of a run."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(episode))))


def sample_alpha(spec: FamilySpec, seed: int, episode: int = 0, stream: int = TRAIN_STREAM) -> float:
    lo, hi = spec.alpha_range
    return float(episode_rng(seed, episode, stream).uniform(lo, hi))


def env_reset(spec: FamilySpec, seed: int, episode: int = 0,
              stream: int = TRAIN_STREAM) -> tuple[State2, Trajectory]:
    ref = sample_family_trajectory(spec, sample_alpha(spec, seed, episode, stream))
    return State2(*ref.states[0]), ref


class TrajectoryEnv:
    """One episode at a time against a hidden reference trajectory.

    Parameters
    ----------
    kinematics : PlanarKinematics or GeoKinematics
    roi : Roi
    epsilon : float
        Reward threshold on the (normalized) smoothed prefix DTW.
    diameter : float
        Normalization constant; 1.0 leaves distances in ground units.
    smoothing : float
        Weight on history in the exponential smoothing.
    """

    def __init__(self, kinematics, roi: Roi, epsilon: float, diameter: float = 1.0,
                 smoothing: float = 0.9):
        self.kinematics = kinematics
        self.roi = roi
        self.epsilon = float(epsilon)
        self.diameter = float(diameter)
        self.smoothing = float(smoothing)
        self.reference: Trajectory | None = None
        self.sticking_count = 0

    def reset_to(self, reference: Trajectory) -> np.ndarray:
        self.reference = reference
        self.index = 0
        self.elapsed = 0.0
        self.sticking_count = 0
        self.state = reference.states[0, :2].copy()
        self.rollout = [self.state.copy()]
        self.times = [0.0]
        self._prefix = PrefixDtw(self.kinematics.metric, self.smoothing, capacity=len(reference))
        self._prefix.step(self.state, reference.states[0])
        return self.state.copy()

    @property
    def n_steps(self) -> int:
        return self.reference.n_steps

    def reference_dt(self, i: int | None = None) -> float:
        i = self.index if i is None else i
        return float(self.reference.times[i + 1] - self.reference.times[i])

    def expert_action(self, i: int | None = None) -> np.ndarray:
        """Perfect-policy action along the reference at step ``i``."""
        i = self.index if i is None else i
        s = self.reference.states
        return self.kinematics.perfect_action(s[i], s[i + 1], self.reference_dt(i))

    def step(self, action) -> EnvStep:
        if self.reference is None or self.index >= self.n_steps:
            raise RuntimeError("episode finished; call reset first")
        dt = self.kinematics.action_dt(action, self.reference_dt())
        nxt, stuck = env_step(self.state, action, dt, self.roi, self.kinematics)
        self.sticking_count += int(stuck)
        self.index += 1
        self.elapsed += dt
        self.state = nxt
        self.rollout.append(nxt.copy())
        self.times.append(self.elapsed)
        raw, smoothed = self._prefix.step(nxt, self.reference.states[self.index])
        norm = smoothed / self.diameter
        info = {"raw": raw, "smoothed": smoothed, "normalized": norm, "stuck": stuck,
                "sticking_count": self.sticking_count}
        return EnvStep(nxt.copy(), reward(norm, self.epsilon), self.index == self.n_steps, info)

    def rollout_trajectory(self) -> Trajectory:
        times = np.asarray(self.times)
        # sticking with zero dt is impossible here, but a learned dt can repeat times
        if np.any(np.diff(times) <= 0):
            times = np.arange(len(times), dtype=float)
        return Trajectory(np.array(self.rollout), times)

    @property
    def normalized_distance(self) -> float:
        return self._prefix.smoothed / self.diameter


class FamilyEnv(TrajectoryEnv):
    """Synthetic environment drawing one family member per episode."""

    def __init__(self, spec: FamilySpec, epsilon: float = 0.1, smoothing: float = 0.9,
                 margin: float = 0.1, roi: Roi | None = None, diameter: float | None = None):
        super().__init__(PlanarKinematics(), roi or compute_roi(spec, margin), epsilon,
                         dtw_diameter(spec) if diameter is None else diameter, smoothing)
        self.spec = spec
        self.dt = spec.dt

    def reference_dt(self, i: int | None = None) -> float:
        return self.dt

    @property
    def time_scale(self) -> float:
        return self.spec.horizon

    def reset(self, seed: int, episode: int = 0, stream: int = TRAIN_STREAM):
        _, ref = env_reset(self.spec, seed, episode, stream)
        return self.reset_to(ref), ref


class TrackEnv(TrajectoryEnv):
    """Environment over recorded tracks (lon, lat in degrees, times in hours).

    Episode ``e`` of a run replays ``tracks[perm[e % n]]`` for a per-run
    permutation, so each track is seen once before any repeats. Rewards use
    the great-circle ground metric in kilometres without normalization.
    """

    def __init__(self, tracks, roi: Roi, epsilon_km: float = 0.5, smoothing: float = 0.9,
                 max_steps: int | None = None, time_scale: float | None = None):
        super().__init__(GeoKinematics(), roi, epsilon_km, 1.0, smoothing)
        if max_steps is not None:
            tracks = [Trajectory(t.states[: max_steps + 1], t.times[: max_steps + 1]) for t in tracks]
        if not tracks:
            raise ParameterError("no tracks")
        self.tracks = list(tracks)
        durations = [t.times[-1] - t.times[0] for t in self.tracks]
        self._time_scale = float(time_scale or np.median(durations) or 1.0)

    @property
    def time_scale(self) -> float:
        return self._time_scale

    def reset(self, seed: int, episode: int = 0, stream: int = TRAIN_STREAM):
        n = len(self.tracks)
        perm = episode_rng(seed, episode // n, stream).permutation(n)
        ref = self.tracks[perm[episode % n]]
        ref = Trajectory(ref.states, ref.times - ref.times[0])
        return self.reset_to(ref), ref


def perfect_rollout(env: TrajectoryEnv, reference: Trajectory) -> Trajectory:
    """Roll the perfect policy through ``env`` against ``reference``."""
    env.reset_to(reference)
    for i in range(reference.n_steps):
        a = env.kinematics.perfect_action(env.state, reference.states[i + 1], env.reference_dt(i))
        env.step(a)
    return env.rollout_trajectory()
