"""Exact dynamic time warping, incremental prefix DTW and the sparse reward.

All distances use the symmetric step pattern (match, insertion, deletion with
unit weights): ``D[i, j] = c(a_i, b_j) + min(D[i-1, j], D[i, j-1], D[i-1, j-1])``.
The ground cost ``c`` is either the planar Euclidean distance or the
great-circle distance in kilometres between (lon, lat) points in degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numba as nb
import numpy as np

from .families import FamilySpec, ParameterError, Trajectory, sample_family_trajectory
from .geo import EARTH_RADIUS_KM

__all__ = [
    "METRICS",
    "DtwConfig",
    "dtw_distance",
    "dtw_matrix",
    "PrefixDtw",
    "smooth",
    "reward",
    "dtw_diameter",
    "normalized_distance",
    "is_representative",
]

METRICS = {"euclidean": 0, "great_circle": 1}


@dataclass(frozen=True)
class DtwConfig:
    metric: str = "euclidean"
    smoothing: float = 0.9
    epsilon: float = 0.1
    diameter: float = 1.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ParameterError(f"unknown ground metric {self.metric!r}")
        if not 0.0 <= self.smoothing < 1.0:
            raise ParameterError("smoothing factor must lie in [0, 1)")
        if self.epsilon <= 0 or self.diameter <= 0:
            raise ParameterError("epsilon and diameter must be positive")


@nb.njit(cache=True)
def _cost(a, b, metric):
    if metric == 0:
        dx = a[0] - b[0]
        dy = a[1] - b[1]
        return math.sqrt(dx * dx + dy * dy)
    lon1 = math.radians(a[0])
    lat1 = math.radians(a[1])
    lon2 = math.radians(b[0])
    lat2 = math.radians(b[1])
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


@nb.njit(cache=True)
def _dtw_full(a, b, metric, window):
    n = a.shape[0]
    m = b.shape[0]
    D = np.full((n, m), np.inf)
    for i in range(n):
        lo = 0
        hi = m
        if window >= 0:
            lo = max(0, i - window)
            hi = min(m, i + window + 1)
        for j in range(lo, hi):
            c = _cost(a[i], b[j], metric)
            if i == 0 and j == 0:
                D[i, j] = c
            elif i == 0:
                D[i, j] = c + D[i, j - 1]
            elif j == 0:
                D[i, j] = c + D[i - 1, j]
            else:
                D[i, j] = c + min(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1])
    return D


@nb.njit(cache=True)
def _extend(a, b, t, row, col, new_row, new_col, metric):
    # row = D[t-1, 0..t-1], col = D[0..t-1, t-1]; fills D[t, 0..t] and D[0..t, t]
    for i in range(t):
        c = _cost(a[i], b[t], metric)
        if i == 0:
            new_col[i] = c + col[0]
        else:
            new_col[i] = c + min(col[i], new_col[i - 1], col[i - 1])
    for j in range(t):
        c = _cost(a[t], b[j], metric)
        if j == 0:
            new_row[j] = c + row[0]
        else:
            new_row[j] = c + min(row[j], new_row[j - 1], row[j - 1])
    corner = _cost(a[t], b[t], metric) + min(new_col[t - 1], new_row[t - 1], row[t - 1])
    new_row[t] = corner
    new_col[t] = corner
    return corner


def _points(x) -> np.ndarray:
    arr = x.states if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = np.stack([arr, np.zeros_like(arr)], axis=1)
    return np.ascontiguousarray(arr[:, :2], dtype=np.float64)


def dtw_matrix(a, b, metric: str = "euclidean", window: int | None = None) -> np.ndarray:
    """Accumulated-cost matrix of two sequences (1-D inputs are embedded on the x axis)."""
    pa, pb = _points(a), _points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ParameterError("DTW needs non-empty sequences")
    if metric not in METRICS:
        raise ParameterError(f"unknown ground metric {metric!r}")
    w = -1 if window is None else max(int(window), abs(len(pa) - len(pb)))
    return _dtw_full(pa, pb, METRICS[metric], w)


def dtw_distance(a, b, metric: str = "euclidean", window: int | None = None) -> float:
    """Total accumulated cost along the optimal warping path.

    ``window`` enables a Sakoe-Chiba band (widened to at least the length
    difference so that a path always exists); ``None`` is exact DTW.
    """
    return float(dtw_matrix(a, b, metric, window)[-1, -1])


class PrefixDtw:
    """DTW between two sequences that grow in lock step.

    Each :meth:`step` appends one point to both sequences and extends the
    cost matrix by one row and one column, keeping only the last row and
    column. ``raw`` equals ``dtw_distance`` of the two prefixes exactly.
    """

    def __init__(self, metric: str = "euclidean", smoothing: float = 0.9, capacity: int = 256):
        if metric not in METRICS:
            raise ParameterError(f"unknown ground metric {metric!r}")
        self.metric = metric
        self.smoothing = float(smoothing)
        self._code = METRICS[metric]
        self._a = np.zeros((capacity, 2))
        self._b = np.zeros((capacity, 2))
        self._row = np.zeros(capacity)
        self._col = np.zeros(capacity)
        self._new_row = np.zeros(capacity)
        self._new_col = np.zeros(capacity)
        self.length = 0
        self.raw = 0.0
        self.smoothed = 0.0

    def _grow(self):
        cap = 2 * len(self._a)
        for name in ("_a", "_b"):
            old = getattr(self, name)
            new = np.zeros((cap, 2))
            new[: len(old)] = old
            setattr(self, name, new)
        for name in ("_row", "_col", "_new_row", "_new_col"):
            old = getattr(self, name)
            new = np.zeros(cap)
            new[: len(old)] = old
            setattr(self, name, new)

    def step(self, rollout_point, reference_point) -> tuple[float, float]:
        t = self.length
        if t >= len(self._a):
            self._grow()
        self._a[t] = np.asarray(rollout_point, dtype=float)[:2]
        self._b[t] = np.asarray(reference_point, dtype=float)[:2]
        if t == 0:
            raw = float(_cost(self._a[0], self._b[0], self._code))
            self._row[0] = self._col[0] = raw
            self.smoothed = raw
        else:
            raw = float(_extend(self._a, self._b, t, self._row, self._col,
                                self._new_row, self._new_col, self._code))
            self._row, self._new_row = self._new_row, self._row
            self._col, self._new_col = self._new_col, self._col
            self.smoothed = self.smoothing * self.smoothed + (1.0 - self.smoothing) * raw
        self.raw = raw
        self.length = t + 1
        return raw, self.smoothed

    @property
    def frontier(self) -> tuple[np.ndarray, np.ndarray]:
        """Last row and last column of the accumulated-cost matrix."""
        return self._row[: self.length].copy(), self._col[: self.length].copy()


def smooth(values: Iterable[float], smoothing: float = 0.9) -> np.ndarray:
    """Exponential smoothing with weight ``smoothing`` on the history."""
    out = []
    s = None
    for v in values:
        s = v if s is None else smoothing * s + (1 - smoothing) * v
        out.append(s)
    return np.asarray(out, dtype=float)


def reward(smoothed_norm: float, epsilon: float) -> int:
    """Sparse reward: +1 when the normalized smoothed distance is below epsilon."""
    return 1 if smoothed_norm < epsilon else -1


def dtw_diameter(spec: FamilySpec, metric: str = "euclidean", grid: int = 33) -> float:
    """DTW distance between the two boundary trajectories of the family.

    When the boundary trajectories coincide (e.g. an alpha that is a phase
    spanning a full turn) the distance would vanish; the diameter then falls
    back to the largest distance from the lower boundary trajectory to any
    trajectory on an alpha grid.
    """
    lo, hi = spec.alpha_range
    first = sample_family_trajectory(spec, lo)
    d = dtw_distance(first, sample_family_trajectory(spec, hi), metric)
    scale = float(np.max(np.abs(first.states))) * len(first)
    if d > 1e-9 * max(scale, 1.0):
        return d
    alphas = np.linspace(lo, hi, grid)[1:-1]
    return max(dtw_distance(first, sample_family_trajectory(spec, a), metric) for a in alphas)


def normalized_distance(rollout, reference, diameter: float, metric: str = "euclidean",
                        smoothing: float = 0.9) -> float:
    """Exponentially smoothed prefix DTW at the final step, divided by ``diameter``."""
    ra, rb = _points(rollout), _points(reference)
    if len(ra) != len(rb):
        raise ParameterError("rollout and reference must have the same number of steps")
    pd = PrefixDtw(metric, smoothing, capacity=len(ra))
    for p, q in zip(ra, rb):
        pd.step(p, q)
    return pd.smoothed / diameter


def is_representative(rollout, refs, epsilon: float = 0.1, diameter: float = 1.0,
                      metric: str = "euclidean") -> bool:
    """True if some reference lies within ``epsilon`` normalized DTW of the rollout."""
    refs = list(refs)
    if not refs:
        raise ParameterError("need at least one reference")
    best = min(dtw_distance(rollout, r, metric) for r in refs) / diameter
    return best < epsilon
