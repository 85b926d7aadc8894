"""AIS vessel-traffic pipeline.

Records are read from marinecadastre-style CSVs, filtered to a geographic
region and a minimum speed, cleaned of positional glitches, cut into
voyages at stop points, labelled by heading, and summarised by their
course changes ("kinks"). Trained generators score held-out voyages by
great-circle DTW for anomaly flagging.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
from shapely.geometry import Point, Polygon, box
from shapely.prepared import prep

from .dtw import dtw_distance
from .families import Trajectory
from .geo import NMI_KM, geo_step, haversine_distance

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_COLUMNS", "AisRecord", "AisFormatError", "IngestStats", "VesselTrack", "Region",
    "ingest_csv", "remove_outliers", "segment_tracks", "cluster_label", "cluster_tracks",
    "count_kinks", "kink_histogram", "build_train_set", "select_test_tracks",
    "anomaly_threshold", "detect_anomalies", "AnomalyReport", "rollout_scores",
    "write_tracks", "read_tracks", "write_fixture", "LABELS",
]

DEFAULT_COLUMNS = {"vessel_id": "MMSI", "timestamp": "BaseDateTime", "lat": "LAT", "lon": "LON",
                   "sog": "SOG", "cog": "COG"}
LABELS = ("up", "down", "other")


class AisFormatError(ValueError):
    """The input cannot be read as an AIS table at all."""


class AisRecord(tuple):
    __slots__ = ()
    _fields = ("vessel_id", "timestamp", "lat", "lon", "sog", "cog")

    def __new__(cls, vessel_id, timestamp, lat, lon, sog, cog):
        return tuple.__new__(cls, (vessel_id, timestamp, lat, lon, sog, cog))

    vessel_id = property(lambda self: self[0])
    timestamp = property(lambda self: self[1])
    lat = property(lambda self: self[2])
    lon = property(lambda self: self[3])
    sog = property(lambda self: self[4])
    cog = property(lambda self: self[5])


class Region:
    """A polygon (or box) of (lon, lat) vertices with optional holes cut out."""

    def __init__(self, include=None, exclude=()):
        if include is None:
            self.shape = None
        elif isinstance(include, dict):
            self.shape = box(include["lon_min"], include["lat_min"], include["lon_max"], include["lat_max"])
        else:
            self.shape = Polygon(include)
        self.holes = [Polygon(p) for p in exclude]
        self._inc = prep(self.shape) if self.shape is not None else None
        self._exc = [prep(h) for h in self.holes]

    def contains(self, lon: float, lat: float) -> bool:
        p = Point(lon, lat)
        if self._inc is not None and not self._inc.covers(p):
            return False
        return not any(h.covers(p) for h in self._exc)


@dataclass
class IngestStats:
    rows: int = 0
    kept: int = 0
    malformed: int = 0
    slow: int = 0
    outside: int = 0
    duplicates: int = 0


def _parse_time(s: str) -> datetime:
    return datetime.fromisoformat(s.strip().replace("Z", ""))


def ingest_csv(path, region: Region | None = None, min_sog: float = 3.0, columns=None):
    """Read, validate and filter an AIS CSV.

    Returns ``(records, stats)`` where ``records`` maps vessel id to its
    time-sorted records. Rows that fail to parse or hold out-of-range
    values are skipped and counted; when two records of a vessel share a
    timestamp the one appearing later in the file is dropped.
    """
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    stats = IngestStats()
    by_vessel: dict[str, dict[datetime, AisRecord]] = defaultdict(dict)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise AisFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise AisFormatError(f"{path}: empty file")
        missing = [c for c in cols.values() if c not in reader.fieldnames]
        if missing:
            raise AisFormatError(f"{path}: missing columns {missing}")
        for row in reader:
            stats.rows += 1
            try:
                vid = row[cols["vessel_id"]].strip()
                ts = _parse_time(row[cols["timestamp"]])
                lat, lon = float(row[cols["lat"]]), float(row[cols["lon"]])
                sog, cog = float(row[cols["sog"]]), float(row[cols["cog"]])
            except (TypeError, ValueError, AttributeError):
                stats.malformed += 1
                continue
            if not vid or not all(map(math.isfinite, (lat, lon, sog, cog))) or not (
                    -90 < lat < 90 and -180 <= lon <= 180 and sog >= 0):
                stats.malformed += 1
                continue
            if not sog > min_sog:
                stats.slow += 1
                continue
            if region is not None and not region.contains(lon, lat):
                stats.outside += 1
                continue
            if ts in by_vessel[vid]:
                stats.duplicates += 1
                continue
            by_vessel[vid][ts] = AisRecord(vid, ts, lat, lon, sog, cog % 360.0)
            stats.kept += 1
    if stats.malformed:
        log.warning("%s: skipped %d malformed rows", path, stats.malformed)
    records = {vid: [recs[t] for t in sorted(recs)] for vid, recs in sorted(by_vessel.items())}
    return records, stats


def _hours(a: datetime, b: datetime) -> float:
    return (b - a).total_seconds() / 3600.0


def implied_speed(r0: AisRecord, r1: AisRecord) -> float:
    """Knots needed to cover the distance between two fixes in the elapsed time."""
    h = _hours(r0.timestamp, r1.timestamp)
    km = haversine_distance((r0.lon, r0.lat), (r1.lon, r1.lat))
    return math.inf if h <= 0 else km / NMI_KM / h


def remove_outliers(records, max_speed: float = 50.0, max_sog_gap: float = 30.0):
    """Drop fixes that imply impossible motion from the last accepted fix.

    A record is rejected when the speed implied by its position exceeds
    ``max_speed`` knots or differs from its own SOG by more than
    ``max_sog_gap`` knots. Returns ``(kept, n_removed)``.
    """
    kept: list[AisRecord] = []
    removed = 0
    for r in records:
        if kept:
            v = implied_speed(kept[-1], r)
            # a long silence says nothing about speed; the gap rule handles it
            if _hours(kept[-1].timestamp, r.timestamp) <= 1.0 and (
                    v > max_speed or abs(r.sog - v) > max_sog_gap):
                removed += 1
                continue
        kept.append(r)
    return kept, removed


@dataclass
class VesselTrack:
    track_id: str
    vessel_id: str
    times: list
    lat: np.ndarray
    lon: np.ndarray
    sog: np.ndarray
    cog: np.ndarray
    label: str | None = None

    def __len__(self):
        return len(self.times)

    @property
    def hours(self) -> np.ndarray:
        t0 = self.times[0]
        return np.array([_hours(t0, t) for t in self.times])

    @property
    def dt(self) -> np.ndarray:
        """Hours to the next record."""
        return np.diff(self.hours)

    def to_trajectory(self) -> Trajectory:
        """States as (lon, lat) in degrees, times in hours from the first fix."""
        return Trajectory(np.column_stack([self.lon, self.lat]), self.hours)

    @classmethod
    def from_records(cls, track_id, records):
        a = np.array([(r.lat, r.lon, r.sog, r.cog) for r in records], dtype=float).reshape(-1, 4)
        return cls(track_id, records[0].vessel_id, [r.timestamp for r in records],
                   a[:, 0], a[:, 1], a[:, 2], a[:, 3])


def _split_points(records, stop_gap_hours: float, slow_sog: float):
    """Indices where a new voyage starts, and records that belong to a stop."""
    cuts, stopped = [], set()
    i, n = 0, len(records)
    while i < n:
        if records[i].sog < slow_sog:
            j = i
            while j + 1 < n and records[j + 1].sog < slow_sog:
                j += 1
            if _hours(records[i].timestamp, records[j].timestamp) >= stop_gap_hours:
                stopped.update(range(i, j + 1))
            i = j + 1
        else:
            i += 1
    prev = None
    for i, r in enumerate(records):
        if i in stopped:
            prev = None
            continue
        if prev is None or _hours(prev.timestamp, r.timestamp) > stop_gap_hours:
            cuts.append(i)
        prev = r
    return cuts, stopped


def segment_tracks(records_by_vessel, stop_gap_hours: float = 1.0, min_points: int = 900,
                   slow_sog: float = 0.5, max_speed: float = 50.0, max_sog_gap: float = 30.0,
                   stats: dict | None = None) -> list[VesselTrack]:
    """Outlier removal, then voyages cut at stop points.

    A stop is a gap of more than ``stop_gap_hours`` between fixes, or a run
    of fixes slower than ``slow_sog`` lasting at least that long. Voyages
    shorter than ``min_points`` are discarded. Track ids are
    ``<vessel>_<k>`` with ``k`` counting every voyage of the vessel.
    """
    tracks = []
    counts = Counter()
    for vid in sorted(records_by_vessel):
        recs, removed = remove_outliers(records_by_vessel[vid], max_speed, max_sog_gap)
        counts["outliers"] += removed
        cuts, stopped = _split_points(recs, stop_gap_hours, slow_sog)
        bounds = cuts + [len(recs)]
        for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
            seg = [recs[i] for i in range(a, b) if i not in stopped]
            counts["segments"] += 1
            if len(seg) < min_points:
                counts["short"] += 1
                continue
            tracks.append(VesselTrack.from_records(f"{vid}_{k}", seg))
    if stats is not None:
        stats.update(counts)
    return tracks


def signed_cog(cog):
    """Course in degrees mapped onto (-180, 180]."""
    c = np.asarray(cog, dtype=float) % 360.0
    return np.where(c > 180.0, c - 360.0, c)


def cluster_label(cog) -> str:
    """``up`` if every course lies within [-90, 90], ``down`` if none does."""
    inside = np.abs(signed_cog(cog)) <= 90.0
    if inside.all():
        return "up"
    if not inside.any():
        return "down"
    return "other"


def cluster_tracks(tracks) -> dict[str, list[VesselTrack]]:
    out = {k: [] for k in LABELS}
    for t in tracks:
        t.label = cluster_label(t.cog)
        out[t.label].append(t)
    return out


def course_changes(cog) -> np.ndarray:
    """Absolute shortest-arc change between consecutive courses, degrees."""
    d = np.diff(np.asarray(cog, dtype=float))
    return np.abs((d + 180.0) % 360.0 - 180.0)


def count_kinks(cog, threshold_deg: float = 10.0) -> int:
    return int(np.sum(course_changes(cog) > threshold_deg))


@dataclass
class KinkHistogram:
    per_track: dict[str, int]
    counts: dict[int, int]

    @property
    def proportions(self) -> dict[int, float]:
        n = sum(self.counts.values())
        return {k: v / n for k, v in self.counts.items()}

    def to_rows(self, label: str = ""):
        props = self.proportions
        return [(label, k, self.counts[k], props[k]) for k in sorted(self.counts)]


def kink_histogram(tracks, threshold_deg: float = 10.0) -> KinkHistogram:
    if not tracks:
        raise ValueError("no tracks")
    per = {t.track_id: count_kinks(t.cog, threshold_deg) for t in tracks}
    return KinkHistogram(per, dict(sorted(Counter(per.values()).items())))


def build_train_set(clusters, per_cluster: int = 170, seed: int = 0,
                    labels=("up", "down")) -> dict[str, list[VesselTrack]]:
    """At most ``per_cluster`` tracks per label, drawn without replacement.

    The draw depends only on ``seed`` and the label; chosen tracks keep
    their original order.
    """
    out = {}
    for i, label in enumerate(labels):
        tracks = list(clusters.get(label, []))
        if len(tracks) <= per_cluster:
            if len(tracks) < per_cluster:
                warnings.warn(f"cluster {label!r} has {len(tracks)} tracks, fewer than {per_cluster}")
            out[label] = tracks
            continue
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        idx = np.sort(rng.choice(len(tracks), size=per_cluster, replace=False))
        out[label] = [tracks[j] for j in idx]
    return out


def select_test_tracks(tracks, start_region: Region | None = None) -> list[VesselTrack]:
    """Tracks whose first fix lies in ``start_region`` (all tracks if none)."""
    if start_region is None:
        return list(tracks)
    return [t for t in tracks if start_region.contains(t.lon[0], t.lat[0])]


def anomaly_threshold(scores, quantile: float = 0.9) -> float:
    """Score above which ``ceil((1 - quantile) * N)`` distinct scores lie.

    This is the (k+1)-th largest score, so flagging ``score > threshold``
    marks exactly the top k when scores are distinct. Ties at the
    threshold are not flagged.
    """
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    n = len(s)
    if n == 0:
        raise ValueError("no scores")
    k = math.ceil(round((1.0 - quantile) * n, 9))
    if k >= n:
        return -math.inf
    return float(s[k])


@dataclass
class AnomalyReport:
    track_ids: list[str]
    scores: np.ndarray
    threshold: float
    flags: np.ndarray = field(init=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.flags = self.scores > self.threshold

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("track_id,score,flagged\n")
        for tid, s, f in zip(self.track_ids, self.scores, self.flags):
            out.write(f"{tid},{float(s)!r},{int(f)}\n")
        return out.getvalue()


def detect_anomalies(track_ids, raw_scores, quantile: float = 0.9) -> AnomalyReport:
    """Normalize scores by their maximum and flag those above the quantile threshold."""
    raw = np.asarray(raw_scores, dtype=float)
    top = raw.max() if len(raw) else 0.0
    scores = raw / top if top > 0 else np.zeros_like(raw)
    return AnomalyReport(list(track_ids), scores, anomaly_threshold(scores, quantile))


def rollout_scores(agent, env, tracks, seed: int = 0) -> np.ndarray:
    """Great-circle DTW between each track and a generator rollout from its start."""
    from .agents.common import rollout

    scores = []
    for j, t in enumerate(tracks):
        ref = t.to_trajectory() if isinstance(t, VesselTrack) else t
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
        traj = rollout(env, ref, agent.make_actor(rng))
        scores.append(dtw_distance(traj.states, ref.states, "great_circle"))
    return np.asarray(scores)


# --- storage -----------------------------------------------------------------

def write_tracks(tracks, path) -> None:
    """One JSON object per line: id, label and [iso-time, lat, lon, sog, cog] points."""
    with open(path, "w") as fh:
        for t in tracks:
            pts = [[ts.isoformat(), float(la), float(lo), float(s), float(c)]
                   for ts, la, lo, s, c in zip(t.times, t.lat, t.lon, t.sog, t.cog)]
            fh.write(json.dumps({"id": t.track_id, "vessel_id": t.vessel_id, "label": t.label,
                                 "points": pts}) + "\n")


def read_tracks(path) -> list[VesselTrack]:
    tracks = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            recs = [AisRecord(d.get("vessel_id", d["id"]), datetime.fromisoformat(p[0]), *p[1:])
                    for p in d["points"]]
            t = VesselTrack.from_records(d["id"], recs)
            t.label = d.get("label")
            tracks.append(t)
    return tracks


# --- fixtures ----------------------------------------------------------------

FIXTURE_START = datetime(2015, 1, 1)
FIXTURE_REGION = {"lon_min": -84.0, "lat_min": 23.0, "lon_max": -79.0, "lat_max": 28.0}


def _voyage(lon, lat, t0, courses, sog=12.0, dt_s=20.0):
    """Fixes along piecewise-constant courses; returns rows and the end state."""
    rows = []
    t = t0
    for c in courses:
        rows.append((t, lat, lon, sog, c % 360.0))
        lon, lat = geo_step((lon, lat), (sog, c, dt_s / 3600.0))
        t += timedelta(seconds=dt_s)
    return rows, (lon, lat, t)


def _kinked(base, kinks, n, turn=25.0):
    """``n`` courses with ``kinks`` evenly spaced alternating turns of ``turn`` degrees."""
    courses = np.full(n, float(base))
    for j, at in enumerate(np.linspace(0, n, kinks + 2)[1:-1].astype(int)):
        courses[at:] = base + (turn if j % 2 == 0 else 0.0)
    return courses


def write_fixture(path, seed: int = 0, n_up: int = 6, n_down: int = 6, n_other: int = 3,
                  length: int = 950):
    """Write a synthetic AIS CSV and return its ground truth.

    Planted content: up/down voyages with known kink counts (courses
    straddling 0 deg so the circular difference matters), other voyages
    crossing the +-90 deg band, one vessel split by a two-hour gap, one
    voyage too short to keep, a position glitch, slow fixes, a duplicate
    timestamp, rows outside the region and malformed rows.
    """
    rng = np.random.default_rng(seed)
    rows = []
    truth = {"labels": {}, "kinks": {}, "malformed": 2, "slow": 0, "outside": 0, "duplicates": 1,
             "outliers": 1, "short": 1}
    mmsi = 366000000

    def add(vid, recs):
        rows.extend((vid, *r) for r in recs)

    def vessel():
        nonlocal mmsi
        mmsi += 1
        return str(mmsi)

    for label, n, base in (("up", n_up, -12.5), ("down", n_down, 167.5)):
        for _ in range(n):
            vid = vessel()
            k = int(rng.integers(0, 5))
            lon, lat = float(rng.uniform(-82.5, -80.5)), float(rng.uniform(24.5, 26.5))
            t0 = FIXTURE_START + timedelta(minutes=int(rng.integers(0, 120)))
            recs, _ = _voyage(lon, lat, t0, _kinked(base, k, length))
            add(vid, recs)
            truth["labels"][f"{vid}_0"] = label
            truth["kinks"][f"{vid}_0"] = k
    for _ in range(n_other):
        # a slow turn through the band: course crosses +-90 without any kink
        vid = vessel()
        courses = np.linspace(45.0, 180.0, length)
        lon, lat = float(rng.uniform(-82.5, -80.5)), float(rng.uniform(24.5, 26.5))
        recs, _ = _voyage(lon, lat, FIXTURE_START, courses, sog=8.0)
        add(vid, recs)
        truth["labels"][f"{vid}_0"] = "other"
        truth["kinks"][f"{vid}_0"] = 0

    # one vessel, two voyages separated by a two-hour stop
    vid = vessel()
    recs1, (lon, lat, t) = _voyage(-81.5, 25.0, FIXTURE_START, np.full(1000, 10.0))
    recs2, _ = _voyage(lon, lat, t + timedelta(hours=2), np.full(950, 10.0))
    add(vid, recs1 + recs2)
    truth["labels"][f"{vid}_0"] = truth["labels"][f"{vid}_1"] = "up"
    truth["kinks"][f"{vid}_0"] = truth["kinks"][f"{vid}_1"] = 0
    truth["gap_vessel"] = vid

    # a voyage too short to keep
    vid = vessel()
    recs, _ = _voyage(-81.0, 25.5, FIXTURE_START, np.full(500, 200.0))
    add(vid, recs)

    # a glitch: one fix teleported half a degree away, then the voyage carries on
    vid = vessel()
    recs, _ = _voyage(-82.0, 24.8, FIXTURE_START, _kinked(170.0, 2, length + 1))
    t, la, lo, s, c = recs[400]
    recs[400] = (t, la + 0.5, lo, s, c)
    add(vid, recs)
    truth["labels"][f"{vid}_0"] = "down"
    truth["kinks"][f"{vid}_0"] = 2

    # noise rows that ingestion must drop
    first = rows[0]
    last_t = max(r[1] for r in rows)
    for j in range(4):
        rows.append((first[0], last_t + timedelta(seconds=20 * (j + 1)), first[2], first[3], 2.0, first[5]))
        truth["slow"] += 1
    for j in range(3):
        rows.append((vessel(), FIXTURE_START + timedelta(seconds=20 * j), 40.0, -70.0, 12.0, 0.0))
        truth["outside"] += 1
    dup = rows[10]
    rows.append((dup[0], dup[1], dup[2] + 0.01, dup[3], dup[4], dup[5]))

    rows.sort(key=lambda r: (r[1], r[0]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["MMSI", "BaseDateTime", "LAT", "LON", "SOG", "COG"])
        for vid, t, la, lo, s, c in rows:
            w.writerow([vid, t.strftime("%Y-%m-%dT%H:%M:%S"), repr(float(la)), repr(float(lo)),
                        repr(float(s)), repr(float(c))])
        w.writerow(["366999999", "not-a-time", "25.0", "-81.0", "10", "0"])
        w.writerow(["366999999", "2015-01-01T00:00:00", "91.0", "-81.0", "10", "0"])
    truth["n_tracks"] = len(truth["labels"])
    truth["histogram"] = {lab: dict(sorted(Counter(truth["kinks"][t] for t, l in truth["labels"].items()
                                                    if l == lab).items())) for lab in LABELS}
    return truth
