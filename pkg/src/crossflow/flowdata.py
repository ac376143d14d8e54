"""Trip-record ETL: parsing, station binning, filtering, splits and windows.

Converts raw trip rows into station-by-interval inflow count matrices and
produces the chronological train/val/test splits and sliding-window samples
consumed by the forecasting models.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np

from .errors import ConfigurationError, DataError

Location = Union[str, tuple]

KNOWN_MODES = ("bike", "metro", "taxi")

DEFAULT_SCHEMA = {
    "mode": "mode",
    "start_time": "start_time",
    "start_loc": "start_loc",
    "end_time": "end_time",
    "end_loc": "end_loc",
}

EARTH_RADIUS_M = 6_371_000.0


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_location(text: str) -> Location:
    """A location cell is either a station id or "lat;lon"."""
    text = text.strip()
    if ";" in text:
        lat_s, lon_s = text.split(";", 1)
        lat, lon = float(lat_s), float(lon_s)
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise ValueError(f"coordinates out of range: {text!r}")
        return (lat, lon)
    if not text:
        raise ValueError("empty location")
    return text


@dataclass(frozen=True)
class TripRecord:
    mode: str
    start_time: datetime
    end_time: datetime
    start_loc: Location
    end_loc: Location

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise ValueError("trip ends before it starts")


@dataclass(frozen=True)
class SpatialObject:
    """A station or zone centroid whose flow series is one model column."""

    id: str
    mode: str
    lat: float
    lon: float
    kind: str = "station"


@dataclass(frozen=True)
class DatasetSplit:
    """Half-open bin-index ranges partitioning [0, n_bins)."""

    train_range: tuple
    val_range: tuple
    test_range: tuple

    def __post_init__(self):
        ranges = (self.train_range, self.val_range, self.test_range)
        for lo, hi in ranges:
            if lo > hi:
                raise ValueError(f"bad range ({lo}, {hi})")
        if self.train_range[0] != 0:
            raise ValueError("train range must start at 0")
        if self.train_range[1] != self.val_range[0] or self.val_range[1] != self.test_range[0]:
            raise ValueError("split ranges must be contiguous")

    @property
    def n_bins(self) -> int:
        return self.test_range[1]


@dataclass
class FlowMatrix:
    """Time-binned station-by-interval inflow counts for one mode."""

    mode: str
    interval_minutes: int
    origin_time: datetime
    station_ids: list
    values: np.ndarray  # (n_bins, n_stations) nonnegative integers
    direction: str = "arrivals"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.station_ids):
            raise ValueError("values shape does not match station_ids")
        if np.any(self.values < 0):
            raise ValueError("negative counts")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_stations(self) -> int:
        return self.values.shape[1]

    def bin_start(self, k: int) -> datetime:
        return self.origin_time + timedelta(minutes=self.interval_minutes * int(k))


@dataclass
class WindowSet:
    """Sliding-window samples (inputs X, target y) over a flow matrix."""

    L: int
    X: np.ndarray  # (n_samples, L, n_inputs)
    y: np.ndarray  # (n_samples, n_outputs)
    target_bins: np.ndarray  # (n_samples,)

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class Normalizer:
    """Per-station z-score transform fitted on the training segment."""

    mean: np.ndarray
    std: np.ndarray

    STD_FLOOR = 1e-6

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


@dataclass
class RejectionStats:
    total_rows: int = 0
    accepted: int = 0
    rejected: int = 0
    reasons: dict = field(default_factory=dict)

    def reject(self, reason: str):
        self.rejected += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def parse_trips(stream: Union[TextIO, Iterable[str]], schema: Optional[dict] = None):
    """Parse trip rows from CSV text; malformed rows are counted, not raised.

    Returns (records, RejectionStats).
    """
    schema = dict(DEFAULT_SCHEMA, **(schema or {}))
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        return [], RejectionStats()
    missing = [col for col in schema.values() if col not in reader.fieldnames]
    if missing:
        raise ConfigurationError(f"trip CSV missing columns: {missing}")

    records = []
    stats = RejectionStats()
    for row in reader:
        stats.total_rows += 1
        try:
            record = TripRecord(
                mode=row[schema["mode"]].strip().lower(),
                start_time=parse_timestamp(row[schema["start_time"]]),
                end_time=parse_timestamp(row[schema["end_time"]]),
                start_loc=parse_location(row[schema["start_loc"]]),
                end_loc=parse_location(row[schema["end_loc"]]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            stats.reject(type(exc).__name__ + ": " + str(exc)[:60])
            continue
        records.append(record)
        stats.accepted += 1
    return records, stats


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; accepts arrays for the second point."""
    p1, p2 = math.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(lon2) - math.radians(lon1)
    a = np.sin(dp / 2.0) ** 2 + math.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a))


def bin_flows(
    trips: Sequence[TripRecord],
    stations: Sequence[SpatialObject],
    interval_minutes: int,
    time_range: tuple,
    direction: str = "arrivals",
    snap_radius_m: float = 500.0,
) -> FlowMatrix:
    """Count trips per (time bin, station) for one mode.

    The relevant trip endpoint (end for arrivals, start for departures) is
    matched to a station either by id or by snapping coordinates to the
    nearest same-mode station within snap_radius_m.  Bins are half-open
    [origin + k*interval, origin + (k+1)*interval).
    """
    if not stations:
        raise ConfigurationError("no stations supplied")
    if interval_minutes not in (15, 30, 45, 60):
        raise ConfigurationError(f"unsupported interval: {interval_minutes}")
    if direction not in ("arrivals", "departures"):
        raise ConfigurationError(f"unknown direction: {direction}")
    if snap_radius_m <= 0:
        raise ConfigurationError("snap_radius_m must be positive")

    modes = {s.mode for s in stations}
    if len(modes) != 1:
        raise ConfigurationError("stations must all share one mode")
    mode = modes.pop()
    ids = [s.id for s in stations]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate station ids")
    col = {sid: j for j, sid in enumerate(ids)}
    lats = np.array([s.lat for s in stations])
    lons = np.array([s.lon for s in stations])

    start, end = time_range
    span = (end - start).total_seconds()
    if span <= 0:
        raise ConfigurationError("empty time range")
    delta = interval_minutes * 60.0
    n_bins = int(math.ceil(span / delta))
    values = np.zeros((n_bins, len(ids)), dtype=np.int64)

    excluded = {"wrong_mode": 0, "outside_range": 0, "unknown_station": 0, "beyond_radius": 0}
    for trip in trips:
        if trip.mode != mode:
            excluded["wrong_mode"] += 1
            continue
        when = trip.end_time if direction == "arrivals" else trip.start_time
        loc = trip.end_loc if direction == "arrivals" else trip.start_loc
        offset = (when - start).total_seconds()
        if offset < 0 or when >= end:
            excluded["outside_range"] += 1
            continue
        if isinstance(loc, str):
            j = col.get(loc)
            if j is None:
                excluded["unknown_station"] += 1
                continue
        else:
            dists = haversine_m(loc[0], loc[1], lats, lons)
            j = int(np.argmin(dists))
            if dists[j] > snap_radius_m:
                excluded["beyond_radius"] += 1
                continue
        values[int(offset // delta), j] += 1

    return FlowMatrix(
        mode=mode,
        interval_minutes=interval_minutes,
        origin_time=start,
        station_ids=list(ids),
        values=values,
        direction=direction,
        meta={"excluded": excluded, "matched_trips": int(values.sum())},
    )


def filter_stations(flow: FlowMatrix, threshold_per_hour: float = 0.1) -> FlowMatrix:
    """Drop stations whose average hourly flow falls below the threshold."""
    hours = flow.n_bins * flow.interval_minutes / 60.0
    if hours < 1.0:
        raise DataError("flow matrix spans less than one hour")
    rates = flow.values.sum(axis=0) / hours
    keep = rates >= threshold_per_hour
    if not keep.any():
        raise DataError("all stations fall below the flow threshold")
    meta = dict(flow.meta)
    meta["filter_threshold"] = threshold_per_hour
    meta["stations_removed"] = int((~keep).sum())
    return FlowMatrix(
        mode=flow.mode,
        interval_minutes=flow.interval_minutes,
        origin_time=flow.origin_time,
        station_ids=[sid for sid, k in zip(flow.station_ids, keep) if k],
        values=flow.values[:, keep],
        direction=flow.direction,
        meta=meta,
    )


def make_split(n_bins: int, ratios=(0.7, 0.1, 0.2)) -> DatasetSplit:
    """Chronological split with boundaries at floor cumulative ratios."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError("split ratios must sum to 1")
    # nudge before flooring so e.g. (0.7 + 0.1) * 10 == 7.999... still lands on 8
    b1 = int(math.floor(ratios[0] * n_bins + 1e-9))
    b2 = int(math.floor((ratios[0] + ratios[1]) * n_bins + 1e-9))
    return DatasetSplit((0, b1), (b1, b2), (b2, n_bins))


def windows_for_targets(values: np.ndarray, targets: np.ndarray, L: int) -> WindowSet:
    """Build (L-bin history, target bin) samples for the given target bins."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and targets.min() < L:
        raise DataError(f"target bin {targets.min()} lacks {L} predecessors")
    vals = np.asarray(values, dtype=np.float64)
    X = np.stack([vals[t - L : t] for t in targets]) if targets.size else np.zeros((0, L, vals.shape[1]))
    y = vals[targets] if targets.size else np.zeros((0, vals.shape[1]))
    return WindowSet(L=L, X=X, y=y, target_bins=targets)


def split_and_window(flow: FlowMatrix, ratios=(0.7, 0.1, 0.2), L: int = 4):
    """Split chronologically and window each segment.

    A sample belongs to the segment containing its target bin; inputs may
    reach back across the split boundary, so every val/test bin with L
    predecessors is predictable.  Train targets start at bin L.

    Returns (DatasetSplit, train WindowSet, val WindowSet, test WindowSet).
    """
    if flow.n_bins < L + 3:
        raise DataError(f"need at least {L + 3} bins, have {flow.n_bins}")
    split = make_split(flow.n_bins, ratios)
    segments = []
    for (lo, hi) in (split.train_range, split.val_range, split.test_range):
        targets = np.arange(max(lo, L), hi, dtype=np.int64)
        segments.append(windows_for_targets(flow.values, targets, L))
    train, val, test = segments
    if len(train) == 0:
        raise DataError("training segment holds no complete window")
    return split, train, val, test


def fit_normalizer(flow: FlowMatrix, split: DatasetSplit) -> Normalizer:
    """Per-station mean/std over the training bins only."""
    lo, hi = split.train_range
    if hi <= lo:
        raise DataError("empty training range")
    seg = flow.values[lo:hi].astype(np.float64)
    std = np.maximum(seg.std(axis=0), Normalizer.STD_FLOOR)
    return Normalizer(mean=seg.mean(axis=0), std=std)


# --- on-disk formats ------------------------------------------------------


def read_stations_csv(path) -> list:
    """Station registry CSV: id,mode,lat,lon,kind."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"station file not found: {path}")
    stations = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            stations.append(
                SpatialObject(
                    id=row["id"].strip(),
                    mode=row["mode"].strip().lower(),
                    lat=float(row["lat"]),
                    lon=float(row["lon"]),
                    kind=row.get("kind", "station").strip() or "station",
                )
            )
    return stations


def write_flow_csv(flow: FlowMatrix, path) -> None:
    """Flow matrix CSV (bin_start + one column per station) plus sidecar JSON."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start"] + list(flow.station_ids))
        for k in range(flow.n_bins):
            writer.writerow([format_timestamp(flow.bin_start(k))] + [int(v) for v in flow.values[k]])
    sidecar = {
        "mode": flow.mode,
        "interval_minutes": flow.interval_minutes,
        "origin_time": format_timestamp(flow.origin_time),
        "direction": flow.direction,
        "filter_threshold": flow.meta.get("filter_threshold"),
        "station_count": flow.n_stations,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_flow_csv(path) -> FlowMatrix:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"flow file not found: {path}")
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise ConfigurationError(f"missing sidecar: {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        station_ids = header[1:]
        rows = [[int(c) for c in row[1:]] for row in reader]
    values = np.array(rows, dtype=np.int64).reshape(len(rows), len(station_ids))
    meta = {}
    if sidecar.get("filter_threshold") is not None:
        meta["filter_threshold"] = sidecar["filter_threshold"]
    return FlowMatrix(
        mode=sidecar["mode"],
        interval_minutes=int(sidecar["interval_minutes"]),
        origin_time=parse_timestamp(sidecar["origin_time"]),
        station_ids=station_ids,
        values=values,
        direction=sidecar.get("direction", "arrivals"),
        meta=meta,
    )
