"""Seeded synthetic multimodal demand generator plus correlation analysis.

Produces two coupled station-level Poisson count matrices (a "source" and a
"target" mode) with commute-style daily peaks, so cross-modal behaviour can
be exercised at desk scale without proprietary trip data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
import numpy as np

from .errors import ConfigurationError, DataError
from .flowdata import FlowMatrix

DEFAULT_ORIGIN = datetime(2019, 3, 4, tzinfo=timezone.utc)  # a Monday

INTENSITY_FLOOR = 0.05


@dataclass(frozen=True)
class PeakProfile:
    morning_hour: float = 9.0
    evening_hour: float = 17.5
    amplitude: float = 1.5
    width_hours: float = 1.5


@dataclass
class SynthConfig:
    days: int = 28
    interval_minutes: int = 15
    source_stations: int = 20
    target_stations: int = 40
    base_rate: float = 5.0  # mean trips per bin per station
    source_peaks: PeakProfile = field(default_factory=PeakProfile)
    target_peaks: PeakProfile = field(default_factory=lambda: PeakProfile(morning_hour=8.5, evening_hour=18.0))
    coupling: float = 0.8  # rho in [-1, 1]
    seed: int = 0
    source_mode: str = "metro"
    target_mode: str = "bike"
    origin_time: datetime = DEFAULT_ORIGIN

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ConfigurationError("base_rate must be positive")
        if not -1.0 <= self.coupling <= 1.0:
            raise ConfigurationError("coupling must lie in [-1, 1]")
        if self.source_stations < 1 or self.target_stations < 1:
            raise ConfigurationError("station counts must be >= 1")
        if self.days < 1 or self.interval_minutes not in (15, 30, 45, 60):
            raise ConfigurationError("invalid days or interval")


def _daily_shape(hours_of_day: np.ndarray, peaks: PeakProfile) -> np.ndarray:
    """Smooth mean-one daily profile with morning and evening bumps."""
    shape = 0.3 + sum(
        peaks.amplitude * np.exp(-0.5 * ((hours_of_day - peak) / peaks.width_hours) ** 2)
        for peak in (peaks.morning_hour, peaks.evening_hour)
    )
    return shape / shape.mean()


@dataclass
class SynthTruth:
    source_intensity: np.ndarray  # (n_bins, source_stations)
    target_intensity: np.ndarray  # (n_bins, target_stations)
    linkage: np.ndarray  # target station j -> source station index
    coupling: float

    def to_json(self) -> dict:
        return {
            "coupling": self.coupling,
            "linkage": self.linkage.tolist(),
            "source_intensity_mean": self.source_intensity.mean(axis=0).tolist(),
            "target_intensity_mean": self.target_intensity.mean(axis=0).tolist(),
        }


def generate_multimodal(config: SynthConfig):
    """Returns (source FlowMatrix, target FlowMatrix, SynthTruth).

    Each target station is linked round-robin to a source station; its
    intensity shape mixes its own profile with the linked one according to
    the coupling rho (negated around the mean for rho < 0), floored at a
    small positive value.  Counts are Poisson draws, fully seeded.
    """
    rng = np.random.default_rng(config.seed)
    bins_per_day = 24 * 60 // config.interval_minutes
    n_bins = config.days * bins_per_day
    minutes = (np.arange(n_bins) * config.interval_minutes) % (24 * 60)
    hours = minutes / 60.0

    src_shape = _daily_shape(hours, config.source_peaks)
    tgt_shape = _daily_shape(hours, config.target_peaks)

    def station_shapes(base: np.ndarray, count: int) -> np.ndarray:
        # station-specific jitter of the peak landscape: random scale and
        # a small phase shift realised as a mix with a shifted copy
        scales = rng.uniform(0.5, 1.5, size=count)
        mixes = rng.uniform(0.0, 0.3, size=count)
        shifted = np.roll(base, bins_per_day // 24)  # one hour later
        return scales[:, None] * ((1.0 - mixes)[:, None] * base + mixes[:, None] * shifted)

    src_profiles = station_shapes(src_shape, config.source_stations)  # (S, n_bins)
    own_profiles = station_shapes(tgt_shape, config.target_stations)

    rho = config.coupling
    linkage = np.arange(config.target_stations) % config.source_stations
    linked = src_profiles[linkage]
    linked_unit = linked / linked.mean(axis=1, keepdims=True)
    own_unit = own_profiles / own_profiles.mean(axis=1, keepdims=True)
    if rho >= 0:
        mix = (1.0 - rho) * own_unit + rho * linked_unit
    else:
        mix = (1.0 + rho) * own_unit + (-rho) * (2.0 - linked_unit)
    own_level = own_profiles.mean(axis=1, keepdims=True)
    tgt_profiles = np.maximum(mix, INTENSITY_FLOOR) * own_level

    src_intensity = (config.base_rate * src_profiles).T  # (n_bins, S)
    tgt_intensity = (config.base_rate * tgt_profiles).T
    src_counts = rng.poisson(src_intensity)
    tgt_counts = rng.poisson(tgt_intensity)

    def matrix(mode, counts, n_stations, prefix):
        return FlowMatrix(
            mode=mode,
            interval_minutes=config.interval_minutes,
            origin_time=config.origin_time,
            station_ids=[f"{prefix}{i:03d}" for i in range(n_stations)],
            values=counts.astype(np.int64),
            direction="arrivals",
            meta={"synthetic": True, "seed": config.seed, "coupling": rho},
        )

    truth = SynthTruth(
        source_intensity=src_intensity,
        target_intensity=tgt_intensity,
        linkage=linkage,
        coupling=rho,
    )
    source = matrix(config.source_mode, src_counts, config.source_stations, "s")
    target = matrix(config.target_mode, tgt_counts, config.target_stations, "t")
    return source, target, truth


def correlation_matrix(flow_a: FlowMatrix, flow_b: FlowMatrix) -> np.ndarray:
    """Pearson correlations over the concatenated station set.

    Constant series produce NaN rows/columns (undefined correlation).
    """
    if flow_a.interval_minutes != flow_b.interval_minutes:
        raise DataError("interval mismatch")
    if flow_a.origin_time != flow_b.origin_time or flow_a.n_bins != flow_b.n_bins:
        raise DataError("flow matrices are not bin-aligned")
    if flow_a.n_bins < 3:
        raise DataError("need at least 3 bins for correlations")
    series = np.hstack([flow_a.values, flow_b.values]).astype(np.float64)
    stds = series.std(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(series, rowvar=False)
    corr[stds == 0, :] = np.nan
    corr[:, stds == 0] = np.nan
    return corr


def write_truth_json(truth: SynthTruth, path) -> None:
    with open(path, "w") as fh:
        json.dump(truth.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
