"""Feature encoding: samples plus device metadata become model-ready rows.

Layout of one encoded row, in manifest order:

  - 9 min-max-scaled continuous fields (temperature, humidity, feels_like,
    temp_min, temp_max, pressure, wind_speed, precipitation, cloud_cover)
  - wind direction as a (sin, cos) bearing pair (avoids the 359 -> 0 cliff)
  - weather type one-hot (training vocabulary plus a reserved "other" level)
  - hour-of-day (sin, cos), activity cluster one-hot (4), month (sin, cos),
    season one-hot (3), day-of-week one-hot (7)  <- the temporal block
  - 11 spatial coverage fractions broadcast to every row of the device

Scalers are fit on training devices only; applying one to its own training
data yields values in [0, 1], test data is clamped to [-0.5, 1.5]. Local
time (hour, cluster, month, season, weekday) uses a fixed per-city UTC
offset.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from datetime import datetime, timedelta
from math import cos, pi, sin
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import DeviceMeta, Sample
from .spatial import CATEGORIES as SPATIAL_CATEGORIES

CONTINUOUS_FIELDS = (
    "temperature",
    "humidity",
    "feels_like",
    "temp_min",
    "temp_max",
    "pressure",
    "wind_speed",
    "precipitation",
    "cloud_cover",
)
SEASONS = ("winter", "summer", "monsoon")
CLUSTERS = ("C1", "C2", "C3", "C4")
OTHER_WEATHER = "other"

DEFAULT_WINDOW = 18  # hours of history per instance
DEFAULT_UTC_OFFSET_MINUTES = 330

CLAMP_LO, CLAMP_HI = -0.5, 1.5


def activity_cluster(local_hour: int) -> int:
    """Coarse activity bucket for a local hour: 1 for 00-06, 2 for 07-09,
    3 for 10-16, 4 for 17-23."""
    if not 0 <= local_hour <= 23:
        raise ValueError(f"hour out of range: {local_hour}")
    if local_hour <= 6:
        return 1
    if local_hour <= 9:
        return 2
    if local_hour <= 16:
        return 3
    return 4


def season_of(month: int) -> str:
    """Season for a month: Nov-Feb winter, Mar-Jun summer, Jul-Oct monsoon."""
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    if month in (11, 12, 1, 2):
        return "winter"
    if month <= 6:
        return "summer"
    return "monsoon"


def _continuous_value(sample: Sample, field: str) -> float:
    if field == "temperature":
        return sample.temperature
    if field == "humidity":
        return sample.humidity
    if sample.met is None:
        raise ValueError(f"sample at {sample.timestamp} has no met record (field {field})")
    return float(getattr(sample.met, field))


@dataclass(frozen=True)
class ScalerState:
    """Per-feature (min, max) fit on training rows only."""

    bounds: dict[str, tuple[float, float]]

    def transform(self, field: str, value: float) -> float:
        lo, hi = self.bounds[field]
        if hi == lo:
            return 0.5  # degenerate feature maps to a constant
        scaled = (value - lo) / (hi - lo)
        return min(max(scaled, CLAMP_LO), CLAMP_HI)


def fit_scaler(train: Sequence[Sample]) -> ScalerState:
    """Min-max bounds per continuous field over the training samples."""
    if not train:
        raise ValueError("cannot fit a scaler on an empty sample set")
    bounds = {}
    for f in CONTINUOUS_FIELDS:
        values = [_continuous_value(s, f) for s in train]
        bounds[f] = (min(values), max(values))
    return ScalerState(bounds=bounds)


def fit_weather_vocabulary(train: Sequence[Sample]) -> tuple[str, ...]:
    """Sorted weather-type levels seen in training; "other" is appended at
    encode time for anything unseen."""
    seen = {s.met.weather_type for s in train if s.met is not None}
    return tuple(sorted(seen))


@dataclass(frozen=True)
class FeatureCodec:
    """Deterministic sample -> vector encoder plus its manifest.

    Immutable after fit; encoding is a pure function of (sample, meta).
    """

    scaler: ScalerState
    weather_types: tuple[str, ...]
    utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES
    window: int = DEFAULT_WINDOW
    city_tag: str = ""

    @classmethod
    def fit(
        cls,
        train: Sequence[Sample],
        window: int = DEFAULT_WINDOW,
        utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES,
        city_tag: str = "",
    ) -> "FeatureCodec":
        return cls(
            scaler=fit_scaler(train),
            weather_types=fit_weather_vocabulary(train),
            utc_offset_minutes=utc_offset_minutes,
            window=window,
            city_tag=city_tag,
        )

    def feature_names(self) -> list[str]:
        names = list(CONTINUOUS_FIELDS)
        names += ["wind_dir_sin", "wind_dir_cos"]
        names += [f"weather_type={w}" for w in self.weather_types + (OTHER_WEATHER,)]
        names += ["hour_sin", "hour_cos"]
        names += [f"cluster={c}" for c in CLUSTERS]
        names += ["month_sin", "month_cos"]
        names += [f"season={s}" for s in SEASONS]
        names += [f"dow={d}" for d in range(7)]
        names += [f"spatial={c}" for c in SPATIAL_CATEGORIES]
        return names

    @property
    def dim(self) -> int:
        return len(self.feature_names())

    def temporal_indices(self) -> list[int]:
        """Column indices of the temporal block (hour, cluster, month,
        season, day-of-week encodings)."""
        start = len(CONTINUOUS_FIELDS) + 2 + len(self.weather_types) + 1
        return list(range(start, start + 2 + len(CLUSTERS) + 2 + len(SEASONS) + 7))

    def local_time(self, ts: datetime) -> datetime:
        return ts + timedelta(minutes=self.utc_offset_minutes)

    def encode_row(self, sample: Sample, meta: DeviceMeta) -> np.ndarray:
        if sample.met is None:
            raise ValueError(f"sample at {sample.timestamp} has no met record")
        if meta.spatial_profile is None:
            raise ValueError(f"device {meta.device_id} has no spatial profile")

        out = np.zeros(self.dim, dtype=np.float64)
        i = 0
        for f in CONTINUOUS_FIELDS:
            out[i] = self.scaler.transform(f, _continuous_value(sample, f))
            i += 1

        bearing = sample.met.wind_direction * pi / 180.0
        out[i] = sin(bearing)
        out[i + 1] = cos(bearing)
        i += 2

        wt = sample.met.weather_type
        if wt in self.weather_types:
            out[i + self.weather_types.index(wt)] = 1.0
        else:
            warnings.warn(f"unknown weather type {wt!r}, using reserved level")
            out[i + len(self.weather_types)] = 1.0
        i += len(self.weather_types) + 1

        local = self.local_time(sample.timestamp)
        hour, month, dow = local.hour, local.month, local.weekday()
        out[i] = sin(2 * pi * hour / 24.0)
        out[i + 1] = cos(2 * pi * hour / 24.0)
        i += 2
        out[i + activity_cluster(hour) - 1] = 1.0
        i += len(CLUSTERS)
        out[i] = sin(2 * pi * (month - 1) / 12.0)
        out[i + 1] = cos(2 * pi * (month - 1) / 12.0)
        i += 2
        out[i + SEASONS.index(season_of(month))] = 1.0
        i += len(SEASONS)
        out[i + dow] = 1.0
        i += 7

        out[i : i + len(SPATIAL_CATEGORIES)] = meta.spatial_profile.as_array()
        return out

    def manifest(self) -> dict:
        return {
            "feature_names": self.feature_names(),
            "scaler": {f: list(self.scaler.bounds[f]) for f in CONTINUOUS_FIELDS},
            "weather_types": list(self.weather_types),
            "utc_offset_minutes": self.utc_offset_minutes,
            "window": self.window,
            "city_tag": self.city_tag,
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> "FeatureCodec":
        return cls(
            scaler=ScalerState(bounds={f: tuple(b) for f, b in manifest["scaler"].items()}),
            weather_types=tuple(manifest["weather_types"]),
            utc_offset_minutes=int(manifest["utc_offset_minutes"]),
            window=int(manifest["window"]),
            city_tag=manifest.get("city_tag", ""),
        )


@dataclass(frozen=True)
class EncodedSeries:
    """Encoded rows of one device, still on the hourly grid."""

    device_id: str
    timestamps: tuple[datetime, ...]
    matrix: np.ndarray  # (n_rows, dim)
    labels: np.ndarray  # (n_rows,), 1..5 or 0 when unlabeled


def encode_series(samples: Sequence[Sample], meta: DeviceMeta, codec: FeatureCodec) -> EncodedSeries:
    matrix = np.zeros((len(samples), codec.dim), dtype=np.float64)
    labels = np.zeros(len(samples), dtype=np.int64)
    for idx, s in enumerate(samples):
        matrix[idx] = codec.encode_row(s, meta)
        label = s.label
        labels[idx] = 0 if label is None else int(label)
    return EncodedSeries(
        device_id=meta.device_id,
        timestamps=tuple(s.timestamp for s in samples),
        matrix=matrix,
        labels=labels,
    )


@dataclass(frozen=True)
class WindowInstance:
    """T consecutive encoded rows plus the label at the final timestamp."""

    features: np.ndarray  # (T, dim)
    label: int
    device_id: str
    end_timestamp: datetime


def _segments(timestamps: Sequence[datetime]) -> list[tuple[int, int]]:
    """Half-open [start, end) index ranges of hourly-contiguous runs."""
    if not timestamps:
        return []
    bounds = []
    start = 0
    for i in range(1, len(timestamps)):
        if timestamps[i] - timestamps[i - 1] != timedelta(hours=1):
            bounds.append((start, i))
            start = i
    bounds.append((start, len(timestamps)))
    return bounds


def build_windows(series: EncodedSeries, window: int) -> list[WindowInstance]:
    """Stride-1 sliding windows inside contiguous segments only.

    A segment of length L contributes L - T + 1 instances (zero when
    L < T); the instance label is the AQI class at the final row, and
    windows ending on an unlabeled row are skipped.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    instances = []
    for start, end in _segments(series.timestamps):
        if end - start < window:
            warnings.warn(
                f"{series.device_id}: segment of {end - start} rows is shorter than window {window}"
            )
            continue
        for last in range(start + window - 1, end):
            label = int(series.labels[last])
            if label == 0:
                continue
            instances.append(
                WindowInstance(
                    features=series.matrix[last - window + 1 : last + 1],
                    label=label,
                    device_id=series.device_id,
                    end_timestamp=series.timestamps[last],
                )
            )
    return instances


def flatten_for_rf(instance: WindowInstance, codec: FeatureCodec, temporal: bool) -> np.ndarray:
    """Final window row for the forest models; the temporal block is
    dropped unless temporal is set."""
    row = instance.features[-1]
    if temporal:
        return np.array(row, dtype=np.float64)
    keep = np.ones(row.shape[0], dtype=bool)
    keep[codec.temporal_indices()] = False
    return np.array(row[keep], dtype=np.float64)


def rf_feature_names(codec: FeatureCodec, temporal: bool) -> list[str]:
    names = codec.feature_names()
    if temporal:
        return names
    drop = set(codec.temporal_indices())
    return [n for i, n in enumerate(names) if i not in drop]


def write_encoded_csv(
    instances: Iterable[WindowInstance], codec: FeatureCodec, path: str | Path
) -> None:
    """Persist final-row features with a header matching the manifest."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "end_timestamp", "label"] + codec.feature_names())
        for inst in instances:
            writer.writerow(
                [inst.device_id, inst.end_timestamp.strftime("%Y-%m-%dT%H:%M:%S+00:00"), inst.label]
                + [repr(float(v)) for v in inst.features[-1]]
            )
