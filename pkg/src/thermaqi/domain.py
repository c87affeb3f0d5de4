"""Core vocabulary: samples, AQI classes, device metadata, datasets.

Everything here is immutable after construction and safe to share across
threads. PM2.5 is the only pollutant considered; the label is an ordinal
class in {1..5} derived from the concentration bands, with concentrations
above the class-5 band excluded from the system entirely.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional

__all__ = [
    "AQIClass",
    "MetRecord",
    "Sample",
    "DeviceMeta",
    "Dataset",
    "Violation",
    "bin_aqi",
    "validate_dataset",
    "read_samples_csv",
    "write_samples_csv",
    "read_device_meta",
    "SAMPLE_CSV_COLUMNS",
]

# Upper bound of the last usable concentration band; rows above it are dropped.
PM25_MAX_LABELED = 250.0

# (upper_bound, class): value v maps to the first band with v <= upper_bound.
# Lower bound of the first band is 0; every other band is half-open (lo, hi].
_AQI_BANDS = (
    (30.0, 1),
    (60.0, 2),
    (90.0, 3),
    (120.0, 4),
    (250.0, 5),
)


class AQIClass(IntEnum):
    """Ordinal air-quality severity, 1 (good) to 5 (very poor)."""

    GOOD = 1
    SATISFACTORY = 2
    MODERATELY_POLLUTED = 3
    POOR = 4
    VERY_POOR = 5


def bin_aqi(pm25: float) -> Optional[AQIClass]:
    """Map a PM2.5 concentration (ug/m^3) to its AQI class.

    Bands are [0,30] -> 1, (30,60] -> 2, (60,90] -> 3, (90,120] -> 4,
    (120,250] -> 5. Returns None for concentrations above 250 (the row is
    excluded upstream). Raises ValueError on negative or non-finite input.
    """
    if not math.isfinite(pm25):
        raise ValueError(f"pm25 must be finite, got {pm25!r}")
    if pm25 < 0:
        raise ValueError(f"pm25 must be nonnegative, got {pm25!r}")
    for upper, cls in _AQI_BANDS:
        if pm25 <= upper:
            return AQIClass(cls)
    return None


@dataclass(frozen=True)
class MetRecord:
    """Crawled meteorology for one hour (everything a THM cannot sense)."""

    feels_like: float
    temp_min: float
    temp_max: float
    pressure: float
    wind_speed: float
    wind_direction: float
    precipitation: float
    cloud_cover: float
    weather_type: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.wind_direction < 360.0:
            raise ValueError(f"wind_direction must be in [0,360), got {self.wind_direction}")
        if not 0.0 <= self.cloud_cover <= 100.0:
            raise ValueError(f"cloud_cover must be in [0,100], got {self.cloud_cover}")


@dataclass(frozen=True)
class Sample:
    """One timestamped record for a device.

    pm25 is optional: THM-only queries carry temperature/humidity without a
    dust reading. met is optional until weather attachment has run.
    """

    device_id: str
    timestamp: datetime
    temperature: float
    humidity: float
    pm25: Optional[float] = None
    met: Optional[MetRecord] = None

    def __post_init__(self) -> None:
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamps must be timezone-aware (UTC)")
        if not 0.0 <= self.humidity <= 100.0:
            raise ValueError(f"humidity must be in [0,100], got {self.humidity}")
        if self.pm25 is not None and (not math.isfinite(self.pm25) or self.pm25 < 0):
            raise ValueError(f"pm25 must be nonnegative and finite, got {self.pm25}")

    @property
    def label(self) -> Optional[AQIClass]:
        """AQI class of this row, or None when pm25 is absent or excluded."""
        if self.pm25 is None:
            return None
        return bin_aqi(self.pm25)


@dataclass(frozen=True)
class DeviceMeta:
    """Static description of a deployed device or registered location."""

    device_id: str
    latitude: float
    longitude: float
    city_tag: str
    spatial_profile: Optional["SpatialProfile"] = None  # noqa: F821

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class Dataset:
    """Per-device time-ordered samples plus device metadata."""

    devices: dict[str, DeviceMeta]
    rows: dict[str, tuple[Sample, ...]]

    @classmethod
    def build(cls, devices: Iterable[DeviceMeta], samples: Iterable[Sample]) -> "Dataset":
        """Group samples by device, sort by time, and drop class-6 rows."""
        meta = {d.device_id: d for d in devices}
        grouped: dict[str, list[Sample]] = {d: [] for d in meta}
        for s in samples:
            if s.device_id not in meta:
                raise ValueError(f"sample for unknown device {s.device_id!r}")
            if s.pm25 is not None and s.pm25 > PM25_MAX_LABELED:
                continue
            grouped[s.device_id].append(s)
        rows = {
            d: tuple(sorted(g, key=lambda s: s.timestamp)) for d, g in grouped.items()
        }
        return cls(devices=meta, rows=rows)

    @property
    def device_ids(self) -> list[str]:
        return sorted(self.devices)

    def n_rows(self) -> int:
        return sum(len(r) for r in self.rows.values())

    def subset(self, device_ids: Iterable[str]) -> "Dataset":
        keep = set(device_ids)
        return Dataset(
            devices={d: m for d, m in self.devices.items() if d in keep},
            rows={d: r for d, r in self.rows.items() if d in keep},
        )


@dataclass(frozen=True)
class Violation:
    device_id: str
    timestamp: Optional[datetime]
    message: str


def validate_dataset(ds: Dataset, grid_step_hours: int = 1) -> list[Violation]:
    """Report every invariant violation; an empty list means the dataset is valid.

    Checks the hourly grid (ordering, gaps), field ranges, and that every
    labeled row falls inside the five usable classes.
    """
    violations: list[Violation] = []
    step = grid_step_hours * 3600.0
    for device_id in sorted(ds.rows):
        rows = ds.rows[device_id]
        prev: Optional[Sample] = None
        for s in rows:
            if s.timestamp.minute != 0 or s.timestamp.second != 0 or s.timestamp.microsecond != 0:
                violations.append(Violation(device_id, s.timestamp, "timestamp not on hourly grid"))
            if prev is not None:
                delta = (s.timestamp - prev.timestamp).total_seconds()
                if delta <= 0:
                    violations.append(Violation(device_id, s.timestamp, "timestamps not strictly increasing"))
                elif delta != step:
                    missing = int(delta // step) - 1
                    violations.append(
                        Violation(device_id, s.timestamp, f"gap of {missing} grid hour(s) before this row")
                    )
            if not 0.0 <= s.humidity <= 100.0:
                violations.append(Violation(device_id, s.timestamp, f"humidity out of range: {s.humidity}"))
            if s.pm25 is not None:
                if s.pm25 < 0:
                    violations.append(Violation(device_id, s.timestamp, f"pm25 negative: {s.pm25}"))
                elif s.pm25 > PM25_MAX_LABELED:
                    violations.append(
                        Violation(device_id, s.timestamp, f"pm25 above labeled range: {s.pm25}")
                    )
            if s.met is not None and not 0.0 <= s.met.cloud_cover <= 100.0:
                violations.append(Violation(device_id, s.timestamp, f"cloud_cover out of range: {s.met.cloud_cover}"))
            prev = s
    return violations


# CSV ingestion schema, one row per sample. Empty cell = missing.
SAMPLE_CSV_COLUMNS = [
    "device_id",
    "timestamp_iso8601",
    "pm25",
    "temperature",
    "humidity",
    "feels_like",
    "temp_min",
    "temp_max",
    "pressure",
    "wind_speed",
    "wind_direction",
    "precipitation",
    "cloud_cover",
    "weather_type",
]

_MET_FLOAT_FIELDS = (
    "feels_like",
    "temp_min",
    "temp_max",
    "pressure",
    "wind_speed",
    "wind_direction",
    "precipitation",
    "cloud_cover",
)


def _parse_ts(value: str) -> datetime:
    ts = datetime.fromisoformat(value)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def read_samples_csv(path: str | Path) -> list[Sample]:
    """Parse the sample CSV schema; raises ValueError on malformed rows."""
    samples: list[Sample] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SAMPLE_CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing CSV columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                met = None
                if all(row[f] != "" for f in _MET_FLOAT_FIELDS) and row["weather_type"] != "":
                    met = MetRecord(
                        **{f: float(row[f]) for f in _MET_FLOAT_FIELDS},
                        weather_type=row["weather_type"],
                    )
                samples.append(
                    Sample(
                        device_id=row["device_id"],
                        timestamp=_parse_ts(row["timestamp_iso8601"]),
                        pm25=float(row["pm25"]) if row["pm25"] != "" else None,
                        temperature=float(row["temperature"]),
                        humidity=float(row["humidity"]),
                        met=met,
                    )
                )
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad sample row: {exc}") from exc
    return samples


def write_samples_csv(samples: Iterable[Sample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLE_CSV_COLUMNS)
        for s in samples:
            met = s.met
            writer.writerow(
                [
                    s.device_id,
                    s.timestamp.strftime("%Y-%m-%dT%H:%M:%S+00:00"),
                    "" if s.pm25 is None else repr(float(s.pm25)),
                    repr(float(s.temperature)),
                    repr(float(s.humidity)),
                ]
                + (
                    [repr(float(getattr(met, f))) for f in _MET_FLOAT_FIELDS] + [met.weather_type]
                    if met is not None
                    else [""] * (len(_MET_FLOAT_FIELDS) + 1)
                )
            )


def read_device_meta(path: str | Path) -> list[DeviceMeta]:
    """Load device metadata: JSON array of {device_id, lat, lon, city_tag,
    spatial_profile_path}. Profile paths are resolved relative to the file."""
    from .spatial import SpatialProfile

    base = Path(path).parent
    with open(path) as fh:
        entries = json.load(fh)
    devices = []
    for e in entries:
        profile = None
        if e.get("spatial_profile_path"):
            profile = SpatialProfile.from_json_file(base / e["spatial_profile_path"])
        devices.append(
            DeviceMeta(
                device_id=e["device_id"],
                latitude=float(e["lat"]),
                longitude=float(e["lon"]),
                city_tag=e.get("city_tag", ""),
                spatial_profile=profile,
            )
        )
    return devices
