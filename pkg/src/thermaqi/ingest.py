"""Raw stream regularization and weather attachment.

Devices report asynchronously (a value is sent only when it changes), so
raw streams are irregular. Regularization projects them onto a fixed
hourly grid with forward fill: each field takes the most recent value
at-or-before the grid instant. Fill is capped; a gap longer than the cap
breaks the series into segments instead of fabricating day-long constancy.

Grid instants are whole hours (minute 0) in UTC. An event stamped 00:10
first influences the 01:00 grid row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Protocol

from .domain import DeviceMeta, MetRecord, Sample

SENSOR_FIELDS = ("pm25", "temperature", "humidity")
DEFAULT_FILL_CAP = 6


@dataclass(frozen=True)
class RawEvent:
    timestamp: datetime
    field: str
    value: float


@dataclass(frozen=True)
class RawStream:
    """Time-ordered (timestamp, field, value) triples for one device.

    Duplicate (timestamp, field) pairs resolve last-write-wins.
    """

    device_id: str
    events: tuple[RawEvent, ...]

    def __post_init__(self) -> None:
        for a, b in zip(self.events, self.events[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError("raw events must be sorted by timestamp")


@dataclass
class RegularizeResult:
    samples: list[Sample]
    fill_counts: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    def fill_fraction(self, fields: tuple[str, ...] = SENSOR_FIELDS) -> float:
        """Share of emitted field values that were forward-filled."""
        total = sum(
            sum(1 for s in self.samples if f != "pm25" or s.pm25 is not None)
            for f in fields
        )
        if total == 0:
            return 0.0
        return sum(self.fill_counts.get(f, 0) for f in fields) / total


def _ceil_to_grid(ts: datetime, step: timedelta) -> datetime:
    base = ts.replace(minute=0, second=0, microsecond=0)
    while base < ts:
        base += step
    return base


def _floor_to_grid(ts: datetime, step: timedelta) -> datetime:
    base = ts.replace(minute=0, second=0, microsecond=0)
    return base


def regularize(
    stream: RawStream,
    grid_step: timedelta = timedelta(hours=1),
    fill_cap: int = DEFAULT_FILL_CAP,
    require_pm25: bool = True,
) -> RegularizeResult:
    """Project a raw stream onto the hourly grid with capped forward fill.

    One sample is emitted per grid hour between the first and last event,
    with each field taking the most recent value at-or-before the grid
    instant. Fill is all-or-nothing per gap: a stretch of at most
    fill_cap missing grid hours between two events of a field fills
    entirely; a longer gap fills not at all (the series breaks into
    segments), and nothing fills before a field's first event or after
    its last. Grid hours where a mandatory field (temperature, humidity,
    and pm25 when require_pm25 is set) has no value are dropped. This
    makes regularize idempotent: feeding the output back in reproduces it.
    """
    result = RegularizeResult(samples=[], fill_counts={f: 0 for f in SENSOR_FIELDS})
    if not stream.events:
        result.warnings.append(f"{stream.device_id}: empty stream")
        return result

    unknown = sorted({e.field for e in stream.events} - set(SENSOR_FIELDS))
    if unknown:
        result.warnings.append(f"{stream.device_id}: ignoring unknown fields {unknown}")

    mandatory = ("temperature", "humidity") + (("pm25",) if require_pm25 else ())

    # Collapse each field to (grid hour, value); last write wins per hour.
    per_field: dict[str, list[tuple[datetime, float]]] = {f: [] for f in SENSOR_FIELDS}
    for e in stream.events:
        if e.field not in per_field:
            continue
        hour = _ceil_to_grid(e.timestamp, grid_step)
        series = per_field[e.field]
        if series and series[-1][0] == hour:
            series[-1] = (hour, e.value)
        else:
            series.append((hour, e.value))

    first = _ceil_to_grid(stream.events[0].timestamp, grid_step)
    last = _floor_to_grid(stream.events[-1].timestamp, grid_step)
    cursor = {f: 0 for f in SENSOR_FIELDS}

    grid = first
    while grid <= last:
        values: dict[str, Optional[float]] = {}
        filled: dict[str, bool] = {}
        for f in SENSOR_FIELDS:
            series = per_field[f]
            i = cursor[f]
            while i < len(series) and series[i][0] <= grid:
                i += 1
            cursor[f] = i
            if i == 0:
                values[f] = None  # before the field's first observation
                continue
            prev_hour, value = series[i - 1]
            if prev_hour == grid:
                values[f] = value
                filled[f] = False
            elif i < len(series) and (series[i][0] - prev_hour) <= grid_step * (fill_cap + 1):
                values[f] = value  # interior gap short enough to fill whole
                filled[f] = True
            else:
                values[f] = None  # broken gap or trailing stretch
        if all(values[f] is not None for f in mandatory):
            result.samples.append(
                Sample(
                    device_id=stream.device_id,
                    timestamp=grid,
                    temperature=values["temperature"],
                    humidity=values["humidity"],
                    pm25=values["pm25"],
                )
            )
            for f in SENSOR_FIELDS:
                if values[f] is not None and filled[f]:
                    result.fill_counts[f] += 1
        grid = grid + grid_step
    return result


class WeatherProvider(Protocol):
    """Hourly meteorology source; implementations must be safe for
    concurrent lookups and deterministic when fixture-backed."""

    def lookup(self, lat: float, lon: float, hour: datetime) -> Optional[MetRecord]: ...


WEATHER_CSV_COLUMNS = [
    "lat",
    "lon",
    "hour_iso8601",
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


def coord_key(lat: float, lon: float) -> tuple[float, float]:
    return (round(lat, 2), round(lon, 2))


class FixtureWeatherProvider:
    """File-backed provider: CSV keyed by (lat 2dp, lon 2dp, hour)."""

    def __init__(self, records: dict[tuple[float, float, datetime], MetRecord]):
        self._records = records

    @classmethod
    def from_csv(cls, path: str | Path) -> "FixtureWeatherProvider":
        records: dict[tuple[float, float, datetime], MetRecord] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in WEATHER_CSV_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise ValueError(f"{path}: missing weather fixture columns {missing}")
            for row in reader:
                hour = datetime.fromisoformat(row["hour_iso8601"])
                if hour.tzinfo is None:
                    hour = hour.replace(tzinfo=timezone.utc)
                key = coord_key(float(row["lat"]), float(row["lon"])) + (hour.astimezone(timezone.utc),)
                records[key] = MetRecord(
                    feels_like=float(row["feels_like"]),
                    temp_min=float(row["temp_min"]),
                    temp_max=float(row["temp_max"]),
                    pressure=float(row["pressure"]),
                    wind_speed=float(row["wind_speed"]),
                    wind_direction=float(row["wind_direction"]),
                    precipitation=float(row["precipitation"]),
                    cloud_cover=float(row["cloud_cover"]),
                    weather_type=row["weather_type"],
                )
        return cls(records)

    def lookup(self, lat: float, lon: float, hour: datetime) -> Optional[MetRecord]:
        return self._records.get(coord_key(lat, lon) + (hour,))


@dataclass
class AttachResult:
    samples: list[Sample]
    filled_hours: list[datetime]
    dropped_hours: list[datetime]


def attach_weather(
    samples: list[Sample],
    meta: DeviceMeta,
    provider: WeatherProvider,
    fill_cap: int = DEFAULT_FILL_CAP,
) -> AttachResult:
    """Populate every sample's met record from the provider.

    Hours the provider cannot serve reuse the previous hour's record, up
    to fill_cap consecutive hours and only across contiguous rows; hours
    beyond that (and leading unservable hours) are dropped.
    """
    out = AttachResult(samples=[], filled_hours=[], dropped_hours=[])
    prev_met: Optional[MetRecord] = None
    prev_ts: Optional[datetime] = None
    fills = 0
    for s in samples:
        met = provider.lookup(meta.latitude, meta.longitude, s.timestamp)
        if met is not None:
            fills = 0
        else:
            contiguous = prev_ts is not None and s.timestamp - prev_ts == timedelta(hours=1)
            if prev_met is not None and contiguous and fills < fill_cap:
                met = prev_met
                fills += 1
                out.filled_hours.append(s.timestamp)
            else:
                out.dropped_hours.append(s.timestamp)
                prev_met = None
                prev_ts = None
                continue
        out.samples.append(
            Sample(
                device_id=s.device_id,
                timestamp=s.timestamp,
                temperature=s.temperature,
                humidity=s.humidity,
                pm25=s.pm25,
                met=met,
            )
        )
        prev_met = met
        prev_ts = s.timestamp
    return out


def read_raw_stream_csv(path: str | Path, device_id: Optional[str] = None) -> RawStream:
    """Read one device's raw event CSV: timestamp_iso8601,field,value."""
    path = Path(path)
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ts = datetime.fromisoformat(row["timestamp_iso8601"])
            if ts.tzinfo is None:
                ts = ts.replace(tzinfo=timezone.utc)
            events.append(RawEvent(ts.astimezone(timezone.utc), row["field"], float(row["value"])))
    events.sort(key=lambda e: e.timestamp)
    return RawStream(device_id=device_id or path.stem, events=tuple(events))
