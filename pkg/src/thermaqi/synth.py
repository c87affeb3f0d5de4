"""Synthetic corpus generator for desk-scale runs and the acceptance suite.

PM2.5 is a seeded stochastic function with the couplings the real data
shows: it rises when temperature drops and humidity climbs, peaks in the
morning and evening with a midday lull and an early-morning low, carries a
strong winter > summer > monsoon seasonal term, and shifts per device with
the built-up share of its land-use profile. Raw event streams, a weather
fixture, map tiles, and legends are emitted alongside, so the whole
pipeline can run end to end from files. Same seed, same bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .domain import Dataset, DeviceMeta, MetRecord, Sample, write_samples_csv
from .ingest import WEATHER_CSV_COLUMNS, RawEvent, RawStream, coord_key
from .spatial import CATEGORIES, ColorLegend, profile_from_raster, write_ppm

DEFAULT_START = datetime(2020, 7, 1, tzinfo=timezone.utc)
HOURS_PER_MONTH = 30 * 24

# Stable palette: 11 category colors plus an explicit background.
LEGEND_COLORS = {
    "#FF0000": "oneway",
    "#FF8000": "twoway",
    "#800000": "highway",
    "#808080": "human_made",
    "#00FF00": "natural_land",
    "#0000FF": "educational",
    "#FF00FF": "medical",
    "#00FFFF": "water",
    "#008000": "park",
    "#FFFF00": "shopping",
    "#8000FF": "attraction",
    "#FFFFFF": "background",
}

# Positive weights load pollution onto built-up land, negative onto green.
_URBAN_WEIGHT = {
    "oneway": 0.6,
    "twoway": 0.7,
    "highway": 1.0,
    "human_made": 0.8,
    "natural_land": -0.9,
    "educational": 0.2,
    "medical": 0.3,
    "water": -0.7,
    "park": -0.8,
    "shopping": 0.6,
    "attraction": 0.4,
}

_MONTH_TEMP = {1: 13, 2: 16, 3: 22, 4: 29, 5: 33, 6: 34, 7: 31, 8: 30, 9: 29, 10: 25, 11: 19, 12: 14}
_MONTH_HUMIDITY = {1: 65, 2: 55, 3: 45, 4: 35, 5: 35, 6: 45, 7: 75, 8: 80, 9: 75, 10: 60, 11: 60, 12: 65}
_SEASON_TERM = {"winter": 55.0, "summer": 10.0, "monsoon": -25.0}

TILE_SIZE = 40
TILE_BORDER = 2  # background frame, excluded from the profile

CITY_CENTER = (28.60, 77.20)
CITY_TAG = "synthcity"


@dataclass
class SynthCorpus:
    dataset: Dataset
    legend: ColorLegend
    tiles: dict[str, np.ndarray]
    weather: dict[tuple[float, float, datetime], MetRecord]
    raw_streams: dict[str, RawStream]
    config: dict


def _season(month: int) -> str:
    if month in (11, 12, 1, 2):
        return "winter"
    return "summer" if month <= 6 else "monsoon"


def _diurnal_pm(local_hour: float) -> float:
    morning = 18.0 * np.exp(-((local_hour - 8.5) ** 2) / 4.0)
    evening = 22.0 * np.exp(-((local_hour - 20.0) ** 2) / 6.0)
    midday = -8.0 * np.exp(-((local_hour - 14.0) ** 2) / 10.0)
    predawn = -6.0 * np.exp(-((local_hour - 3.5) ** 2) / 6.0)
    return float(morning + evening + midday + predawn)


def _weather_type(precip: float, cloud: float, pm25: float) -> str:
    if precip > 0.5:
        return "rain"
    if cloud > 75:
        return "overcast"
    if pm25 > 150:
        return "hazy"
    if cloud > 45:
        return "cloudy"
    return "clear"


def _make_tile(profile_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Paint a tile whose interior pixel counts realize the profile weights."""
    interior = TILE_SIZE - 2 * TILE_BORDER
    n_pixels = interior * interior
    counts = np.floor(profile_weights * n_pixels).astype(int)
    counts[np.argmax(profile_weights)] += n_pixels - counts.sum()

    palette = {cat: rgb for rgb, cat in ColorLegend.from_dict(LEGEND_COLORS).colors.items()}
    pixels = []
    for cat, count in zip(CATEGORIES, counts):
        pixels.extend([palette[cat]] * count)
    order = rng.permutation(len(pixels))
    tile = np.full((TILE_SIZE, TILE_SIZE, 3), 255, dtype=np.uint8)
    flat = [pixels[i] for i in order]
    for idx, rgb in enumerate(flat):
        r, c = divmod(idx, interior)
        tile[TILE_BORDER + r, TILE_BORDER + c] = rgb
    return tile


def _device_profile(rng: np.random.Generator) -> np.ndarray:
    # Dirichlet with a random emphasis so devices differ meaningfully.
    alpha = np.full(len(CATEGORIES), 0.4)
    alpha[rng.integers(0, len(CATEGORIES), size=3)] += 3.0
    return rng.dirichlet(alpha)


def synth_corpus(
    seed: int,
    n_devices: int = 4,
    months: int = 6,
    start: datetime = DEFAULT_START,
    utc_offset_minutes: int = 330,
    max_attempts: int = 8,
) -> SynthCorpus:
    """Generate a corpus whose AQI class marginals cover all five classes.

    If a draw misses a class, the derived seed is bumped and the corpus is
    regenerated (the attempt count lands in the config echo).
    """
    if n_devices < 2:
        raise ValueError("need at least 2 devices")
    for attempt in range(max_attempts):
        corpus = _generate(seed, attempt, n_devices, months, start, utc_offset_minutes)
        labels = [
            s.label for rows in corpus.dataset.rows.values() for s in rows if s.label is not None
        ]
        if {int(l) for l in labels} == {1, 2, 3, 4, 5}:
            return corpus
    raise RuntimeError(f"could not cover all 5 classes in {max_attempts} attempts")


def _generate(
    seed: int,
    attempt: int,
    n_devices: int,
    months: int,
    start: datetime,
    utc_offset_minutes: int,
) -> SynthCorpus:
    n_hours = months * HOURS_PER_MONTH
    hours = [start + timedelta(hours=h) for h in range(n_hours)]
    legend = ColorLegend.from_dict(LEGEND_COLORS)

    devices: list[DeviceMeta] = []
    tiles: dict[str, np.ndarray] = {}
    samples: list[Sample] = []
    weather: dict[tuple[float, float, datetime], MetRecord] = {}
    raw_streams: dict[str, RawStream] = {}

    for d in range(n_devices):
        device_id = f"dev-{d + 1:02d}"
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt, d)))

        weights = _device_profile(rng)
        tile = _make_tile(weights, rng)
        profile = profile_from_raster(tile, legend)
        tiles[device_id] = tile
        lat = CITY_CENTER[0] + round(float(rng.uniform(-0.15, 0.15)), 4)
        lon = CITY_CENTER[1] + round(float(rng.uniform(-0.15, 0.15)), 4)
        meta = DeviceMeta(
            device_id=device_id,
            latitude=lat,
            longitude=lon,
            city_tag=CITY_TAG,
            spatial_profile=profile,
        )
        devices.append(meta)
        offset = 40.0 * float(
            sum(w * f for w, f in zip((_URBAN_WEIGHT[c] for c in CATEGORIES), profile.fractions))
        )

        ar = 0.0
        held = {"pm25": None, "temperature": None, "humidity": None}
        events: list[RawEvent] = []
        for h_idx, ts in enumerate(hours):
            local = ts + timedelta(minutes=utc_offset_minutes)
            month, lhour = local.month, local.hour + local.minute / 60.0
            season = _season(month)

            temp = float(
                _MONTH_TEMP[month]
                + 5.0 * np.sin((lhour - 8.0) / 24.0 * 2 * np.pi)
                + rng.normal(0.0, 1.5)
            )
            humidity = float(
                np.clip(
                    _MONTH_HUMIDITY[month]
                    - 10.0 * np.sin((lhour - 8.0) / 24.0 * 2 * np.pi)
                    + rng.normal(0.0, 6.0),
                    5.0,
                    100.0,
                )
            )
            ar = 0.85 * ar + float(rng.normal(0.0, 8.0))
            pm25 = float(
                np.clip(
                    55.0
                    + _SEASON_TERM[season]
                    + 2.0 * (28.0 - temp)
                    + 0.6 * (humidity - 50.0)
                    + _diurnal_pm(lhour)
                    + offset
                    + ar,
                    0.0,
                    330.0,
                )
            )

            # Adaptive polling: a frozen value is simply not re-sent.
            fresh = {
                "pm25": round(pm25, 2),
                "temperature": round(temp, 2),
                "humidity": round(humidity, 2),
            }
            for f in fresh:
                must_emit = h_idx == 0 or h_idx == n_hours - 1
                frozen = not must_emit and held[f] is not None and rng.random() < 0.08
                if frozen:
                    continue
                if must_emit or fresh[f] != held[f]:
                    jitter = 0 if must_emit else int(rng.integers(5, 55))
                    events.append(RawEvent(ts - timedelta(minutes=jitter), f, fresh[f]))
                held[f] = fresh[f]
            pm25_obs = held["pm25"]
            temp_obs = held["temperature"]
            hum_obs = held["humidity"]

            precip = 0.0
            p_rain = 0.3 if season == "monsoon" else 0.05
            if rng.random() < p_rain:
                precip = round(float(rng.exponential(2.0 if season == "monsoon" else 0.5)), 2)
            cloud_base = {"monsoon": 70.0, "winter": 30.0, "summer": 20.0}[season]
            cloud = float(np.clip(cloud_base + rng.normal(0.0, 15.0), 0.0, 100.0))
            met = MetRecord(
                feels_like=round(temp_obs + (hum_obs - 50.0) / 20.0, 2),
                temp_min=round(temp_obs - float(rng.uniform(0.3, 1.2)), 2),
                temp_max=round(temp_obs + float(rng.uniform(0.3, 1.2)), 2),
                pressure=round(1012.0 - 0.3 * (temp_obs - 25.0) + float(rng.normal(0.0, 1.0)), 2),
                wind_speed=round(abs(float(rng.normal(2.5, 1.2))), 2),
                wind_direction=round(float(rng.uniform(0.0, 360.0)), 1) % 360.0,
                precipitation=precip,
                cloud_cover=round(cloud, 1),
                weather_type=_weather_type(precip, cloud, pm25_obs),
            )
            weather[coord_key(lat, lon) + (ts,)] = met
            samples.append(
                Sample(
                    device_id=device_id,
                    timestamp=ts,
                    temperature=temp_obs,
                    humidity=hum_obs,
                    pm25=round(pm25_obs, 2),
                    met=met,
                )
            )
        events.sort(key=lambda e: e.timestamp)
        raw_streams[device_id] = RawStream(device_id=device_id, events=tuple(events))

    dataset = Dataset.build(devices, samples)
    return SynthCorpus(
        dataset=dataset,
        legend=legend,
        tiles=tiles,
        weather=weather,
        raw_streams=raw_streams,
        config={
            "seed": seed,
            "attempt": attempt,
            "n_devices": n_devices,
            "months": months,
            "start": start.isoformat(),
            "utc_offset_minutes": utc_offset_minutes,
        },
    )


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, str]:
    """Write every corpus artifact; returns {artifact name: path}."""
    out = Path(out_dir)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    (out / "tiles").mkdir(exist_ok=True)
    (out / "profiles").mkdir(exist_ok=True)

    paths: dict[str, str] = {}
    for device_id, stream in sorted(corpus.raw_streams.items()):
        p = out / "raw" / f"{device_id}.csv"
        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp_iso8601", "field", "value"])
            for e in stream.events:
                writer.writerow(
                    [e.timestamp.strftime("%Y-%m-%dT%H:%M:%S+00:00"), e.field, repr(float(e.value))]
                )
        paths[f"raw/{device_id}"] = str(p)

    for device_id, tile in sorted(corpus.tiles.items()):
        p = out / "tiles" / f"{device_id}.ppm"
        write_ppm(tile, p)
        paths[f"tile/{device_id}"] = str(p)

    meta_entries = []
    for device_id in sorted(corpus.dataset.devices):
        meta = corpus.dataset.devices[device_id]
        profile_path = out / "profiles" / f"{device_id}.json"
        with open(profile_path, "w") as fh:
            json.dump(meta.spatial_profile.to_dict(), fh, sort_keys=True, indent=1)
        meta_entries.append(
            {
                "device_id": device_id,
                "lat": meta.latitude,
                "lon": meta.longitude,
                "city_tag": meta.city_tag,
                "spatial_profile_path": f"profiles/{device_id}.json",
            }
        )
    with open(out / "meta.json", "w") as fh:
        json.dump(meta_entries, fh, sort_keys=True, indent=1)
    paths["meta"] = str(out / "meta.json")

    with open(out / "legend.json", "w") as fh:
        json.dump(corpus.legend.to_dict(), fh, sort_keys=True, indent=1)
    paths["legend"] = str(out / "legend.json")

    with open(out / "weather.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEATHER_CSV_COLUMNS)
        for (lat, lon, hour), met in sorted(corpus.weather.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
            writer.writerow(
                [repr(lat), repr(lon), hour.strftime("%Y-%m-%dT%H:%M:%S+00:00")]
                + [repr(float(getattr(met, f))) for f in WEATHER_CSV_COLUMNS[3:-1]]
                + [met.weather_type]
            )
    paths["weather"] = str(out / "weather.csv")

    all_samples = [s for d in sorted(corpus.dataset.rows) for s in corpus.dataset.rows[d]]
    write_samples_csv(all_samples, out / "dataset.csv")
    paths["dataset"] = str(out / "dataset.csv")

    with open(out / "synth_config.json", "w") as fh:
        json.dump(corpus.config, fh, sort_keys=True, indent=1)
    paths["config"] = str(out / "synth_config.json")
    return paths
