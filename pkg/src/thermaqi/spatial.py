"""Land-use profiling from color-coded map rasters, plus geodesic and
profile-similarity queries.

A location's footprint is summarized as coverage fractions over 3 road
types and 8 point-of-interest types, computed by exact-match pixel
counting against a color legend. Anti-aliased tiles must be quantized to
legend colors beforehand; unmatched and background pixels never enter the
denominator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

ROAD_CATEGORIES = ("oneway", "twoway", "highway")
POI_CATEGORIES = (
    "human_made",
    "natural_land",
    "educational",
    "medical",
    "water",
    "park",
    "shopping",
    "attraction",
)
CATEGORIES = ROAD_CATEGORIES + POI_CATEGORIES
BACKGROUND = "background"

EARTH_RADIUS_KM = 6371.0


class LegendMismatchError(ValueError):
    """Raised when no pixel of a raster matches the legend."""


@dataclass(frozen=True)
class ColorLegend:
    """Exact RGB -> category mapping; background colors are listed explicitly."""

    colors: dict[tuple[int, int, int], str]

    def __post_init__(self) -> None:
        seen: dict[str, tuple[int, int, int]] = {}
        for rgb, category in self.colors.items():
            if category != BACKGROUND and category not in CATEGORIES:
                raise ValueError(f"unknown legend category {category!r}")
            if category != BACKGROUND and category in seen:
                raise ValueError(f"category {category!r} mapped from two colors")
            seen[category] = rgb

    @classmethod
    def from_dict(cls, mapping: dict[str, str]) -> "ColorLegend":
        """Parse the {"#RRGGBB": category} legend form."""
        colors = {}
        for hex_color, category in mapping.items():
            h = hex_color.lstrip("#")
            if len(h) != 6:
                raise ValueError(f"bad color {hex_color!r}")
            colors[(int(h[0:2], 16), int(h[2:4], 16), int(h[4:6], 16))] = category
        return cls(colors=colors)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ColorLegend":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, str]:
        return {
            "#%02X%02X%02X" % rgb: category for rgb, category in sorted(self.colors.items())
        }


@dataclass(frozen=True)
class SpatialProfile:
    """Coverage fractions over the 11 categories; sums to 1 over matched pixels."""

    fractions: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.fractions) != len(CATEGORIES):
            raise ValueError(f"expected {len(CATEGORIES)} fractions, got {len(self.fractions)}")
        for f in self.fractions:
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"fraction out of range: {f}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")

    @classmethod
    def from_dict(cls, named: dict[str, float]) -> "SpatialProfile":
        return cls(fractions=tuple(float(named.get(c, 0.0)) for c in CATEGORIES))

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SpatialProfile":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, float]:
        return {c: f for c, f in zip(CATEGORIES, self.fractions)}

    def as_array(self) -> np.ndarray:
        return np.asarray(self.fractions, dtype=np.float64)


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode binary (P6) PPM bytes into an HxWx3 uint8 array."""
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"not a binary PPM (magic {fields[0]!r})")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    if len(data) - pos < width * height * 3:
        raise ValueError("truncated PPM pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return pixels.reshape(height, width, 3).copy()


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def decode_raster(data: bytes) -> np.ndarray:
    """Decode tile bytes: native PPM, or PNG and friends via Pillow."""
    if data[:2] == b"P6":
        return decode_ppm(data)
    import io

    from PIL import Image

    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def write_ppm(image: np.ndarray, path: str | Path) -> None:
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_raster(path: str | Path) -> np.ndarray:
    """Read a map tile; PPM is the native format, PNG is accepted via Pillow."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def profile_from_raster(image: np.ndarray, legend: ColorLegend) -> SpatialProfile:
    """Count exact legend-color pixels per category and normalize.

    Background and unmatched pixels are excluded from the denominator.
    Raises LegendMismatchError when nothing matches.
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ValueError(f"expected a nonempty HxWx3 raster, got shape {image.shape}")
    flat = image.reshape(-1, 3)
    # Pack RGB into one int per pixel so counting is a single pass.
    packed = (
        flat[:, 0].astype(np.int64) << 16
    ) | (flat[:, 1].astype(np.int64) << 8) | flat[:, 2].astype(np.int64)
    counts = {c: 0 for c in CATEGORIES}
    for (r, g, b), category in legend.colors.items():
        if category == BACKGROUND:
            continue
        counts[category] += int(np.count_nonzero(packed == ((r << 16) | (g << 8) | b)))
    total = sum(counts.values())
    if total == 0:
        raise LegendMismatchError("no pixel matches the legend")
    return SpatialProfile(fractions=tuple(counts[c] / total for c in CATEGORIES))


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between (lat, lon) pairs, sphere radius 6371."""
    for lat, lon in (a, b):
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude out of range: {lat}")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude out of range: {lon}")
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    s = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return EARTH_RADIUS_KM * 2.0 * math.asin(math.sqrt(s))


def profile_similarity(p: SpatialProfile, q: SpatialProfile) -> float:
    """Cosine similarity of the 11-dimensional fraction vectors."""
    pv, qv = p.as_array(), q.as_array()
    np_, nq = float(np.linalg.norm(pv)), float(np.linalg.norm(qv))
    if np_ == 0.0 or nq == 0.0:
        raise ValueError("cannot compare a zero profile vector")
    return float(np.dot(pv, qv) / (np_ * nq))


def nearest_device(target, pool: Iterable, mode: str):
    """Pick the pool device closest to target by geodesic distance or most
    similar by spatial profile; ties go to the lexicographically smallest id.
    """
    candidates = sorted(pool, key=lambda d: d.device_id)
    if not candidates:
        raise ValueError("device pool is empty")
    if any(d.device_id == target.device_id for d in candidates):
        raise ValueError("target must not be in the pool")
    if mode == "distance":
        key = lambda d: (haversine_km((target.latitude, target.longitude), (d.latitude, d.longitude)), d.device_id)
    elif mode == "similarity":
        key = lambda d: (-profile_similarity(target.spatial_profile, d.spatial_profile), d.device_id)
    else:
        raise ValueError(f"unknown mode {mode!r} (expected 'distance' or 'similarity')")
    return min(candidates, key=key)
