"""Annotation engine behind the HTTP API and the offline batch command.

A location session accumulates the last T-1 encoded rows; a request with
a full contiguous history gets a `complete` window, anything else gets the
current row replicated backward and an explicit `padded` flag. The model
snapshot is immutable and swapped atomically on reload; sessions are
locked individually so distinct locations annotate concurrently.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Optional

import numpy as np

from ..domain import DeviceMeta, MetRecord, Sample
from ..ingest import WeatherProvider
from ..model_io import ModelBundle
from ..spatial import ColorLegend, SpatialProfile, profile_from_raster


class UnregisteredLocationError(KeyError):
    pass


class InsufficientContextError(RuntimeError):
    pass


@dataclass
class LocationSession:
    location_id: str
    latitude: float
    longitude: float
    profile: SpatialProfile
    buffer: list[np.ndarray] = field(default_factory=list)
    last_hour: Optional[datetime] = None
    last_met: Optional[MetRecord] = None
    met_fills: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass(frozen=True)
class AnnotationResult:
    aqi_class: int
    probabilities: tuple[float, ...]
    model_version: str
    history_state: str  # "complete" | "padded"
    attention: Optional[tuple[float, ...]]


def _floor_hour(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(minute=0, second=0, microsecond=0)


class Annotator:
    def __init__(self, bundle: ModelBundle, weather: WeatherProvider, fill_cap: int = 6):
        self._bundle = bundle
        self._weather = weather
        self._fill_cap = fill_cap
        self._sessions: dict[str, LocationSession] = {}
        self._registry_lock = threading.Lock()

    @property
    def bundle(self) -> ModelBundle:
        return self._bundle

    def swap_model(self, bundle: ModelBundle) -> None:
        """Atomic snapshot swap; in-flight requests finish on the old one."""
        self._bundle = bundle

    def model_info(self) -> dict:
        bundle = self._bundle
        return {
            "kind": bundle.kind,
            "version": bundle.version,
            "window": bundle.codec.window,
            "n_features": bundle.codec.dim,
            "city_tag": bundle.codec.city_tag,
            "utc_offset_minutes": bundle.codec.utc_offset_minutes,
        }

    def register_location(self, lat: float, lon: float, tile: np.ndarray, legend: ColorLegend) -> str:
        """Profile the tile and open a session; the id is stable for
        identical inputs."""
        profile = profile_from_raster(tile, legend)
        digest = hashlib.sha256()
        digest.update(f"{lat:.6f},{lon:.6f},".encode())
        digest.update(np.ascontiguousarray(tile).tobytes())
        location_id = "loc-" + digest.hexdigest()[:12]
        with self._registry_lock:
            if location_id not in self._sessions:
                self._sessions[location_id] = LocationSession(
                    location_id=location_id, latitude=lat, longitude=lon, profile=profile
                )
        return location_id

    def _resolve(self, location_id: Optional[str], lat: Optional[float], lon: Optional[float]) -> LocationSession:
        with self._registry_lock:
            if location_id is not None:
                session = self._sessions.get(location_id)
                if session is None:
                    raise UnregisteredLocationError(f"unregistered location {location_id!r}")
                return session
            if lat is not None and lon is not None:
                for session in self._sessions.values():
                    if round(session.latitude, 4) == round(lat, 4) and round(
                        session.longitude, 4
                    ) == round(lon, 4):
                        return session
            raise UnregisteredLocationError("unregistered location (no tile on record)")

    def annotate(
        self,
        timestamp: datetime,
        temperature: float,
        humidity: float,
        location_id: Optional[str] = None,
        lat: Optional[float] = None,
        lon: Optional[float] = None,
    ) -> AnnotationResult:
        session = self._resolve(location_id, lat, lon)
        bundle = self._bundle  # one snapshot for the whole request
        codec = bundle.codec
        hour = _floor_hour(timestamp)

        with session.lock:
            met = self._weather.lookup(session.latitude, session.longitude, hour)
            if met is None:
                contiguous = session.last_hour is not None and hour - session.last_hour == timedelta(hours=1)
                if session.last_met is not None and contiguous and session.met_fills < self._fill_cap:
                    met = session.last_met
                    session.met_fills += 1
                else:
                    raise InsufficientContextError(
                        f"weather unavailable for {hour.isoformat()} beyond fill cap"
                    )
            else:
                session.met_fills = 0

            sample = Sample(
                device_id=session.location_id,
                timestamp=hour,
                temperature=temperature,
                humidity=humidity,
                met=met,
            )
            meta = DeviceMeta(
                device_id=session.location_id,
                latitude=session.latitude,
                longitude=session.longitude,
                city_tag=codec.city_tag,
                spatial_profile=session.profile,
            )
            row = codec.encode_row(sample, meta)

            contiguous = session.last_hour is not None and hour - session.last_hour == timedelta(hours=1)
            if not contiguous:
                session.buffer.clear()

            window_len = codec.window
            if len(session.buffer) >= window_len - 1:
                history = session.buffer[-(window_len - 1):] if window_len > 1 else []
                state = "complete"
            else:
                pad = [row] * (window_len - 1 - len(session.buffer))
                history = pad + list(session.buffer)
                state = "padded"
            window = np.stack(history + [row]) if history else row[None, :]

            probs, attention = bundle.predict_window(window)

            session.buffer.append(row)
            if len(session.buffer) > window_len - 1:
                session.buffer = session.buffer[-(window_len - 1):] if window_len > 1 else []
            session.last_hour = hour
            session.last_met = met

        return AnnotationResult(
            aqi_class=int(np.argmax(probs)) + 1,
            probabilities=tuple(float(p) for p in probs),
            model_version=bundle.version,
            history_state=state,
            attention=None if attention is None else tuple(float(a) for a in attention),
        )
