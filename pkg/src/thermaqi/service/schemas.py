"""Request/response bodies of the annotation API."""

from __future__ import annotations

from datetime import datetime
from typing import Optional

from pydantic import BaseModel, Field


class RegisterLocationRequest(BaseModel):
    lat: float = Field(ge=-90.0, le=90.0)
    lon: float = Field(ge=-180.0, le=180.0)
    tile_b64: str = Field(description="Base64-encoded PPM (or PNG) map tile")
    legend: dict[str, str] = Field(description='{"#RRGGBB": category} color legend')


class RegisterLocationResponse(BaseModel):
    location_id: str


class AnnotateRequest(BaseModel):
    location_id: Optional[str] = None
    lat: Optional[float] = None
    lon: Optional[float] = None
    timestamp: datetime
    temperature_c: float
    humidity_pct: float = Field(ge=0.0, le=100.0)


class AnnotateResponse(BaseModel):
    aqi_class: int = Field(ge=1, le=5)
    probabilities: list[float]
    model_version: str
    history_state: str
    attention: Optional[list[float]] = None


class ModelInfoResponse(BaseModel):
    kind: str
    version: str
    window: int
    n_features: int
    city_tag: str
    utc_offset_minutes: int


class HealthResponse(BaseModel):
    status: str
    model_version: str
