"""FastAPI wrapper around the annotation engine."""

from __future__ import annotations

import base64
import binascii
from pathlib import Path

from fastapi import FastAPI, HTTPException

from ..ingest import FixtureWeatherProvider
from ..model_io import load_bundle
from ..spatial import ColorLegend, LegendMismatchError, decode_raster
from .core import Annotator, InsufficientContextError, UnregisteredLocationError
from .schemas import (
    AnnotateRequest,
    AnnotateResponse,
    HealthResponse,
    ModelInfoResponse,
    RegisterLocationRequest,
    RegisterLocationResponse,
)


def create_app(annotator: Annotator) -> FastAPI:
    app = FastAPI(title="thermaqi annotation service")

    @app.post("/v1/locations", response_model=RegisterLocationResponse)
    def register_location(body: RegisterLocationRequest) -> RegisterLocationResponse:
        try:
            tile = decode_raster(base64.b64decode(body.tile_b64, validate=True))
            legend = ColorLegend.from_dict(body.legend)
            location_id = annotator.register_location(body.lat, body.lon, tile, legend)
        except LegendMismatchError as exc:
            raise HTTPException(status_code=422, detail=f"legend mismatch: {exc}")
        except (ValueError, binascii.Error, OSError) as exc:
            raise HTTPException(status_code=422, detail=f"bad tile or legend: {exc}")
        return RegisterLocationResponse(location_id=location_id)

    @app.post("/v1/annotate", response_model=AnnotateResponse)
    def annotate(body: AnnotateRequest) -> AnnotateResponse:
        try:
            result = annotator.annotate(
                timestamp=body.timestamp,
                temperature=body.temperature_c,
                humidity=body.humidity_pct,
                location_id=body.location_id,
                lat=body.lat,
                lon=body.lon,
            )
        except UnregisteredLocationError as exc:
            raise HTTPException(status_code=404, detail=str(exc.args[0]))
        except InsufficientContextError as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return AnnotateResponse(
            aqi_class=result.aqi_class,
            probabilities=list(result.probabilities),
            model_version=result.model_version,
            history_state=result.history_state,
            attention=None if result.attention is None else list(result.attention),
        )

    @app.get("/v1/model/info", response_model=ModelInfoResponse)
    def model_info() -> ModelInfoResponse:
        return ModelInfoResponse(**annotator.model_info())

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", model_version=annotator.bundle.version)

    return app


def build_annotator(model_path: str | Path, weather_fixture: str | Path, fill_cap: int = 6) -> Annotator:
    return Annotator(
        bundle=load_bundle(model_path),
        weather=FixtureWeatherProvider.from_csv(weather_fixture),
        fill_cap=fill_cap,
    )
