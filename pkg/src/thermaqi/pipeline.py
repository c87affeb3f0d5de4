"""End-to-end pipeline: synth (optional) -> ingest -> featurize -> train
-> eval, with a manifest linking every artifact by content hash.

Stages run sequentially; a failure aborts with the stage name while
artifacts already written stay on disk. Reruns with unchanged inputs
reproduce identical hashes: nothing here writes wall-clock state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .config import RunConfig
from .domain import Dataset, read_device_meta, read_samples_csv, write_samples_csv
from .features import FeatureCodec, build_windows, encode_series, write_encoded_csv
from .ingest import FixtureWeatherProvider, attach_weather, read_raw_stream_csv, regularize
from .model_io import save_bundle
from .protocols import fold_seed, leave_one_out, train_bundle
from .synth import synth_corpus, write_corpus


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class IngestSummary:
    n_devices: int
    n_rows: int
    fill_fraction: float
    fill_counts: dict[str, int]
    dropped_weather_hours: int
    warnings: list[str]

    def to_dict(self) -> dict:
        return {
            "n_devices": self.n_devices,
            "n_rows": self.n_rows,
            "fill_fraction": self.fill_fraction,
            "fill_counts": self.fill_counts,
            "dropped_weather_hours": self.dropped_weather_hours,
            "warnings": self.warnings,
        }


def ingest_directory(
    raw_dir: str | Path,
    meta_path: str | Path,
    weather_csv: str | Path,
    out_csv: str | Path,
    config: RunConfig,
    require_pm25: bool = True,
) -> IngestSummary:
    """Regularize every raw stream in raw_dir and attach fixture weather."""
    from datetime import timedelta

    devices = {d.device_id: d for d in read_device_meta(meta_path)}
    provider = FixtureWeatherProvider.from_csv(weather_csv)
    all_samples = []
    fill_counts: dict[str, int] = {}
    warnings: list[str] = []
    filled = total = dropped = 0
    for path in sorted(Path(raw_dir).glob("*.csv")):
        stream = read_raw_stream_csv(path)
        if stream.device_id not in devices:
            warnings.append(f"no metadata for raw stream {stream.device_id}, skipped")
            continue
        reg = regularize(
            stream,
            grid_step=timedelta(hours=config.grid_step_hours),
            fill_cap=config.fill_cap,
            require_pm25=require_pm25,
        )
        warnings.extend(reg.warnings)
        for f, c in reg.fill_counts.items():
            fill_counts[f] = fill_counts.get(f, 0) + c
        filled += sum(reg.fill_counts.values())
        total += sum(
            1 for s in reg.samples for f in ("pm25", "temperature", "humidity")
            if f != "pm25" or s.pm25 is not None
        )
        attached = attach_weather(reg.samples, devices[stream.device_id], provider, config.fill_cap)
        dropped += len(attached.dropped_hours)
        all_samples.extend(attached.samples)
    write_samples_csv(all_samples, out_csv)
    return IngestSummary(
        n_devices=len(devices),
        n_rows=len(all_samples),
        fill_fraction=filled / total if total else 0.0,
        fill_counts=fill_counts,
        dropped_weather_hours=dropped,
        warnings=warnings,
    )


def load_dataset(dataset_csv: str | Path, meta_path: str | Path) -> Dataset:
    return Dataset.build(read_device_meta(meta_path), read_samples_csv(dataset_csv))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(obj: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)


def run_pipeline(config: RunConfig, out_dir: str | Path) -> dict:
    """Execute every stage and return the artifact manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}

    stage = "synth"
    try:
        corpus = synth_corpus(
            seed=config.seed,
            n_devices=config.synth_devices,
            months=config.synth_months,
            utc_offset_minutes=config.utc_offset_minutes,
        )
        corpus_dir = out / "corpus"
        write_corpus(corpus, corpus_dir)
        artifacts["synth_config"] = corpus_dir / "synth_config.json"
    except Exception as exc:
        raise StageError(stage, exc) from exc

    stage = "ingest"
    try:
        summary = ingest_directory(
            corpus_dir / "raw",
            corpus_dir / "meta.json",
            corpus_dir / "weather.csv",
            out / "ingested.csv",
            config,
        )
        if summary.fill_fraction > config.mandatory_fill_threshold:
            raise ValueError(
                f"fill fraction {summary.fill_fraction:.3f} exceeds threshold "
                f"{config.mandatory_fill_threshold}"
            )
        _dump_json(summary.to_dict(), out / "ingest_report.json")
        artifacts["ingested"] = out / "ingested.csv"
        artifacts["ingest_report"] = out / "ingest_report.json"
        dataset = load_dataset(out / "ingested.csv", corpus_dir / "meta.json")
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc

    stage = "featurize"
    try:
        all_samples = [s for d in sorted(dataset.rows) for s in dataset.rows[d]]
        codec = FeatureCodec.fit(
            all_samples,
            window=config.window,
            utc_offset_minutes=config.utc_offset_minutes,
            city_tag=config.city_tag,
        )
        instances = []
        for d in sorted(dataset.rows):
            series = encode_series(list(dataset.rows[d]), dataset.devices[d], codec)
            instances.extend(build_windows(series, config.window))
        write_encoded_csv(instances, codec, out / "features.csv")
        _dump_json(codec.manifest(), out / "feature_manifest.json")
        artifacts["features"] = out / "features.csv"
        artifacts["feature_manifest"] = out / "feature_manifest.json"
    except Exception as exc:
        raise StageError(stage, exc) from exc

    stage = "train"
    try:
        bundle = train_bundle(
            instances,
            codec,
            config.model_kind,
            config.protocol_config(),
            seed=fold_seed(config.seed, "pipeline-train"),
        )
        save_bundle(bundle, out / "model.json")
        artifacts["model"] = out / "model.json"
    except Exception as exc:
        raise StageError(stage, exc) from exc

    stage = "eval"
    try:
        reports = leave_one_out(dataset, config.model_kind, config.protocol_config())
        payload = {
            "protocol": "loo",
            "config": config.to_dict(),
            "mean_weighted_f1": float(np.mean([r.weighted_f1 for r in reports])),
            "reports": [r.to_dict() for r in reports],
        }
        _dump_json(payload, out / "eval_report.json")
        artifacts["eval_report"] = out / "eval_report.json"
    except Exception as exc:
        raise StageError(stage, exc) from exc

    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "artifacts": {name: {"path": str(p.relative_to(out)), "sha256": _sha256(p)}
                      for name, p in sorted(artifacts.items())},
    }
    _dump_json(manifest, out / "manifest.json")
    return manifest
