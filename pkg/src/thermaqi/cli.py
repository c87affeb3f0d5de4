"""Command-line entry point.

Subcommands: ingest, profile, featurize, train, eval, calibrate, annotate,
serve, synth, pipeline. A JSON config (--config) supplies defaults; flags
override individual fields. Exit codes: 0 success, 1 usage error, 2
data/validation error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; we reserve that
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _load_config(args) -> "RunConfig":
    from .config import RunConfig

    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.override(seed=getattr(args, "seed", None))


def _dump_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)


def _cmd_ingest(args) -> int:
    from .pipeline import ingest_directory

    cfg = _load_config(args)
    if args.fill_threshold is not None:
        cfg = cfg.override(mandatory_fill_threshold=args.fill_threshold)
    summary = ingest_directory(args.raw, args.meta, args.weather_fixture, args.out, cfg)
    _dump_json(summary.to_dict(), str(Path(args.out).with_suffix(".report.json")))
    print(f"ingested {summary.n_rows} rows from {summary.n_devices} devices "
          f"(fill fraction {summary.fill_fraction:.3f})")
    if summary.fill_fraction > cfg.mandatory_fill_threshold:
        print(
            f"error: fill fraction exceeds threshold {cfg.mandatory_fill_threshold}",
            file=sys.stderr,
        )
        return EXIT_DATA
    return EXIT_OK


def _cmd_profile(args) -> int:
    from .spatial import ColorLegend, profile_from_raster, read_raster

    legend = ColorLegend.from_json_file(args.legend)
    profile = profile_from_raster(read_raster(args.image), legend)
    _dump_json(profile.to_dict(), args.out)
    print(f"wrote profile to {args.out}")
    return EXIT_OK


def _prepare_instances(cfg, data_path, meta_path):
    from .features import FeatureCodec, build_windows, encode_series
    from .pipeline import load_dataset

    dataset = load_dataset(data_path, meta_path)
    samples = [s for d in sorted(dataset.rows) for s in dataset.rows[d]]
    codec = FeatureCodec.fit(
        samples,
        window=cfg.window,
        utc_offset_minutes=cfg.utc_offset_minutes,
        city_tag=cfg.city_tag,
    )
    instances = []
    for d in sorted(dataset.rows):
        series = encode_series(list(dataset.rows[d]), dataset.devices[d], codec)
        instances.extend(build_windows(series, cfg.window))
    return dataset, codec, instances


def _cmd_featurize(args) -> int:
    from .features import write_encoded_csv

    cfg = _load_config(args)
    if args.window is not None:
        cfg = cfg.override(window=args.window)
    _, codec, instances = _prepare_instances(cfg, args.data, args.meta)
    write_encoded_csv(instances, codec, args.out)
    manifest_out = args.manifest_out or str(Path(args.out).with_suffix(".manifest.json"))
    _dump_json(codec.manifest(), manifest_out)
    print(f"encoded {len(instances)} window instances to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .model_io import save_bundle
    from .protocols import fold_seed, train_bundle

    cfg = _load_config(args)
    overrides = {"model_kind": args.model}
    if args.window is not None:
        overrides["window"] = args.window
    if args.no_early_stop:
        overrides["lstm_early_stop"] = False
    cfg = cfg.override(**overrides)
    _, codec, instances = _prepare_instances(cfg, args.data, args.meta)
    bundle = train_bundle(
        instances,
        codec,
        cfg.model_kind,
        cfg.protocol_config(),
        seed=fold_seed(cfg.seed, "cli-train"),
    )
    version = save_bundle(bundle, args.out)
    print(f"trained {cfg.model_kind} on {len(instances)} instances -> {args.out} (version {version})")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from . import protocols
    from .pipeline import load_dataset

    cfg = _load_config(args)
    if args.window is not None:
        cfg = cfg.override(window=args.window)
    pcfg = cfg.protocol_config()
    dataset = load_dataset(args.data, args.meta)
    payload: dict = {"protocol": args.protocol, "model_kind": args.model, "config": cfg.to_dict()}

    if args.protocol == "loo":
        reports = protocols.leave_one_out(dataset, args.model, pcfg)
        payload["mean_weighted_f1"] = float(np.mean([r.weighted_f1 for r in reports]))
        payload["reports"] = [r.to_dict() for r in reports]
    elif args.protocol in ("similarity", "distance"):
        targets = [args.target] if args.target else dataset.device_ids
        reports = [
            protocols.single_source(dataset, t, args.protocol, args.model, pcfg) for t in targets
        ]
        payload["reports"] = [r.to_dict() for r in reports]
    elif args.protocol == "ablation":
        k_values = [int(k) for k in args.k_values.split(",")]
        result = protocols.device_ablation(dataset, args.model, pcfg, k_values)
        payload["removal_order"] = result.removal_order
        payload["per_k"] = {
            str(k): {"mean_weighted_f1": result.mean_f1(k), "reports": [r.to_dict() for r in reps]}
            for k, reps in result.per_k.items()
        }
    elif args.protocol == "progressive":
        ids = dataset.device_ids
        rng = np.random.default_rng(protocols.fold_seed(pcfg.seed, "progressive-order"))
        order = [ids[i] for i in rng.permutation(len(ids))]
        result = protocols.progressive_deployment(
            dataset, args.model, pcfg,
            base_device=order[0], added_order=order[1:-1], held_out=order[-1],
            labeling=args.labeling,
        )
        payload.update(
            {
                "base_device": result.base_device,
                "held_out_device": result.held_out_device,
                "labeling": result.labeling,
                "base_f1": result.base_f1,
                "steps": [
                    {"added_device": s.added_device, "f1": s.f1, "n_train_instances": s.n_train_instances}
                    for s in result.steps
                ],
            }
        )
    elif args.protocol == "window-sweep":
        t_values = [int(t) for t in args.t_values.split(",")]
        curve = protocols.window_sweep(dataset, args.model, pcfg, t_values)
        payload["curve"] = [{"window": t, "mean_weighted_f1": f1} for t, f1 in curve]
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown protocol {args.protocol}")

    _dump_json(payload, args.out)
    _write_flat_series(payload, args.out)
    print(f"wrote {args.protocol} report to {args.out}")
    return EXIT_OK


def _write_flat_series(payload: dict, report_path: str) -> None:
    """Plot-ready CSV companion for the JSON report."""
    rows: list[tuple] = []
    if "reports" in payload:
        rows = [("device", "weighted_f1")] + [
            (r["test_device"], r["weighted_f1"]) for r in payload["reports"]
        ]
    elif "per_k" in payload:
        rows = [("k_removed", "device", "weighted_f1")]
        for k, block in sorted(payload["per_k"].items(), key=lambda kv: int(kv[0])):
            rows += [(k, r["test_device"], r["weighted_f1"]) for r in block["reports"]]
    elif "steps" in payload:
        rows = [("step", "added_device", "weighted_f1"), (0, payload["base_device"], payload["base_f1"])]
        rows += [(i + 1, s["added_device"], s["f1"]) for i, s in enumerate(payload["steps"])]
    elif "curve" in payload:
        rows = [("window", "mean_weighted_f1")] + [
            (p["window"], p["mean_weighted_f1"]) for p in payload["curve"]
        ]
    if rows:
        with open(Path(report_path).with_suffix(".csv"), "w", newline="") as fh:
            csv.writer(fh).writerows(rows)


def _cmd_calibrate(args) -> int:
    from .calib import PairedRun, estimate_baseline, sensitivity_agreement, similarity_test
    from .domain import read_samples_csv

    if args.mode == "baseline":
        run = read_samples_csv(args.candidate)
        state = estimate_baseline(run, args.field)
        payload = {
            "mode": "baseline",
            "field": state.field,
            "offset": state.offset,
            "n_samples": state.n_samples,
            "window": [state.window_start.isoformat(), state.window_end.isoformat()],
        }
    else:
        run = PairedRun.align(
            read_samples_csv(args.ref), read_samples_csv(args.candidate), args.field
        )
        if args.mode == "compare":
            res = similarity_test(run)
            payload = {
                "mode": "compare",
                "field": args.field,
                "t_statistic": res.t_statistic,
                "degrees_of_freedom": res.degrees_of_freedom,
                "p_value": res.p_value,
                "passed": res.passed,
            }
        else:
            window = (
                datetime.fromisoformat(args.event_start).replace(tzinfo=timezone.utc),
                datetime.fromisoformat(args.event_end).replace(tzinfo=timezone.utc),
            )
            res = sensitivity_agreement(run, window)
            payload = {
                "mode": "sensitivity",
                "field": args.field,
                "pearson_r": res.pearson_r,
                "passed": res.passed,
                "reason": res.reason,
            }
    _dump_json(payload, args.out)
    print(f"wrote calibration report to {args.out}")
    return EXIT_OK


def _cmd_annotate(args) -> int:
    from .ingest import FixtureWeatherProvider
    from .model_io import load_bundle
    from .service.core import Annotator
    from .spatial import ColorLegend, read_raster

    annotator = Annotator(
        bundle=load_bundle(args.model),
        weather=FixtureWeatherProvider.from_csv(args.weather_fixture),
        fill_cap=_load_config(args).fill_cap,
    )
    location_id = annotator.register_location(
        args.lat, args.lon, read_raster(args.tile), ColorLegend.from_json_file(args.legend)
    )
    with open(args.input, newline="") as fh:
        readings = list(csv.DictReader(fh))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["timestamp_iso8601", "aqi_class", "history_state", "model_version"]
            + [f"p{c}" for c in range(1, 6)]
        )
        for row in readings:
            ts = datetime.fromisoformat(row["timestamp_iso8601"])
            result = annotator.annotate(
                timestamp=ts,
                temperature=float(row["temperature"]),
                humidity=float(row["humidity"]),
                location_id=location_id,
            )
            writer.writerow(
                [row["timestamp_iso8601"], result.aqi_class, result.history_state, result.model_version]
                + [repr(p) for p in result.probabilities]
            )
    print(f"annotated {len(readings)} readings -> {args.out}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import build_annotator, create_app

    cfg = _load_config(args)
    app = create_app(build_annotator(args.model, args.weather_fixture, cfg.fill_cap))
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .synth import synth_corpus, write_corpus

    cfg = _load_config(args)
    corpus = synth_corpus(
        seed=cfg.seed,
        n_devices=args.devices if args.devices is not None else cfg.synth_devices,
        months=args.months if args.months is not None else cfg.synth_months,
        utc_offset_minutes=cfg.utc_offset_minutes,
    )
    paths = write_corpus(corpus, args.out)
    print(f"wrote synthetic corpus ({corpus.config['n_devices']} devices, "
          f"{corpus.config['months']} months) to {args.out}")
    return EXIT_OK if paths else EXIT_INTERNAL


def _cmd_pipeline(args) -> int:
    from .config import RunConfig
    from .pipeline import run_pipeline

    if getattr(args, "config", None):
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = RunConfig.default_synth()
    cfg = cfg.override(seed=getattr(args, "seed", None))
    manifest = run_pipeline(cfg, args.out)
    print(f"pipeline complete; manifest at {Path(args.out) / 'manifest.json'}")
    for name, entry in manifest["artifacts"].items():
        print(f"  {name}: {entry['sha256'][:12]} {entry['path']}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="thermaqi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("ingest", help="regularize raw streams and attach weather")
    common(p)
    p.add_argument("--raw", required=True, help="directory of per-device raw event CSVs")
    p.add_argument("--meta", required=True, help="device metadata JSON")
    p.add_argument("--weather-fixture", required=True)
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.add_argument("--fill-threshold", type=float, default=None)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("profile", help="compute a spatial profile from a map tile")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--legend", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("featurize", help="encode a dataset into window instances")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest-out", default=None)
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("train", help="train a model on all devices")
    common(p)
    p.add_argument("--model", required=True, choices=["rf", "rf-t", "lstm"])
    p.add_argument("--data", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument(
        "--no-early-stop",
        action="store_true",
        help="run the sequence model for the full epoch budget",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    common(p)
    p.add_argument(
        "--protocol",
        required=True,
        choices=["loo", "similarity", "distance", "ablation", "progressive", "window-sweep"],
    )
    p.add_argument("--model", required=True, choices=["rf", "rf-t", "lstm"])
    p.add_argument("--data", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--target", default=None, help="target device for similarity/distance")
    p.add_argument("--k-values", default="0,1", help="comma list for ablation")
    p.add_argument("--t-values", default="6,12,18,24", help="comma list for window-sweep")
    p.add_argument("--labeling", default="ground_truth", choices=["ground_truth", "self_train"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("calibrate", help="calibration statistics")
    common(p)
    p.add_argument("mode", choices=["baseline", "compare", "sensitivity"])
    p.add_argument("--ref", help="reference device sample CSV")
    p.add_argument("--candidate", required=True, help="candidate device sample CSV")
    p.add_argument("--field", default="pm25")
    p.add_argument("--event-start", help="ISO start of the sensitivity event window")
    p.add_argument("--event-end", help="ISO end of the sensitivity event window")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("annotate", help="offline batch annotation of THM readings")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--weather-fixture", required=True)
    p.add_argument("--input", required=True, help="CSV: timestamp_iso8601,temperature,humidity")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--tile", required=True)
    p.add_argument("--legend", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("serve", help="run the HTTP annotation service")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--weather-fixture", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--devices", type=int, default=None)
    p.add_argument("--months", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pipeline", help="run synth -> ingest -> featurize -> train -> eval")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        from .pipeline import StageError

        if isinstance(exc, StageError) and isinstance(exc.cause, (ValueError, KeyError, FileNotFoundError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
