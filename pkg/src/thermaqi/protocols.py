"""Evaluation protocols: leave-one-out, single-source (similarity or
distance), device ablation, progressive deployment, and the window-size
sweep.

Every protocol is leakage-free by construction: the feature codec
(scaler, weather vocabulary) is fit on training devices only, and the
held-out device contributes nothing to training. Runs are deterministic
given (dataset, seed): per-fold seeds derive from the root seed and the
held-out device id, so re-running a protocol reproduces its reports
bit for bit.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import model_lstm, model_rf
from .domain import Dataset
from .features import (
    DEFAULT_UTC_OFFSET_MINUTES,
    DEFAULT_WINDOW,
    FeatureCodec,
    WindowInstance,
    build_windows,
    encode_series,
    flatten_for_rf,
)
from .metrics import EvalReport, weighted_f1
from .model_io import MODEL_KINDS, ModelBundle
from .spatial import nearest_device


@dataclass(frozen=True)
class ProtocolConfig:
    window: int = DEFAULT_WINDOW
    utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES
    seed: int = 0
    n_estimators: int = 100
    max_depth: Optional[int] = 20
    lstm: model_lstm.HyperParams = model_lstm.HyperParams()
    # Optional seeded cap on training instances, for desk-scale runs.
    max_train_instances: Optional[int] = None

    def lstm_hparams(self) -> model_lstm.HyperParams:
        return replace(self.lstm, window=self.window)

    def describe(self) -> dict:
        return {
            "window": self.window,
            "utc_offset_minutes": self.utc_offset_minutes,
            "seed": self.seed,
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "lstm": {
                "hidden": self.lstm.hidden,
                "dropout": self.lstm.dropout,
                "l2": self.lstm.l2,
                "learning_rate": self.lstm.learning_rate,
                "epochs": self.lstm.epochs,
                "batch_size": self.lstm.batch_size,
                "patience": self.lstm.patience,
                "early_stop": self.lstm.early_stop,
            },
            "max_train_instances": self.max_train_instances,
        }


def fold_seed(root_seed: int, *parts: str) -> int:
    """Stable 32-bit sub-seed from the root seed and string parts."""
    return zlib.crc32(":".join([str(root_seed), *parts]).encode())


def _device_samples(ds: Dataset, device_ids: Sequence[str]) -> list:
    samples = []
    for d in sorted(device_ids):
        samples.extend(ds.rows[d])
    return samples


def _device_windows(ds: Dataset, device_id: str, codec: FeatureCodec) -> list[WindowInstance]:
    series = encode_series(list(ds.rows[device_id]), ds.devices[device_id], codec)
    return build_windows(series, codec.window)


def _fit_codec(ds: Dataset, train_ids: Sequence[str], cfg: ProtocolConfig) -> FeatureCodec:
    train_samples = _device_samples(ds, train_ids)
    if not train_samples:
        raise ValueError("training devices contribute no samples")
    city = ds.devices[sorted(train_ids)[0]].city_tag
    return FeatureCodec.fit(
        train_samples,
        window=cfg.window,
        utc_offset_minutes=cfg.utc_offset_minutes,
        city_tag=city,
    )


def _subsample(
    instances: list[WindowInstance], cap: Optional[int], seed: int
) -> list[WindowInstance]:
    if cap is None or len(instances) <= cap:
        return instances
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(instances), size=cap, replace=False))
    return [instances[i] for i in keep]


def train_bundle(
    instances: list[WindowInstance],
    codec: FeatureCodec,
    model_kind: str,
    cfg: ProtocolConfig,
    seed: int,
) -> ModelBundle:
    """Train one model of the requested kind on prepared window instances."""
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    if not instances:
        raise ValueError("no training instances")
    meta = {"seed": seed, "n_train_instances": len(instances), "config": cfg.describe()}
    if model_kind == "lstm":
        model = model_lstm.train(instances, cfg.lstm_hparams(), seed=seed)
    else:
        X = np.stack(
            [flatten_for_rf(i, codec, temporal=model_kind == "rf-t") for i in instances]
        )
        y = np.asarray([i.label for i in instances], dtype=np.int64)
        model = model_rf.train_forest(
            X,
            y,
            model_rf.ForestConfig(
                n_estimators=cfg.n_estimators, max_depth=cfg.max_depth, seed=seed
            ),
        )
    return ModelBundle(kind=model_kind, model=model, codec=codec, training_meta=meta)


def _majority_baseline(y_train: Sequence[int], y_test: Sequence[int]) -> float:
    counts = np.bincount(np.asarray(y_train, dtype=np.int64), minlength=6)
    majority = int(np.argmax(counts[1:])) + 1
    return weighted_f1(y_test, [majority] * len(list(y_test)))


def run_fold(
    ds: Dataset,
    train_ids: Sequence[str],
    test_id: str,
    model_kind: str,
    cfg: ProtocolConfig,
    protocol: str,
    extra_meta: Optional[dict] = None,
) -> EvalReport:
    """Fit on train_ids, evaluate on the held-out device."""
    codec = _fit_codec(ds, train_ids, cfg)
    train_instances = []
    for d in sorted(train_ids):
        train_instances.extend(_device_windows(ds, d, codec))
    seed = fold_seed(cfg.seed, protocol, test_id)
    train_instances = _subsample(train_instances, cfg.max_train_instances, seed)
    bundle = train_bundle(train_instances, codec, model_kind, cfg, seed)

    test_instances = _device_windows(ds, test_id, codec)
    if not test_instances:
        raise ValueError(f"held-out device {test_id} yields no window instances")
    probs = bundle.predict_instances(test_instances)
    y_true = [i.label for i in test_instances]
    y_pred = (np.argmax(probs, axis=1) + 1).tolist()
    metadata = {
        "config": cfg.describe(),
        "fold_seed": seed,
        "majority_baseline_f1": _majority_baseline([i.label for i in train_instances], y_true),
        "model_version": bundle.version,
        # Scaler bounds are train-only by construction; echoed for leakage audits.
        "scaler_bounds": {f: list(b) for f, b in codec.scaler.bounds.items()},
    }
    metadata.update(extra_meta or {})
    return EvalReport.build(
        protocol=protocol,
        model_kind=model_kind,
        test_device=test_id,
        train_devices=list(train_ids),
        y_true=y_true,
        y_pred=y_pred,
        probabilities=probs,
        metadata=metadata,
    )


def leave_one_out(ds: Dataset, model_kind: str, cfg: ProtocolConfig) -> list[EvalReport]:
    """Hold out each device in turn; train on all the others."""
    ids = ds.device_ids
    if len(ids) < 2:
        raise ValueError("leave-one-out needs at least 2 devices")
    reports = []
    for test_id in ids:
        train_ids = [d for d in ids if d != test_id]
        reports.append(run_fold(ds, train_ids, test_id, model_kind, cfg, protocol="loo"))
    return reports


def single_source(
    ds: Dataset, target_device: str, mode: str, model_kind: str, cfg: ProtocolConfig
) -> EvalReport:
    """Train on the one device chosen by spatial similarity or distance."""
    ids = ds.device_ids
    if len(ids) < 2:
        raise ValueError("single-source needs at least 2 devices")
    if target_device not in ds.devices:
        raise ValueError(f"unknown device {target_device!r}")
    pool = [ds.devices[d] for d in ids if d != target_device]
    trainer = nearest_device(ds.devices[target_device], pool, mode=mode)
    return run_fold(
        ds,
        [trainer.device_id],
        target_device,
        model_kind,
        cfg,
        protocol=mode,
        extra_meta={"mode": mode, "train_device": trainer.device_id},
    )


@dataclass
class AblationResult:
    removal_order: list[str]
    per_k: dict[int, list[EvalReport]]

    def mean_f1(self, k: int) -> float:
        return float(np.mean([r.weighted_f1 for r in self.per_k[k]]))


def device_ablation(
    ds: Dataset, model_kind: str, cfg: ProtocolConfig, k_values: Sequence[int]
) -> AblationResult:
    """Remove k devices (seeded random order) and run leave-one-out over
    the remainder; k = 0 reproduces the plain leave-one-out run exactly."""
    ids = ds.device_ids
    if len(ids) < 2:
        raise ValueError("ablation needs at least 2 devices")
    rng = np.random.default_rng(fold_seed(cfg.seed, "ablation-order"))
    order = [ids[i] for i in rng.permutation(len(ids))]
    per_k = {}
    for k in k_values:
        if k < 0 or k > len(ids) - 2:
            raise ValueError(f"cannot remove {k} of {len(ids)} devices")
        remaining = [d for d in ids if d not in set(order[:k])]
        per_k[int(k)] = leave_one_out(ds.subset(remaining), model_kind, cfg)
    return AblationResult(removal_order=order, per_k=per_k)


@dataclass
class ProgressiveStep:
    added_device: str
    f1: float
    n_train_instances: int


@dataclass
class ProgressiveResult:
    base_device: str
    held_out_device: str
    labeling: str
    base_f1: float
    steps: list[ProgressiveStep] = field(default_factory=list)


def progressive_deployment(
    ds: Dataset,
    model_kind: str,
    cfg: ProtocolConfig,
    base_device: str,
    added_order: Sequence[str],
    held_out: str,
    labeling: str = "ground_truth",
) -> ProgressiveResult:
    """Grow the training pool one device at a time and track held-out F1.

    ground_truth keeps the true labels of added devices; self_train labels
    each added device with the model from the previous step, at the moment
    of addition, and never touches the stored ground truth.
    """
    if labeling not in ("ground_truth", "self_train"):
        raise ValueError(f"unknown labeling mode {labeling!r}")
    involved = {base_device, held_out, *added_order}
    if len(ds.device_ids) < 3 or len(involved) != len(added_order) + 2:
        raise ValueError("need a base device, a held-out device, and distinct additions")

    def fold(train_pool: list[str], step: str) -> tuple[ModelBundle, FeatureCodec, int]:
        codec = _fit_codec(ds, train_pool, cfg)
        instances: list[WindowInstance] = []
        for d in sorted(train_pool):
            device_instances = _device_windows(ds, d, codec)
            if labeling == "self_train" and d in assigned_labels:
                labels = assigned_labels[d]
                device_instances = [
                    replace(inst, label=labels[inst.end_timestamp]) for inst in device_instances
                ]
            instances.extend(device_instances)
        seed = fold_seed(cfg.seed, "progressive", step, held_out)
        instances = _subsample(instances, cfg.max_train_instances, seed)
        bundle = train_bundle(instances, codec, model_kind, cfg, seed)
        return bundle, codec, len(instances)

    def score(bundle: ModelBundle, codec: FeatureCodec) -> float:
        test_instances = _device_windows(ds, held_out, codec)
        probs = bundle.predict_instances(test_instances)
        y_pred = (np.argmax(probs, axis=1) + 1).tolist()
        return weighted_f1([i.label for i in test_instances], y_pred)

    assigned_labels: dict[str, dict] = {}
    pool = [base_device]
    bundle, codec, _ = fold(pool, step="base")
    result = ProgressiveResult(
        base_device=base_device,
        held_out_device=held_out,
        labeling=labeling,
        base_f1=score(bundle, codec),
    )
    for added in added_order:
        if labeling == "self_train":
            # Annotate the incoming device with the current model.
            incoming = _device_windows(ds, added, codec)
            probs = bundle.predict_instances(incoming)
            preds = np.argmax(probs, axis=1) + 1
            assigned_labels[added] = {
                inst.end_timestamp: int(p) for inst, p in zip(incoming, preds)
            }
        pool.append(added)
        bundle, codec, n_train = fold(pool, step=added)
        result.steps.append(
            ProgressiveStep(added_device=added, f1=score(bundle, codec), n_train_instances=n_train)
        )
    return result


def window_sweep(
    ds: Dataset, model_kind: str, cfg: ProtocolConfig, window_values: Sequence[int]
) -> list[tuple[int, float]]:
    """Mean leave-one-out weighted F1 per window length."""
    if not window_values:
        raise ValueError("no window values requested")
    curve = []
    for window in window_values:
        reports = leave_one_out(ds, model_kind, replace(cfg, window=window))
        curve.append((int(window), float(np.mean([r.weighted_f1 for r in reports]))))
    return curve
