"""Trained-model envelope: parameters plus the feature manifest they were
fit against, versioned by content hash.

Three model kinds exist: "rf" (forest on non-temporal features), "rf-t"
(forest including the temporal block), and "lstm" (sequence model over the
full window). The envelope is plain JSON with sorted keys, so equal
(data, seed) runs serialize byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import model_lstm, model_rf
from .features import FeatureCodec, WindowInstance, flatten_for_rf

MODEL_KINDS = ("rf", "rf-t", "lstm")


@dataclass
class ModelBundle:
    kind: str
    model: Union[model_rf.ForestModel, model_lstm.SequenceModel]
    codec: FeatureCodec
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "manifest": self.codec.manifest(),
            "model": self.model.to_dict(),
            "training_meta": self.training_meta,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    @property
    def version(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data: dict) -> "ModelBundle":
        kind = data["kind"]
        if kind == "lstm":
            model = model_lstm.SequenceModel.from_dict(data["model"])
        else:
            model = model_rf.ForestModel.from_dict(data["model"])
        return cls(
            kind=kind,
            model=model,
            codec=FeatureCodec.from_manifest(data["manifest"]),
            training_meta=data.get("training_meta", {}),
        )

    def predict_window(self, window: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """Probabilities over the 5 classes for one T x d window, plus
        attention weights for the sequence model (None for forests)."""
        if self.kind == "lstm":
            probs, alpha = model_lstm.forward(self.model, window)
            return probs, alpha
        row = window[-1]
        if self.kind == "rf":
            keep = np.ones(row.shape[0], dtype=bool)
            keep[self.codec.temporal_indices()] = False
            row = row[keep]
        return model_rf.predict_proba(self.model, row[None, :])[0], None

    def predict_instances(self, instances: list[WindowInstance]) -> np.ndarray:
        """Probability matrix (n, 5) for a batch of window instances."""
        if not instances:
            return np.zeros((0, 5))
        if self.kind == "lstm":
            X = np.stack([inst.features for inst in instances]).astype(np.float64)
            return model_lstm.predict_proba(self.model, X)
        X = np.stack(
            [flatten_for_rf(inst, self.codec, temporal=self.kind == "rf-t") for inst in instances]
        )
        return model_rf.predict_proba(self.model, X)


def save_bundle(bundle: ModelBundle, path: str | Path) -> str:
    """Write the envelope and return its content-hash version."""
    Path(path).write_bytes(bundle.canonical_bytes())
    return bundle.version


def load_bundle(path: str | Path) -> ModelBundle:
    with open(path) as fh:
        return ModelBundle.from_dict(json.load(fh))
