"""Run configuration: one JSON file, overridable by CLI flags, echoed into
every output artifact so runs are auditable and reproducible."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .features import DEFAULT_UTC_OFFSET_MINUTES, DEFAULT_WINDOW
from .model_lstm import HyperParams
from .protocols import ProtocolConfig


@dataclass(frozen=True)
class RunConfig:
    city_tag: str = "synthcity"
    utc_offset_minutes: int = DEFAULT_UTC_OFFSET_MINUTES
    grid_step_hours: int = 1
    fill_cap: int = 6
    window: int = DEFAULT_WINDOW
    model_kind: str = "rf-t"
    seed: int = 0
    # Forest hyperparameters.
    n_estimators: int = 100
    max_depth: Optional[int] = 20
    # Sequence-model hyperparameters.
    lstm_hidden: int = 128
    lstm_dropout: float = 0.2
    lstm_l2: float = 0.001
    lstm_learning_rate: float = 0.001
    lstm_epochs: int = 1000
    lstm_batch_size: int = 256
    lstm_patience: int = 25
    lstm_early_stop: bool = True
    max_train_instances: Optional[int] = None
    # Ingest guardrail: abort when more than this share of mandatory
    # field values had to be forward-filled.
    mandatory_fill_threshold: float = 0.10
    # Synthetic-corpus knobs used when no raw data is supplied.
    synth_devices: int = 3
    synth_months: int = 2

    @classmethod
    def default_synth(cls) -> "RunConfig":
        """Desk-scale defaults for the end-to-end synthetic pipeline."""
        return cls(n_estimators=40, max_depth=14, synth_devices=3, synth_months=2)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def override(self, **kwargs) -> "RunConfig":
        """Apply non-None CLI overrides on top of this config."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **updates)

    def to_dict(self) -> dict:
        return asdict(self)

    def hyperparams(self) -> HyperParams:
        return HyperParams(
            hidden=self.lstm_hidden,
            dropout=self.lstm_dropout,
            l2=self.lstm_l2,
            learning_rate=self.lstm_learning_rate,
            epochs=self.lstm_epochs,
            batch_size=self.lstm_batch_size,
            window=self.window,
            patience=self.lstm_patience,
            early_stop=self.lstm_early_stop,
        )

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            window=self.window,
            utc_offset_minutes=self.utc_offset_minutes,
            seed=self.seed,
            n_estimators=self.n_estimators,
            max_depth=self.max_depth,
            lstm=self.hyperparams(),
            max_train_instances=self.max_train_instances,
        )
