"""Sensor calibration statistics: zero-condition baseline correction,
two-sample similarity testing against a validated reference device, and
event-window sensitivity agreement.

The similarity check is Welch's unequal-variance two-sample t test; the
pass threshold rejects the no-difference null at 5%. Sensitivity pairs a
reference and candidate over an induced pollution event and requires a
Pearson correlation of at least 0.9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from typing import Optional, Sequence

import numpy as np
from scipy.stats import t as t_dist

from .domain import Sample

MIN_RUN_LENGTH = 10
SIMILARITY_ALPHA = 0.05
SENSITIVITY_MIN_R = 0.9
SENSITIVITY_MIN_POINTS = 5


@dataclass(frozen=True)
class BaselineState:
    """Per-field offset estimated from a zero-condition run."""

    field: str
    offset: float
    n_samples: int
    window_start: datetime
    window_end: datetime

    def apply(self, raw: Sequence[float]) -> tuple[np.ndarray, int]:
        """Correct raw readings; negative results clamp to 0 and are counted."""
        corrected = np.asarray(raw, dtype=np.float64) - self.offset
        clamped = int(np.count_nonzero(corrected < 0))
        return np.maximum(corrected, 0.0), clamped


def _field_values(samples: Sequence[Sample], field: str) -> np.ndarray:
    if field == "pm25":
        values = [s.pm25 for s in samples]
        if any(v is None for v in values):
            raise ValueError("zero run contains rows without pm25")
        return np.asarray(values, dtype=np.float64)
    if field in ("temperature", "humidity"):
        return np.asarray([getattr(s, field) for s in samples], dtype=np.float64)
    raise ValueError(f"unknown sensor field {field!r}")


def estimate_baseline(zero_run: Sequence[Sample], field: str = "pm25") -> BaselineState:
    """Offset = mean of the field over a purged-atmosphere run."""
    if len(zero_run) < MIN_RUN_LENGTH:
        raise ValueError(f"zero run needs >= {MIN_RUN_LENGTH} samples, got {len(zero_run)}")
    values = _field_values(zero_run, field)
    return BaselineState(
        field=field,
        offset=float(values.mean()),
        n_samples=len(zero_run),
        window_start=zero_run[0].timestamp,
        window_end=zero_run[-1].timestamp,
    )


@dataclass(frozen=True)
class PairedRun:
    """Aligned hourly series from a reference and a candidate device."""

    timestamps: tuple[datetime, ...]
    reference: np.ndarray
    candidate: np.ndarray
    field: str

    def __post_init__(self) -> None:
        n = len(self.timestamps)
        if n < MIN_RUN_LENGTH:
            raise ValueError(f"paired run needs >= {MIN_RUN_LENGTH} points, got {n}")
        if self.reference.shape != (n,) or self.candidate.shape != (n,):
            raise ValueError("series must match the timestamp vector")

    @classmethod
    def align(
        cls, reference: Sequence[Sample], candidate: Sequence[Sample], field: str = "pm25"
    ) -> "PairedRun":
        """Inner-join the two sample lists on timestamp."""
        ref_by_ts = {s.timestamp: s for s in reference}
        cand_by_ts = {s.timestamp: s for s in candidate}
        common = sorted(set(ref_by_ts) & set(cand_by_ts))
        return cls(
            timestamps=tuple(common),
            reference=_field_values([ref_by_ts[t] for t in common], field),
            candidate=_field_values([cand_by_ts[t] for t in common], field),
            field=field,
        )


@dataclass(frozen=True)
class WelchResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    passed: bool


def welch_t(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom."""
    n1, n2 = a.shape[0], b.shape[0]
    v1, v2 = a.var(ddof=1), b.var(ddof=1)
    se2 = v1 / n1 + v2 / n2
    if se2 == 0.0:
        return 0.0, float(n1 + n2 - 2)
    t_stat = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    return float(t_stat), float(df)


def similarity_test(run: PairedRun) -> WelchResult:
    """Two-sided Welch test of the two series; passes when the
    no-significant-difference null survives at 5%.

    Two constant equal series are identical by definition: p = 1, pass.
    """
    a, b = run.reference, run.candidate
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        if a.mean() == b.mean():
            return WelchResult(0.0, float(a.size + b.size - 2), 1.0, True)
        return WelchResult(math.inf, float(a.size + b.size - 2), 0.0, False)
    t_stat, df = welch_t(a, b)
    p = float(2.0 * t_dist.sf(abs(t_stat), df))
    return WelchResult(t_stat, df, p, p > SIMILARITY_ALPHA)


@dataclass(frozen=True)
class SensitivityResult:
    pearson_r: Optional[float]
    passed: bool
    reason: str = ""


def pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    am, bm = a - a.mean(), b - b.mean()
    denom = math.sqrt(float((am**2).sum()) * float((bm**2).sum()))
    return float((am * bm).sum() / denom)


def sensitivity_agreement(
    run: PairedRun, event_window: tuple[datetime, datetime]
) -> SensitivityResult:
    """Pearson correlation of the two series inside the event window;
    passes at r >= 0.9. Zero variance in either series is a failure."""
    start, end = event_window
    mask = np.array([start <= ts <= end for ts in run.timestamps])
    if int(mask.sum()) < SENSITIVITY_MIN_POINTS:
        raise ValueError(
            f"event window covers {int(mask.sum())} points, need >= {SENSITIVITY_MIN_POINTS}"
        )
    a, b = run.reference[mask], run.candidate[mask]
    if a.var() == 0.0 or b.var() == 0.0:
        return SensitivityResult(None, False, "zero variance")
    r = pearson_r(a, b)
    return SensitivityResult(r, r >= SENSITIVITY_MIN_R)
