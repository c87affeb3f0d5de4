from __future__ import annotations

import numpy as np
import pytest

from thermaqi.metrics import (
    EvalReport,
    confusion_matrix,
    per_class_stats,
    roc_auc_ovr,
    severity_report,
    weighted_f1,
)


def brute_force_weighted_f1(y_true, y_pred) -> float:
    """Direct per-class counting, no shared code with the implementation."""
    y_true, y_pred = list(y_true), list(y_pred)
    n = len(y_true)
    total = 0.0
    for c in range(1, 6):
        support = sum(1 for t in y_true if t == c)
        if support == 0:
            continue
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        predicted = sum(1 for p in y_pred if p == c)
        precision = tp / predicted if predicted else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total += support / n * f1
    return total


def brute_force_auc(y_true, scores, cls) -> float | None:
    """O(n^2) pair comparison with ties counted as half."""
    pos = [s for t, s in zip(y_true, scores) if t == cls]
    neg = [s for t, s in zip(y_true, scores) if t != cls]
    if not pos or not neg:
        return None
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def test_perfect_prediction():
    y = [1, 2, 3, 4, 5, 3, 2]
    assert weighted_f1(y, y) == 1.0


def test_hand_computed_case():
    # class 1: P=1, R=1/2 -> F1=2/3; class 2: P=1/2, R=1 -> F1=2/3
    assert weighted_f1([1, 1, 2], [1, 2, 2]) == pytest.approx(2 / 3, abs=1e-12)


def test_zero_support_classes_excluded():
    assert weighted_f1([1, 1], [2, 2]) == 0.0
    assert weighted_f1([1, 1, 2], [1, 1, 2]) == 1.0


def test_weighted_f1_matches_oracle_randomized():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 40))
        y_true = rng.integers(1, 6, size=n).tolist()
        y_pred = rng.integers(1, 6, size=n).tolist()
        assert weighted_f1(y_true, y_pred) == pytest.approx(
            brute_force_weighted_f1(y_true, y_pred), abs=1e-12
        )


def test_confusion_matrix_structure():
    cm = confusion_matrix([1, 1, 2, 5], [1, 2, 2, 5])
    assert cm[0, 0] == 1 and cm[0, 1] == 1 and cm[1, 1] == 1 and cm[4, 4] == 1
    assert cm.sum() == 4
    stats = per_class_stats([1, 1, 2, 5], [1, 2, 2, 5])
    # Row sums equal per-class support.
    for c in range(1, 6):
        assert cm[c - 1].sum() == stats[c]["support"]


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        weighted_f1([1, 2], [1])


def test_auc_perfect_separation():
    y = [1, 1, 2, 2]
    probs = np.array([[0.9, 0.1, 0, 0, 0], [0.8, 0.2, 0, 0, 0],
                      [0.1, 0.9, 0, 0, 0], [0.2, 0.8, 0, 0, 0]])
    auc = roc_auc_ovr(y, probs)
    assert auc[1] == 1.0 and auc[2] == 1.0
    assert auc[3] is None  # class absent from y_true


def test_auc_constant_scores_half():
    y = [1, 1, 2, 2, 3]
    probs = np.full((5, 5), 0.2)
    auc = roc_auc_ovr(y, probs)
    assert auc[1] == 0.5 and auc[2] == 0.5 and auc[3] == 0.5


def test_auc_matches_pair_counting_oracle():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(2, 50))
        y_true = rng.integers(1, 6, size=n).tolist()
        probs = rng.random((n, 5))
        probs = probs / probs.sum(axis=1, keepdims=True)
        # Quantize so ties actually occur.
        probs = np.round(probs, 1)
        auc = roc_auc_ovr(y_true, probs)
        for c in range(1, 6):
            oracle = brute_force_auc(y_true, probs[:, c - 1].tolist(), c)
            if oracle is None:
                assert auc[c] is None
            else:
                assert auc[c] == pytest.approx(oracle, abs=1e-12)


def test_severity_perfect_predictions():
    y = [1, 2, 3, 4, 5]
    report = severity_report(y, y)
    for c in range(1, 6):
        assert report[c]["distribution"] == {c: 1.0}
        assert report[c]["ordinal_distance"] == 0.0


def test_severity_hand_case():
    report = severity_report([4, 4, 4], [3, 5, 5])
    assert report[4]["distribution"] == {3: pytest.approx(1 / 3), 5: pytest.approx(2 / 3)}
    assert report[4]["ordinal_distance"] == pytest.approx(1.0)


def test_severity_rows_normalized():
    rng = np.random.default_rng(2)
    y_true = rng.integers(1, 6, size=50).tolist()
    y_pred = rng.integers(1, 6, size=50).tolist()
    report = severity_report(y_true, y_pred)
    for row in report.values():
        assert sum(row["distribution"].values()) == pytest.approx(1.0, abs=1e-12)


def test_eval_report_build():
    rng = np.random.default_rng(3)
    y_true = rng.integers(1, 6, size=30).tolist()
    probs = rng.random((30, 5))
    probs /= probs.sum(axis=1, keepdims=True)
    y_pred = (probs.argmax(axis=1) + 1).tolist()
    report = EvalReport.build(
        protocol="loo",
        model_kind="rf",
        test_device="d1",
        train_devices=["d2", "d3"],
        y_true=y_true,
        y_pred=y_pred,
        probabilities=probs,
        metadata={"seed": 1},
    )
    payload = report.to_dict()
    assert payload["n_instances"] == 30
    assert payload["train_devices"] == ["d2", "d3"]
    # Confusion row sums equal supports; supports sum to the instance count.
    supports = [payload["per_class"][str(c)]["support"] for c in range(1, 6)]
    assert sum(supports) == 30
    for c in range(1, 6):
        assert sum(payload["confusion"][c - 1]) == supports[c - 1]
