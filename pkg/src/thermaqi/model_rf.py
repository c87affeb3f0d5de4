"""Random Forest classifier over the five AQI classes, from scratch.

CART trees with Gini impurity, bootstrap resampling, ceil(sqrt(d)) feature
candidates per split, and thresholds at midpoints between consecutive
sorted unique values. Probabilities average the per-leaf class frequencies
across trees. Training is a pure function of (X, y, seed): each tree draws
from an independent generator derived from (seed, tree index).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

N_CLASSES = 5  # AQI classes 1..5, stored internally as 0..4


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    max_depth: Optional[int] = 20
    min_samples_split: int = 2
    n_feature_candidates: Optional[int] = None  # None -> ceil(sqrt(d))
    seed: int = 0

    def candidates_for(self, n_features: int) -> int:
        if self.n_feature_candidates is not None:
            return min(self.n_feature_candidates, n_features)
        return min(math.ceil(math.sqrt(n_features)), n_features)


@dataclass
class Tree:
    """Flat node arrays; leaves carry their class-count vector and point to
    themselves so vectorized descent can run a fixed number of hops."""

    feature: np.ndarray  # (n_nodes,) int, -1 at leaves
    threshold: np.ndarray  # (n_nodes,) float
    left: np.ndarray  # (n_nodes,) int
    right: np.ndarray  # (n_nodes,) int
    proba: np.ndarray  # (n_nodes, N_CLASSES) float, zeros at internal nodes
    counts: np.ndarray  # (n_nodes, N_CLASSES) int, zeros at internal nodes
    depth: int

    def leaf_for(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        for _ in range(self.depth):
            f = self.feature[node]
            go_right = X[np.arange(X.shape[0]), np.maximum(f, 0)] > self.threshold[node]
            node = np.where(f < 0, node, np.where(go_right, self.right[node], self.left[node]))
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.proba[self.leaf_for(X)]


@dataclass
class ForestModel:
    trees: list[Tree]
    config: ForestConfig
    n_features: int

    def to_dict(self) -> dict:
        return {
            "config": {
                "n_estimators": self.config.n_estimators,
                "max_depth": self.config.max_depth,
                "min_samples_split": self.config.min_samples_split,
                "n_feature_candidates": self.config.n_feature_candidates,
                "seed": self.config.seed,
            },
            "n_features": self.n_features,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": [repr(float(x)) for x in t.threshold],
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "counts": t.counts.tolist(),
                    "depth": t.depth,
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForestModel":
        trees = []
        for td in data["trees"]:
            counts = np.asarray(td["counts"], dtype=np.int64)
            totals = counts.sum(axis=1, keepdims=True)
            proba = np.divide(
                counts, totals, out=np.zeros(counts.shape, dtype=np.float64), where=totals > 0
            )
            trees.append(
                Tree(
                    feature=np.asarray(td["feature"], dtype=np.int64),
                    threshold=np.asarray([float(x) for x in td["threshold"]], dtype=np.float64),
                    left=np.asarray(td["left"], dtype=np.int64),
                    right=np.asarray(td["right"], dtype=np.int64),
                    proba=proba,
                    counts=counts,
                    depth=int(td["depth"]),
                )
            )
        return cls(
            trees=trees,
            config=ForestConfig(**data["config"]),
            n_features=int(data["n_features"]),
        )


def best_split(
    X: np.ndarray, y: np.ndarray, feature_indices: np.ndarray
) -> Optional[tuple[int, float, float]]:
    """Minimum-weighted-Gini split over the candidate features.

    Returns (feature, threshold, weighted_gini) or None when no candidate
    feature has two distinct values. y is 0-based class indices. Ties keep
    the first candidate in the given order and the earliest boundary.
    """
    n = y.shape[0]
    onehot = np.zeros((n, N_CLASSES), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0
    best: Optional[tuple[int, float, float]] = None
    for f in feature_indices:
        v = X[:, f]
        order = np.argsort(v, kind="stable")
        sv = v[order]
        boundaries = np.nonzero(sv[:-1] < sv[1:])[0]
        if boundaries.size == 0:
            continue
        cum = np.cumsum(onehot[order], axis=0)
        total = cum[-1]
        nl = (boundaries + 1).astype(np.float64)
        nr = n - nl
        left = cum[boundaries]
        right = total - left
        gini_l = 1.0 - (left**2).sum(axis=1) / nl**2
        gini_r = 1.0 - (right**2).sum(axis=1) / nr**2
        weighted = (nl * gini_l + nr * gini_r) / n
        i = int(np.argmin(weighted))
        score = float(weighted[i])
        if best is None or score < best[2]:
            b = boundaries[i]
            best = (int(f), float((sv[b] + sv[b + 1]) / 2.0), score)
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    n_features = X.shape[1]
    k = cfg.candidates_for(n_features)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []
    depths: list[int] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(0)
        right.append(0)
        counts.append(np.zeros(N_CLASSES, dtype=np.int64))
        depths.append(0)
        return len(feature) - 1

    root = new_node()
    stack: list[tuple[int, np.ndarray, int]] = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        depths[node] = depth
        cls_counts = np.bincount(y[idx], minlength=N_CLASSES)
        pure = int(np.count_nonzero(cls_counts)) <= 1
        at_depth = cfg.max_depth is not None and depth >= cfg.max_depth
        if pure or at_depth or idx.shape[0] < cfg.min_samples_split:
            counts[node] = cls_counts
            left[node] = right[node] = node
            continue
        candidates = rng.choice(n_features, size=k, replace=False)
        split = best_split(X[idx], y[idx], candidates)
        if split is None:
            counts[node] = cls_counts
            left[node] = right[node] = node
            continue
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        stack.append((r_node, idx[~go_left], depth + 1))
        stack.append((l_node, idx[go_left], depth + 1))

    counts_arr = np.stack(counts)
    totals = counts_arr.sum(axis=1, keepdims=True)
    proba = np.divide(
        counts_arr, totals, out=np.zeros(counts_arr.shape, dtype=np.float64), where=totals > 0
    )
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        proba=proba,
        counts=counts_arr,
        depth=max(depths) if depths else 0,
    )


def train_forest(X: np.ndarray, y: np.ndarray, cfg: ForestConfig = ForestConfig()) -> ForestModel:
    """Fit the forest on labels in {1..5}; deterministic given cfg.seed."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set must be a nonempty 2-D array")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if np.any((y < 1) | (y > N_CLASSES)):
        raise ValueError("labels must be AQI classes in 1..5")
    y0 = y - 1
    n = X.shape[0]
    trees = []
    for t in range(cfg.n_estimators):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, t)))
        idx = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[idx], y0[idx], cfg, rng))
    return ForestModel(trees=trees, config=cfg, n_features=X.shape[1])


def predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Tree-averaged class probabilities, one simplex row per input."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    acc = np.zeros((X.shape[0], N_CLASSES), dtype=np.float64)
    for tree in model.trees:
        acc += tree.predict_proba(X)
    return acc / len(model.trees)


def predict(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Predicted classes in 1..5; probability ties go to the lower class."""
    return np.argmax(predict_proba(model, X), axis=1) + 1


def save_forest(model: ForestModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True, separators=(",", ":"))


def load_forest(path: str | Path) -> ForestModel:
    with open(path) as fh:
        return ForestModel.from_dict(json.load(fh))
