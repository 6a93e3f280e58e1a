"""Random forest classifier built from scratch on numpy.

CART trees with Gini impurity, bootstrap resampling, and per-node
feature subsampling. Every random draw flows from one seed through
numpy SeedSequence spawning, so training twice with the same seed and
data yields byte-identical serialized models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDataset

FOREST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    features_per_split: int | str = "sqrt"
    bootstrap: bool = True
    min_samples_split: int = 2

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if isinstance(self.features_per_split, str):
            if self.features_per_split != "sqrt":
                raise ValueError(
                    f"features_per_split must be 'sqrt' or an int, got "
                    f"{self.features_per_split!r}"
                )
        elif self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")

    def resolve_features(self, n_features: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(math.isqrt(n_features)))
        return min(int(self.features_per_split), n_features)


def _best_split(x: np.ndarray, y: np.ndarray, feature_ids: np.ndarray,
                n_classes: int) -> tuple[int, float, float] | None:
    """Lowest weighted-Gini (feature, threshold) over the given features.

    Thresholds are midpoints between consecutive distinct values; the
    scan order (features ascending, thresholds ascending) breaks exact
    ties deterministically toward the first candidate.
    """
    n = y.shape[0]
    best: tuple[float, int, float] | None = None
    for f in feature_ids:
        order = np.argsort(x[:, f], kind="stable")
        values = x[order, f]
        if values[0] == values[-1]:
            continue
        one_hot = np.zeros((n, n_classes), dtype=np.float64)
        one_hot[np.arange(n), y[order]] = 1.0
        left = np.cumsum(one_hot, axis=0)[:-1]
        right = left[-1] + one_hot[-1] - left
        n_left = np.arange(1, n, dtype=np.float64)
        n_right = n - n_left
        gini_left = 1.0 - ((left / n_left[:, None]) ** 2).sum(axis=1)
        gini_right = 1.0 - ((right / n_right[:, None]) ** 2).sum(axis=1)
        score = (n_left * gini_left + n_right * gini_right) / n
        # splitting between equal values is meaningless
        score[values[:-1] == values[1:]] = np.inf
        i = int(np.argmin(score))
        if np.isfinite(score[i]) and (best is None or score[i] < best[0]):
            threshold = (float(values[i]) + float(values[i + 1])) / 2.0
            best = (float(score[i]), int(f), threshold)
    if best is None:
        return None
    return best[1], best[2], best[0]


def _grow(x: np.ndarray, y: np.ndarray, n_classes: int, depth: int,
          cfg: ForestConfig, k_features: int, rng: np.random.Generator) -> dict:
    counts = np.bincount(y, minlength=n_classes)
    if (depth >= cfg.max_depth or y.shape[0] < cfg.min_samples_split
            or np.count_nonzero(counts) <= 1):
        return {"leaf": counts.tolist()}
    feature_ids = np.sort(rng.choice(x.shape[1], size=k_features,
                                     replace=False))
    split = _best_split(x, y, feature_ids, n_classes)
    if split is None:
        return {"leaf": counts.tolist()}
    feature, threshold, _ = split
    mask = x[:, feature] <= threshold
    return {
        "f": feature,
        "t": threshold,
        "l": _grow(x[mask], y[mask], n_classes, depth + 1, cfg, k_features, rng),
        "r": _grow(x[~mask], y[~mask], n_classes, depth + 1, cfg, k_features,
                   rng),
    }


def _predict_node(node: dict, row: np.ndarray) -> np.ndarray:
    while "leaf" not in node:
        node = node["l"] if row[node["f"]] <= node["t"] else node["r"]
    return np.asarray(node["leaf"], dtype=np.int64)


class RandomForest:
    """Bagged CART ensemble; ties in any vote resolve to the lower class."""

    def __init__(self, config: ForestConfig | None = None, seed: int = 0):
        self.config = config or ForestConfig()
        self.seed = int(seed)
        self.n_classes: int | None = None
        self.n_features: int | None = None
        self.trees: list[dict] = []

    def fit(self, x: np.ndarray, y: np.ndarray,
            n_classes: int | None = None) -> "RandomForest":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"bad training shapes {x.shape} / {y.shape}")
        if x.shape[0] == 0:
            raise DegenerateDataset("cannot fit a forest on zero samples")
        if y.min() < 0:
            raise ValueError("class labels must be non-negative integers")
        self.n_classes = int(n_classes if n_classes is not None
                             else y.max() + 1)
        if y.max() >= self.n_classes:
            raise ValueError(f"label {int(y.max())} outside "
                             f"{self.n_classes} classes")
        self.n_features = x.shape[1]
        k_features = self.config.resolve_features(self.n_features)
        n = x.shape[0]

        self.trees = []
        for seq in np.random.SeedSequence(self.seed).spawn(self.config.n_trees):
            rng = np.random.default_rng(seq)
            if self.config.bootstrap:
                idx = rng.integers(0, n, size=n)
                xb, yb = x[idx], y[idx]
            else:
                xb, yb = x, y
            self.trees.append(_grow(xb, yb, self.n_classes, 0, self.config,
                                    k_features, rng))
        return self

    def _check_fitted(self, x: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("forest is not fitted")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) inputs, got "
                             f"{x.shape}")
        return x

    def predict_votes(self, x: np.ndarray) -> np.ndarray:
        """Per-class tree votes, shape (n_samples, n_classes)."""
        x = self._check_fitted(x)
        votes = np.zeros((x.shape[0], self.n_classes), dtype=np.int64)
        for tree in self.trees:
            for i, row in enumerate(x):
                leaf = _predict_node(tree, row)
                votes[i, int(np.argmax(leaf))] += 1
        return votes

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_votes(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "version": FOREST_SCHEMA_VERSION,
            "config": {
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "features_per_split": self.config.features_per_split,
                "bootstrap": self.config.bootstrap,
                "min_samples_split": self.config.min_samples_split,
            },
            "seed": self.seed,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "trees": self.trees,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "RandomForest":
        if payload.get("version") != FOREST_SCHEMA_VERSION:
            raise ValueError(f"unsupported forest schema "
                             f"{payload.get('version')!r}")
        cfg = payload["config"]
        forest = cls(ForestConfig(
            n_trees=cfg["n_trees"],
            max_depth=cfg["max_depth"],
            features_per_split=cfg["features_per_split"],
            bootstrap=cfg["bootstrap"],
            min_samples_split=cfg["min_samples_split"],
        ), seed=payload["seed"])
        forest.n_classes = payload["n_classes"]
        forest.n_features = payload["n_features"]
        forest.trees = payload["trees"]
        return forest

    @classmethod
    def from_json(cls, text: str) -> "RandomForest":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "RandomForest":
        return cls.from_json(Path(path).read_text())
