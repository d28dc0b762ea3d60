"""Regression forest with explicit bootstrap bookkeeping.

Trees are grown with scikit-learn's CART builder, then flattened into
padded node arrays so the whole ensemble predicts in one vectorised
traversal and serialises as plain lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from .design import Design, InputMap

_LEAF = -1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    min_leaf: int = 5
    # None means ceil(d / 3)
    max_features: int | None = None


@dataclass
class ForestModel:
    left: np.ndarray  # trees x nodes, -1 marks a leaf
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    inbag: np.ndarray  # trees x n bootstrap multiplicities
    X: np.ndarray
    y: np.ndarray
    inputs: InputMap
    perm_seed: int = 0
    config: ForestConfig = field(default_factory=ForestConfig)

    @property
    def n_trees(self) -> int:
        return self.left.shape[0]

    def tree_predictions(self, X) -> np.ndarray:
        """``trees x m`` matrix of per-tree predictions."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        T, m = self.n_trees, len(X)
        rows = np.arange(T)[:, None]
        node = np.zeros((T, m), dtype=np.int64)
        while True:
            lft = self.left[rows, node]
            inner = lft != _LEAF
            if not inner.any():
                break
            feat = self.feature[rows, node]
            go_left = X[np.arange(m)[None, :], np.where(inner, feat, 0)] <= self.threshold[rows, node]
            nxt = np.where(go_left, lft, self.right[rows, node])
            node = np.where(inner, nxt, node)
        return self.value[rows, node]

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)

    @property
    def oob_mask(self) -> np.ndarray:
        return self.inbag == 0

    def oob_prediction(self, per_tree: np.ndarray | None = None) -> np.ndarray:
        """Out-of-bag mean prediction per training row (NaN if never out of bag)."""
        if per_tree is None:
            per_tree = self.tree_predictions(self.X)
        mask = self.oob_mask
        counts = mask.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, (per_tree * mask).sum(axis=0) / counts, np.nan)

    def oob_errors(self) -> np.ndarray:
        pred = self.oob_prediction()
        keep = np.isfinite(pred)
        return (self.y[keep] - pred[keep]) ** 2

    def oob_mse(self) -> float:
        err = self.oob_errors()
        return float(err.mean()) if err.size else float("nan")

    def permutation_importance(self) -> np.ndarray:
        """Increase in out-of-bag MSE when each input column is shuffled."""
        n, d = self.X.shape
        base = self.oob_mse()
        if not np.isfinite(base):
            return np.zeros(d)
        rng = np.random.default_rng(self.perm_seed)
        stacked = np.repeat(self.X[None, :, :], d, axis=0)
        for j in range(d):
            stacked[j, :, j] = self.X[rng.permutation(n), j]
        per_tree = self.tree_predictions(stacked.reshape(d * n, d)).reshape(self.n_trees, d, n)
        mask = self.oob_mask[:, None, :]
        counts = self.oob_mask.sum(axis=0)
        keep = counts > 0
        pred = (per_tree * mask).sum(axis=0)[:, keep] / counts[keep]
        mse = ((pred - self.y[keep]) ** 2).mean(axis=1)
        return mse - base

    def to_dict(self) -> dict:
        return {
            "kind": "forest",
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "value": self.value.tolist(),
            "inbag": self.inbag.tolist(),
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "inputs": self.inputs.to_dict(),
            "perm_seed": self.perm_seed,
            "config": {
                "n_trees": self.config.n_trees,
                "min_leaf": self.config.min_leaf,
                "max_features": self.config.max_features,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        arr = lambda k, t=float: np.array(d[k], dtype=t)  # noqa: E731
        return cls(
            arr("left", np.int64), arr("right", np.int64), arr("feature", np.int64), arr("threshold"),
            arr("value"), arr("inbag", np.int64), arr("X"), arr("y"), InputMap.from_dict(d["inputs"]),
            int(d["perm_seed"]), ForestConfig(**d["config"]),
        )


def fit_forest(design: Design, cfg: ForestConfig | None = None, rng: np.random.Generator | None = None) -> ForestModel:
    cfg = cfg or ForestConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    X, y = np.asarray(design.X, dtype=float), np.asarray(design.y, dtype=float)
    n, d = X.shape
    mtry = cfg.max_features or max(1, math.ceil(d / 3))
    trees, inbag = [], np.zeros((cfg.n_trees, n), dtype=np.int64)
    for t in range(cfg.n_trees):
        idx = rng.integers(0, n, n)
        inbag[t] = np.bincount(idx, minlength=n)
        tree = DecisionTreeRegressor(
            min_samples_leaf=cfg.min_leaf, max_features=mtry, random_state=int(rng.integers(2**31 - 1))
        )
        tree.fit(X[idx], y[idx])
        trees.append(tree.tree_)
    width = max(tr.node_count for tr in trees)
    left = np.full((cfg.n_trees, width), _LEAF, dtype=np.int64)
    right = np.full((cfg.n_trees, width), _LEAF, dtype=np.int64)
    feature = np.zeros((cfg.n_trees, width), dtype=np.int64)
    threshold = np.zeros((cfg.n_trees, width))
    value = np.zeros((cfg.n_trees, width))
    for t, tr in enumerate(trees):
        k = tr.node_count
        left[t, :k] = tr.children_left
        right[t, :k] = tr.children_right
        feature[t, :k] = np.maximum(tr.feature, 0)
        threshold[t, :k] = tr.threshold
        value[t, :k] = tr.value[:, 0, 0]
    return ForestModel(
        left, right, feature, threshold, value, inbag, X, y, InputMap.of(design),
        perm_seed=int(rng.integers(2**63 - 1)), config=cfg,
    )
