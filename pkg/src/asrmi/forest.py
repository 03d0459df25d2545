"""Random forest of CART trees (Gini impurity) used as the membership classifier.

Trees are stored as flat node arrays. Each tree draws its bootstrap sample and
feature subsets from an RNG seeded by (master seed, tree index), so trees are
independent of one another and of the order they are built in.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .seeding import derive_rng

FEATURE_SET_TAGS = ("errors", "losses", "losses+GF", "losses+AF", "losses+GF+AF")
LEAF = -1


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class MIExample:
    features: np.ndarray
    label: int
    speaker_id: str
    utterance_id: str
    feature_set_tag: str = "losses"


@dataclass
class Tree:
    feature: np.ndarray    # int, LEAF for leaves
    threshold: np.ndarray  # go left iff x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # class-1 fraction at the node

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat != LEAF
            if not inner.any():
                return node
            r = rows[inner]
            n = node[inner]
            go_left = X[r, feat[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=float))


@dataclass
class Forest:
    trees: list[Tree]
    n_features: int
    seed: int = 0
    feature_set_tag: str = ""
    params: dict = field(default_factory=dict)


def _best_split(x: np.ndarray, y: np.ndarray) -> tuple[float, float] | None:
    """(weighted child Gini, threshold) of the best split on one feature, or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    distinct = xs[1:] > xs[:-1]
    if not distinct.any():
        return None
    n_left = np.arange(1, n)
    pos_left = np.cumsum(ys)[:-1]
    pos_right = ys.sum() - pos_left
    n_right = n - n_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    impurity = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
    impurity = np.where(distinct, impurity, np.inf)
    i = int(np.argmin(impurity))
    lo, hi = xs[i], xs[i + 1]
    thr = lo / 2.0 + hi / 2.0
    if thr >= hi or not np.isfinite(thr):
        thr = lo
    return float(impurity[i]), float(thr)


def _grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, max_features: int,
               max_depth: int, min_samples_split: int) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    n_feat = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        if depth >= max_depth or idx.size < min_samples_split or yi.min() == yi.max():
            continue
        # visit features in random order; evaluate the first max_features that
        # are not constant in this node
        best = None
        tried = 0
        for f in rng.permutation(n_feat):
            if tried >= max_features:
                break
            res = _best_split(X[idx, f], yi)
            if res is None:
                continue
            tried += 1
            if best is None or res[0] < best[0]:
                best = (res[0], res[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree gets the lower node ids
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=float))


def fit_forest(X, y, n_trees: int = 100, seed: int = 0, max_depth: int = 20,
               min_samples_split: int = 2, max_features: int | None = None,
               feature_set_tag: str = "") -> Forest:
    """Bootstrap-aggregated CART trees on a dense matrix.

    Each split samples ceil(sqrt(n_features)) features (non-constant ones,
    as many as available) and thresholds at midpoints of consecutive values.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ForestError(f"bad training shapes X={X.shape}, y={y.shape}")
    if X.shape[0] < 2:
        raise ForestError("need at least 2 training examples")
    if not np.all(np.isfinite(X)):
        raise ForestError("training features must be finite")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ForestError("labels must be 0/1")
    if np.unique(y).size < 2:
        raise ForestError("training labels contain a single class; both members and "
                          "non-members are required")
    n, d = X.shape
    max_features = max_features or max(1, math.ceil(math.sqrt(d)))
    trees = []
    for i in range(n_trees):
        rng = derive_rng(seed, "tree", i)
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[boot], y[boot], rng, max_features, max_depth,
                                min_samples_split))
    return Forest(trees, d, seed, feature_set_tag,
                  {"n_trees": n_trees, "max_depth": max_depth,
                   "min_samples_split": min_samples_split, "max_features": max_features})


def rf_train(train: Sequence[MIExample], n_trees: int = 100, seed: int = 0, **kw) -> Forest:
    """Fit on MI examples; examples are ordered by utterance id first."""
    if len(train) < 2:
        raise ForestError("need at least 2 training examples")
    ex = sorted(train, key=lambda e: e.utterance_id)
    tags = {e.feature_set_tag for e in ex}
    widths = {len(e.features) for e in ex}
    if len(tags) != 1 or len(widths) != 1:
        raise ForestError(f"mixed feature layouts: tags={sorted(tags)}, widths={sorted(widths)}")
    X = np.array([e.features for e in ex], dtype=np.float64)
    y = np.array([e.label for e in ex], dtype=np.float64)
    return fit_forest(X, y, n_trees=n_trees, seed=seed, feature_set_tag=ex[0].feature_set_tag, **kw)


def rf_score(forest: Forest, features) -> np.ndarray | float:
    """Mean over trees of the reached leaf's class-1 fraction.

    Accepts one feature vector (returns a float) or a matrix (returns an array).
    """
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != forest.n_features:
        raise ForestError(f"feature length {X.shape[1]} != forest's {forest.n_features}")
    total = np.zeros(X.shape[0])
    for tree in forest.trees:
        total += tree.value[tree.apply(X)]
    scores = total / len(forest.trees)
    return float(scores[0]) if single else scores


def rf_predict(forest: Forest, features, threshold: float = 0.5):
    """1 iff score >= threshold (boundary counts as member)."""
    s = rf_score(forest, features)
    if isinstance(s, float):
        return int(s >= threshold)
    return (s >= threshold).astype(int)


def forest_to_json(forest: Forest) -> str:
    body = {"n_features": forest.n_features, "seed": forest.seed,
            "feature_set_tag": forest.feature_set_tag, "params": forest.params,
            "trees": [t.to_dict() for t in forest.trees]}
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def forest_from_json(text: str) -> Forest:
    body = json.loads(text)
    return Forest([Tree.from_dict(t) for t in body["trees"]], int(body["n_features"]),
                  int(body["seed"]), body.get("feature_set_tag", ""), body.get("params", {}))


def forest_to_bytes(forest: Forest) -> bytes:
    raw = forest_to_json(forest).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def forest_from_bytes(data: bytes) -> Forest:
    if len(data) < 4:
        raise ForestError("truncated forest record")
    (n,) = struct.unpack("<I", data[:4])
    if len(data) - 4 != n:
        raise ForestError(f"forest record length {len(data) - 4} != header {n}")
    return forest_from_json(data[4:].decode("utf-8"))
