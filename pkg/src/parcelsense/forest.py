"""Random forest over semantic features: bagging, unpruned Gini trees with
random feature selection, out-of-bag error estimation and majority voting.

Determinism contract: tree i draws from an RNG stream derived from
(config.seed, i), thresholds are midpoints of consecutive distinct sorted
values, and all tie-breaks are positional, so a fixed seed yields a
bit-identical serialized model regardless of thread count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geodata import LAND_USE_CLASSES

_LEAF = -1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    features_per_split: int | None = None  # None -> floor(sqrt(F)), min 1
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be at least 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")


@dataclass(frozen=True)
class DecisionTree:
    """Flat node arrays; feature = -1 marks a leaf carrying ``label``."""

    feature: np.ndarray = field(repr=False)
    threshold: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    label: np.ndarray = field(repr=False)

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        node = np.zeros(features.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = np.nonzero(feat != _LEAF)[0]
            if active.size == 0:
                return self.label[node]
            cur = node[active]
            go_left = features[active, feat[active]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[DecisionTree, ...]
    classes: tuple[str, ...]
    oob_error: float
    feature_count: int
    config: ForestConfig = ForestConfig()

    def __post_init__(self):
        if not self.trees:
            raise ValueError("forest needs at least one tree")
        if not 0.0 <= self.oob_error <= 1.0:
            raise ValueError("oob_error must lie in [0, 1]")


def class_order(labels: Sequence[str]) -> tuple[str, ...]:
    """Fixed class ordering: canonical land-use order when applicable,
    lexicographic otherwise."""
    present = set(labels)
    if present <= set(LAND_USE_CLASSES):
        return tuple(c for c in LAND_USE_CLASSES if c in present)
    return tuple(sorted(present))


def bootstrap_sample(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """N draws with replacement plus the sorted out-of-bag index set."""
    if n < 1:
        raise ValueError("dataset must contain at least one sample")
    in_bag = rng.integers(0, n, size=n)
    mask = np.ones(n, dtype=bool)
    mask[in_bag] = False
    return in_bag, np.nonzero(mask)[0]


def _gini_scan(values: np.ndarray, one_hot_labels: np.ndarray, min_leaf: int):
    """Best (weighted gini, threshold) over midpoints of one feature, or None."""
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    sv = values[order]
    cum = one_hot_labels[order].cumsum(axis=0)
    cut = np.nonzero(sv[:-1] < sv[1:])[0]  # split after position i
    if cut.size == 0:
        return None
    n_left = cut + 1
    n_right = n - n_left
    ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    if not ok.any():
        return None
    cut, n_left, n_right = cut[ok], n_left[ok], n_right[ok]
    counts_left = cum[cut]
    counts_right = cum[-1] - counts_left
    gini_left = 1.0 - ((counts_left / n_left[:, None]) ** 2).sum(axis=1)
    gini_right = 1.0 - ((counts_right / n_right[:, None]) ** 2).sum(axis=1)
    weighted = (n_left * gini_left + n_right * gini_right) / n
    best = int(np.argmin(weighted))
    threshold = (sv[cut[best]] + sv[cut[best] + 1]) / 2.0
    return float(weighted[best]), float(threshold)


def grow_tree(
    features: np.ndarray,
    label_indices: np.ndarray,
    n_classes: int,
    config: ForestConfig,
    rng: np.random.Generator,
) -> DecisionTree:
    """Recursive Gini splitting without pruning.

    Each node evaluates a without-replacement draw of features; when the
    drawn subset admits no split the remaining features are scanned in
    index order, so nodes only become leaves when genuinely unsplittable.
    """
    n_features = features.shape[1]
    m = config.features_per_split or max(1, int(np.sqrt(n_features)))
    m = min(m, n_features)

    node_feature: list[int] = []
    node_threshold: list[float] = []
    node_left: list[int] = []
    node_right: list[int] = []
    node_label: list[int] = []

    def new_node() -> int:
        node_feature.append(_LEAF)
        node_threshold.append(0.0)
        node_left.append(_LEAF)
        node_right.append(_LEAF)
        node_label.append(_LEAF)
        return len(node_feature) - 1

    def build(idx: np.ndarray) -> int:
        node = new_node()
        y = label_indices[idx]
        counts = np.bincount(y, minlength=n_classes)
        if counts.max() == idx.size:
            node_label[node] = int(np.argmax(counts))
            return node

        one_hot = np.zeros((idx.size, n_classes))
        one_hot[np.arange(idx.size), y] = 1.0

        best = None  # (score, feature, threshold)
        drawn = rng.choice(n_features, size=m, replace=False)
        for pool in (drawn, range(n_features)):
            for f in pool:
                found = _gini_scan(features[idx, f], one_hot, config.min_samples_leaf)
                if found is not None and (best is None or found[0] < best[0]):
                    best = (found[0], int(f), found[1])
            if best is not None:
                break

        if best is None:
            node_label[node] = int(np.argmax(counts))
            return node
        _, f, threshold = best
        go_left = features[idx, f] <= threshold
        node_feature[node] = f
        node_threshold[node] = threshold
        node_left[node] = build(idx[go_left])
        node_right[node] = build(idx[~go_left])
        return node

    build(np.arange(features.shape[0]))
    return DecisionTree(
        feature=np.asarray(node_feature, dtype=np.int64),
        threshold=np.asarray(node_threshold, dtype=np.float64),
        left=np.asarray(node_left, dtype=np.int64),
        right=np.asarray(node_right, dtype=np.int64),
        label=np.asarray(node_label, dtype=np.int64),
    )


def train_forest(
    features: np.ndarray,
    labels: Sequence[str],
    config: ForestConfig,
    classes: Sequence[str] | None = None,
    threads: int = 1,
) -> ForestModel:
    """Fit ``config.n_trees`` trees on independent bootstraps and estimate
    the OOB error by majority vote of each sample's out-of-bag trees."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if features.shape[0] != len(labels):
        raise ValueError("features and labels must have equal length")
    ordered = tuple(classes) if classes is not None else class_order(labels)
    index = {c: i for i, c in enumerate(ordered)}
    if len(set(labels)) < 2:
        raise ValueError("training needs at least 2 distinct classes")
    y = np.asarray([index[label] for label in labels])
    n, n_features = features.shape
    k = len(ordered)

    def fit_one(i: int) -> tuple[DecisionTree, np.ndarray]:
        rng = np.random.default_rng([config.seed, i])
        in_bag, oob = bootstrap_sample(n, rng)
        tree = grow_tree(features[in_bag], y[in_bag], k, config, rng)
        return tree, oob

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit_one, range(config.n_trees)))
    else:
        fitted = [fit_one(i) for i in range(config.n_trees)]

    votes = np.zeros((n, k), dtype=np.int64)
    for tree, oob in fitted:
        if oob.size:
            np.add.at(votes, (oob, tree.predict_batch(features[oob])), 1)
    voted = votes.sum(axis=1) > 0
    if voted.any():
        oob_pred = np.argmax(votes[voted], axis=1)
        oob_error = float((oob_pred != y[voted]).mean())
    else:
        oob_error = 0.0

    return ForestModel(
        trees=tuple(tree for tree, _ in fitted),
        classes=ordered,
        oob_error=oob_error,
        feature_count=n_features,
        config=config,
    )


def predict_batch(model: ForestModel, features: np.ndarray) -> list[str]:
    """Majority vote across trees; ties resolve to the earliest class."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.feature_count:
        raise ValueError(
            f"feature matrix must be (n, {model.feature_count}), got {features.shape}"
        )
    votes = np.zeros((features.shape[0], len(model.classes)), dtype=np.int64)
    rows = np.arange(features.shape[0])
    for tree in model.trees:
        np.add.at(votes, (rows, tree.predict_batch(features)), 1)
    return [model.classes[i] for i in np.argmax(votes, axis=1)]


def predict(model: ForestModel, feature: np.ndarray) -> str:
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 1:
        raise ValueError("predict takes a single feature vector")
    return predict_batch(model, feature[np.newaxis, :])[0]


def model_to_json(model: ForestModel) -> str:
    doc = {
        "format": "parcelsense-forest",
        "classes": list(model.classes),
        "feature_count": model.feature_count,
        "oob_error": model.oob_error,
        "config": {
            "n_trees": model.config.n_trees,
            "features_per_split": model.config.features_per_split,
            "min_samples_leaf": model.config.min_samples_leaf,
            "seed": model.config.seed,
        },
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "label": tree.label.tolist(),
            }
            for tree in model.trees
        ],
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> ForestModel:
    doc = json.loads(text)
    if doc.get("format") != "parcelsense-forest":
        raise ValueError("not a parcelsense forest model")
    trees = tuple(
        DecisionTree(
            feature=np.asarray(t["feature"], dtype=np.int64),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int64),
            right=np.asarray(t["right"], dtype=np.int64),
            label=np.asarray(t["label"], dtype=np.int64),
        )
        for t in doc["trees"]
    )
    cfg = doc.get("config", {})
    return ForestModel(
        trees=trees,
        classes=tuple(doc["classes"]),
        oob_error=float(doc["oob_error"]),
        feature_count=int(doc["feature_count"]),
        config=ForestConfig(
            n_trees=cfg.get("n_trees", len(trees)),
            features_per_split=cfg.get("features_per_split"),
            min_samples_leaf=cfg.get("min_samples_leaf", 1),
            seed=cfg.get("seed", 0),
        ),
    )


def save_model(model: ForestModel, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path: str | Path) -> ForestModel:
    return model_from_json(Path(path).read_text())
