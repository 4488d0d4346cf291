"""Random forest of Gini CART trees, used only to test whether explanations transfer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class DecisionTree:
    """Flat array tree. Internal node i sends x left when x[feature[i]] <= threshold[i]."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2) class counts of training samples reaching the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of X."""
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        active = self.feature[node] != LEAF
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        leaf_counts = self.counts[self.apply(np.atleast_2d(X))]
        # ties go to class 0
        return (leaf_counts[:, 1] > leaf_counts[:, 0]).astype(int)


def _best_split(x: np.ndarray, y: np.ndarray) -> tuple[float, float] | None:
    """Lowest weighted Gini split of one feature column: (impurity, threshold)."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    valid = np.flatnonzero(xs[:-1] < xs[1:])
    if len(valid) == 0:
        return None
    n = len(ys)
    ones_left = np.cumsum(ys)[valid]
    n_left = valid + 1.0
    n_right = n - n_left
    ones_right = ys.sum() - ones_left
    gini_left = 1.0 - (ones_left / n_left) ** 2 - (1.0 - ones_left / n_left) ** 2
    gini_right = 1.0 - (ones_right / n_right) ** 2 - (1.0 - ones_right / n_right) ** 2
    impurity = (n_left * gini_left + n_right * gini_right) / n
    k = int(np.argmin(impurity))
    i = valid[k]
    threshold = (xs[i] + xs[i + 1]) / 2.0
    if threshold == xs[i + 1]:  # midpoint rounded up onto the right value
        threshold = xs[i]
    return float(impurity[k]), float(threshold)


def fit_tree(X: np.ndarray, y: np.ndarray, max_features: int, rng: np.random.Generator) -> DecisionTree:
    """Grow a CART tree to purity, drawing features per node the way scikit-learn does.

    Features are visited in random order; constant ones do not count toward
    ``max_features``, and the search continues past ``max_features`` until a
    valid split is found or the features run out.
    """
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        ones = int(y[idx].sum())
        counts.append((len(idx) - ones, ones))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)))]
    n_features = X.shape[1]
    while stack:
        node, idx = stack.pop()
        n0, n1 = counts[node]
        if n0 == 0 or n1 == 0 or len(idx) < 2:
            continue
        best = None
        visited = 0
        for f in rng.permutation(n_features):
            if visited >= max_features and best is not None:
                break
            result = _best_split(X[idx, f], y[idx])
            if result is None:
                continue
            visited += 1
            if best is None or result[0] < best[0]:
                best = (result[0], result[1], f)
        if best is None:
            continue
        _, thr, f = best
        goes_left = X[idx, f] <= thr
        feature[node], threshold[node] = int(f), thr
        left_idx, right_idx = idx[goes_left], idx[~goes_left]
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        stack.append((right[node], right_idx))
        stack.append((left[node], left_idx))
    return DecisionTree(np.array(feature), np.array(threshold), np.array(left),
                        np.array(right), np.array(counts, dtype=int).reshape(-1, 2))


@dataclass
class RandomForest:
    trees: list[DecisionTree]
    tree_seeds: list[int]
    n_features_per_split: int
    n_features: int

    def __post_init__(self):
        if not self.trees:
            raise ValueError("forest needs at least one tree")

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.sum([t.predict(X) for t in self.trees], axis=0)


def fit_forest(train, n_trees: int = 100, seed: int = 0, max_features: int | None = None) -> RandomForest:
    """Bootstrap-resampled Gini trees with sqrt(width) candidate features per split."""
    X, y = np.asarray(train.X, dtype=float), np.asarray(train.y, dtype=int)
    if len(y) == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    k = max_features or max(1, int(math.sqrt(X.shape[1])))
    seeds = [int(s) for s in np.random.default_rng(seed).integers(0, 2**63 - 1, size=n_trees)]
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(fit_tree(X[boot], y[boot], k, rng))
    return RandomForest(trees, seeds, k, X.shape[1])


def predict_forest(forest: RandomForest, x: np.ndarray) -> np.ndarray | int:
    """Majority vote of the trees; a tied vote goes to class 0."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != forest.n_features:
        raise ValueError(f"sample width {x.shape[-1]} does not match forest width {forest.n_features}")
    out = (2 * forest.votes(x) > len(forest.trees)).astype(int)
    return int(out[0]) if x.ndim == 1 else out
