import numpy as np
import pytest

from cadex.data import Attribute, Dataset, Schema
from cadex.forest import LEAF, DecisionTree, RandomForest, fit_forest, predict_forest


def toy(X, y):
    X = np.asarray(X, dtype=float)
    schema = Schema(tuple(Attribute(f"x{i}", "numeric") for i in range(X.shape[1])))
    w = X.shape[1]
    return Dataset(schema, X, np.asarray(y), np.zeros(w), np.ones(w), np.arange(len(y)), True)


def separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    return toy(X, (X[:, 0] + X[:, 1] > 0).astype(int))


def stump(cls):
    return DecisionTree(np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]),
                        np.array([[1, 0]] if cls == 0 else [[0, 1]]))


def test_single_tree_separable():
    d = separable()
    forest = fit_forest(d, n_trees=1, seed=0)
    tree = forest.trees[0]
    # a bootstrap CART reproduces the labels of every row it was grown on
    rng = np.random.default_rng(forest.tree_seeds[0])
    boot = rng.integers(0, len(d), size=len(d))
    assert np.array_equal(tree.predict(d.X[boot]), d.y[boot])
    assert np.array_equal(predict_forest(forest, d.X), tree.predict(d.X))


def test_forest_training_accuracy_separable():
    d = separable()
    forest = fit_forest(d, n_trees=25, seed=1)
    assert np.mean(predict_forest(forest, d.X) == d.y) == 1.0


def test_forest_deterministic():
    d = separable()
    a, b = fit_forest(d, 5, seed=3), fit_forest(d, 5, seed=3)
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.feature, tb.feature) and np.array_equal(ta.threshold, tb.threshold)


def test_tie_and_unanimous_votes():
    x = np.zeros(1)
    assert predict_forest(RandomForest([stump(1)] * 3, [0] * 3, 1, 1), x) == 1
    assert predict_forest(RandomForest([stump(0), stump(1)], [0, 0], 1, 1), x) == 0
    assert predict_forest(RandomForest([stump(1)], [0], 1, 1), x) == 1


def test_dimension_mismatch_and_empty():
    forest = fit_forest(separable(), 2, 0)
    with pytest.raises(ValueError):
        predict_forest(forest, np.zeros(3))
    with pytest.raises(ValueError):
        fit_forest(toy(np.zeros((0, 2)), np.zeros(0, dtype=int)), 2, 0)


def test_order_invariance(german_split):
    train, val = german_split
    forest = fit_forest(train, 15, seed=4)
    flipped = RandomForest(forest.trees[::-1], forest.tree_seeds[::-1], forest.n_features_per_split,
                           forest.n_features)
    assert np.array_equal(predict_forest(forest, val.X), predict_forest(flipped, val.X))


def _paths_consistent(tree, node=0, lo=None, hi=None):
    lo = {} if lo is None else lo
    hi = {} if hi is None else hi
    if tree.feature[node] == LEAF:
        return True
    f, t = tree.feature[node], tree.threshold[node]
    if not (lo.get(f, -np.inf) < t < hi.get(f, np.inf)) and not (lo.get(f, -np.inf) <= t < hi.get(f, np.inf)):
        return False
    return (_paths_consistent(tree, tree.left[node], lo, {**hi, f: min(hi.get(f, np.inf), t)})
            and _paths_consistent(tree, tree.right[node], {**lo, f: max(lo.get(f, -np.inf), t)}, hi))


def test_structure(german_split):
    train, _ = german_split
    forest = fit_forest(train, 5, seed=2)
    for tree in forest.trees:
        internal = tree.feature != LEAF
        assert np.all(tree.left[internal] > np.flatnonzero(internal))  # children come later: acyclic
        assert np.all(tree.right[internal] > np.flatnonzero(internal))
        assert np.all(tree.counts >= 0)
        assert np.all(tree.counts[internal].sum(1) == tree.counts[tree.left[internal]].sum(1)
                      + tree.counts[tree.right[internal]].sum(1))
        assert _paths_consistent(tree)


def test_german_accuracy_beats_majority(german_split):
    train, val = german_split
    forest = fit_forest(train, 100, seed=0)
    majority = max(np.mean(val.y), 1 - np.mean(val.y))
    assert np.mean(predict_forest(forest, val.X) == val.y) > majority
    assert forest.n_features_per_split == 7
