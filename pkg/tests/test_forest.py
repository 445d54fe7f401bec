import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dexdedup.errors import DegenerateLabels
from dexdedup.forest import DecisionTree, ForestConfig, RandomForest, entropy, grow_tree

# Six rows, three features.  Every root split has gain 1 - H(1/3) = 0.0817,
# so the lowest index (f0) wins.  f0=0 -> {4,5,6}: f1 gives 0.918, f2 0.252
# -> split f1.  f0=1 -> {1,2,3}: f2 gives 0.918, f1 0.252 -> split f2.
TOY_X = np.array([
    [1, 0, 0],
    [1, 1, 0],
    [1, 0, 1],
    [0, 1, 0],
    [0, 1, 1],
    [0, 0, 1],
], dtype=np.uint8)
TOY_Y = np.array([1, 1, 0, 0, 0, 1], dtype=np.uint8)


def hand_tree(row):
    f0, f1, f2 = row
    if f0:
        return 0 if f2 else 1
    return 0 if f1 else 1


ALL_ROWS = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.uint8)


def test_entropy_values():
    assert entropy(0, 4) == 0.0
    assert entropy(2, 4) == 1.0
    assert abs(float(entropy(2, 3)) - 0.9182958340544896) < 1e-15
    assert entropy(0, 0) == 0.0


def test_id3_tree_matches_hand_trace():
    tree = grow_tree(TOY_X, TOY_Y, features_per_split=3)
    assert tree.feature[0] == 0
    assert tree.node_count == 7
    assert tree.predict(ALL_ROWS).tolist() == [hand_tree(r) for r in ALL_ROWS]


def test_single_deterministic_tree_forest_matches_hand_trace():
    cfg = ForestConfig(tree_count=1, features_per_split=3, bootstrap=False, seed=123)
    model = RandomForest(cfg).fit(TOY_X, TOY_Y)
    assert model.predict(ALL_ROWS).tolist() == [hand_tree(r) for r in ALL_ROWS]


def test_feature_equal_to_label_gives_perfect_training_accuracy():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, size=(60, 8)).astype(np.uint8)
    y = X[:, 5].copy()
    model = RandomForest(ForestConfig(tree_count=15, seed=1)).fit(X, y)
    assert (model.predict(X) == y).all()


def test_leaf_tie_goes_to_malware():
    tree = grow_tree(np.array([[0], [0]], dtype=np.uint8), np.array([1, 0], dtype=np.uint8), 1)
    assert tree.predict(np.array([[0]])).tolist() == [1]


def test_vote_tie_goes_to_malware():
    model = RandomForest(ForestConfig(tree_count=2))
    model.trees = [DecisionTree([-1], [-1], [-1], [1]), DecisionTree([-1], [-1], [-1], [0])]
    assert model.predict(np.zeros((1, 1), dtype=np.uint8)).tolist() == [1]
    assert model.vote_fraction(np.zeros((1, 1), dtype=np.uint8)).tolist() == [0.5]


def test_max_depth_zero_is_a_stump_leaf():
    tree = grow_tree(TOY_X, TOY_Y, 3, max_depth=0)
    assert tree.node_count == 1


def test_degenerate_labels():
    with pytest.raises(DegenerateLabels):
        RandomForest().fit(TOY_X, np.ones(6, dtype=np.uint8))


@pytest.mark.parametrize("kwargs", [{"tree_count": 0}, {"features_per_split": 0}, {"max_depth": -1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ForestConfig(**kwargs)


def test_features_per_split_cannot_exceed_width():
    with pytest.raises(ValueError):
        ForestConfig(features_per_split=4).resolved_features(3)
    assert ForestConfig().resolved_features(44) == 7
    assert ForestConfig().resolved_features(33) == 6


def test_same_seed_same_predictions_and_jobs_do_not_matter():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 2, size=(80, 12)).astype(np.uint8)
    y = (X[:, 0] ^ X[:, 3] | (rng.random(80) < 0.1)).astype(np.uint8)
    cfg = ForestConfig(tree_count=12, seed=9)
    a = RandomForest(cfg).fit(X, y).vote_fraction(X)
    b = RandomForest(cfg).fit(X, y).vote_fraction(X)
    c = RandomForest(cfg).fit(X, y, jobs=3).vote_fraction(X)
    assert a.tolist() == b.tolist() == c.tolist()


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_pure_leaves_fit_consistent_training_data(seed):
    # with all features available and no depth limit, a tree only stops on
    # pure nodes or identical rows, so consistent data is fit exactly
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(40, 6)).astype(np.uint8)
    _, first = np.unique(X, axis=0, return_index=True)
    X = X[np.sort(first)]
    y = rng.integers(0, 2, size=len(X)).astype(np.uint8)
    if y.min() == y.max():
        return
    tree = grow_tree(X, y, 6)
    assert (tree.predict(X) == y).all()
