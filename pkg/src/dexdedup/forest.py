"""Random forest of information-gain decision trees over binary features.

Trees split on ``x[f] == 0`` (left) versus ``x[f] != 0`` (right).  Each split
takes the highest-gain feature among a random subset of candidates; gain ties
go to the lowest feature index.  If no candidate separates the node, the
remaining features are tried before giving up, so a tree only stops on a pure
node, on identical feature rows, or at ``max_depth``.  Leaves and the forest
vote both resolve ties toward malware (label 1).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels

MALWARE = 1


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 100
    max_depth: int | None = None
    features_per_split: int | None = None  # None -> ceil(sqrt(F))
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def resolved_features(self, n_features: int) -> int:
        k = self.features_per_split or math.ceil(math.sqrt(n_features))
        if k > n_features:
            raise ValueError(f"features_per_split={k} exceeds feature count {n_features}")
        return max(1, k)


def entropy(pos, n):
    """Binary entropy in bits of ``pos`` positives among ``n`` (elementwise, 0 for n == 0)."""
    pos = np.asarray(pos, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n > 0, pos / np.where(n > 0, n, 1), 0.0)
        q = 1.0 - p
        h = -(np.where(p > 0, p * np.log2(np.where(p > 0, p, 1)), 0.0)
              + np.where(q > 0, q * np.log2(np.where(q > 0, q, 1)), 0.0))
    return h


def _split_gains(Xn: np.ndarray, yn: np.ndarray, cand: np.ndarray):
    n = len(yn)
    pos = int(yn.sum())
    block = Xn[:, cand] != 0
    n1 = block.sum(axis=0)
    p1 = block[yn == 1].sum(axis=0)
    n0 = n - n1
    p0 = pos - p1
    # one vectorized call: parent, then the 1-branches, then the 0-branches
    h = entropy(np.concatenate(([pos], p1, p0)), np.concatenate(([n], n1, n0)))
    k = len(cand)
    gains = h[0] - (n1 / n) * h[1:k + 1] - (n0 / n) * h[k + 1:]
    valid = (n1 > 0) & (n0 > 0)
    return gains, valid


class DecisionTree:
    def __init__(self, feature, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.uint8)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return self.value[node]
            go_right = X[rows[active], feat[active]] != 0
            node[active] = np.where(go_right, self.right[node[active]], self.left[node[active]])


def grow_tree(X: np.ndarray, y: np.ndarray, features_per_split: int,
              rng: np.random.Generator | None = None, max_depth: int | None = None) -> DecisionTree:
    n_features = X.shape[1]
    feature, left, right, value = [], [], [], []

    def new_node(rows) -> int:
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        pos = int(y[rows].sum())
        value.append(MALWARE if 2 * pos >= len(rows) else 0)
        return len(feature) - 1

    root_rows = np.arange(len(y))
    stack = [(new_node(root_rows), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        yn = y[rows]
        pos = int(yn.sum())
        if pos == 0 or pos == len(rows) or (max_depth is not None and depth >= max_depth):
            continue
        Xn = X[rows]
        if features_per_split >= n_features:
            order = np.arange(n_features)
        else:
            order = rng.permutation(n_features)
        best = -1
        for block in (order[:features_per_split], order[features_per_split:]):
            if len(block) == 0:
                continue
            block = np.sort(block)
            gains, valid = _split_gains(Xn, yn, block)
            if valid.any():
                gains = np.where(valid, gains, -np.inf)
                best = int(block[int(np.argmax(gains))])
                break
        if best < 0:
            continue
        mask = Xn[:, best] != 0
        lrows, rrows = rows[~mask], rows[mask]
        feature[node] = best
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return DecisionTree(feature, left, right, value)


def _check_labels(y: np.ndarray) -> None:
    if len(y) == 0 or y.min() == y.max():
        raise DegenerateLabels("training data must contain both malware and goodware")


def _fit_one(args) -> DecisionTree:
    X, y, k, max_depth, bootstrap, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    if bootstrap:
        rows = rng.integers(0, len(y), len(y))
        Xb, yb = X[rows], y[rows]
    else:
        Xb, yb = X, y
    return grow_tree(Xb, yb, k, rng, max_depth)


class RandomForest:
    def __init__(self, config: ForestConfig = ForestConfig()):
        self.config = config
        self.trees: list[DecisionTree] = []

    def fit(self, X, y, jobs: int = 1) -> "RandomForest":
        X = np.asarray(X, dtype=np.uint8)
        y = np.asarray(y, dtype=np.uint8)
        _check_labels(y)
        cfg = self.config
        k = cfg.resolved_features(X.shape[1])
        # one independent stream per tree index, so worker count never changes results
        streams = np.random.SeedSequence(cfg.seed).spawn(cfg.tree_count)
        tasks = [(X, y, k, cfg.max_depth, cfg.bootstrap, s) for s in streams]
        if jobs > 1 and cfg.tree_count > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                self.trees = list(pool.map(_fit_one, tasks, chunksize=max(1, cfg.tree_count // (4 * jobs))))
        else:
            self.trees = [_fit_one(t) for t in tasks]
        return self

    def vote_fraction(self, X) -> np.ndarray:
        X = np.asarray(X)
        votes = np.zeros(len(X), dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        return votes / len(self.trees)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X)
        votes = np.zeros(len(X), dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        return (2 * votes >= len(self.trees)).astype(np.uint8)


def train_forest(X, y, config: ForestConfig = ForestConfig(), jobs: int = 1) -> RandomForest:
    return RandomForest(config).fit(X, y, jobs)
