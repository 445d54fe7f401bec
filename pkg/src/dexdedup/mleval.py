"""Evaluation machinery: information gain, stratified k-fold, balancing and
the holdout-inflation demonstration.

Malware is the positive class throughout.  Cross-validation metrics are
computed once from the confusion matrix pooled over all folds.
"""

from __future__ import annotations

import csv
import io
import json
import random
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .cluster import dedup_at_zero, filter_representatives
from .errors import DegenerateLabels, DegenerateLabelsWarning, NoDuplicates, TooFewSamples
from .features import FeatureMatrix
from .fingerprint import AppFingerprint
from .forest import ForestConfig, RandomForest, entropy

# -- information gain -------------------------------------------------------


def information_gain(matrix: FeatureMatrix) -> list[tuple[str, float]]:
    """Gain in bits of every feature, sorted descending (ties keep column order)."""
    X, y = matrix.X, matrix.y
    n = len(y)
    if n < 2:
        raise DegenerateLabels("information gain needs at least two rows")
    pos = int(y.sum())
    if pos in (0, n):
        warnings.warn("single-class data: every information gain is 0", DegenerateLabelsWarning, stacklevel=2)
        gains = np.zeros(X.shape[1])
    else:
        gains = np.full(X.shape[1], float(entropy(pos, n)))
        malware = y == 1
        for v in np.unique(X):
            hit = X == v
            nv = hit.sum(axis=0)
            pv = hit[malware].sum(axis=0)
            gains -= (nv / n) * entropy(pv, nv)
        gains = np.clip(gains, 0.0, None)
    order = sorted(range(len(gains)), key=lambda i: (-gains[i], i))
    return [(matrix.columns[i], float(gains[i])) for i in order]


def info_gain_csv(ranking: Sequence[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "information_gain"])
    for name, gain in ranking:
        w.writerow([name, f"{gain:.6f}"])
    return buf.getvalue()


# -- metrics ----------------------------------------------------------------


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "Confusion":
        t = np.asarray(y_true) == 1
        p = np.asarray(y_pred) == 1
        return cls(int((t & p).sum()), int((~t & p).sum()), int((~t & ~p).sum()), int((t & ~p).sum()))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics_from_confusion(c: Confusion) -> dict[str, float]:
    tpr = _ratio(c.tp, c.tp + c.fn)
    precision = _ratio(c.tp, c.tp + c.fp)
    f1 = 2 * precision * tpr / (precision + tpr) if precision + tpr else 0.0
    return {
        "tpr": tpr,
        "fpr": _ratio(c.fp, c.fp + c.tn),
        "accuracy": _ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn),
        "precision": precision,
        "f1": f1,
    }


@dataclass
class EvalReport:
    confusion: Confusion
    protocol: str
    seed: int
    aggregation: str = "pooled"
    extra: dict = field(default_factory=dict)

    @property
    def metrics(self) -> dict[str, float]:
        return metrics_from_confusion(self.confusion)

    def __getattr__(self, name):
        if name in ("tpr", "fpr", "accuracy", "precision", "f1"):
            return self.metrics[name]
        raise AttributeError(name)

    def to_json(self) -> dict:
        out = {"protocol": self.protocol, "seed": self.seed, "aggregation": self.aggregation,
               "confusion": asdict(self.confusion), "metrics": self.metrics}
        out.update(self.extra)
        return out


# -- cross-validation -------------------------------------------------------


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index per row.  Each class is shuffled and dealt round-robin,
    continuing the deal across classes so fold sizes differ by at most one."""
    y = np.asarray(y)
    if k < 2:
        raise TooFewSamples("k must be at least 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise TooFewSamples(f"class {cls} has {len(idx)} rows, fewer than k={k}")
        idx = rng.permutation(idx)
        folds[idx] = (np.arange(len(idx)) + offset) % k
        offset = (offset + len(idx)) % k
    return folds


def kfold_evaluate(matrix: FeatureMatrix, k: int = 10, config: ForestConfig = ForestConfig(),
                   seed: int = 0, jobs: int = 1) -> EvalReport:
    folds = stratified_folds(matrix.y, k, seed)
    total = Confusion()
    for f in range(k):
        test = folds == f
        cfg = ForestConfig(config.tree_count, config.max_depth, config.features_per_split,
                           seed * 1000 + f, config.bootstrap)
        model = RandomForest(cfg).fit(matrix.X[~test], matrix.y[~test], jobs)
        total = total + Confusion.from_predictions(matrix.y[test], model.predict(matrix.X[test]))
    return EvalReport(total, f"kfold({k})", seed, extra={"rows": len(matrix), **_forest_meta(config)})


def _forest_meta(config: ForestConfig) -> dict:
    return {"forest": {"trees": config.tree_count, "max_depth": config.max_depth,
                       "features_per_split": config.features_per_split, "bootstrap": config.bootstrap}}


def holdout_evaluate(matrix: FeatureMatrix, train_rows, test_rows, config: ForestConfig,
                     seed: int, ratio: float, jobs: int = 1) -> EvalReport:
    cfg = ForestConfig(config.tree_count, config.max_depth, config.features_per_split, seed, config.bootstrap)
    train_rows = np.asarray(train_rows, dtype=np.int64)
    test_rows = np.asarray(test_rows, dtype=np.int64)
    model = RandomForest(cfg).fit(matrix.X[train_rows], matrix.y[train_rows], jobs)
    pred = model.predict(matrix.X[test_rows])
    return EvalReport(Confusion.from_predictions(matrix.y[test_rows], pred), f"holdout({ratio:g})", seed,
                      aggregation="single-split", extra=_forest_meta(config))


# -- balancing --------------------------------------------------------------


def balance_dataset(matrix: FeatureMatrix, seed: int = 0) -> FeatureMatrix:
    """Down-sample the majority class to the minority size; row order is kept."""
    y = matrix.y
    mal = np.flatnonzero(y == 1)
    good = np.flatnonzero(y == 0)
    if len(mal) == 0 or len(good) == 0:
        raise DegenerateLabels("balancing needs both classes")
    if len(mal) == len(good):
        return matrix
    major, minor = (mal, good) if len(mal) > len(good) else (good, mal)
    rng = np.random.default_rng(seed)
    keep = rng.choice(major, size=len(minor), replace=False)
    return matrix.take(np.sort(np.concatenate([minor, keep])))


# -- holdout inflation --------------------------------------------------------


@dataclass
class InflationResult:
    before: EvalReport
    before_overlap: float
    after: list[EvalReport]
    after_overlap: list[float]
    duplicate_fraction: float
    distinct_apps: int
    total_apps: int

    @property
    def mean_after_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.after]))

    def to_json(self) -> dict:
        return {
            "before": {**self.before.to_json(), "duplicate_overlap": self.before_overlap},
            "after": [{**r.to_json(), "duplicate_overlap": o} for r, o in zip(self.after, self.after_overlap)],
            "after_mean_accuracy": self.mean_after_accuracy,
            "after_mean_tpr": float(np.mean([r.tpr for r in self.after])),
            "duplicate_fraction": self.duplicate_fraction,
            "distinct_apps": self.distinct_apps,
            "total_apps": self.total_apps,
        }


def _overlap(test_ids, train_ids, group_of: dict[str, int]) -> float:
    train_groups = {group_of[a] for a in train_ids}
    return _ratio(sum(group_of[a] in train_groups for a in test_ids), len(test_ids))


def adversarial_split(fingerprints: Sequence[AppFingerprint], ratio: float, seed: int
                      ) -> tuple[list[str], list[str], float]:
    """Train/test ids where as many test apps as possible have an exact
    duplicate left in training.  Returns (train, test, overlap fraction)."""
    clusters = dedup_at_zero(fingerprints).clusters
    ids = [fp.app_id for fp in fingerprints]
    test_size = len(ids) - int(round(len(ids) * ratio))
    rng = random.Random(seed)
    groups = [list(c.members) for c in clusters]
    rng.shuffle(groups)
    groups.sort(key=len, reverse=True)
    test: list[str] = []
    depth = 1
    while len(test) < test_size:
        takers = [g for g in groups if len(g) - depth >= 1]
        if not takers:
            break
        for g in takers:
            if len(test) == test_size:
                break
            test.append(g[len(g) - depth])
        depth += 1
    if len(test) < test_size:
        chosen = set(test)
        rest = [a for a in ids if a not in chosen]
        rng.shuffle(rest)
        test.extend(rest[:test_size - len(test)])
    chosen = set(test)
    train = [a for a in ids if a not in chosen]
    group_of = {m: gi for gi, c in enumerate(clusters) for m in c.members}
    return train, test, _overlap(test, train, group_of)


def stratified_holdout(y: np.ndarray, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (1, 0):
        idx = rng.permutation(np.flatnonzero(y == cls))
        cut = int(round(len(idx) * ratio))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def holdout_inflation_demo(fingerprints: Sequence[AppFingerprint], matrix: FeatureMatrix,
                           ratio: float = 0.8, seed: int = 0, repeats: int = 20,
                           config: ForestConfig = ForestConfig(), jobs: int = 1) -> InflationResult:
    """Compare a duplicate-heavy holdout split against random splits after
    exact-duplicate removal (``repeats`` seeds starting at ``seed``)."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    missing = {fp.app_id for fp in fingerprints} ^ set(matrix.app_ids)
    if missing:
        raise ValueError(f"fingerprints and features disagree on {len(missing)} app id(s), "
                         f"e.g. {sorted(missing)[0]!r}")
    dedup = dedup_at_zero(fingerprints)
    if dedup.cluster_count == len(fingerprints):
        raise NoDuplicates("corpus has no exact duplicates; the demonstration is meaningless")
    group_of = {m: gi for gi, c in enumerate(dedup.clusters) for m in c.members}
    pos = {a: i for i, a in enumerate(matrix.app_ids)}

    train_ids, test_ids, overlap = adversarial_split(fingerprints, ratio, seed)
    before = holdout_evaluate(matrix, [pos[a] for a in train_ids], [pos[a] for a in test_ids],
                              config, seed, ratio, jobs)
    before.extra["split"] = "adversarial-duplicate"

    reps = filter_representatives(fingerprints, dedup)
    reduced = matrix.select_ids([fp.app_id for fp in reps])
    after, after_overlap = [], []
    for s in range(seed, seed + repeats):
        tr, te = stratified_holdout(reduced.y, ratio, s)
        report = holdout_evaluate(reduced, tr, te, config, s, ratio, jobs)
        report.extra["split"] = "random-after-dedup"
        after.append(report)
        after_overlap.append(_overlap([reduced.app_ids[i] for i in te],
                                      [reduced.app_ids[i] for i in tr], group_of))
    n = len(fingerprints)
    return InflationResult(before, overlap, after, after_overlap,
                           1.0 - dedup.cluster_count / n, dedup.cluster_count, n)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
