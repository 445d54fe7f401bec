"""Leader clustering of app fingerprints under an Ochiai-distance threshold.

The loop picks an unclustered app (uniformly at random from a seeded RNG, or
the first remaining one in ordered mode), makes it a centroid, and pulls in
every still-unclustered app within ``epsilon`` of it.  Clustered apps are
never revisited, so there is no density expansion as in DBSCAN proper, and
for ``epsilon > 0`` the cluster count depends on the visiting order.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyCorpus, MismatchedClusterSet
from .fingerprint import AppFingerprint, NeighborIndex

SEED_WARNING = "cluster count for epsilon > 0 depends on the visiting order (seed)"


@dataclass(frozen=True)
class Cluster:
    centroid: str
    members: tuple[str, ...]


@dataclass
class ClusterSet:
    epsilon: float
    clusters: list[Cluster]
    seed: int | None = None  # None means ordered mode
    per_label: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def cluster_count(self) -> int:
        return len(self.clusters)

    def partition(self) -> frozenset[frozenset[str]]:
        return frozenset(frozenset(c.members) for c in self.clusters)

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "seed": self.seed,
            "mode": "ordered" if self.seed is None else "random",
            "per_label": self.per_label,
            "clusters": [{"centroid": c.centroid, "members": list(c.members)} for c in self.clusters],
            "cluster_count": self.cluster_count,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, rec: dict) -> "ClusterSet":
        clusters = [Cluster(c["centroid"], tuple(c["members"])) for c in rec["clusters"]]
        return cls(float(rec["epsilon"]), clusters, rec.get("seed"), bool(rec.get("per_label", False)),
                   list(rec.get("warnings", [])))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    return epsilon


def cluster_corpus(corpus: Sequence[AppFingerprint], epsilon: float, seed: int | None = None,
                   index: NeighborIndex | None = None) -> ClusterSet:
    """Cluster ``corpus``; ``seed=None`` selects ordered mode."""
    epsilon = _check_epsilon(epsilon)
    if not corpus:
        raise EmptyCorpus("cannot cluster an empty corpus")
    index = index or NeighborIndex(corpus)
    n = len(index)
    pool = np.ones(n, dtype=bool)
    remaining = list(range(n))
    rng = random.Random(seed) if seed is not None else None
    clusters = []
    while remaining:
        pick = remaining[rng.randrange(len(remaining))] if rng else remaining[0]
        pool[pick] = False
        neighbors = index.neighbor_positions(pick, epsilon, pool)
        pool[neighbors] = False
        ids = index.corpus
        clusters.append(Cluster(ids[pick].app_id, (ids[pick].app_id,) + tuple(ids[j].app_id for j in neighbors)))
        remaining = [i for i in remaining if pool[i]] if len(neighbors) else [i for i in remaining if i != pick]
    warnings = [SEED_WARNING] if epsilon > 0 and seed is not None else []
    return ClusterSet(epsilon, clusters, seed, warnings=warnings)


def cluster_per_label(corpus: Sequence[AppFingerprint], epsilon: float, seed: int | None = None) -> ClusterSet:
    """Cluster each label separately and concatenate, labels in first-seen order."""
    by_label: dict[str, list[AppFingerprint]] = {}
    for fp in corpus:
        by_label.setdefault(fp.label, []).append(fp)
    if not by_label:
        raise EmptyCorpus("cannot cluster an empty corpus")
    parts = [cluster_corpus(group, epsilon, seed) for group in by_label.values()]
    merged = ClusterSet(parts[0].epsilon, [c for p in parts for c in p.clusters], seed, per_label=True,
                        warnings=parts[0].warnings)
    return merged


def dedup_at_zero(corpus: Sequence[AppFingerprint]) -> ClusterSet:
    """Group apps with identical hash sets; the first occurrence is the centroid."""
    if not corpus:
        raise EmptyCorpus("cannot deduplicate an empty corpus")
    groups: dict[frozenset[int], list[str]] = {}
    for fp in corpus:
        groups.setdefault(fp.hashes, []).append(fp.app_id)
    return ClusterSet(0.0, [Cluster(m[0], tuple(m)) for m in groups.values()], None)


def epsilon_sweep(corpus: Sequence[AppFingerprint], grid: Sequence[float], seed: int | None = None,
                  per_label: bool = False) -> list[tuple[float, int]]:
    for eps in grid:
        _check_epsilon(eps)
    if per_label:
        return [(float(eps), cluster_per_label(corpus, eps, seed).cluster_count) for eps in grid]
    index = NeighborIndex(corpus) if corpus else None
    return [(float(eps), cluster_corpus(corpus, eps, seed, index).cluster_count) for eps in grid]


def filter_representatives(corpus: Sequence[AppFingerprint], clusters: ClusterSet) -> list[AppFingerprint]:
    by_id = {fp.app_id: fp for fp in corpus}
    seen: set[str] = set()
    for c in clusters.clusters:
        for m in c.members:
            if m not in by_id:
                raise MismatchedClusterSet(f"cluster member {m!r} is not in the corpus")
            if m in seen:
                raise MismatchedClusterSet(f"{m!r} appears in more than one cluster")
            seen.add(m)
        if c.centroid not in c.members:
            raise MismatchedClusterSet(f"centroid {c.centroid!r} is not a member of its cluster")
    missing = by_id.keys() - seen
    if missing:
        raise MismatchedClusterSet(f"{len(missing)} corpus app(s) not covered, e.g. {sorted(missing)[0]!r}")
    return [by_id[c.centroid] for c in clusters.clusters]


def parse_grid(spec: str) -> list[float]:
    """Parse ``start:stop:step`` (inclusive) or a comma-separated list."""
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(round((stop - start) / step))
        values = [round(start + i * step, 10) for i in range(count + 1)]
        return [v for v in values if v <= stop + 1e-12]
    return [float(x) for x in spec.split(",") if x.strip()]
