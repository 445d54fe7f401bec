import random

from dexdedup.fingerprint import AppFingerprint


def fp(app_id, hashes, label="unlabeled"):
    hashes = frozenset(hashes)
    return AppFingerprint(app_id, label, hashes, len(hashes))


def random_set(rng: random.Random, universe: int) -> frozenset:
    return frozenset(rng.sample(range(universe), rng.randint(1, min(universe, 40))))


def random_corpus(rng: random.Random, n: int, universe: int = 60, families: int = 8, labels=("unlabeled",)):
    """Apps drawn around a few base sets; about half are perturbed, the rest exact copies."""
    bases = [random_set(rng, universe) for _ in range(families)]
    out = []
    for i in range(n):
        base = set(rng.choice(bases))
        if rng.random() < 0.5:
            base ^= set(rng.sample(range(universe), rng.randint(0, 4)))
        if not base:
            base = {rng.randrange(universe)}
        out.append(fp(f"app{i:03d}", base, labels[i % len(labels)]))
    return out
