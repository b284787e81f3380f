"""Synthetic KG pairs with known ground-truth alignments.

The second graph is an id-permuted copy of the first with controllable
structural noise (dropped/rewired triplets) and feature noise, so pipeline
claims can be checked at desk scale against an exact truth bijection.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import (
    SEED,
    TRUTH,
    AlignmentSet,
    FeatureMatrix,
    KgPair,
    KnowledgeGraph,
    write_alignments,
    write_features,
    write_triplets,
)

__all__ = ["SynthConfig", "generate_pair", "write_dataset", "DATASET_FILES"]

DATASET_FILES = {
    "triplets1": "triplets1.tsv",
    "triplets2": "triplets2.tsv",
    "seeds": "seeds.tsv",
    "test": "test.tsv",
    "features1": "features1.tsv",
    "features2": "features2.tsv",
    "truth": "truth.tsv",
}


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generator; every run is a pure function of these.

    With ``feature_cluster_size`` > 1, entities come in groups sharing a
    common feature centroid, separated only by a small per-entity offset of
    scale ``feature_cluster_spread``. This mimics name-derived features where
    near-homonyms are hard to tell apart and structure must disambiguate.
    """

    n_entities: int = 100
    n_relations: int = 10
    avg_degree: float = 4.0
    edge_perturbation: float = 0.0  # fraction of KG2 triplets dropped or rewired
    feature_dim: int = 32
    feature_noise: float = 0.0  # std of Gaussian noise added to KG2 features
    feature_cluster_size: int = 1
    feature_cluster_spread: float = 0.05
    seed_fraction: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_entities < 2:
            raise ValueError("n_entities must be at least 2")
        if self.n_relations < 1:
            raise ValueError("n_relations must be at least 1")
        if not 1.0 <= self.avg_degree < self.n_entities:
            raise ValueError("avg_degree must lie in [1, n_entities)")
        if not 0.0 <= self.edge_perturbation < 1.0:
            raise ValueError("edge_perturbation must lie in [0, 1)")
        if self.feature_noise < 0.0:
            raise ValueError("feature_noise must be non-negative")
        if not 0.0 <= self.seed_fraction <= 1.0:
            raise ValueError("seed_fraction must lie in [0, 1]")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be at least 1")
        if self.feature_cluster_size < 1:
            raise ValueError("feature_cluster_size must be at least 1")
        if self.feature_cluster_spread <= 0.0:
            raise ValueError("feature_cluster_spread must be positive")


def generate_pair(cfg: SynthConfig) -> tuple[KgPair, AlignmentSet]:
    """Build a (KgPair, truth) instance deterministically from the config.

    KG1 draws an out-degree per entity from a geometric distribution with the
    configured mean, the tail of each edge uniformly among other entities.
    KG2 applies a random id permutation, then independently perturbs each
    triplet with probability ``edge_perturbation`` (dropped or tail-rewired,
    equal odds). The truth bijection maps i to its permuted id; a
    ``seed_fraction`` share becomes seeds, the rest test pairs.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    n = cfg.n_entities

    triplets1: list[tuple[int, int, int]] = []
    out_degrees = rng.geometric(1.0 / cfg.avg_degree, size=n)
    for head in range(n):
        k = int(out_degrees[head])
        tails = rng.integers(0, n - 1, size=k)
        tails = np.where(tails >= head, tails + 1, tails)  # uniform over others
        rels = rng.integers(0, cfg.n_relations, size=k)
        triplets1.extend((head, int(r), int(t)) for r, t in zip(rels, tails))

    perm = rng.permutation(n)

    n_triplets = len(triplets1)
    perturb = rng.random(n_triplets) < cfg.edge_perturbation
    drop = rng.random(n_triplets) < 0.5
    rewire_tails = rng.integers(0, n, size=n_triplets)
    triplets2: list[tuple[int, int, int]] = []
    for idx, (h, r, t) in enumerate(triplets1):
        if perturb[idx]:
            if drop[idx]:
                continue
            triplets2.append((int(perm[h]), r, int(rewire_tails[idx])))
        else:
            triplets2.append((int(perm[h]), r, int(perm[t])))

    if cfg.feature_cluster_size > 1:
        n_clusters = -(-n // cfg.feature_cluster_size)
        centers = rng.standard_normal((n_clusters, cfg.feature_dim))
        offsets = rng.standard_normal((n, cfg.feature_dim)) * cfg.feature_cluster_spread
        features1 = centers[np.arange(n) // cfg.feature_cluster_size] + offsets
    else:
        features1 = rng.standard_normal((n, cfg.feature_dim))
    noise = rng.standard_normal((n, cfg.feature_dim)) * cfg.feature_noise
    features2 = np.empty_like(features1)
    features2[perm] = features1 + noise

    truth_pairs = [(i, int(perm[i])) for i in range(n)]
    order = rng.permutation(n)
    n_seeds = int(round(cfg.seed_fraction * n))
    seed_pairs = [truth_pairs[i] for i in sorted(order[:n_seeds])]
    test_pairs = [truth_pairs[i] for i in sorted(order[n_seeds:])]

    g1 = KnowledgeGraph(
        n, triplets1, relation_labels=[str(r) for r in range(cfg.n_relations)]
    )
    g2 = KnowledgeGraph(
        n, triplets2, relation_labels=[str(r) for r in range(cfg.n_relations)]
    )
    pair = KgPair(
        g1,
        g2,
        FeatureMatrix(features1),
        FeatureMatrix(features2),
        AlignmentSet.from_pairs(seed_pairs, SEED),
        AlignmentSet.from_pairs(test_pairs, TRUTH),
    )
    truth = AlignmentSet.from_pairs(truth_pairs, TRUTH)
    return pair, truth


def write_dataset(out_dir: str | Path, pair: KgPair, truth: AlignmentSet) -> dict[str, Path]:
    """Write the six dataset files plus the truth file under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / fname for name, fname in DATASET_FILES.items()}

    def labels1(i: int) -> str:
        return pair.g1.entity_labels[i]

    def labels2(j: int) -> str:
        return pair.g2.entity_labels[j]

    write_triplets(
        paths["triplets1"],
        (
            (labels1(h), pair.g1.relation_labels[r], labels1(t))
            for h, r, t in pair.g1.triplets_raw
        ),
    )
    write_triplets(
        paths["triplets2"],
        (
            (labels2(h), pair.g2.relation_labels[r], labels2(t))
            for h, r, t in pair.g2.triplets_raw
        ),
    )
    write_alignments(
        paths["seeds"], ((labels1(l), labels2(r)) for l, r in sorted(pair.seeds))
    )
    write_alignments(
        paths["test"], ((labels1(l), labels2(r)) for l, r in sorted(pair.test))
    )
    write_alignments(
        paths["truth"], ((labels1(l), labels2(r)) for l, r in sorted(truth))
    )
    write_features(paths["features1"], pair.g1.entity_labels, pair.features1.vectors)
    write_features(paths["features2"], pair.g2.entity_labels, pair.features2.vectors)
    return paths
