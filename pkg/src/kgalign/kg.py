"""Data model for knowledge-graph pairs, alignment sets, and dataset files.

File formats (all UTF-8, tab-separated, consumed and emitted bit-exactly):

* triplets:   ``head<TAB>relation<TAB>tail`` per line
* alignments: ``left<TAB>right`` per line
* features:   ``id<TAB>v1,v2,...,vn`` per line (uniform dimension)

Entity and relation identifiers in files are arbitrary tokens; a dense
integer remap is built at load time and kept on the graphs so results can be
written back using the original labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DatasetError",
    "AlignmentConflictError",
    "AlignmentSet",
    "KnowledgeGraph",
    "FeatureMatrix",
    "KgPair",
    "build_adjacency",
    "ingest_dataset",
    "augment_seeds",
    "load_alignment_file",
    "write_triplets",
    "write_alignments",
    "write_features",
]

SEED = "seed"
TRUTH = "truth"


def pseudo_provenance(iteration: int) -> str:
    return f"pseudo:{iteration}"


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


class AlignmentConflictError(RuntimeError):
    """A one-to-one alignment invariant was violated."""


class AlignmentSet:
    """A set of cross-KG entity pairs with a provenance label per pair.

    Provenance is one of ``"seed"``, ``"truth"``, or ``"pseudo:<t>"``. Pair
    membership is what defines set semantics; provenance is bookkeeping.
    """

    def __init__(self, pairs: dict[tuple[int, int], str] | None = None):
        self._pairs: dict[tuple[int, int], str] = dict(pairs) if pairs else {}

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], provenance: str) -> "AlignmentSet":
        return cls({(int(l), int(r)): provenance for l, r in pairs})

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)

    def __contains__(self, pair: tuple[int, int]) -> bool:
        return tuple(pair) in self._pairs

    def __eq__(self, other) -> bool:
        if not isinstance(other, AlignmentSet):
            return NotImplemented
        return set(self._pairs) == set(other._pairs)

    def pairs(self) -> set[tuple[int, int]]:
        return set(self._pairs)

    def provenance(self, pair: tuple[int, int]) -> str:
        return self._pairs[tuple(pair)]

    def items(self) -> Iterator[tuple[tuple[int, int], str]]:
        return iter(self._pairs.items())

    def lefts(self) -> set[int]:
        return {l for l, _ in self._pairs}

    def rights(self) -> set[int]:
        return {r for _, r in self._pairs}

    def with_provenance(self, prefix: str) -> "AlignmentSet":
        """Subset of pairs whose provenance starts with ``prefix``."""
        return AlignmentSet(
            {p: v for p, v in self._pairs.items() if v.startswith(prefix)}
        )

    def is_one_to_one(self) -> bool:
        return len(self.lefts()) == len(self) and len(self.rights()) == len(self)

    def copy(self) -> "AlignmentSet":
        return AlignmentSet(self._pairs)

    def __repr__(self) -> str:
        return f"AlignmentSet({len(self)} pairs)"


class KnowledgeGraph:
    """One knowledge graph: dense entity/relation ids, triplets, adjacency.

    ``triplets_raw`` preserves the file order and multiplicity of triplets
    (used for tuple frequency counts); ``triplets`` is the deduplicated set.
    """

    def __init__(
        self,
        n_entities: int,
        triplets_raw: list[tuple[int, int, int]],
        entity_labels: list[str] | None = None,
        relation_labels: list[str] | None = None,
    ):
        self.n_entities = int(n_entities)
        self.triplets_raw = list(triplets_raw)
        self.triplets = sorted(set(self.triplets_raw))
        self.entity_labels = (
            list(entity_labels)
            if entity_labels is not None
            else [str(i) for i in range(n_entities)]
        )
        rel_ids = {r for _, r, _ in self.triplets_raw}
        self.n_relations = (max(rel_ids) + 1) if rel_ids else 0
        self.relation_labels = (
            list(relation_labels)
            if relation_labels is not None
            else [str(r) for r in range(self.n_relations)]
        )
        for h, r, t in self.triplets_raw:
            if not (0 <= h < self.n_entities and 0 <= t < self.n_entities):
                raise DatasetError(f"triplet ({h},{r},{t}) references an unregistered entity")
            if not 0 <= r < len(self.relation_labels):
                raise DatasetError(f"triplet ({h},{r},{t}) references an unregistered relation")
        self._adjacency: sp.csr_matrix | None = None

    @property
    def entities(self) -> range:
        return range(self.n_entities)

    @property
    def relations(self) -> range:
        return range(self.n_relations)

    @property
    def adjacency(self) -> sp.csr_matrix:
        if self._adjacency is None:
            self._adjacency = build_adjacency(self)
        return self._adjacency


def build_adjacency(kg: KnowledgeGraph) -> sp.csr_matrix:
    """Normalized neighbor structure for convolutional aggregation.

    Undirected edges (head <-> tail per deduplicated triplet) plus a self-loop
    on every entity; each row is normalized to sum to 1 (mean aggregation).
    Neighbor ordering within a row is ascending by entity id. Isolated
    entities keep only their self-loop with weight 1.
    """
    neighbors: list[set[int]] = [set() for _ in range(kg.n_entities)]
    for h, _, t in kg.triplets:
        neighbors[h].add(t)
        neighbors[t].add(h)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for e in range(kg.n_entities):
        cols = sorted(neighbors[e] | {e})
        w = 1.0 / len(cols)
        indices.extend(cols)
        data.extend([w] * len(cols))
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data), np.asarray(indices), np.asarray(indptr)),
        shape=(kg.n_entities, kg.n_entities),
    )


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-entity feature vectors; row i belongs to dense entity id i."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise DatasetError("feature matrix must be 2-dimensional")
        if not np.all(np.isfinite(v)):
            raise DatasetError("feature matrix contains non-finite entries")
        object.__setattr__(self, "vectors", v)

    @property
    def n_entities(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


class KgPair:
    """Two knowledge graphs plus features, working alignments, and test pairs.

    ``alignments`` is the working set S (seeds plus accepted pseudo-labels);
    ``unaligned1``/``unaligned2`` are the entity ids of each graph not
    consumed by S, sorted ascending. Instances are immutable; use
    :func:`augment_seeds` to obtain an updated pair.
    """

    def __init__(
        self,
        g1: KnowledgeGraph,
        g2: KnowledgeGraph,
        features1: FeatureMatrix,
        features2: FeatureMatrix,
        alignments: AlignmentSet,
        test: AlignmentSet,
    ):
        if features1.n_entities != g1.n_entities or features2.n_entities != g2.n_entities:
            raise DatasetError("feature matrix size does not match entity count")
        if features1.dim != features2.dim:
            raise DatasetError(
                f"feature dimension mismatch across graphs: {features1.dim} vs {features2.dim}"
            )
        overlap = alignments.with_provenance(SEED).pairs() & test.pairs()
        if overlap:
            raise DatasetError(f"seed and test alignments overlap: {sorted(overlap)[:3]}")
        self.g1 = g1
        self.g2 = g2
        self.features1 = features1
        self.features2 = features2
        self.alignments = alignments
        self.test = test
        self.unaligned1 = np.array(
            sorted(set(range(g1.n_entities)) - alignments.lefts()), dtype=np.int64
        )
        self.unaligned2 = np.array(
            sorted(set(range(g2.n_entities)) - alignments.rights()), dtype=np.int64
        )
        self._union_features: np.ndarray | None = None
        self._union_adjacency: sp.csr_matrix | None = None
        self._union_adjacency_t: sp.csr_matrix | None = None

    @property
    def seeds(self) -> AlignmentSet:
        return self.alignments.with_provenance(SEED)

    @property
    def feature_dim(self) -> int:
        return self.features1.dim

    @property
    def union_features(self) -> np.ndarray:
        """Stacked feature matrix over E1 then E2."""
        if self._union_features is None:
            self._union_features = np.vstack(
                [self.features1.vectors, self.features2.vectors]
            )
        return self._union_features

    @property
    def union_adjacency(self) -> sp.csr_matrix:
        """Block-diagonal normalized adjacency over both graphs."""
        if self._union_adjacency is None:
            self._union_adjacency = sp.block_diag(
                (self.g1.adjacency, self.g2.adjacency), format="csr"
            )
        return self._union_adjacency

    @property
    def union_adjacency_t(self) -> sp.csr_matrix:
        if self._union_adjacency_t is None:
            self._union_adjacency_t = self.union_adjacency.T.tocsr()
        return self._union_adjacency_t


def augment_seeds(pair: KgPair, new_pairs: Iterable[tuple[int, int]], iteration: int) -> KgPair:
    """Add pseudo-labeled pairs to the working set and recompute unaligned sets.

    Pairs already present are skipped. Remaining pairs must be internally
    one-to-one and drawn from the current unaligned sets; any conflict with
    the working set aborts, since it signals a selection bug upstream.
    """
    incoming = [tuple(p) for p in new_pairs if tuple(p) not in pair.alignments]
    if not incoming:
        return pair
    lefts = [l for l, _ in incoming]
    rights = [r for _, r in incoming]
    if len(set(lefts)) != len(incoming) or len(set(rights)) != len(incoming):
        raise AlignmentConflictError("pseudo-labeled pairs are not one-to-one among themselves")
    u1 = set(pair.unaligned1.tolist())
    u2 = set(pair.unaligned2.tolist())
    for l, r in incoming:
        if l not in u1 or r not in u2:
            raise AlignmentConflictError(
                f"pair ({l},{r}) conflicts with the existing working set"
            )
    merged = dict(pair.alignments.items())
    prov = pseudo_provenance(iteration)
    for p in incoming:
        merged[p] = prov
    return KgPair(
        pair.g1, pair.g2, pair.features1, pair.features2, AlignmentSet(merged), pair.test
    )


# --------------------------------------------------------------------------
# file ingestion / emission
# --------------------------------------------------------------------------


def _read_rows(path: Path, n_fields: int) -> Iterator[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise DatasetError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, got {len(fields)}"
                )
            yield lineno, fields


def load_alignment_file(path: str | Path) -> list[tuple[str, str]]:
    """Read an alignment file as (left, right) label pairs in file order."""
    return [(a, b) for _, (a, b) in _read_rows(Path(path), 2)]


def _load_features(path: Path) -> tuple[list[str], np.ndarray]:
    labels: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim = None
    for lineno, (label, values) in _read_rows(path, 2):
        if label in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate feature row for entity {label!r}")
        seen.add(label)
        try:
            vec = np.array([float(x) for x in values.split(",")], dtype=np.float64)
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: malformed feature value ({exc})") from exc
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DatasetError(
                f"{path}:{lineno}: feature dimension {vec.size} does not match {dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise DatasetError(f"{path}:{lineno}: non-finite feature value")
        labels.append(label)
        rows.append(vec)
    if not labels:
        raise DatasetError(f"{path}: empty feature file")
    return labels, np.vstack(rows)


def _load_graph(triplets_path: Path, features_path: Path) -> tuple[KnowledgeGraph, FeatureMatrix]:
    labels, vectors = _load_features(features_path)
    entity_of = {lab: i for i, lab in enumerate(labels)}
    relation_of: dict[str, int] = {}
    relation_labels: list[str] = []
    triplets: list[tuple[int, int, int]] = []
    for lineno, (h, r, t) in _read_rows(triplets_path, 3):
        if h not in entity_of:
            raise DatasetError(f"{triplets_path}:{lineno}: unknown head entity {h!r}")
        if t not in entity_of:
            raise DatasetError(f"{triplets_path}:{lineno}: unknown tail entity {t!r}")
        if r not in relation_of:
            relation_of[r] = len(relation_labels)
            relation_labels.append(r)
        triplets.append((entity_of[h], relation_of[r], entity_of[t]))
    kg = KnowledgeGraph(
        len(labels), triplets, entity_labels=labels, relation_labels=relation_labels
    )
    return kg, FeatureMatrix(vectors)


def _map_alignments(
    path: Path,
    g1: KnowledgeGraph,
    g2: KnowledgeGraph,
    provenance: str,
) -> AlignmentSet:
    left_of = {lab: i for i, lab in enumerate(g1.entity_labels)}
    right_of = {lab: i for i, lab in enumerate(g2.entity_labels)}
    pairs: dict[tuple[int, int], str] = {}
    for lineno, (a, b) in _read_rows(path, 2):
        if a not in left_of:
            raise DatasetError(f"{path}:{lineno}: entity {a!r} not present in the first KG")
        if b not in right_of:
            raise DatasetError(f"{path}:{lineno}: entity {b!r} not present in the second KG")
        pairs[(left_of[a], right_of[b])] = provenance
    return AlignmentSet(pairs)


def ingest_dataset(
    triplets1_path: str | Path,
    triplets2_path: str | Path,
    seeds_path: str | Path,
    test_path: str | Path,
    features1_path: str | Path,
    features2_path: str | Path,
) -> KgPair:
    """Load and validate the six dataset files into a :class:`KgPair`.

    Entity universes are defined by the feature files; triplet and alignment
    identifiers must resolve within them. Seeds must be one-to-one.
    """
    g1, f1 = _load_graph(Path(triplets1_path), Path(features1_path))
    g2, f2 = _load_graph(Path(triplets2_path), Path(features2_path))
    seeds = _map_alignments(Path(seeds_path), g1, g2, SEED)
    if not seeds.is_one_to_one():
        raise DatasetError(f"{seeds_path}: duplicate left or right entity within seeds")
    test = _map_alignments(Path(test_path), g1, g2, TRUTH)
    return KgPair(g1, g2, f1, f2, seeds, test)


def write_triplets(path: str | Path, triplets: Iterable[tuple[object, object, object]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triplets:
            fh.write(f"{h}\t{r}\t{t}\n")


def write_alignments(path: str | Path, pairs: Iterable[tuple[object, object]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


def write_features(path: str | Path, labels: Iterable[object], vectors: np.ndarray) -> None:
    """Write one ``id<TAB>v1,v2,...`` row per entity; floats round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for label, row in zip(labels, vectors):
            fh.write(f"{label}\t{','.join(repr(float(v)) for v in row)}\n")
