"""Relational neighborhood matching and rectified transport costs.

An entity pair scores highly when the two entities share aligned
(relation, neighbor) tuples. Tuple frequencies are counted on the raw
(pre-deduplication) triplet lists, and each matched tuple contributes the
product of its reciprocal frequencies on the two sides, normalized by the
combined neighborhood size. The score discounts embedding distance to form
the transport cost used for pseudo-labeling.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kg import AlignmentSet, KgPair, KnowledgeGraph
from .encoder import EmbeddingTable

__all__ = [
    "TupleIndex",
    "NeighborhoodContext",
    "CostMatrix",
    "build_tuple_index",
    "relation_correspondence",
    "matched_tuples",
    "match_score",
    "match_score_matrix",
    "rectified_cost",
]


class TupleIndex:
    """Per-entity counts of incident (relation, neighbor) tuples.

    ``tuples[e][(r, n)]`` is the number of raw triplets connecting e and n
    via r in either direction; its reciprocal is the tuple's frequency
    weight. ``neighbor_count[e]`` is the number of distinct neighbors.
    """

    def __init__(self, kg: KnowledgeGraph):
        tuples: list[dict[tuple[int, int], int]] = [dict() for _ in range(kg.n_entities)]
        for h, r, t in kg.triplets_raw:
            key_h = (r, t)
            tuples[h][key_h] = tuples[h].get(key_h, 0) + 1
            if h != t:
                key_t = (r, h)
                tuples[t][key_t] = tuples[t].get(key_t, 0) + 1
        self.tuples = tuples
        self.neighbor_count = np.array(
            [len({n for _, n in ts}) for ts in tuples], dtype=np.int64
        )
        # neighbor -> per-relation view, used by the matrix accumulation
        by_rel: list[dict[int, list[tuple[int, int]]]] = [dict() for _ in range(kg.n_entities)]
        for e, ts in enumerate(tuples):
            for (r, n), c in ts.items():
                by_rel[e].setdefault(r, []).append((n, c))
        self.by_rel = by_rel


def build_tuple_index(kg: KnowledgeGraph) -> TupleIndex:
    return TupleIndex(kg)


def relation_correspondence(pair: KgPair) -> dict[int, int]:
    """Map KG1 relation ids onto KG2 relation ids.

    When both graphs use the same relation vocabulary the map is identity on
    labels. Otherwise each KG1 relation maps to the KG2 relation most often
    co-incident across the seed pairs' neighborhoods (ties to the smaller
    label; relations without any co-occurrence stay unmapped).
    """
    labels1 = pair.g1.relation_labels
    labels2 = pair.g2.relation_labels
    if set(labels1) == set(labels2):
        index2 = {lab: r for r, lab in enumerate(labels2)}
        return {r1: index2[lab] for r1, lab in enumerate(labels1)}
    idx1 = build_tuple_index(pair.g1)
    idx2 = build_tuple_index(pair.g2)
    co: Counter[tuple[int, int]] = Counter()
    for l, r in sorted(pair.seeds):
        rels1 = {rel for rel, _ in idx1.tuples[l]}
        rels2 = {rel for rel, _ in idx2.tuples[r]}
        for r1 in rels1:
            for r2 in rels2:
                co[(r1, r2)] += 1
    mapping: dict[int, int] = {}
    for r1 in range(len(labels1)):
        candidates = [(cnt, r2) for (a, r2), cnt in co.items() if a == r1]
        if candidates:
            best = max(candidates, key=lambda cr: (cr[0], -cr[1]))
            mapping[r1] = best[1]
    return mapping


@dataclass(frozen=True)
class NeighborhoodContext:
    """Static per-dataset matching state: tuple indices and the relation map."""

    idx1: TupleIndex
    idx2: TupleIndex
    relation_map: dict[int, int]

    @classmethod
    def build(cls, pair: KgPair) -> "NeighborhoodContext":
        return cls(
            build_tuple_index(pair.g1),
            build_tuple_index(pair.g2),
            relation_correspondence(pair),
        )


def matched_tuples(
    e_i: int,
    e_j: int,
    alignments: AlignmentSet,
    idx1: TupleIndex,
    idx2: TupleIndex,
    relation_map: dict[int, int],
) -> list[tuple[tuple[int, int], tuple[int, int], int, int]]:
    """Aligned neighboring tuple pairs for (e_i, e_j) under the working set.

    Yields ((r1, a), (r2, b), count1, count2) for every tuple (r1, a) of e_i
    and (r2, b) of e_j with r1 mapped to r2 and (a, b) aligned.
    """
    right_of = dict(alignments)
    out = []
    for (r1, a), c1 in idx1.tuples[e_i].items():
        r2 = relation_map.get(r1)
        if r2 is None:
            continue
        b = right_of.get(a)
        if b is None:
            continue
        c2 = idx2.tuples[e_j].get((r2, b))
        if c2 is not None:
            out.append(((r1, a), (r2, b), c1, c2))
    return out


def match_score(
    e_i: int,
    e_j: int,
    alignments: AlignmentSet,
    idx1: TupleIndex,
    idx2: TupleIndex,
    relation_map: dict[int, int],
) -> float:
    """Neighborhood match score: sum of reciprocal-frequency products over
    matched tuples, normalized by the combined neighborhood size."""
    matches = matched_tuples(e_i, e_j, alignments, idx1, idx2, relation_map)
    if not matches:
        return 0.0
    denom = idx1.neighbor_count[e_i] + idx2.neighbor_count[e_j]
    total = sum(1.0 / (c1 * c2) for _, _, c1, c2 in matches)
    return total / denom


def match_score_matrix(
    rows: np.ndarray,
    cols: np.ndarray,
    alignments: AlignmentSet,
    idx1: TupleIndex,
    idx2: TupleIndex,
    relation_map: dict[int, int],
) -> np.ndarray:
    """Dense match-score matrix over rows (E1 ids) x cols (E2 ids).

    Accumulates over aligned pairs: each (a, b) in the working set scatters
    the outer product of a's and b's relation-matched neighbor lists.
    """
    row_pos = {int(e): i for i, e in enumerate(rows)}
    col_pos = {int(e): j for j, e in enumerate(cols)}
    acc = np.zeros((len(rows), len(cols)), dtype=np.float64)
    for a, b in alignments:
        if a >= len(idx1.tuples) or b >= len(idx2.tuples):
            continue
        rel_lists = idx2.by_rel[b]
        for (r1, nbr1), c1 in idx1.tuples[a].items():
            i = row_pos.get(nbr1)
            if i is None:
                continue
            r2 = relation_map.get(r1)
            if r2 is None:
                continue
            lst = rel_lists.get(r2)
            if not lst:
                continue
            xi1 = 1.0 / c1
            for nbr2, c2 in lst:
                j = col_pos.get(nbr2)
                if j is not None:
                    acc[i, j] += xi1 / c2
    denom = (
        idx1.neighbor_count[rows][:, None] + idx2.neighbor_count[cols][None, :]
    ).astype(np.float64)
    np.divide(acc, denom, out=acc, where=denom > 0)
    return acc


@dataclass(frozen=True)
class CostMatrix:
    """Dense transport costs over unaligned entities, with id maps."""

    values: np.ndarray
    row_entities: np.ndarray
    col_entities: np.ndarray

    @classmethod
    def from_array(cls, values: np.ndarray) -> "CostMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(
            values,
            np.arange(values.shape[0], dtype=np.int64),
            np.arange(values.shape[1], dtype=np.int64),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def rectified_cost(
    pair: KgPair,
    table: EmbeddingTable,
    alignments: AlignmentSet,
    rectify_weight: float,
    ctx: NeighborhoodContext | None = None,
) -> CostMatrix:
    """Embedding distance minus the weighted match score, over the pair's
    unaligned entity sets. Entries may be negative."""
    rows = pair.unaligned1
    cols = pair.unaligned2
    if rows.size == 0 or cols.size == 0:
        raise ValueError("cannot build a transport cost over an empty unaligned set")
    costs = _kernels.pairwise_l1(table.g1()[rows], table.g2()[cols])
    if rectify_weight != 0.0 and len(alignments) > 0:
        if ctx is None:
            ctx = NeighborhoodContext.build(pair)
        scores = match_score_matrix(
            rows, cols, alignments, ctx.idx1, ctx.idx2, ctx.relation_map
        )
        costs -= rectify_weight * scores
    return CostMatrix(costs, rows.copy(), cols.copy())
