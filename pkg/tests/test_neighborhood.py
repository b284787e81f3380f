"""Tuple-frequency matching and rectified-cost tests."""

import numpy as np
import numpy.testing as npt
import pytest

from kgalign.encoder import EmbeddingTable
from kgalign.kg import SEED, AlignmentSet, FeatureMatrix, KgPair, KnowledgeGraph
from kgalign.neighborhood import (
    NeighborhoodContext,
    build_tuple_index,
    match_score,
    match_score_matrix,
    rectified_cost,
    relation_correspondence,
)
from kgalign.synthetic import SynthConfig, generate_pair


class TestTupleIndex:
    def test_reciprocal_of_multiplicity(self):
        kg = KnowledgeGraph(2, [(0, 0, 1)] * 4)
        idx = build_tuple_index(kg)
        assert idx.tuples[0][(0, 1)] == 4  # weight 1/4 per tuple occurrence
        assert idx.tuples[1][(0, 0)] == 4

    def test_unit_count(self):
        idx = build_tuple_index(KnowledgeGraph(2, [(0, 0, 1)]))
        assert idx.tuples[0][(0, 1)] == 1

    def test_isolated_entity_has_empty_tuples(self):
        idx = build_tuple_index(KnowledgeGraph(3, [(0, 0, 1)]))
        assert idx.tuples[2] == {}
        assert idx.neighbor_count[2] == 0

    def test_neighbor_counts_are_distinct_entities(self):
        kg = KnowledgeGraph(3, [(0, 0, 1), (0, 1, 1), (0, 0, 2)])
        idx = build_tuple_index(kg)
        assert idx.neighbor_count[0] == 2


def _identity_map(n=4):
    return {r: r for r in range(n)}


class TestMatchScore:
    def test_empty_match_is_zero(self):
        kg = KnowledgeGraph(3, [(0, 0, 1)])
        idx = build_tuple_index(kg)
        score = match_score(0, 0, AlignmentSet(), idx, idx, _identity_map())
        assert score == 0.0

    def test_single_matched_tuple(self):
        # Both entities have two neighbors; one shared aligned tuple, counts 1.
        kg1 = KnowledgeGraph(3, [(0, 0, 1), (0, 1, 2)])
        kg2 = KnowledgeGraph(3, [(0, 0, 1), (0, 1, 2)])
        idx1 = build_tuple_index(kg1)
        idx2 = build_tuple_index(kg2)
        aligned = AlignmentSet.from_pairs([(1, 1)], SEED)
        score = match_score(0, 0, aligned, idx1, idx2, _identity_map())
        assert score == pytest.approx(1.0 / (2 + 2))

    def test_six_entity_fixture_matches_hand_enumeration(self):
        # KG1 entity 0: tuples (r0,1) count 2, (r1,2) count 1 -> neighbors {1,2}
        # KG2 entity 0: tuples (r0,1) count 1, (r1,2) count 3 -> neighbors {1,2}
        # Aligned: (1,1) and (2,2); matched tuple pairs therefore:
        #   (r0,1)~(r0,1): xi = (1/2)*(1/1) = 1/2
        #   (r1,2)~(r1,2): xi = (1/1)*(1/3) = 1/3
        # score = (1/2 + 1/3) / (|N1|+|N2|) = (5/6) / 4
        kg1 = KnowledgeGraph(6, [(0, 0, 1), (0, 0, 1), (0, 1, 2), (3, 0, 4)])
        kg2 = KnowledgeGraph(6, [(0, 0, 1), (0, 1, 2), (0, 1, 2), (0, 1, 2), (4, 1, 5)])
        idx1 = build_tuple_index(kg1)
        idx2 = build_tuple_index(kg2)
        aligned = AlignmentSet.from_pairs([(1, 1), (2, 2)], SEED)
        score = match_score(0, 0, aligned, idx1, idx2, _identity_map())
        assert score == pytest.approx((0.5 + 1.0 / 3.0) / 4.0)

    def test_score_nonnegative_and_zero_without_alignments(self):
        pair, _ = generate_pair(SynthConfig(n_entities=20, rng_seed=3))
        ctx = NeighborhoodContext.build(pair)
        for e_i in range(5):
            for e_j in range(5):
                assert match_score(e_i, e_j, AlignmentSet(), ctx.idx1, ctx.idx2, ctx.relation_map) == 0.0
                assert (
                    match_score(e_i, e_j, pair.alignments, ctx.idx1, ctx.idx2, ctx.relation_map)
                    >= 0.0
                )

    def test_matrix_agrees_with_single_pair_route(self):
        pair, _ = generate_pair(
            SynthConfig(n_entities=15, avg_degree=3.0, edge_perturbation=0.1, rng_seed=6)
        )
        ctx = NeighborhoodContext.build(pair)
        rows = pair.unaligned1
        cols = pair.unaligned2
        matrix = match_score_matrix(
            rows, cols, pair.alignments, ctx.idx1, ctx.idx2, ctx.relation_map
        )
        for i, e_i in enumerate(rows):
            for j, e_j in enumerate(cols):
                expected = match_score(
                    int(e_i), int(e_j), pair.alignments, ctx.idx1, ctx.idx2, ctx.relation_map
                )
                assert matrix[i, j] == pytest.approx(expected, abs=1e-12)

    def test_monotone_in_alignments(self):
        pair, truth = generate_pair(
            SynthConfig(n_entities=15, avg_degree=3.0, rng_seed=8, seed_fraction=0.6)
        )
        ctx = NeighborhoodContext.build(pair)
        rows = pair.unaligned1
        cols = pair.unaligned2
        seeds = sorted(pair.seeds)
        small = AlignmentSet.from_pairs(seeds[:3], SEED)
        large = AlignmentSet.from_pairs(seeds, SEED)
        m_small = match_score_matrix(rows, cols, small, ctx.idx1, ctx.idx2, ctx.relation_map)
        m_large = match_score_matrix(rows, cols, large, ctx.idx1, ctx.idx2, ctx.relation_map)
        assert np.all(m_large >= m_small - 1e-15)

    def test_swapping_graphs_transposes_scores(self):
        pair, _ = generate_pair(
            SynthConfig(n_entities=12, avg_degree=3.0, edge_perturbation=0.1, rng_seed=9)
        )
        ctx = NeighborhoodContext.build(pair)
        rows = pair.unaligned1
        cols = pair.unaligned2
        fwd = match_score_matrix(
            rows, cols, pair.alignments, ctx.idx1, ctx.idx2, ctx.relation_map
        )
        swapped = AlignmentSet.from_pairs(
            [(r, l) for l, r in pair.alignments], SEED
        )
        inverse_map = {v: k for k, v in ctx.relation_map.items()}
        rev = match_score_matrix(
            cols, rows, swapped, ctx.idx2, ctx.idx1, inverse_map
        )
        npt.assert_allclose(rev, fwd.T, atol=1e-15)


class TestRelationCorrespondence:
    def test_shared_vocabulary_maps_by_label(self):
        pair, _ = generate_pair(SynthConfig(n_entities=10, rng_seed=1))
        mapping = relation_correspondence(pair)
        for r1, r2 in mapping.items():
            assert pair.g1.relation_labels[r1] == pair.g2.relation_labels[r2]

    def test_disjoint_vocabulary_uses_seed_cooccurrence(self):
        # KG1 relation "a" always co-occurs with KG2 relation "b" on seeds.
        g1 = KnowledgeGraph(4, [(0, 0, 1), (2, 0, 3)], relation_labels=["a"])
        g2 = KnowledgeGraph(4, [(0, 0, 1), (2, 0, 3)], relation_labels=["b"])
        feats = FeatureMatrix(np.eye(4))
        pair = KgPair(
            g1, g2, feats, feats,
            AlignmentSet.from_pairs([(0, 0), (1, 1)], SEED),
            AlignmentSet(),
        )
        assert relation_correspondence(pair) == {0: 0}


class TestRectifiedCost:
    def _table_pair(self):
        g = KnowledgeGraph(3, [(0, 0, 1)])
        feats = FeatureMatrix(np.eye(3))
        pair = KgPair(
            g, g, feats, feats,
            AlignmentSet.from_pairs([(0, 0)], SEED), AlignmentSet(),
        )
        rng = np.random.default_rng(0)
        table = EmbeddingTable(rng.normal(size=(6, 4)), 3, 3)
        return pair, table

    def test_zero_weight_equals_distance_matrix(self):
        pair, table = self._table_pair()
        cost = rectified_cost(pair, table, pair.alignments, 0.0)
        h1 = table.g1()[pair.unaligned1]
        h2 = table.g2()[pair.unaligned2]
        expected = np.abs(h1[:, None, :] - h2[None, :, :]).sum(axis=2)
        npt.assert_allclose(cost.values, expected, rtol=1e-12)

    def test_empty_alignments_leave_distances(self):
        pair, table = self._table_pair()
        empty_pair = KgPair(
            pair.g1, pair.g2, pair.features1, pair.features2,
            AlignmentSet(), AlignmentSet(),
        )
        a = rectified_cost(empty_pair, table, empty_pair.alignments, 10.0)
        b = rectified_cost(empty_pair, table, empty_pair.alignments, 0.0)
        npt.assert_array_equal(a.values, b.values)

    def test_direct_rectification_value(self):
        # Entity 0 has 10 distinct neighbors on each side; exactly one
        # neighbor pair (1,1) is aligned, so s(0,0') = 1/(10+10) = 0.05.
        # With d(0,0') = 1.0 and weight 10: cost = 1.0 - 10*0.05 = 0.5.
        triplets = [(0, r, t) for r, t in zip(range(10), range(1, 11))]
        g1 = KnowledgeGraph(11, triplets)
        g2 = KnowledgeGraph(11, triplets)
        feats = FeatureMatrix(np.zeros((11, 1)))
        pair = KgPair(
            g1, g2, feats, feats,
            AlignmentSet.from_pairs([(1, 1)], SEED),
            AlignmentSet(),
        )
        vectors = np.zeros((22, 1))
        vectors[11] = 1.0  # entity 0 of KG2; d(e0, e0') = 1.0
        table = EmbeddingTable(vectors, 11, 11)
        cost = rectified_cost(pair, table, pair.alignments, 10.0)
        row = list(cost.row_entities).index(0)
        col = list(cost.col_entities).index(0)
        assert cost.values[row, col] == pytest.approx(0.5)

    def test_empty_unaligned_side_rejected(self):
        g = KnowledgeGraph(1, [])
        feats = FeatureMatrix(np.zeros((1, 1)))
        pair = KgPair(
            g, g, feats, feats,
            AlignmentSet.from_pairs([(0, 0)], SEED), AlignmentSet(),
        )
        table = EmbeddingTable(np.zeros((2, 1)), 1, 1)
        with pytest.raises(ValueError, match="empty unaligned"):
            rectified_cost(pair, table, pair.alignments, 1.0)
