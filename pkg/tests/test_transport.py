"""Sinkhorn solver and conflict-free selection tests."""

import itertools

import numpy as np
import numpy.testing as npt
import pytest

from kgalign.encoder import encode, init_params
from kgalign.kg import AlignmentConflictError
from kgalign.metrics import decompose_errors
from kgalign.neighborhood import CostMatrix
from kgalign.transport import (
    CouplingMatrix,
    SinkhornConfig,
    load_matrix,
    pseudo_label,
    save_matrix,
    select_alignments,
    selection_threshold,
    sinkhorn,
)
from conftest import tiny_train_config


def _solve(values, **cfg):
    return sinkhorn(CostMatrix.from_array(np.asarray(values, dtype=float)), SinkhornConfig(**cfg))


def _brute_force_assignment(costs):
    """Minimum-cost perfect matching of a square matrix by enumeration."""
    n = costs.shape[0]
    best_cost, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(costs[i, p] for i, p in enumerate(perm))
        if total < best_cost:
            best_cost, best_perm = total, perm
    return best_perm


class TestSinkhorn:
    def test_all_zero_costs_give_uniform_coupling(self):
        coupling = _solve(np.zeros((2, 2)))
        npt.assert_allclose(coupling.matrix, 0.25, atol=1e-12)

    def test_diagonal_instance_matches_permutation_oracle(self):
        costs = np.array([[0.0, 10.0], [10.0, 0.0]])
        coupling = _solve(costs, regularization=0.5)
        perm = _brute_force_assignment(costs)  # costs 0 vs 20 -> identity
        assert perm == (0, 1)
        assert coupling.matrix[0, 0] == pytest.approx(0.5, abs=1e-8)
        assert coupling.matrix[1, 1] == pytest.approx(0.5, abs=1e-8)
        assert coupling.matrix[0, 1] <= 1e-8
        assert coupling.matrix[1, 0] <= 1e-8

    def test_single_row_is_fully_determined(self):
        coupling = _solve(np.array([[3.0, -2.0]]))
        npt.assert_allclose(coupling.matrix, [[0.5, 0.5]], atol=1e-12)

    @pytest.mark.parametrize("reg", [0.05, 0.5, 2.0])
    def test_marginals_converge_on_random_costs(self, reg):
        rng = np.random.default_rng(hash(reg) % (1 << 32))
        for _ in range(5):
            rows = int(rng.integers(2, 60))
            cols = int(rng.integers(2, 60))
            costs = rng.uniform(-10, 10, size=(rows, cols))
            coupling = _solve(costs, regularization=reg, max_iterations=200000)
            assert coupling.converged
            assert coupling.max_violation < 1e-6
            assert abs(coupling.matrix.sum() - 1.0) < 1e-9
            assert np.all(coupling.matrix >= 0.0)

    def test_constant_shift_leaves_coupling_unchanged(self):
        rng = np.random.default_rng(1)
        costs = rng.uniform(-5, 5, size=(7, 9))
        a = _solve(costs)
        b = _solve(costs + 123.456)
        npt.assert_allclose(a.matrix, b.matrix, rtol=1e-12)
        assert select_alignments(a) == select_alignments(b)

    def test_solution_is_a_kernel_rescaling(self):
        # P must factor as diag(exp(lu)) @ exp(-C'/beta) @ diag(exp(lv)).
        rng = np.random.default_rng(2)
        costs = rng.uniform(-3, 3, size=(6, 11))
        for reg in (0.5, 0.01):
            coupling = _solve(costs, regularization=reg, max_iterations=5000)
            kernel = np.exp(-(costs - costs.min()) / reg)
            rebuilt = np.exp(
                coupling.log_row_scaling[:, None] + coupling.log_col_scaling[None, :]
            ) * kernel
            npt.assert_allclose(rebuilt, coupling.matrix, rtol=1e-9, atol=1e-15)

    def test_log_domain_covers_extreme_exponent_ranges(self):
        # spread/reg = 2000 here; exp(-2000) underflows, the log path must
        # still converge to a feasible coupling.
        rng = np.random.default_rng(3)
        costs = rng.uniform(-10.0, 10.0, size=(4, 7))
        costs[0, 0] = -10.0
        costs[1, 1] = 10.0
        coupling = _solve(costs, regularization=0.01, max_iterations=300000)
        assert coupling.converged
        assert abs(coupling.matrix.sum() - 1.0) < 1e-9

    def test_underflowed_kernel_rejected_without_log_domain(self):
        costs = np.array([[0.0, 1.0], [4e6, 4e6]])  # second row underflows
        with pytest.raises(ValueError, match="underflow|non-finite"):
            _solve(costs, regularization=0.5, log_domain=False)

    def test_non_finite_costs_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            _solve(np.array([[np.nan, 0.0]]))

    def test_reports_iterations_and_violation(self):
        coupling = _solve(np.zeros((3, 3)))
        assert coupling.iterations >= 1
        assert coupling.max_violation < 1e-6


class TestSelection:
    def _coupling(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        return CouplingMatrix(
            matrix=matrix,
            row_entities=np.arange(matrix.shape[0], dtype=np.int64),
            col_entities=np.arange(matrix.shape[1], dtype=np.int64),
            log_row_scaling=np.zeros(matrix.shape[0]),
            log_col_scaling=np.zeros(matrix.shape[1]),
            iterations=1,
            max_violation=0.0,
            converged=True,
        )

    def test_diagonal_dominance_selected(self):
        pairs = select_alignments(self._coupling([[0.5, 0.0], [0.0, 0.5]]))
        assert pairs == [(0, 0), (1, 1)]

    def test_strict_inequality_at_threshold(self):
        assert select_alignments(self._coupling([[0.25, 0.25], [0.25, 0.25]])) == []

    def test_degenerate_row_case(self):
        assert select_alignments(self._coupling([[0.5, 0.5]])) == []

    def test_violating_coupling_raises(self):
        bad = self._coupling([[0.6, 0.4], [0.6, 0.4]])  # marginals broken
        with pytest.raises(AlignmentConflictError):
            select_alignments(bad)

    def test_never_conflicts_on_sinkhorn_couplings(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            rows = int(rng.integers(2, 30))
            cols = int(rng.integers(2, 30))
            reg = float(rng.choice([0.05, 0.5, 2.0]))
            coupling = _solve(
                rng.uniform(-10, 10, size=(rows, cols)),
                regularization=reg,
                max_iterations=200000,
            )
            pairs = select_alignments(coupling)
            assert len(pairs) <= min(rows, cols)
            assert len({l for l, _ in pairs}) == len(pairs)
            assert len({r for _, r in pairs}) == len(pairs)

    def test_exact_assignment_recovered_at_low_regularization(self):
        # Cost scale chosen so assignment gaps dwarf the regularization.
        rng = np.random.default_rng(5)
        full = 0
        trials = 40
        for _ in range(trials):
            n = int(rng.integers(2, 9))
            costs = rng.uniform(0.0, 5.0, size=(n, n))
            coupling = _solve(costs, regularization=0.01, max_iterations=2_000_000)
            selected = select_alignments(coupling)
            optimal = set(enumerate(_brute_force_assignment(costs)))
            assert set(selected) <= optimal
            if len(selected) == n:
                full += 1
        assert full >= 0.95 * trials


class TestPseudoLabel:
    def test_clean_pair_selection_is_error_free(self, clean_pair):
        pair, truth = clean_pair
        params = init_params(tiny_train_config(), pair.feature_dim, 0)
        table = encode(params, pair)
        result = pseudo_label(pair, table, rectify_weight=10.0)
        assert not result.exhausted
        assert result.pairs  # cold start still finds confident pairs
        dec = decompose_errors(result.pairs, truth.pairs())
        assert dec.conflicted == 0
        assert dec.one_to_one == 0
        assert dec.correct == len(result.pairs)

    def test_exhausted_unaligned_set_signals_termination(self, clean_pair):
        pair, truth = clean_pair
        from kgalign.kg import SEED, AlignmentSet, KgPair

        all_pairs = KgPair(
            pair.g1, pair.g2, pair.features1, pair.features2,
            AlignmentSet.from_pairs(truth.pairs(), SEED), AlignmentSet(),
        )
        params = init_params(tiny_train_config(), pair.feature_dim, 0)
        table = encode(params, all_pairs)
        result = pseudo_label(all_pairs, table, rectify_weight=10.0)
        assert result.exhausted
        assert result.pairs == []

    def test_deterministic(self, clean_pair):
        pair, _ = clean_pair
        params = init_params(tiny_train_config(), pair.feature_dim, 0)
        table = encode(params, pair)
        a = pseudo_label(pair, table, 10.0)
        b = pseudo_label(pair, table, 10.0)
        assert a.pairs == b.pairs
        assert a.iterations == b.iterations


class TestMatrixFiles:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        values = rng.normal(size=(5, 7))
        path = tmp_path / "cost.bin"
        save_matrix(path, values)
        npt.assert_array_equal(load_matrix(path), values)

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a header\n")
        with pytest.raises(ValueError, match="header"):
            load_matrix(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(b"2 2\n" + b"\x00" * 8)
        with pytest.raises(ValueError, match="payload"):
            load_matrix(path)


def test_selection_threshold_definition():
    assert selection_threshold(4, 10) == 1.0 / 8.0
    assert selection_threshold(10, 4) == 1.0 / 8.0
