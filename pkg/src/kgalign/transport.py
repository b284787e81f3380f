"""Entropy-regularized optimal transport and conflict-free pair selection.

The coupling between the two unaligned entity sets has uniform marginals
(1/R per row, 1/C per column). Any entry exceeding 1/(2*min(R, C)) is
selected as a pseudo-labeled alignment: the marginal constraints then leave
less than the threshold for every other entry sharing its row or column, so
the selected set is one-to-one by construction. Selection is still verified
defensively at runtime.

Costs may be negative, so the kernel exp(-C/beta) is formed after
subtracting the per-matrix minimum cost; the optimum is invariant under a
constant cost shift because the rescaling is absorbed by the marginals. When
the shifted exponent range exceeds what float64 exp() can represent, a full
log-domain update path takes over.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .encoder import EmbeddingTable
from .kg import AlignmentConflictError, KgPair
from .neighborhood import CostMatrix, NeighborhoodContext, rectified_cost

__all__ = [
    "SinkhornConfig",
    "CouplingMatrix",
    "PseudoLabelResult",
    "sinkhorn",
    "select_alignments",
    "selection_threshold",
    "pseudo_label",
    "save_matrix",
    "load_matrix",
]

# The scaling-vector form handles exponent ranges up to this bound; float64
# exp() underflows near -745, so beyond it (shifted max cost / regularization)
# the log-domain update path takes over when enabled.
LOG_DOMAIN_EXPONENT = 500.0


@dataclass(frozen=True)
class SinkhornConfig:
    regularization: float = 0.5
    max_iterations: int = 500
    tolerance: float = 1e-6
    log_domain: bool = True
    check_every: int = 10

    def __post_init__(self):
        if self.regularization <= 0:
            raise ValueError("regularization must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class CouplingMatrix:
    """Optimized coupling with uniform marginals and solver diagnostics.

    ``log_row_scaling``/``log_col_scaling`` express the solution in scaling
    form: P = diag(exp(lu)) @ exp(-C'/beta) @ diag(exp(lv)) with C' the
    min-shifted cost.
    """

    matrix: np.ndarray
    row_entities: np.ndarray
    col_entities: np.ndarray
    log_row_scaling: np.ndarray
    log_col_scaling: np.ndarray
    iterations: int
    max_violation: float
    converged: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def threshold(self) -> float:
        return selection_threshold(*self.matrix.shape)


def selection_threshold(rows: int, cols: int) -> float:
    """Strict lower bound on coupling mass for conflict-free selection."""
    return 1.0 / (2.0 * min(rows, cols))


def sinkhorn(cost: CostMatrix, cfg: SinkhornConfig | None = None) -> CouplingMatrix:
    """Solve the entropy-regularized transport problem for uniform marginals.

    Alternates row and column scalings until the worst marginal violation of
    the implied coupling drops below tolerance or the iteration budget is
    exhausted. Raises on non-finite kernels (cost scale too large for the
    chosen regularization).
    """
    cfg = cfg or SinkhornConfig()
    values = np.asarray(cost.values, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("cost matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(values)):
        raise ValueError("cost matrix contains non-finite entries")
    n_rows, n_cols = values.shape
    row_mass = 1.0 / n_rows
    col_mass = 1.0 / n_cols
    shifted = values - values.min()
    beta = cfg.regularization

    if cfg.log_domain and float(shifted.max()) / beta > LOG_DOMAIN_EXPONENT:
        log_kernel = -shifted / beta
        log_u, log_v, iterations, violation = _kernels.sinkhorn_log(
            log_kernel,
            np.log(row_mass),
            np.log(col_mass),
            cfg.max_iterations,
            cfg.tolerance,
            cfg.check_every,
        )
        plan = np.exp(log_kernel + log_u[:, None] + log_v[None, :])
    else:
        kernel = np.exp(-shifted / beta)
        if not np.all(np.isfinite(kernel)):
            raise ValueError(
                "transport kernel is non-finite after stabilization; "
                "cost scale is too large relative to the regularization"
            )
        if np.any(kernel.sum(axis=1) == 0.0) or np.any(kernel.sum(axis=0) == 0.0):
            raise ValueError(
                "transport kernel underflowed to zero rows or columns; "
                "increase the regularization"
            )
        u, v, iterations, violation = _kernels.sinkhorn_scaling(
            kernel, row_mass, col_mass, cfg.max_iterations, cfg.tolerance, cfg.check_every
        )
        plan = (u[:, None] * kernel) * v[None, :]
        log_u = np.log(u)
        log_v = np.log(v)

    return CouplingMatrix(
        matrix=plan,
        row_entities=np.asarray(cost.row_entities, dtype=np.int64),
        col_entities=np.asarray(cost.col_entities, dtype=np.int64),
        log_row_scaling=log_u,
        log_col_scaling=log_v,
        iterations=int(iterations),
        max_violation=float(violation),
        converged=bool(violation < cfg.tolerance),
    )


def select_alignments(coupling: CouplingMatrix) -> list[tuple[int, int]]:
    """Entity pairs whose coupling mass strictly exceeds the selection
    threshold, mapped back to entity ids and sorted.

    The result is one-to-one whenever the marginal constraints hold; a
    violation indicates numerical marginal error beyond tolerance and raises.
    """
    thr = coupling.threshold
    sel = np.argwhere(coupling.matrix > thr)
    pairs = sorted(
        (int(coupling.row_entities[i]), int(coupling.col_entities[j])) for i, j in sel
    )
    lefts = [l for l, _ in pairs]
    rights = [r for _, r in pairs]
    if len(set(lefts)) != len(pairs) or len(set(rights)) != len(pairs):
        raise AlignmentConflictError(
            "selected pairs are not one-to-one; coupling marginals are violated "
            f"beyond tolerance (max violation {coupling.max_violation:.3e})"
        )
    return pairs


@dataclass(frozen=True)
class PseudoLabelResult:
    """Selected pairs plus solver diagnostics; ``exhausted`` signals that an
    unaligned set was empty and the pipeline should terminate."""

    pairs: list[tuple[int, int]]
    exhausted: bool
    iterations: int = 0
    max_violation: float = 0.0
    converged: bool = True


def pseudo_label(
    pair: KgPair,
    table: EmbeddingTable,
    rectify_weight: float,
    cfg: SinkhornConfig | None = None,
    ctx: NeighborhoodContext | None = None,
) -> PseudoLabelResult:
    """Rectified cost -> coupling -> conflict-free selection over the
    current unaligned sets."""
    if pair.unaligned1.size == 0 or pair.unaligned2.size == 0:
        return PseudoLabelResult(pairs=[], exhausted=True)
    cost = rectified_cost(pair, table, pair.alignments, rectify_weight, ctx)
    coupling = sinkhorn(cost, cfg)
    pairs = select_alignments(coupling)
    return PseudoLabelResult(
        pairs=pairs,
        exhausted=False,
        iterations=coupling.iterations,
        max_violation=coupling.max_violation,
        converged=coupling.converged,
    )


def save_matrix(path: str | Path, values: np.ndarray) -> None:
    """Write a dense matrix: ASCII ``rows cols`` header line, then
    row-major little-endian float64 payload."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("only 2-d matrices are supported")
    with open(path, "wb") as fh:
        fh.write(f"{values.shape[0]} {values.shape[1]}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            rows, cols = (int(x) for x in header.decode("ascii").split())
        except ValueError as exc:
            raise ValueError(f"{path}: malformed matrix header {header!r}") from exc
        payload = fh.read()
    expected = rows * cols * struct.calcsize("<d")
    if len(payload) != expected:
        raise ValueError(
            f"{path}: expected {expected} payload bytes for {rows}x{cols}, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
