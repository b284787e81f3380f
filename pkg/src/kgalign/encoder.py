"""Gated graph-convolutional entity encoder with margin-loss training.

Both graphs are encoded with shared parameters: an input projection followed
by L convolution layers. Each layer mixes the mean-aggregated neighborhood of
a transformed representation with the previous representation through a
learned logistic gate:

    h0      = x @ w_in
    agg     = A @ (h @ w_agg)                (A row-normalized, self-loops)
    gate    = sigmoid(h @ w_gate + b_gate)
    h_next  = gate * agg + (1 - gate) * h

Training minimizes a margin ranking loss over aligned pairs against
adaptively sampled nearest-neighbor negatives, using per-parameter
adaptive-moment gradient steps. All gradients are computed analytically
(verified against central finite differences in the test suite).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kg import AlignmentSet, KgPair

__all__ = [
    "TrainConfig",
    "EncoderParams",
    "EmbeddingTable",
    "NegativeSamples",
    "init_params",
    "encode",
    "embedding_distance",
    "sample_negatives",
    "margin_loss",
    "loss_and_grads",
    "EncoderTrainer",
]


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 1.0
    negatives: int = 125
    dim: int = 300
    layers: int = 2
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negatives < 1:
            raise ValueError("negatives must be at least 1")
        if self.dim < 1:
            raise ValueError("embedding dim must be at least 1")
        if self.layers < 1:
            raise ValueError("layers must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class EncoderParams:
    """Trainable parameters: input projection plus per-layer transforms."""

    w_in: np.ndarray
    w_agg: list[np.ndarray]
    w_gate: list[np.ndarray]
    b_gate: list[np.ndarray]

    @property
    def layers(self) -> int:
        return len(self.w_agg)

    def as_arrays(self) -> list[np.ndarray]:
        out = [self.w_in]
        for l in range(self.layers):
            out.extend([self.w_agg[l], self.w_gate[l], self.b_gate[l]])
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.w_in.copy(),
            [w.copy() for w in self.w_agg],
            [w.copy() for w in self.w_gate],
            [b.copy() for b in self.b_gate],
        )

    def pack(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.as_arrays()])

    def unpack(self, vec: np.ndarray) -> "EncoderParams":
        """New params with the same shapes, values taken from ``vec``."""
        out = self.copy()
        pos = 0
        for a in out.as_arrays():
            a.flat[:] = vec[pos : pos + a.size]
            pos += a.size
        if pos != vec.size:
            raise ValueError("parameter vector has the wrong length")
        return out


@dataclass(frozen=True)
class EmbeddingTable:
    """One d-dimensional vector per entity of E1 (first) then E2."""

    vectors: np.ndarray
    n1: int
    n2: int

    def g1(self) -> np.ndarray:
        return self.vectors[: self.n1]

    def g2(self) -> np.ndarray:
        return self.vectors[self.n1 :]


def init_params(cfg: TrainConfig, n_features: int, rng_seed: int) -> EncoderParams:
    """Symmetric-uniform initialization scaled by fan-in."""
    if n_features < 1:
        raise ValueError("feature dimension must be at least 1")
    rng = np.random.default_rng(rng_seed)
    d = cfg.dim
    bound_in = 1.0 / np.sqrt(n_features)
    bound_d = 1.0 / np.sqrt(d)
    w_in = rng.uniform(-bound_in, bound_in, size=(n_features, d))
    w_agg = [rng.uniform(-bound_d, bound_d, size=(d, d)) for _ in range(cfg.layers)]
    w_gate = [rng.uniform(-bound_d, bound_d, size=(d, d)) for _ in range(cfg.layers)]
    b_gate = [rng.uniform(-bound_d, bound_d, size=d) for _ in range(cfg.layers)]
    return EncoderParams(w_in, w_agg, w_gate, b_gate)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params: EncoderParams, x: np.ndarray, adj):
    """Forward pass; returns all layer activations needed for backprop."""
    h = x @ params.w_in
    hs = [h]
    gates = []
    aggs = []
    for l in range(params.layers):
        agg = adj @ (h @ params.w_agg[l])
        gate = _sigmoid(h @ params.w_gate[l] + params.b_gate[l])
        h = gate * agg + (1.0 - gate) * h
        gates.append(gate)
        aggs.append(agg)
        hs.append(h)
    return hs, gates, aggs


def _backward(params: EncoderParams, x: np.ndarray, adj_t, hs, gates, aggs, d_h):
    """Gradients of a scalar loss w.r.t. all parameters given dL/dh_final."""
    g = d_h
    g_w_agg = [None] * params.layers
    g_w_gate = [None] * params.layers
    g_b_gate = [None] * params.layers
    for l in reversed(range(params.layers)):
        h_prev = hs[l]
        gate = gates[l]
        agg = aggs[l]
        d_gate = g * (agg - h_prev)
        d_agg = g * gate
        d_z = d_gate * gate * (1.0 - gate)
        d_t = adj_t @ d_agg
        g_w_agg[l] = h_prev.T @ d_t
        g_w_gate[l] = h_prev.T @ d_z
        g_b_gate[l] = d_z.sum(axis=0)
        g = d_t @ params.w_agg[l].T + d_z @ params.w_gate[l].T + g * (1.0 - gate)
    g_w_in = x.T @ g
    return EncoderParams(g_w_in, g_w_agg, g_w_gate, g_b_gate)


def encode(params: EncoderParams, pair: KgPair) -> EmbeddingTable:
    """Encode all entities of both graphs; pure function of (params, pair)."""
    hs, _, _ = _forward(params, pair.union_features, pair.union_adjacency)
    return EmbeddingTable(hs[-1], pair.g1.n_entities, pair.g2.n_entities)


def embedding_distance(h_i: np.ndarray, h_j: np.ndarray) -> float:
    """L1 distance between two embedding vectors."""
    return float(np.abs(np.asarray(h_i) - np.asarray(h_j)).sum())


@dataclass(frozen=True)
class NegativeSamples:
    """Per-positive nearest-neighbor negatives, aligned by row.

    ``neg_right[p]`` holds E2 entity ids replacing the right member of
    positive p; ``neg_left[p]`` holds E1 ids replacing the left member.
    """

    pos_left: np.ndarray
    pos_right: np.ndarray
    neg_right: np.ndarray
    neg_left: np.ndarray


def sample_negatives(table: EmbeddingTable, alignments: AlignmentSet, k: int) -> NegativeSamples:
    """K nearest entities by current embedding distance, excluding the
    aligned counterpart; ties broken by ascending entity id.

    Positives are ordered by (left, right). If fewer than K candidates
    exist the count is clamped with a warning.
    """
    positives = sorted(alignments)
    pos_left = np.array([l for l, _ in positives], dtype=np.int64)
    pos_right = np.array([r for _, r in positives], dtype=np.int64)
    h1 = table.g1()
    h2 = table.g2()
    k_right = min(k, table.n2 - 1)
    k_left = min(k, table.n1 - 1)
    if k_right < k or k_left < k:
        warnings.warn(
            f"negative count clamped to ({k_left}, {k_right}): not enough candidates",
            stacklevel=2,
        )
    d_right = _kernels.pairwise_l1(h1[pos_left], h2)
    d_right[np.arange(len(positives)), pos_right] = np.inf
    neg_right = np.argsort(d_right, axis=1, kind="stable")[:, :k_right]
    d_left = _kernels.pairwise_l1(h2[pos_right], h1)
    d_left[np.arange(len(positives)), pos_left] = np.inf
    neg_left = np.argsort(d_left, axis=1, kind="stable")[:, :k_left]
    return NegativeSamples(pos_left, pos_right, neg_right.astype(np.int64), neg_left.astype(np.int64))


def _term_arrays(samples: NegativeSamples, n1: int, rows: np.ndarray):
    """Flatten the selected positives and their negatives into pair arrays
    indexed over the stacked embedding table."""
    pos_a = samples.pos_left[rows]
    pos_b = samples.pos_right[rows] + n1
    k_r = samples.neg_right.shape[1]
    k_l = samples.neg_left.shape[1]
    p = rows.shape[0]
    local = np.arange(p, dtype=np.int64)
    term_a = np.concatenate(
        [np.repeat(pos_a, k_r), samples.neg_left[rows].ravel()]
    )
    term_b = np.concatenate(
        [samples.neg_right[rows].ravel() + n1, np.repeat(pos_b, k_l)]
    )
    owner = np.concatenate([np.repeat(local, k_r), np.repeat(local, k_l)])
    return pos_a, pos_b, term_a, term_b, owner


def margin_loss(
    table: EmbeddingTable,
    alignments: AlignmentSet,
    samples: NegativeSamples,
    margin: float,
) -> float:
    """Sum of hinge terms max(0, d(pos) - d(neg) + margin) over all positives."""
    del alignments  # positives are carried by the samples, ordered identically
    rows = np.arange(samples.pos_left.shape[0], dtype=np.int64)
    pos_a, pos_b, term_a, term_b, owner = _term_arrays(samples, table.n1, rows)
    loss, _, _ = _kernels.hinge_loss_grad(
        table.vectors, pos_a, pos_b, term_a, term_b, owner, margin
    )
    return float(loss)


def loss_and_grads(
    params: EncoderParams,
    pair: KgPair,
    samples: NegativeSamples,
    rows: np.ndarray,
    margin: float,
) -> tuple[float, EncoderParams]:
    """Margin loss over the selected positives and its parameter gradients."""
    x = pair.union_features
    adj = pair.union_adjacency
    adj_t = pair.union_adjacency_t
    hs, gates, aggs = _forward(params, x, adj)
    pos_a, pos_b, term_a, term_b, owner = _term_arrays(samples, pair.g1.n_entities, rows)
    loss, d_h, _ = _kernels.hinge_loss_grad(
        hs[-1], pos_a, pos_b, term_a, term_b, owner, margin
    )
    grads = _backward(params, x, adj_t, hs, gates, aggs, d_h)
    return float(loss), grads


class EncoderTrainer:
    """Owns one model's parameters, optimizer state, and RNG.

    Parameters persist across calls to :meth:`train`, so successive
    pseudo-labeling iterations warm-start from the previous state.
    """

    def __init__(self, cfg: TrainConfig, n_features: int, init_seed: int, shuffle_seed: int):
        self.cfg = cfg
        self.params = init_params(cfg, n_features, init_seed)
        self.rng = np.random.default_rng(shuffle_seed)
        self._m = [np.zeros_like(a) for a in self.params.as_arrays()]
        self._v = [np.zeros_like(a) for a in self.params.as_arrays()]
        self._t = 0

    def _adam_step(self, grads: EncoderParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self._t += 1
        t = self._t
        for p_arr, g_arr, m, v in zip(
            self.params.as_arrays(), grads.as_arrays(), self._m, self._v
        ):
            m *= beta1
            m += (1.0 - beta1) * g_arr
            v *= beta2
            v += (1.0 - beta2) * g_arr * g_arr
            m_hat = m / (1.0 - beta1**t)
            v_hat = v / (1.0 - beta2**t)
            p_arr -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def train(self, pair: KgPair, epochs: int | None = None) -> list[float]:
        """Run mini-batch training epochs on the pair's working alignments.

        Negatives are resampled from the current embeddings at the start of
        every epoch. Returns the per-epoch loss normalized by positive count.
        Raises on non-finite loss.
        """
        cfg = self.cfg
        epochs = cfg.epochs if epochs is None else epochs
        n_pos = len(pair.alignments)
        if n_pos == 0 or epochs == 0:
            return []
        history = []
        for _ in range(epochs):
            table = encode(self.params, pair)
            samples = sample_negatives(table, pair.alignments, cfg.negatives)
            order = self.rng.permutation(n_pos).astype(np.int64)
            total = 0.0
            for lo in range(0, n_pos, cfg.batch_size):
                rows = order[lo : lo + cfg.batch_size]
                loss, grads = loss_and_grads(
                    self.params, pair, samples, rows, cfg.margin
                )
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite training loss ({loss}) at step {self._t + 1}"
                    )
                self._adam_step(grads, cfg.learning_rate)
                total += loss
            history.append(total / n_pos)
        return history
