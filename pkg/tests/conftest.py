"""Shared fixtures and kernel warmup for the test session."""

import numpy as np
import pytest

from kgalign import _kernels
from kgalign.encoder import TrainConfig
from kgalign.synthetic import SynthConfig, generate_pair


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger JIT compilation once so timed tests measure algorithm cost."""
    x = np.ones((2, 3))
    _kernels.pairwise_l1(x, x)
    _kernels.hinge_loss_grad(
        np.ones((4, 3)),
        np.array([0]),
        np.array([2]),
        np.array([0]),
        np.array([3]),
        np.array([0]),
        1.0,
    )
    _kernels.sinkhorn_scaling(np.ones((2, 2)), 0.5, 0.5, 5, 1e-9)


@pytest.fixture()
def small_pair():
    """40-entity noisy pair with truth, small enough for fast training."""
    pair, truth = generate_pair(
        SynthConfig(
            n_entities=40,
            n_relations=5,
            avg_degree=3.0,
            edge_perturbation=0.05,
            feature_dim=8,
            feature_noise=0.05,
            seed_fraction=0.3,
            rng_seed=11,
        )
    )
    return pair, truth


@pytest.fixture()
def clean_pair():
    """Noise-free pair: KG2 isomorphic to KG1 with identical features."""
    pair, truth = generate_pair(
        SynthConfig(
            n_entities=30,
            n_relations=4,
            avg_degree=3.0,
            edge_perturbation=0.0,
            feature_dim=8,
            feature_noise=0.0,
            seed_fraction=0.3,
            rng_seed=5,
        )
    )
    return pair, truth


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(
        margin=1.0,
        negatives=5,
        dim=16,
        layers=2,
        epochs=3,
        batch_size=64,
        learning_rate=1e-3,
        rng_seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


# --------------------------------------------------------------------------
# finite-difference gradient oracle, shared by encoder and acceptance tests
# --------------------------------------------------------------------------


def gradient_check_instance(seed: int):
    """A 4-entity margin-loss instance, or None when it sits near a kink.

    Rejects fixtures where any hinge term or any L1 coordinate difference of
    an involved pair is within 1e-3 of zero, so central differences with step
    1e-5 stay on one side of every non-smooth point.
    """
    from kgalign.encoder import encode, init_params, loss_and_grads, sample_negatives
    from kgalign.kg import SEED, AlignmentSet, FeatureMatrix, KgPair, KnowledgeGraph

    rng = np.random.default_rng(seed)
    cfg = tiny_train_config(dim=4, negatives=1)
    g1 = KnowledgeGraph(2, [(0, 0, 1)])
    g2 = KnowledgeGraph(2, [(0, 0, 1)])
    pair = KgPair(
        g1,
        g2,
        FeatureMatrix(rng.normal(size=(2, 3))),
        FeatureMatrix(rng.normal(size=(2, 3))),
        AlignmentSet.from_pairs([(0, 0), (1, 1)], SEED),
        AlignmentSet(),
    )
    params = init_params(cfg, 3, int(rng.integers(1 << 31)))
    table = encode(params, pair)
    samples = sample_negatives(table, pair.alignments, 1)
    rows = np.arange(2, dtype=np.int64)

    h = table.vectors
    pos_d = np.abs(h[samples.pos_left] - h[samples.pos_right + 2]).sum(axis=1)
    margins = []
    involved = []
    for p in range(2):
        involved.append((samples.pos_left[p], samples.pos_right[p] + 2))
        for neg in samples.neg_right[p]:
            margins.append(pos_d[p] - np.abs(h[samples.pos_left[p]] - h[neg + 2]).sum() + cfg.margin)
            involved.append((samples.pos_left[p], neg + 2))
        for neg in samples.neg_left[p]:
            margins.append(pos_d[p] - np.abs(h[neg] - h[samples.pos_right[p] + 2]).sum() + cfg.margin)
            involved.append((neg, samples.pos_right[p] + 2))
    if any(abs(m) < 1e-3 for m in margins):
        return None
    if not any(m > 0 for m in margins):
        return None  # zero gradient everywhere; nothing to compare
    for a, b in involved:
        if np.any(np.abs(h[a] - h[b]) < 1e-3):
            return None

    def loss_of(vec):
        loss, _ = loss_and_grads(params.unpack(vec), pair, samples, rows, cfg.margin)
        return loss

    base = params.pack()
    _, grads = loss_and_grads(params, pair, samples, rows, cfg.margin)
    analytic = grads.pack()
    if np.linalg.norm(analytic) < 1e-6:
        return None  # sign patterns cancel exactly; relative error undefined
    step = 1e-5
    numeric = np.empty_like(base)
    for i in range(base.size):
        plus = base.copy()
        plus[i] += step
        minus = base.copy()
        minus[i] -= step
        numeric[i] = (loss_of(plus) - loss_of(minus)) / (2 * step)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return float(np.linalg.norm(analytic - numeric) / denom)
