"""Backend agreement and dispatch tests for the hot kernels."""

import subprocess
import sys

import numpy as np
import numpy.testing as npt
import pytest

from kgalign import _kernels


def _reference_pairwise_l1(x, y):
    out = np.zeros((x.shape[0], y.shape[0]))
    for i in range(x.shape[0]):
        for j in range(y.shape[0]):
            out[i, j] = np.sum(np.abs(x[i] - y[j]))
    return out


def _reference_hinge(h, pos_a, pos_b, term_a, term_b, owner, margin):
    pos_d = [np.abs(h[a] - h[b]).sum() for a, b in zip(pos_a, pos_b)]
    loss = 0.0
    grad = np.zeros_like(h)
    active = np.zeros(len(pos_a), dtype=int)
    for t in range(len(term_a)):
        a, b = term_a[t], term_b[t]
        m = pos_d[owner[t]] - np.abs(h[a] - h[b]).sum() + margin
        if m > 0:
            loss += m
            active[owner[t]] += 1
            s = np.sign(h[a] - h[b])
            grad[a] -= s
            grad[b] += s
    for p in range(len(pos_a)):
        s = np.sign(h[pos_a[p]] - h[pos_b[p]])
        grad[pos_a[p]] += active[p] * s
        grad[pos_b[p]] -= active[p] * s
    return loss, grad, active


def _random_hinge_instance(rng, n=12, d=5, n_pos=4, n_terms=20):
    h = rng.normal(size=(n, d))
    pos_a = rng.integers(0, n, size=n_pos)
    pos_b = rng.integers(0, n, size=n_pos)
    term_a = rng.integers(0, n, size=n_terms)
    term_b = rng.integers(0, n, size=n_terms)
    owner = rng.integers(0, n_pos, size=n_terms)
    return h, pos_a, pos_b, term_a, term_b, owner


@pytest.mark.parametrize("backend", sorted(_kernels.IMPLEMENTATIONS))
def test_pairwise_l1_matches_reference(backend):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 5))
    y = rng.normal(size=(9, 5))
    impl = _kernels.IMPLEMENTATIONS[backend]["pairwise_l1"]
    npt.assert_allclose(impl(x, y), _reference_pairwise_l1(x, y), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", sorted(_kernels.IMPLEMENTATIONS))
def test_hinge_matches_reference(backend):
    rng = np.random.default_rng(1)
    impl = _kernels.IMPLEMENTATIONS[backend]["hinge_loss_grad"]
    for trial in range(5):
        h, pos_a, pos_b, term_a, term_b, owner = _random_hinge_instance(rng)
        ref_loss, ref_grad, ref_active = _reference_hinge(
            h, pos_a, pos_b, term_a, term_b, owner, 1.0
        )
        loss, grad, active = impl(
            h,
            pos_a.astype(np.int64),
            pos_b.astype(np.int64),
            term_a.astype(np.int64),
            term_b.astype(np.int64),
            owner.astype(np.int64),
            1.0,
        )
        assert loss == pytest.approx(ref_loss, rel=1e-12)
        npt.assert_allclose(grad, ref_grad, atol=1e-12)
        npt.assert_array_equal(active, ref_active)


def test_backends_agree_on_sinkhorn_scaling():
    if "numba" not in _kernels.IMPLEMENTATIONS:
        pytest.skip("numba unavailable")
    rng = np.random.default_rng(2)
    z = np.exp(-rng.uniform(0, 5, size=(13, 9)))
    results = {}
    for backend in ("numpy", "numba"):
        impl = _kernels.IMPLEMENTATIONS[backend]["sinkhorn_scaling"]
        results[backend] = impl(z, 1 / 13, 1 / 9, 500, 1e-10, 10)
    u0, v0, it0, e0 = results["numpy"]
    u1, v1, it1, e1 = results["numba"]
    npt.assert_allclose(u0, u1, rtol=1e-9)
    npt.assert_allclose(v0, v1, rtol=1e-9)
    assert it0 == it1


def test_sinkhorn_scaling_meets_marginals():
    rng = np.random.default_rng(3)
    z = np.exp(-rng.uniform(0, 4, size=(20, 31)))
    u, v, iterations, violation = _kernels.sinkhorn_scaling(z, 1 / 20, 1 / 31, 2000, 1e-9)
    assert violation < 1e-9
    plan = (u[:, None] * z) * v[None, :]
    npt.assert_allclose(plan.sum(axis=1), 1 / 20, atol=1e-8)
    npt.assert_allclose(plan.sum(axis=0), 1 / 31, atol=1e-8)
    assert iterations <= 2000


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("1", "numba")])
def test_env_flag_selects_backend(flag, expected):
    if expected == "numba" and "numba" not in _kernels.IMPLEMENTATIONS:
        pytest.skip("numba unavailable")
    code = "from kgalign import _kernels; print(_kernels.active_backend())"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "KGALIGN_NUMBA": flag},
        check=True,
    )
    assert out.stdout.strip() == expected
