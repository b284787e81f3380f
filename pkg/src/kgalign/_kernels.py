"""Hot numeric kernels: pairwise L1 distances, hinge-loss gradients, Sinkhorn scaling.

Each kernel has two interchangeable implementations: a numba ``@njit`` version
and a pure-numpy fallback. The active backend is chosen once at import time
from the ``KGALIGN_NUMBA`` environment variable:

    KGALIGN_NUMBA=1     require numba (raise if it cannot be imported)
    KGALIGN_NUMBA=0     force the numpy fallback
    unset / "auto"      use numba when available, numpy otherwise

Both implementations of a kernel compute the same quantity; they may differ in
the last few ulps because floating-point summation order differs. Results are
bit-reproducible for a fixed backend. ``benchmarks/bench_kernels.py`` compares
the two paths.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "active_backend",
    "pairwise_l1",
    "hinge_loss_grad",
    "sinkhorn_scaling",
    "sinkhorn_log",
    "IMPLEMENTATIONS",
]


# --------------------------------------------------------------------------
# numpy fallback implementations
# --------------------------------------------------------------------------

# Cap on temporary-array size for the chunked numpy paths, in float64 elements.
_CHUNK_ELEMENTS = 4_000_000


def _pairwise_l1_numpy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """All-pairs L1 distances between rows of x (R,d) and rows of y (C,d)."""
    rows = x.shape[0]
    out = np.empty((rows, y.shape[0]), dtype=np.float64)
    step = max(1, _CHUNK_ELEMENTS // max(1, y.size))
    for lo in range(0, rows, step):
        hi = min(rows, lo + step)
        out[lo:hi] = np.abs(x[lo:hi, None, :] - y[None, :, :]).sum(axis=2)
    return out


def _hinge_loss_grad_numpy(h, pos_a, pos_b, term_a, term_b, owner, margin):
    """Margin loss and its subgradient w.r.t. the embedding rows.

    ``pos_a[p], pos_b[p]`` index the p-th positive pair in ``h``;
    ``term_a[t], term_b[t]`` index the t-th negative pair, owned by positive
    ``owner[t]``. Returns (loss, grad over h, active-term count per positive).
    The hinge subgradient at an exact kink is 0 (sign(0) == 0).
    """
    diff_pos = h[pos_a] - h[pos_b]
    pos_dist = np.abs(diff_pos).sum(axis=1)
    grad = np.zeros_like(h)
    active = np.zeros(pos_a.shape[0], dtype=np.int64)
    loss = 0.0
    step = max(1, _CHUNK_ELEMENTS // max(1, h.shape[1]))
    for lo in range(0, term_a.shape[0], step):
        hi = min(term_a.shape[0], lo + step)
        da = h[term_a[lo:hi]] - h[term_b[lo:hi]]
        neg_dist = np.abs(da).sum(axis=1)
        viol = pos_dist[owner[lo:hi]] - neg_dist + margin
        act = viol > 0.0
        loss += float(viol[act].sum())
        np.add.at(active, owner[lo:hi][act], 1)
        sgn = np.sign(da[act])
        np.add.at(grad, term_a[lo:hi][act], -sgn)
        np.add.at(grad, term_b[lo:hi][act], sgn)
    weights = active.astype(np.float64)[:, None]
    sgn_pos = np.sign(diff_pos)
    np.add.at(grad, pos_a, weights * sgn_pos)
    np.add.at(grad, pos_b, -weights * sgn_pos)
    return loss, grad, active


def _sinkhorn_scaling_numpy(z, row_mass, col_mass, max_iter, tol, check_every):
    """Alternate row/column scalings of the kernel z until the coupling
    diag(u) z diag(v) meets both marginals within tol.

    Returns (u, v, iterations, max marginal violation).
    """
    v = np.ones(z.shape[1], dtype=np.float64)
    u = np.ones(z.shape[0], dtype=np.float64)
    violation = np.inf
    iterations = 0
    for it in range(1, max_iter + 1):
        u = row_mass / (z @ v)
        v = col_mass / (z.T @ u)
        iterations = it
        if it % check_every == 0 or it == max_iter:
            row_sums = u * (z @ v)
            col_sums = v * (z.T @ u)
            violation = max(
                float(np.max(np.abs(row_sums - row_mass))),
                float(np.max(np.abs(col_sums - col_mass))),
            )
            if violation < tol:
                break
    return u, v, iterations, violation


def _sinkhorn_log_numpy(log_kernel, log_row_mass, log_col_mass, max_iter, tol, check_every):
    """Log-domain Sinkhorn updates for kernels whose linear form would
    underflow. Returns (log_u, log_v, iterations, max marginal violation)."""
    from scipy.special import logsumexp

    rows, cols = log_kernel.shape
    log_u = np.zeros(rows, dtype=np.float64)
    log_v = np.zeros(cols, dtype=np.float64)
    row_mass = np.exp(log_row_mass)
    col_mass = np.exp(log_col_mass)
    violation = np.inf
    iterations = 0
    for it in range(1, max_iter + 1):
        log_u = log_row_mass - logsumexp(log_kernel + log_v[None, :], axis=1)
        log_v = log_col_mass - logsumexp(log_kernel + log_u[:, None], axis=0)
        iterations = it
        if it % check_every == 0 or it == max_iter:
            plan = np.exp(log_kernel + log_u[:, None] + log_v[None, :])
            violation = max(
                float(np.max(np.abs(plan.sum(axis=1) - row_mass))),
                float(np.max(np.abs(plan.sum(axis=0) - col_mass))),
            )
            if violation < tol:
                break
    return log_u, log_v, iterations, violation


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------


def _build_numba_impls():
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def pairwise_l1_nb(x, y):  # pragma: no cover - exercised via dispatch
        rows, dim = x.shape
        cols = y.shape[0]
        out = np.empty((rows, cols), dtype=np.float64)
        for i in prange(rows):
            for j in range(cols):
                acc = 0.0
                for k in range(dim):
                    acc += abs(x[i, k] - y[j, k])
                out[i, j] = acc
        return out

    @njit(cache=True)
    def hinge_loss_grad_nb(h, pos_a, pos_b, term_a, term_b, owner, margin):  # pragma: no cover
        n_pos = pos_a.shape[0]
        dim = h.shape[1]
        pos_dist = np.empty(n_pos, dtype=np.float64)
        for p in range(n_pos):
            acc = 0.0
            for k in range(dim):
                acc += abs(h[pos_a[p], k] - h[pos_b[p], k])
            pos_dist[p] = acc
        grad = np.zeros(h.shape, dtype=np.float64)
        active = np.zeros(n_pos, dtype=np.int64)
        loss = 0.0
        for t in range(term_a.shape[0]):
            a = term_a[t]
            b = term_b[t]
            neg_dist = 0.0
            for k in range(dim):
                neg_dist += abs(h[a, k] - h[b, k])
            viol = pos_dist[owner[t]] - neg_dist + margin
            if viol > 0.0:
                loss += viol
                active[owner[t]] += 1
                for k in range(dim):
                    diff = h[a, k] - h[b, k]
                    if diff > 0.0:
                        grad[a, k] -= 1.0
                        grad[b, k] += 1.0
                    elif diff < 0.0:
                        grad[a, k] += 1.0
                        grad[b, k] -= 1.0
        for p in range(n_pos):
            w = float(active[p])
            if w > 0.0:
                i = pos_a[p]
                j = pos_b[p]
                for k in range(dim):
                    diff = h[i, k] - h[j, k]
                    if diff > 0.0:
                        grad[i, k] += w
                        grad[j, k] -= w
                    elif diff < 0.0:
                        grad[i, k] -= w
                        grad[j, k] += w
        return loss, grad, active

    @njit(cache=True)
    def sinkhorn_log_nb(log_kernel, log_row_mass, log_col_mass, max_iter, tol, check_every):  # pragma: no cover
        rows, cols = log_kernel.shape
        log_u = np.zeros(rows, dtype=np.float64)
        log_v = np.zeros(cols, dtype=np.float64)
        row_mass = np.exp(log_row_mass)
        col_mass = np.exp(log_col_mass)
        violation = np.inf
        iterations = 0
        for it in range(1, max_iter + 1):
            for i in range(rows):
                peak = -np.inf
                for j in range(cols):
                    x = log_kernel[i, j] + log_v[j]
                    if x > peak:
                        peak = x
                acc = 0.0
                for j in range(cols):
                    acc += np.exp(log_kernel[i, j] + log_v[j] - peak)
                log_u[i] = log_row_mass - (peak + np.log(acc))
            for j in range(cols):
                peak = -np.inf
                for i in range(rows):
                    x = log_kernel[i, j] + log_u[i]
                    if x > peak:
                        peak = x
                acc = 0.0
                for i in range(rows):
                    acc += np.exp(log_kernel[i, j] + log_u[i] - peak)
                log_v[j] = log_col_mass - (peak + np.log(acc))
            iterations = it
            if it % check_every == 0 or it == max_iter:
                violation = 0.0
                for i in range(rows):
                    acc = 0.0
                    for j in range(cols):
                        acc += np.exp(log_kernel[i, j] + log_u[i] + log_v[j])
                    err = abs(acc - row_mass)
                    if err > violation:
                        violation = err
                for j in range(cols):
                    acc = 0.0
                    for i in range(rows):
                        acc += np.exp(log_kernel[i, j] + log_u[i] + log_v[j])
                    err = abs(acc - col_mass)
                    if err > violation:
                        violation = err
                if violation < tol:
                    break
        return log_u, log_v, iterations, violation

    @njit(cache=True)
    def sinkhorn_scaling_nb(z, row_mass, col_mass, max_iter, tol, check_every):  # pragma: no cover
        rows, cols = z.shape
        u = np.ones(rows, dtype=np.float64)
        v = np.ones(cols, dtype=np.float64)
        zv = np.empty(rows, dtype=np.float64)
        zu = np.empty(cols, dtype=np.float64)
        violation = np.inf
        iterations = 0
        for it in range(1, max_iter + 1):
            for i in range(rows):
                acc = 0.0
                for j in range(cols):
                    acc += z[i, j] * v[j]
                zv[i] = acc
                u[i] = row_mass / acc
            for j in range(cols):
                acc = 0.0
                for i in range(rows):
                    acc += z[i, j] * u[i]
                zu[j] = acc
                v[j] = col_mass / acc
            iterations = it
            if it % check_every == 0 or it == max_iter:
                violation = 0.0
                for i in range(rows):
                    acc = 0.0
                    for j in range(cols):
                        acc += z[i, j] * v[j]
                    err = abs(u[i] * acc - row_mass)
                    if err > violation:
                        violation = err
                for j in range(cols):
                    acc = 0.0
                    for i in range(rows):
                        acc += z[i, j] * u[i]
                    err = abs(v[j] * acc - col_mass)
                    if err > violation:
                        violation = err
                if violation < tol:
                    break
        return u, v, iterations, violation

    return {
        "pairwise_l1": pairwise_l1_nb,
        "hinge_loss_grad": hinge_loss_grad_nb,
        "sinkhorn_scaling": sinkhorn_scaling_nb,
        "sinkhorn_log": sinkhorn_log_nb,
    }


# --------------------------------------------------------------------------
# backend selection
# --------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "numpy": {
        "pairwise_l1": _pairwise_l1_numpy,
        "hinge_loss_grad": _hinge_loss_grad_numpy,
        "sinkhorn_scaling": _sinkhorn_scaling_numpy,
        "sinkhorn_log": _sinkhorn_log_numpy,
    }
}


def _select_backend() -> str:
    flag = os.environ.get("KGALIGN_NUMBA", "auto").strip().lower()
    if flag in ("0", "false", "off", "numpy"):
        return "numpy"
    try:
        IMPLEMENTATIONS.setdefault("numba", _build_numba_impls())
        return "numba"
    except ImportError:
        if flag in ("1", "true", "on", "numba"):
            raise RuntimeError(
                "KGALIGN_NUMBA requested the numba backend but numba is not importable"
            )
        return "numpy"


_BACKEND = _select_backend()
_ACTIVE = IMPLEMENTATIONS[_BACKEND]


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _BACKEND


def pairwise_l1(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """L1 distance matrix (R,C) between rows of x (R,d) and y (C,d)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError("pairwise_l1 expects 2-d inputs with matching width")
    return _ACTIVE["pairwise_l1"](x, y)


def hinge_loss_grad(h, pos_a, pos_b, term_a, term_b, owner, margin):
    """Hinge loss over positive/negative pairs and its subgradient w.r.t. h."""
    h = np.ascontiguousarray(h, dtype=np.float64)
    pos_a = np.ascontiguousarray(pos_a, dtype=np.int64)
    pos_b = np.ascontiguousarray(pos_b, dtype=np.int64)
    term_a = np.ascontiguousarray(term_a, dtype=np.int64)
    term_b = np.ascontiguousarray(term_b, dtype=np.int64)
    owner = np.ascontiguousarray(owner, dtype=np.int64)
    return _ACTIVE["hinge_loss_grad"](h, pos_a, pos_b, term_a, term_b, owner, float(margin))


def sinkhorn_scaling(z, row_mass, col_mass, max_iter, tol, check_every=10):
    """Run alternating Sinkhorn scalings on the kernel matrix z."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    return _ACTIVE["sinkhorn_scaling"](
        z, float(row_mass), float(col_mass), int(max_iter), float(tol), int(check_every)
    )


def sinkhorn_log(log_kernel, log_row_mass, log_col_mass, max_iter, tol, check_every=10):
    """Log-domain Sinkhorn updates on the log kernel matrix."""
    log_kernel = np.ascontiguousarray(log_kernel, dtype=np.float64)
    return _ACTIVE["sinkhorn_log"](
        log_kernel,
        float(log_row_mass),
        float(log_col_mass),
        int(max_iter),
        float(tol),
        int(check_every),
    )
