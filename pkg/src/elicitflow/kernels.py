"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``ELICITFLOW_BACKEND``
environment variable:

* ``"numba"`` -- require the jitted kernels, raise if numba is unavailable.
* ``"numpy"`` -- force the pure-numpy implementations.
* unset / ``"auto"`` -- use numba when importable, numpy otherwise.

Both variants of every kernel stay importable (``*_np`` / ``*_nb``) so the
test suite can check agreement and ``benchmarks/bench_kernels.py`` can time
them against each other.
"""

import os

import numpy as np

__all__ = [
    "BACKEND",
    "pairwise_dist",
    "pairwise_dist_bwd",
    "softmax_expectation_fwd",
    "softmax_expectation_bwd",
]


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def pairwise_dist_np(x, y):
    """Euclidean distance matrix D[i, j] = ||x_i - y_j|| for x[n,d], y[m,d]."""
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def pairwise_dist_bwd_np(g, x, y, d):
    """Backward of pairwise_dist; subgradient 0 where d == 0."""
    safe = np.where(d > 0.0, d, 1.0)
    w = np.where(d > 0.0, g / safe, 0.0)
    diff = x[:, None, :] - y[None, :, :]
    gx = np.einsum("ij,ijk->ik", w, diff)
    gy = -np.einsum("ij,ijk->jk", w, diff)
    return gx, gy


def softmax_expectation_fwd_np(logits, values, tau):
    """Tempered softmax over the last axis and its expectation of ``values``.

    Returns (weights[n, c], y[n]) with weights = softmax(logits / tau) and
    y = weights @ values.
    """
    a = logits / tau
    a = a - a.max(axis=1, keepdims=True)
    w = np.exp(a)
    w /= w.sum(axis=1, keepdims=True)
    return w, w @ values


def softmax_expectation_bwd_np(gy, w, values, y, tau):
    """Backward of softmax_expectation w.r.t. the logits."""
    return (gy / tau)[:, None] * w * (values[None, :] - y[:, None])


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def pairwise_dist_nb(x, y):
        n, d = x.shape
        m = y.shape[0]
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = x[i, k] - y[j, k]
                    acc += diff * diff
                out[i, j] = np.sqrt(acc)
        return out

    @njit(cache=True)
    def pairwise_dist_bwd_nb(g, x, y, d):
        n, dim = x.shape
        m = y.shape[0]
        gx = np.zeros((n, dim))
        gy = np.zeros((m, dim))
        for i in range(n):
            for j in range(m):
                dij = d[i, j]
                if dij > 0.0:
                    w = g[i, j] / dij
                    for k in range(dim):
                        diff = w * (x[i, k] - y[j, k])
                        gx[i, k] += diff
                        gy[j, k] -= diff
        return gx, gy

    @njit(cache=True)
    def softmax_expectation_fwd_nb(logits, values, tau):
        n, c = logits.shape
        w = np.empty((n, c))
        y = np.empty(n)
        for i in range(n):
            hi = logits[i, 0]
            for k in range(1, c):
                if logits[i, k] > hi:
                    hi = logits[i, k]
            total = 0.0
            for k in range(c):
                e = np.exp((logits[i, k] - hi) / tau)
                w[i, k] = e
                total += e
            acc = 0.0
            for k in range(c):
                w[i, k] /= total
                acc += w[i, k] * values[k]
            y[i] = acc
        return w, y

    @njit(cache=True)
    def softmax_expectation_bwd_nb(gy, w, values, y, tau):
        n, c = w.shape
        out = np.empty((n, c))
        for i in range(n):
            scale = gy[i] / tau
            for k in range(c):
                out[i, k] = scale * w[i, k] * (values[k] - y[i])
        return out

    return (
        pairwise_dist_nb,
        pairwise_dist_bwd_nb,
        softmax_expectation_fwd_nb,
        softmax_expectation_bwd_nb,
    )


def _select_backend():
    choice = os.environ.get("ELICITFLOW_BACKEND", "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"ELICITFLOW_BACKEND must be auto/numba/numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy", None
    try:
        kernels = _build_numba_kernels()
    except ImportError:
        if choice == "numba":
            raise
        return "numpy", None
    return "numba", kernels


BACKEND, _nb = _select_backend()

if BACKEND == "numba":
    (
        pairwise_dist,
        pairwise_dist_bwd,
        softmax_expectation_fwd,
        softmax_expectation_bwd,
    ) = _nb
else:
    pairwise_dist = pairwise_dist_np
    pairwise_dist_bwd = pairwise_dist_bwd_np
    softmax_expectation_fwd = softmax_expectation_fwd_np
    softmax_expectation_bwd = softmax_expectation_bwd_np
