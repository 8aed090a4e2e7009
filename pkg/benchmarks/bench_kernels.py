"""Time the jitted kernels against their pure-numpy fallbacks.

Runs both backends regardless of ELICITFLOW_BACKEND and reports per-call
milliseconds plus the speedup, after checking that the two implementations
agree on the benchmark inputs.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from elicitflow.kernels import (
    _build_numba_kernels,
    pairwise_dist_bwd_np,
    pairwise_dist_np,
    softmax_expectation_bwd_np,
    softmax_expectation_fwd_np,
)


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20, help="timing repeats, best-of")
    args = ap.parse_args()

    try:
        nb = _build_numba_kernels()
    except ImportError:
        raise SystemExit("numba is not installed; nothing to compare against")
    pd_nb, pd_bwd_nb, se_fwd_nb, se_bwd_nb = nb

    rng = np.random.default_rng(0)
    rows = []

    # pairwise distances at the training batch geometries: B statistic
    # vectors against themselves (within-batch term) and the expert vector
    for n, m, d in [(32, 32, 5), (128, 128, 5), (512, 512, 16)]:
        x = rng.normal(size=(n, d))
        y = rng.normal(size=(m, d))
        dist = pairwise_dist_np(x, y)
        assert np.max(np.abs(dist - pd_nb(x, y))) < 1e-12
        g = rng.normal(size=(n, m))
        gx_np, gy_np = pairwise_dist_bwd_np(g, x, y, dist)
        gx_nb, gy_nb = pd_bwd_nb(g, x, y, dist)
        assert np.max(np.abs(gx_np - gx_nb)) < 1e-12
        assert np.max(np.abs(gy_np - gy_nb)) < 1e-12
        t_np = timeit(lambda: pairwise_dist_bwd_np(g, x, y, pairwise_dist_np(x, y)), args.repeats)
        t_nb = timeit(lambda: pd_bwd_nb(g, x, y, pd_nb(x, y)), args.repeats)
        rows.append((f"pairwise_dist fwd+bwd {n}x{m}x{d}", t_np, t_nb))

    # softmax-expectation readout at the relaxed-count geometries:
    # B*S rows over total_count+1 categories
    for n, c in [(3200, 31), (25600, 31)]:
        logits = rng.normal(size=(n, c)) * 3.0
        values = np.arange(c, dtype=np.float64)
        tau = 0.05
        w_np, y_np = softmax_expectation_fwd_np(logits, values, tau)
        w_nb, y_nb = se_fwd_nb(logits, values, tau)
        assert np.max(np.abs(y_np - y_nb)) < 1e-9
        gy = rng.normal(size=n)
        g_np = softmax_expectation_bwd_np(gy, w_np, values, y_np, tau)
        g_nb = se_bwd_nb(gy, w_nb, values, y_nb, tau)
        assert np.max(np.abs(g_np - g_nb)) < 1e-9
        t_np = timeit(
            lambda: softmax_expectation_bwd_np(
                gy, *_fwd_keep(softmax_expectation_fwd_np, logits, values, tau), tau
            ),
            args.repeats,
        )
        t_nb = timeit(
            lambda: se_bwd_nb(gy, *_fwd_keep(se_fwd_nb, logits, values, tau), tau),
            args.repeats,
        )
        rows.append((f"softmax_expectation fwd+bwd {n}x{c}", t_np, t_nb))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(width)}  numpy ms  numba ms  speedup")
    for name, t_np, t_nb in rows:
        print(f"{name.ljust(width)}  {t_np:8.3f}  {t_nb:8.3f}  {t_np / t_nb:6.2f}x")


def _fwd_keep(fwd, logits, values, tau):
    w, y = fwd(logits, values, tau)
    return w, values, y


if __name__ == "__main__":
    main()
