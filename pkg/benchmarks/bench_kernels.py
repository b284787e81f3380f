"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each hot kernel on pipeline-scale inputs under both backends and prints
a timing table. JIT compilation happens in an untimed warmup pass.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from kgalign._kernels import IMPLEMENTATIONS


def _hinge_instance(rng, n=1000, d=300, n_pos=256, k=125):
    h = rng.normal(size=(n, d))
    pos_a = rng.integers(0, n // 2, size=n_pos)
    pos_b = rng.integers(n // 2, n, size=n_pos)
    terms = n_pos * k
    term_a = rng.integers(0, n // 2, size=terms)
    term_b = rng.integers(n // 2, n, size=terms)
    owner = np.repeat(np.arange(n_pos), k)
    return (
        h,
        pos_a.astype(np.int64),
        pos_b.astype(np.int64),
        term_a.astype(np.int64),
        term_b.astype(np.int64),
        owner.astype(np.int64),
        1.0,
    )


def build_cases(rng):
    x = rng.normal(size=(500, 300))
    y = rng.normal(size=(500, 300))
    z = np.exp(-rng.uniform(0, 5, size=(350, 350)))
    log_kernel = -rng.uniform(0, 900, size=(80, 80))
    return {
        "pairwise_l1 (500x500x300)": ("pairwise_l1", (x, y)),
        "hinge_loss_grad (256 pos x 125 neg, d=300)": (
            "hinge_loss_grad",
            _hinge_instance(rng),
        ),
        "sinkhorn_scaling (350x350, 500 iters)": (
            "sinkhorn_scaling",
            (z, 1 / 350, 1 / 350, 500, 0.0, 10),
        ),
        # small instances are loop-overhead bound, the regime of the
        # randomized transport test families
        "sinkhorn_scaling (12x12, 50k iters)": (
            "sinkhorn_scaling",
            (np.exp(-rng.uniform(0, 5, size=(12, 12))), 1 / 12, 1 / 12, 50000, 0.0, 10),
        ),
        "sinkhorn_log (80x80, 500 iters)": (
            "sinkhorn_log",
            (log_kernel, np.log(1 / 80), np.log(1 / 80), 500, 0.0, 10),
        ),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = build_cases(rng)
    backends = list(IMPLEMENTATIONS)
    if "numba" not in backends:
        print("numba backend unavailable; benchmarking numpy only")

    print(f"{'kernel':<45} " + " ".join(f"{b:>12}" for b in backends) + "    speedup")
    for label, (name, instance) in cases.items():
        times = {}
        for backend in backends:
            impl = IMPLEMENTATIONS[backend][name]
            impl(*instance)  # warmup / JIT compile
            best = np.inf
            for _ in range(args.repeats):
                start = time.perf_counter()
                impl(*instance)
                best = min(best, time.perf_counter() - start)
            times[backend] = best
        row = " ".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if "numba" in times and times["numba"] > 0:
            row += f"    {times['numpy'] / times['numba']:>6.1f}x"
        print(f"{label:<45} {row}")


if __name__ == "__main__":
    main()
