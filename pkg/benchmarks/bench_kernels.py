"""Time the numba kernels against their numpy fallbacks on tiny-preset shapes.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both implementations run in the same process (``kernels.implementations``),
so ``GENAD_NUMBA`` does not need to be set. Outputs are compared before timing.
"""

import argparse
import time

import numpy as np

from genad import kernels


def make_cases(rng):
    W, C, n_items, n_beams = 32, 2, 50, 16
    codes = rng.integers(0, W, size=(n_items, C))
    bids = rng.uniform(0, 5, n_items) * (rng.uniform(size=n_items) < 0.6)
    live = rng.uniform(size=(n_beams, n_items)) < 0.9
    prefixes = codes[rng.integers(0, n_items, n_beams)]
    A, G = 200, 16
    return {
        "nearest_codes": (rng.normal(size=(2000, 8)), rng.normal(size=(W, 8))),
        "residual_quantize": (rng.normal(size=(2000, 8)), rng.normal(size=(C, W, 8))),
        "prefix_bid_weights": (codes, bids, live, prefixes, 1, W, 1.2, 2.0, kernels.AGG_MAX),
        "weighted_log_softmax": (rng.normal(size=(n_beams * 8, W)),
                                 rng.uniform(0, 3, (n_beams * 8, W)) * (rng.uniform(size=(n_beams * 8, W)) < 0.5)),
        "misreport_alloc_probs": (rng.uniform(1, 5, (A, C)), rng.uniform(0.1, 2, (A, C)),
                                  rng.uniform(0, 3, (A, C)), rng.integers(0, 3, (A, C)),
                                  rng.uniform(0, 6, (A, G)), 1.2, 2.0, kernels.AGG_MAX,
                                  rng.uniform(0.5, 2, (A, C))),
        "gsp_prices": (np.sort(rng.uniform(0, 5, 5))[::-1].copy(), np.full(5, 0.1)),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=50)
    args = p.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = make_cases(np.random.default_rng(0))
    print(f"{'kernel':<24}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, call_args in cases.items():
        nb, ref = kernels.implementations(name)
        a, b = nb(*call_args), ref(*call_args)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
        t_nb = best_of(nb, call_args, args.repeat)     # first call above paid for compilation
        t_np = best_of(ref, call_args, args.repeat)
        print(f"{name:<24}{t_nb * 1e6:>12.1f}{t_np * 1e6:>12.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
