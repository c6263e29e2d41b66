"""Compare the compiled and pure-Python binning kernels.

Usage::

    python3 benchmarks/bench_kernels.py --rows 1000000 --threads 1 2 4

Each configuration is timed ``--repeats`` times and the best wall time is
reported together with rows/second and the speedup over the single-thread
run of the same backend. Outputs of every run are checked for bit equality
against the first one.
"""
import argparse
import os
import time

import numpy as np

from ehrprep.timeseries import kernels

HOUR = 3600


def make_batch(n_rows, n_samples, n_feat, seed):
    rng = np.random.default_rng(seed)
    window = 48 * HOUR
    pos = np.sort(rng.integers(0, n_samples, n_rows))
    offsets = np.searchsorted(pos, np.arange(n_samples + 1)).astype(np.int64)
    times = rng.integers(-HOUR, window + HOUR, n_rows).astype(np.int64)
    feats = rng.integers(0, n_feat, n_rows).astype(np.int64)
    values = rng.normal(size=n_rows)
    values[rng.random(n_rows) < 0.05] = np.nan
    return (offsets, times, feats, values, window, 2 * HOUR, 24, n_feat)


def best_of(fn, repeats):
    best, out = float("inf"), None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=1_000_000)
    parser.add_argument("--samples", type=int, default=20_000)
    parser.add_argument("--features", type=int, default=30)
    parser.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--aggregator", choices=sorted(kernels.AGG_CODES), default="mean")
    parser.add_argument("--skip-python", action="store_true", help="time the compiled backend only")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    batch = make_batch(args.rows, args.samples, args.features, args.seed)
    agg = kernels.AGG_CODES[args.aggregator]
    names = ["compiled"] + ([] if args.skip_python else ["python"])
    print(f"{args.rows} rows, {args.samples} samples, {args.features} features, 24 bins; "
          f"{os.cpu_count()} CPU(s) visible")
    print(f"{'backend':<10}{'threads':>8}{'seconds':>10}{'rows/s':>14}{'speedup':>9}")
    reference = None
    for name in names:
        try:
            backend = kernels.get_backend(name)
        except ImportError:
            print(f"{name:<10} unavailable")
            continue
        base = None
        for threads in args.threads:
            seconds, (grid, presence) = best_of(
                lambda: backend.bin_measurements(*batch, agg, kernels.IMPUTE_FFILL_MEAN, threads), args.repeats)
            if reference is None:
                reference = (grid.tobytes(), presence.tobytes())
            elif (grid.tobytes(), presence.tobytes()) != reference:
                raise SystemExit(f"{name} with {threads} thread(s) disagrees with the first run")
            base = base or seconds
            print(f"{name:<10}{threads:>8}{seconds:>10.3f}{args.rows / seconds:>14,.0f}{base / seconds:>8.2f}x")


if __name__ == "__main__":
    main()
