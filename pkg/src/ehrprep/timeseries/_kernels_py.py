"""Pure NumPy fallback for the compiled kernels in ``_kernels.pyx``.

Floating-point operations are ordered exactly as in the compiled loops so
the two backends agree bit for bit.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

AGG_MEAN, AGG_LAST, AGG_MAX = 0, 1, 2
IMPUTE_RAW, IMPUTE_ZERO, IMPUTE_FFILL_MEAN = -1, 0, 1


def _impute_inplace(grid, mode):
    if mode == IMPUTE_RAW:
        return grid
    observed = ~np.isnan(grid)
    if mode == IMPUTE_ZERO:
        grid[~observed] = 0.0
        return grid
    n_samples, n_bins, n_feat = grid.shape
    acc = np.zeros((n_samples, n_feat))
    n_obs = np.zeros((n_samples, n_feat), dtype=np.int64)
    for b in range(n_bins):
        acc += np.where(observed[:, b], grid[:, b], 0.0)
        n_obs += observed[:, b]
    has_obs = n_obs > 0
    carry = np.divide(acc, n_obs, out=np.zeros_like(acc), where=has_obs)
    for b in range(n_bins):
        carry = np.where(observed[:, b], grid[:, b], carry)
        grid[:, b] = carry
    grid[~np.broadcast_to(has_obs[:, None, :], grid.shape)] = 0.0
    return grid


def _bin_chunk(offsets, times, feats, values, window_seconds, res_seconds, n_bins, n_feat, agg, impute):
    n_samples = len(offsets) - 1
    lo, hi = offsets[0], offsets[-1]
    times, feats, values = times[lo:hi], feats[lo:hi], values[lo:hi]
    sample = np.repeat(np.arange(n_samples), np.diff(offsets))
    keep = (times >= 0) & (times <= window_seconds)
    sample, times, feats, values = sample[keep], times[keep], feats[keep], values[keep]
    k = np.minimum(times // res_seconds, n_bins - 1)
    flat = (sample * n_bins + k) * n_feat + feats
    size = n_samples * n_bins * n_feat

    presence = np.zeros(size, dtype=np.uint8)
    presence[flat] = 1

    valued = ~np.isnan(values)
    flat_v, values_v, times_v = flat[valued], values[valued], times[valued]
    counts = np.bincount(flat_v, minlength=size)
    if agg == AGG_MEAN:
        grid = np.bincount(flat_v, weights=values_v, minlength=size).astype(np.float64)
        np.divide(grid, counts, out=grid, where=counts > 0)
    elif agg == AGG_MAX:
        grid = np.full(size, -np.inf)
        np.maximum.at(grid, flat_v, values_v)
    else:
        # latest time wins; equal times resolve to the later input row
        order = np.lexsort((np.arange(len(flat_v)), times_v, flat_v))
        flat_sorted = flat_v[order]
        is_last = np.ones(len(order), dtype=bool)
        is_last[:-1] = flat_sorted[1:] != flat_sorted[:-1]
        grid = np.zeros(size)
        grid[flat_sorted[is_last]] = values_v[order][is_last]
    grid[counts == 0] = np.nan
    grid = grid.reshape(n_samples, n_bins, n_feat)
    return _impute_inplace(grid, impute), presence.reshape(n_samples, n_bins, n_feat)


def _chunks(n_samples, n_threads):
    n_chunks = max(1, min(n_threads, n_samples))
    edges = np.linspace(0, n_samples, n_chunks + 1).astype(np.int64)
    return [(edges[i], edges[i + 1]) for i in range(n_chunks)]


def bin_measurements(offsets, times, feats, values, window_seconds, res_seconds,
                     n_bins, n_feat, agg, impute, n_threads=1):
    offsets = np.asarray(offsets, dtype=np.int64)
    times = np.asarray(times, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    n_samples = len(offsets) - 1
    if n_samples == 0:
        return np.zeros((0, n_bins, n_feat)), np.zeros((0, n_bins, n_feat), dtype=np.uint8)
    args = (times, feats, values, window_seconds, res_seconds, n_bins, n_feat, agg, impute)
    if n_threads <= 1:
        return _bin_chunk(offsets, *args)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        parts = list(pool.map(lambda c: _bin_chunk(offsets[c[0]:c[1] + 1], *args), _chunks(n_samples, n_threads)))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def impute_grid(raw, mode, n_threads=1):
    return _impute_inplace(np.array(raw, dtype=np.float64, copy=True), mode)
