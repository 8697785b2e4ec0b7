"""Compiled inner loops for the streaming tag pipeline.

All kernels take time-sorted int64 (or float64 where noted) picosecond
arrays and run in a single pass.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def dead_time_mask(ts, dead_time, last):
    """Non-paralyzable dead time; ``last`` is the previous accepted tag (or a large negative)."""
    n = ts.size
    keep = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if ts[i] - last >= dead_time:
            keep[i] = True
            last = ts[i]
    return keep, last


@njit(cache=True)
def pair_adjacent(times, source, horizon):
    """Greedy time-ordered pairing of cross-source arrivals.

    ``times`` is sorted (float64), ``source`` is 0/1.  Scanning in time
    order, arrival i pairs with i+1 when they come from different sources
    within ``horizon`` and i+1 is not closer to an unpaired i+2 of the
    opposite source.  Returns index pairs into ``times`` (first, second).
    """
    n = times.size
    first = np.empty(n // 2 + 1, dtype=np.int64)
    second = np.empty(n // 2 + 1, dtype=np.int64)
    k = 0
    i = 0
    while i < n - 1:
        gap = times[i + 1] - times[i]
        if source[i] != source[i + 1] and gap <= horizon:
            if i + 2 < n and source[i + 2] != source[i + 1] and times[i + 2] - times[i + 1] < gap:
                i += 1
                continue
            first[k] = i
            second[k] = i + 1
            k += 1
            i += 2
        else:
            i += 1
    return first[:k], second[:k]


@njit(cache=True)
def twofold_count(a, b, lo, hi):
    """Number of pairs (i, j) with lo <= b[j] - a[i] <= hi (lo <= hi)."""
    nb = b.size
    start = 0
    end = 0
    total = 0
    for i in range(a.size):
        t_lo = a[i] + lo
        t_hi = a[i] + hi
        while start < nb and b[start] < t_lo:
            start += 1
        if end < start:
            end = start
        while end < nb and b[end] <= t_hi:
            end += 1
        total += end - start
    return total


@njit(cache=True)
def delay_histogram(a, b, lo, bin_width, n_bins):
    """Histogram of b[j] - a[i] over [lo, lo + n_bins * bin_width)."""
    counts = np.zeros(n_bins, dtype=np.int64)
    hi = lo + n_bins * bin_width
    nb = b.size
    start = 0
    for i in range(a.size):
        t_lo = a[i] + lo
        while start < nb and b[start] < t_lo:
            start += 1
        j = start
        while j < nb:
            d = b[j] - a[i]
            if d >= hi:
                break
            counts[(d - lo) // bin_width] += 1
            j += 1
    return counts


@njit(cache=True)
def isolated_pairs(times, window):
    """Indices (i, i+1) of clusters of exactly two events.

    Consecutive events closer than or equal to ``window`` chain into one
    cluster; only clusters of size two are returned.
    """
    n = times.size
    first = np.empty(n // 2 + 1, dtype=np.int64)
    k = 0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and times[j + 1] - times[j] <= window:
            j += 1
        if j == i + 1:
            first[k] = i
            k += 1
        i = j + 1
    return first[:k]


@njit(cache=True)
def nearest_distance(ref, tags, center):
    """For each reference time r, min |t - r - center| over ``tags`` (int64 max if empty)."""
    n = ref.size
    out = np.empty(n, dtype=np.int64)
    nt = tags.size
    j = 0
    big = np.iinfo(np.int64).max
    for i in range(n):
        target = ref[i] + center
        while j < nt and tags[j] < target:
            j += 1
        best = big
        if j < nt:
            best = tags[j] - target
        if j > 0:
            d = target - tags[j - 1]
            if d < best:
                best = d
        out[i] = best
    return out


@njit(cache=True)
def merge_sorted(a, b):
    """Merge two sorted arrays; returns (values, source 0/1, index within source)."""
    na, nb = a.size, b.size
    out = np.empty(na + nb, dtype=a.dtype)
    src = np.empty(na + nb, dtype=np.int8)
    idx = np.empty(na + nb, dtype=np.int64)
    i = 0
    j = 0
    for k in range(na + nb):
        if j >= nb or (i < na and a[i] <= b[j]):
            out[k] = a[i]
            src[k] = 0
            idx[k] = i
            i += 1
        else:
            out[k] = b[j]
            src[k] = 1
            idx[k] = j
            j += 1
    return out, src, idx


@njit(cache=True)
def has_neighbor_within(ts, width):
    """True where the previous or next element of sorted ``ts`` is within ``width``."""
    n = ts.size
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n - 1):
        if ts[i + 1] - ts[i] <= width:
            out[i] = True
            out[i + 1] = True
    return out


@njit(cache=True)
def merge_order(values, offsets):
    """Sorted order of the concatenation of sorted segments ``values[offsets[k]:offsets[k+1]]``."""
    k = offsets.size - 1
    heads = offsets[:-1].copy()
    n = values.size
    order = np.empty(n, dtype=np.int64)
    for out in range(n):
        best = -1
        for s in range(k):
            if heads[s] < offsets[s + 1]:
                if best < 0 or values[heads[s]] < values[heads[best]]:
                    best = s
        order[out] = heads[best]
        heads[best] += 1
    return order


@njit(cache=True)
def is_sorted(ts):
    for i in range(ts.size - 1):
        if ts[i + 1] < ts[i]:
            return False
    return True
