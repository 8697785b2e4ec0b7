from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import brute
from helpers import synthetic_dataset
from swapsim import _kernels
from swapsim.analysis import (
    CoincidenceWindow,
    estimate_offset,
    find_heralds,
    fourfold_coincidences,
    g2_histogram,
    roi_sweep,
    sweep_csv,
    twofold_coincidences,
)
from swapsim.engine.config import HUB_PORTS
from swapsim.errors import InvalidArgument, NoSignalError
from swapsim.polarization import BellKind

sorted_ints = st.lists(st.integers(0, 50_000), max_size=300).map(lambda x: np.array(sorted(x), np.int64))


@given(sorted_ints, sorted_ints, st.floats(-3000, 3000), st.floats(0.5, 4000))
@settings(max_examples=200, deadline=None)
def test_twofold_matches_brute_force(a, b, center, half_width):
    w = CoincidenceWindow(center, half_width)
    assert twofold_coincidences(a, b, w) == brute.twofold(a, b, center, half_width)


@given(sorted_ints, sorted_ints, st.integers(1, 500), st.integers(1, 5000))
@settings(max_examples=100, deadline=None)
def test_histogram_matches_brute_force(a, b, bin_width, range_ps):
    range_ps = max(range_ps, bin_width)
    h = g2_histogram(a, b, bin_width, range_ps)
    assert np.array_equal(h.counts, brute.delay_histogram(a, b, h.edges))


@given(st.lists(st.integers(0, 20_000), max_size=200), st.integers(0, 1500))
@settings(max_examples=200, deadline=None)
def test_herald_clusters_match_brute_force(raw, window):
    rng = np.random.default_rng(len(raw))
    det = rng.integers(0, 4, len(raw))
    streams = [np.unique(np.array([t for t, d in zip(raw, det) if d == k], np.int64)) for k in range(4)]
    got = find_heralds(streams, window)
    ref = brute.heralds(streams, window)
    assert list(got.time) == [t for t, _ in ref]
    assert [("psi+", "psi-")[k] for k in got.kind] == [k for _, k in ref]


@pytest.mark.parametrize("seed", range(12))
def test_fourfold_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    ds = synthetic_dataset(rng, n_max=2000, span=2 * 10**7)
    centers = {"S1": 850.5, "S2": -1320.0}
    for roi in (300.0, 1000.0, 2500.5):
        fc = fourfold_coincidences(ds, roi, centers=centers, bsm_window=1000)
        for kind in (BellKind.PSI_PLUS, BellKind.PSI_MINUS):
            ref = brute.fourfolds(ds, roi, centers, 1000, kind.value)
            assert [fc.get(kind, i) for i in range(len(ds.dwells))] == ref


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_roi_sweep_counts_are_monotone(seed):
    ds = synthetic_dataset(np.random.default_rng(seed), n_max=1500, span=10**7)
    centers = {"S1": 850.0, "S2": -1320.0}
    pts = roi_sweep(ds, [100, 400, 900, 2000, 5000], BellKind.PSI_MINUS, centers=centers)
    totals = [sum(p.counts) for p in pts]
    assert totals == sorted(totals)


def test_roi_list_validation():
    ds = synthetic_dataset(np.random.default_rng(0), n_max=500, span=10**6)
    for bad in ([], [0.0, 10.0], [500.0, 200.0], [100.0, 100.0]):
        with pytest.raises(InvalidArgument):
            roi_sweep(ds, bad, BellKind.PSI_MINUS, centers={"S1": 0.0, "S2": 0.0})


def test_missing_channel_is_named():
    ds = synthetic_dataset(np.random.default_rng(1), n_max=500, span=10**6)
    del ds.streams[ds.channel_map[HUB_PORTS[2]]]
    with pytest.raises(InvalidArgument, match=HUB_PORTS[2]):
        fourfold_coincidences(ds, 500.0, centers={"S1": 0.0, "S2": 0.0})


def test_sweep_csv_layout():
    ds = synthetic_dataset(np.random.default_rng(2), n_max=800, span=10**6)
    pts = roi_sweep(ds, [500.0, 1000.0], BellKind.PSI_MINUS, centers={"S1": 850.0, "S2": -1320.0})
    lines = sweep_csv(ds, pts, BellKind.PSI_MINUS).splitlines()
    assert lines[0] == "dwell_index,hwp1_deg,hwp2_deg,herald,roi_ps,counts,live_time_s,rate_hz"
    assert len(lines) == 1 + 2 * len(ds.dwells)


def test_estimate_offset_recovers_planted_delay():
    rng = np.random.default_rng(7)
    a = np.sort(rng.integers(0, 10**11, 200_000))
    keep = rng.random(a.size) < 0.3
    b = np.sort(np.concatenate([a[keep] + 12_345 + rng.laplace(0, 200, keep.sum()).astype(np.int64),
                                rng.integers(0, 10**11, 100_000)]))
    assert estimate_offset(a, b, 50_000, 50) == pytest.approx(12_350, abs=50)


def test_estimate_offset_without_signal():
    rng = np.random.default_rng(8)
    a = np.sort(rng.integers(0, 10**10, 20_000))
    b = np.sort(rng.integers(0, 10**10, 20_000))
    with pytest.raises(NoSignalError):
        estimate_offset(a, b, 50_000, 50)


def test_g2_histogram_normalization_and_empty_input():
    h = g2_histogram(np.array([], np.int64), np.array([1, 2], np.int64), 10, 100)
    assert not h.normalizable and h.counts.sum() == 0 and np.all(h.g2 == 0)
    rng = np.random.default_rng(9)
    a = np.sort(rng.integers(0, 10**11, 100_000))
    b = np.sort(rng.integers(0, 10**11, 100_000))
    g = g2_histogram(a, b, 1000, 50_000, duration=1e11)
    assert g.g2.mean() == pytest.approx(1.0, abs=0.02)


def test_unsorted_input_rejected():
    with pytest.raises(InvalidArgument):
        twofold_coincidences(np.array([3, 1]), np.array([1, 2]), CoincidenceWindow(0, 5))
    with pytest.raises(InvalidArgument):
        CoincidenceWindow(0.0, 0.0)


@given(sorted_ints, sorted_ints)
@settings(max_examples=50, deadline=None)
def test_merge_kernels(a, b):
    values, src, idx = _kernels.merge_sorted(a, b)
    assert np.array_equal(values, np.sort(np.concatenate([a, b]), kind="stable"))
    back = np.empty_like(values)
    back[src == 0] = a[idx[src == 0]]
    back[src == 1] = b[idx[src == 1]]
    assert np.array_equal(back, values)
    offsets = np.array([0, a.size, a.size + b.size], np.int64)
    order = _kernels.merge_order(np.concatenate([a, b]), offsets)
    assert np.array_equal(np.concatenate([a, b])[order], values)


@given(sorted_ints, st.integers(-2000, 2000))
@settings(max_examples=50, deadline=None)
def test_nearest_distance_kernel(tags, center):
    ref = np.arange(0, 50_000, 997, dtype=np.int64)
    got = _kernels.nearest_distance(ref, tags, np.int64(center))
    if tags.size == 0:
        assert np.all(got == np.iinfo(np.int64).max)
    else:
        expected = np.abs(tags[None, :] - ref[:, None] - center).min(axis=1)
        assert np.array_equal(got, expected)
