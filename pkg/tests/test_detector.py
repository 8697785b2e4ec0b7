from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swapsim.detector import DetectorParams, StreamingDetector, TagStream, detect
from swapsim.errors import InvalidArgument


def _arrivals(rate_hz, duration_ps, seed):
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate_hz * duration_ps * 1e-12)
    return np.sort(rng.uniform(0, duration_ps, n))


def test_efficiency_thins_arrivals():
    a = _arrivals(1e6, 1e11, 0)
    out = detect(a, DetectorParams(efficiency=0.65), 0.0, 1e11, np.random.default_rng(1))
    assert len(out) / a.size == pytest.approx(0.65, abs=0.005)
    assert not out.dark.any()


def test_dark_counts_are_flagged_poisson():
    out = detect([], DetectorParams(dark_rate=1e4), 0.0, 1e12, np.random.default_rng(2))
    assert len(out) == pytest.approx(1e4, abs=5 * 100)
    assert out.dark.all()
    assert not out.blind().dark.any()


def test_jitter_is_gaussian():
    a = np.arange(1, 50_001, dtype=float) * 1e6
    out = detect(a, DetectorParams(jitter_sigma=50.0), 0.0, 6e10, np.random.default_rng(3))
    d = out.timestamps - a
    assert d.std() == pytest.approx(50.0, rel=0.03)
    assert abs(d.mean()) < 1.0


def test_dead_time_live_fraction():
    rate, tau = 2e6, 50_000.0
    a = _arrivals(rate, 1e11, 4)
    out = detect(a, DetectorParams(dead_time=tau), 0.0, 1e11, np.random.default_rng(5))
    assert np.diff(out.timestamps).min() >= tau
    expected = a.size / (1.0 + rate * tau * 1e-12)
    assert len(out) == pytest.approx(expected, rel=0.01)


def test_validation():
    with pytest.raises(InvalidArgument):
        DetectorParams(efficiency=1.5)
    with pytest.raises(InvalidArgument):
        DetectorParams(dead_time=-1.0)
    with pytest.raises(InvalidArgument):
        detect([3.0, 1.0], DetectorParams(), 0.0, 10.0, np.random.default_rng(0))


def test_tagstream_sequence_protocol():
    s = TagStream(7, np.array([1, 5, 9], np.int64), np.array([0, 1, 0], np.uint16))
    assert len(s) == 3 and s[1].timestamp == 5 and s[1].flags == 1 and s[1].channel == 7
    assert s[1:] == TagStream(7, np.array([5, 9], np.int64), np.array([1, 0], np.uint16))
    assert TagStream.concat([s[:1], s[1:]], 7) == s


@given(st.integers(0, 2**31), st.integers(1, 20))
@settings(max_examples=25, deadline=None)
def test_streaming_output_sorted_and_dead_time_respected(seed, n_chunks):
    p = DetectorParams(efficiency=0.8, jitter_sigma=300.0, dead_time=20_000.0, dark_rate=5e4)
    a = _arrivals(3e6, 1e9, seed)
    det = StreamingDetector(p, 0.0)
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, 1e9, n_chunks + 1)
    parts = []
    for lo, hi in zip(edges, edges[1:]):
        parts.append(det.push(a[(a >= lo) & (a < hi)], hi, rng))
    parts.append(det.flush(1e9, rng))
    ts = np.concatenate([x.timestamps for x in parts])
    assert np.all(np.diff(ts) >= p.dead_time)
