"""Time-tag analytics: offsets, cross-correlation histograms, two- and fourfold counting.

All routines take time-sorted int64 picosecond streams and run in single
passes (sliding windows); the brute-force equivalents used for testing live
in the test suite.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bsm import HERALD_MAP, Detector
from .detector import TagStream
from .engine.config import HUB_PORTS
from .errors import InvalidArgument, NoSignalError
from .polarization import BellKind

DEFAULT_BSM_WINDOW = 1000.0  # ps
OFFSET_SEARCH_RANGE = 200_000_000.0  # ps
OFFSET_PAIR_BUDGET = 50_000_000
CSV_COLUMNS = ("dwell_index", "hwp1_deg", "hwp2_deg", "herald", "roi_ps", "counts", "live_time_s", "rate_hz")


def _times(x) -> np.ndarray:
    t = x.timestamps if isinstance(x, TagStream) else np.asarray(x)
    t = np.ascontiguousarray(t, dtype=np.int64)
    if not _kernels.is_sorted(t):
        raise InvalidArgument("tag timestamps must be sorted")
    return t


@dataclass(frozen=True)
class CoincidenceWindow:
    center: float  # ps, expected (tB - tA)
    half_width: float  # ps

    def __post_init__(self):
        if not self.half_width > 0:
            raise InvalidArgument(f"half_width must be > 0, got {self.half_width}")

    @property
    def bounds(self) -> tuple[int, int]:
        """Inclusive integer bounds on tB - tA."""
        return math.ceil(self.center - self.half_width), math.floor(self.center + self.half_width)


def twofold_coincidences(a, b, window: CoincidenceWindow) -> int:
    """Number of tag pairs with tB - tA inside the window (all pairs counted)."""
    lo, hi = window.bounds
    if hi < lo:
        return 0
    return int(_kernels.twofold_count(_times(a), _times(b), np.int64(lo), np.int64(hi)))


@dataclass(frozen=True)
class G2Histogram:
    bin_width: float
    range: float
    edges: np.ndarray  # n_bins + 1, ps; bin i covers [edges[i], edges[i+1])
    counts: np.ndarray
    n_a: int
    n_b: int
    duration: float  # ps

    @property
    def normalizable(self) -> bool:
        return self.n_a > 0 and self.n_b > 0 and self.duration > 0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def rate_a(self) -> float:
        return self.n_a / (self.duration * 1e-12) if self.normalizable else 0.0

    @property
    def rate_b(self) -> float:
        return self.n_b / (self.duration * 1e-12) if self.normalizable else 0.0

    @property
    def g2(self) -> np.ndarray:
        """counts / (rate_a * rate_b * bin * duration); zeros when not normalizable."""
        if not self.normalizable:
            return np.zeros(self.counts.size)
        expected = self.n_a * self.n_b * self.bin_width / self.duration
        return self.counts / expected


def g2_histogram(a, b, bin_width: float, range_ps: float, duration: float | None = None) -> G2Histogram:
    """Histogram of tB - tA over [-range, range) in integer-ps bins.

    ``duration`` (ps) defaults to the span covered by both streams.
    """
    if not bin_width > 0:
        raise InvalidArgument(f"bin must be > 0, got {bin_width}")
    if range_ps < bin_width:
        raise InvalidArgument("range must be >= bin")
    bw = int(round(bin_width))
    n_bins = int(math.ceil(2 * range_ps / bw))
    lo = -int(n_bins * bw // 2)
    edges = lo + bw * np.arange(n_bins + 1, dtype=np.int64)
    ta, tb = _times(a), _times(b)
    if ta.size == 0 or tb.size == 0:
        return G2Histogram(float(bw), float(range_ps), edges, np.zeros(n_bins, np.int64), int(ta.size),
                           int(tb.size), 0.0)
    counts = _kernels.delay_histogram(ta, tb, np.int64(lo), np.int64(bw), np.int64(n_bins))
    if duration is None:
        duration = float(max(ta[-1], tb[-1]) - min(ta[0], tb[0]))
    return G2Histogram(float(bw), float(range_ps), edges, counts, int(ta.size), int(tb.size), float(duration))


def estimate_offset(a, b, search_range: float, bin_width: float, smooth_bins: int = 5) -> float:
    """Delay tB - tA at which the cross-correlation peaks, to bin resolution.

    The histogram is box-smoothed over ``2 * smooth_bins + 1`` bins to
    locate the peak, which is then refined by iterating the
    background-subtracted centroid over the same span (mean shift) and
    rounded to a multiple of the bin width.  Raises :class:`NoSignalError`
    unless the highest bin exceeds the median floor by five standard
    deviations.
    """
    ta, tb = _times(a), _times(b)
    if ta.size == 0 or tb.size == 0:
        raise InvalidArgument("estimate_offset needs two non-empty streams")
    h = g2_histogram(ta, tb, bin_width, search_range)
    c = h.counts.astype(float)
    floor = float(np.median(c))
    if c.max() < floor + 5.0 * math.sqrt(max(floor, 1.0)):
        raise NoSignalError("no correlation peak above the background floor")
    k = max(int(smooth_bins), 0)
    excess = np.clip(c - floor, 0.0, None)
    smooth = np.convolve(excess, np.ones(2 * k + 1), mode="same")
    centers = h.centers
    pos = float(centers[int(np.argmax(smooth))])
    for _ in range(50):
        m = int(np.clip(np.searchsorted(centers, pos), 0, c.size - 1))
        lo, hi = max(m - k - 1, 0), min(m + k + 2, c.size)
        sel = np.abs(centers[lo:hi] - pos) <= (k + 0.5) * h.bin_width
        w = excess[lo:hi][sel]
        if w.sum() <= 0:
            break
        new = float(np.sum(w * centers[lo:hi][sel]) / w.sum())
        if abs(new - pos) < 1e-6 * h.bin_width:
            pos = new
            break
        pos = new
    return float(np.rint(pos / h.bin_width) * h.bin_width)


# --- heralds and fourfolds -------------------------------------------------

@dataclass(frozen=True)
class Heralds:
    """Two-click BSM events; ``time`` is the earlier click (hub clock)."""

    time: np.ndarray  # int64
    kind: np.ndarray  # int8: index into HERALD_KINDS

    def of(self, herald: BellKind) -> np.ndarray:
        return self.time[self.kind == HERALD_KINDS.index(herald)]


HERALD_KINDS = (BellKind.PSI_PLUS, BellKind.PSI_MINUS)


def _hub_streams(dataset) -> list[TagStream]:
    streams = []
    for port in HUB_PORTS:
        ch = dataset.channel_map.get(port)
        if ch is None or ch not in dataset.streams:
            raise InvalidArgument(f"dataset has no channel for {port}")
        streams.append(dataset.streams[ch])
    return streams


def find_heralds(streams: Sequence[TagStream], bsm_window: float = DEFAULT_BSM_WINDOW) -> Heralds:
    """Heralds from the four hub detector streams (ordered as ``Detector``).

    Clicks are grouped into clusters whose neighbouring gaps are at most
    ``bsm_window``; only clusters of exactly two clicks on a heralding
    detector pair count.
    """
    if len(streams) != 4:
        raise InvalidArgument("need the four BSM detector streams")
    parts = [_times(s) for s in streams]
    offsets = np.cumsum([0] + [p.size for p in parts]).astype(np.int64)
    values = np.concatenate(parts)
    order = _kernels.merge_order(values, offsets)
    times = values[order]
    det = np.searchsorted(offsets, order, side="right") - 1
    first = _kernels.isolated_pairs(times, np.int64(math.floor(bsm_window)))
    lookup = np.full((4, 4), -1, np.int8)
    for pattern, kind in HERALD_MAP.items():
        m, n = sorted(int(d) for d in pattern)
        lookup[m, n] = lookup[n, m] = HERALD_KINDS.index(kind)
    kind = lookup[det[first], det[first + 1]]
    ok = kind >= 0
    return Heralds(times[first][ok], kind[ok])


@dataclass
class FourfoldCount:
    """Fourfold counts keyed by (herald kind, dwell index)."""

    counts: dict = field(default_factory=dict)
    live_time: dict = field(default_factory=dict)  # dwell index -> s

    def get(self, herald: BellKind, dwell: int) -> int:
        return int(self.counts.get((herald, dwell), 0))

    def total(self, herald: BellKind) -> int:
        return int(sum(v for (h, _), v in self.counts.items() if h is herald))


def _dwell_of(dataset, times: np.ndarray) -> np.ndarray:
    """Dwell index of hub-clock times, -1 outside every dwell."""
    starts = np.array([d.frames["hub"][0] for d in dataset.dwells], np.int64)
    ends = np.array([d.frames["hub"][1] for d in dataset.dwells], np.int64)
    idx = np.searchsorted(starts, times, side="right") - 1
    ok = idx >= 0
    ok[ok] &= times[ok] < ends[idx[ok]]
    return np.where(ok, idx, -1)


def window_centers(dataset, bin_width: float = 50.0, search_range: float = OFFSET_SEARCH_RANGE) -> dict[str, float]:
    """Spoke-minus-hub delay of each spoke's correlation peak, recovered from the data."""
    hub = _hub_streams(dataset)
    parts = [_times(x) for x in hub]
    offsets = np.cumsum([0] + [p.size for p in parts]).astype(np.int64)
    values = np.concatenate(parts)
    h = values[_kernels.merge_order(values, offsets)]
    out = {}
    for label in dataset.spoke_labels:
        s = _times(dataset.stream(label))
        ref = h
        if ref.size and s.size:
            span = float(max(ref[-1], s[-1]) - min(ref[0], s[0])) or 1.0
            expected_pairs = ref.size * s.size * 2.0 * search_range / span
            if expected_pairs > OFFSET_PAIR_BUDGET:
                # Dense data: a leading slice of hub tags carries enough signal.
                ref = ref[: max(int(ref.size * OFFSET_PAIR_BUDGET / expected_pairs), 1000)]
        out[label] = estimate_offset(ref, s, search_range, bin_width)
    return out


def _spoke_distances(dataset, heralds: np.ndarray, centers: dict[str, float]) -> list[np.ndarray]:
    out = []
    for label in dataset.spoke_labels[:2]:
        s = _times(dataset.stream(label))
        if s.size == 0 or heralds.size == 0:
            out.append(np.full(heralds.size, np.iinfo(np.int64).max))
            continue
        c = float(centers[label])
        # Half-integer centers: compare doubled distances to stay exact.
        d2 = _kernels.nearest_distance(2 * heralds, 2 * s, np.int64(round(2 * c)))
        out.append(d2)
    return out


def _check_channels(dataset):
    for label in list(dataset.spoke_labels[:2]) + list(HUB_PORTS):
        ch = dataset.channel_map.get(label)
        if ch is None or ch not in dataset.streams:
            raise InvalidArgument(f"dataset has no channel for {label}")
    if len(dataset.spoke_labels) < 2:
        raise InvalidArgument("dataset needs two spoke channels")


@dataclass(frozen=True)
class RoiPoint:
    roi: float  # ps half-width
    counts: tuple  # per dwell of the dataset (0 for dwells not analysed)
    live_time: float  # s
    rate_hz: float


def _sweep(dataset, roi_list, herald, centers, bsm_window, dwell_indices):
    heralds = find_heralds(_hub_streams(dataset), bsm_window)
    if centers is None:
        centers = window_centers(dataset)
    n_d = len(dataset.dwells)
    use = list(range(n_d)) if dwell_indices is None else list(dwell_indices)
    out = {}
    for kind in ([herald] if herald is not None else list(HERALD_KINDS)):
        h = heralds.of(kind)
        dwell = _dwell_of(dataset, h)
        d1, d2 = _spoke_distances(dataset, h, centers)
        worst = np.maximum(d1, d2)  # doubled ps
        rows = []
        for roi in roi_list:
            hit = worst <= 2.0 * roi
            per = np.bincount(dwell[hit & (dwell >= 0)], minlength=n_d)
            counts = tuple(int(per[i]) if i in use else 0 for i in range(n_d))
            live = dataset.live_time(use)
            rows.append(RoiPoint(float(roi), counts, live, sum(counts) / live if live > 0 else 0.0))
        out[kind] = rows
    return out, centers


def fourfold_coincidences(dataset, roi: float, herald: BellKind | None = None, centers: dict | None = None,
                          bsm_window: float = DEFAULT_BSM_WINDOW) -> FourfoldCount:
    """Heralds with a tag of each spoke inside ``center +- roi`` of the herald time.

    A herald counts once however many spoke tags fall in its windows (the
    nearest tag of each spoke is taken).  ``centers`` maps spoke label to
    the expected spoke-minus-herald delay; recovered from the data when
    omitted.
    """
    _check_channels(dataset)
    if not roi > 0:
        raise InvalidArgument(f"roi must be > 0, got {roi}")
    res, _ = _sweep(dataset, [roi], herald, centers, bsm_window, None)
    fc = FourfoldCount(live_time={i: d.duration_s for i, d in enumerate(dataset.dwells)})
    for kind, rows in res.items():
        for i, c in enumerate(rows[0].counts):
            fc.counts[(kind, i)] = c
    return fc


def roi_sweep(dataset, roi_list: Sequence[float], herald: BellKind, dwell_indices=None, centers: dict | None = None,
              bsm_window: float = DEFAULT_BSM_WINDOW) -> list[RoiPoint]:
    """Fourfold counts per dwell and total rate for each ROI half-width."""
    rl = [float(r) for r in roi_list]
    if not rl or any(r <= 0 for r in rl) or any(b <= a for a, b in zip(rl, rl[1:])):
        raise InvalidArgument("roi_list must be non-empty, positive and strictly increasing")
    _check_channels(dataset)
    res, _ = _sweep(dataset, rl, herald, centers, bsm_window, dwell_indices)
    return res[herald]


def sweep_csv(dataset, points: Sequence[RoiPoint], herald: BellKind) -> str:
    """CSV rows (one per dwell and ROI) in the documented column order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in points:
        for i, d in enumerate(dataset.dwells):
            live = d.duration_s
            w.writerow([i, f"{d.hwp1:g}", f"{d.hwp2:g}", herald.value, f"{p.roi:g}", p.counts[i],
                        f"{live:.6f}", f"{p.counts[i] / live:.6g}" if live > 0 else "0"])
    return buf.getvalue()


__all__ = [
    "CSV_COLUMNS", "CoincidenceWindow", "FourfoldCount", "G2Histogram", "Heralds", "RoiPoint", "Detector",
    "estimate_offset", "find_heralds", "fourfold_coincidences", "g2_histogram", "roi_sweep", "sweep_csv",
    "twofold_coincidences", "window_centers",
]
