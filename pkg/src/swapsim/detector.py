"""Single-photon detector model: efficiency, timing jitter, dark counts, dead time."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidArgument
from .source import poisson_times

FLAG_DARK = 0x0001
_NO_TAG = np.iinfo(np.int64).min // 2


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 1.0
    jitter_sigma: float = 0.0  # ps
    dead_time: float = 0.0  # ps
    dark_rate: float = 0.0  # counts / s
    channel: int = 0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise InvalidArgument(f"efficiency must be in [0, 1], got {self.efficiency}")
        for name in ("jitter_sigma", "dead_time", "dark_rate"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.channel < 2**16:
            raise InvalidArgument(f"channel must fit in 16 bits, got {self.channel}")

    @classmethod
    def spad(cls, channel: int, efficiency: float = 0.65) -> DetectorParams:
        return cls(efficiency, jitter_sigma=350.0, dead_time=25_000.0, dark_rate=250.0, channel=channel)

    @classmethod
    def snspd(cls, channel: int, efficiency: float = 0.85) -> DetectorParams:
        return cls(efficiency, jitter_sigma=50.0, dead_time=20_000.0, dark_rate=100.0, channel=channel)


@dataclass(frozen=True)
class TimeTagRecord:
    timestamp: int  # ps
    channel: int
    flags: int = 0


@dataclass(frozen=True, eq=False)
class TagStream(Sequence):
    """Time-sorted tags of one channel in columnar form."""

    channel: int
    timestamps: np.ndarray  # int64 ps
    flags: np.ndarray  # uint16

    @classmethod
    def empty(cls, channel: int) -> TagStream:
        return cls(channel, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint16))

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return TagStream(self.channel, self.timestamps[i], self.flags[i])
        return TimeTagRecord(int(self.timestamps[i]), self.channel, int(self.flags[i]))

    def __eq__(self, other):
        return (isinstance(other, TagStream) and self.channel == other.channel
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.flags, other.flags))

    @property
    def dark(self) -> np.ndarray:
        return (self.flags & FLAG_DARK) != 0

    def blind(self) -> TagStream:
        """Copy with simulation-only flag bits cleared."""
        return TagStream(self.channel, self.timestamps, np.zeros_like(self.flags))

    @staticmethod
    def concat(parts: Sequence[TagStream], channel: int) -> TagStream:
        if not parts:
            return TagStream.empty(channel)
        return TagStream(channel, np.concatenate([p.timestamps for p in parts]),
                         np.concatenate([p.flags for p in parts]))


class StreamingDetector:
    """Chunked version of :func:`detect` for long runs.

    Each ``push`` hands over photon arrivals and promises that later pushes
    only carry arrivals at or after ``upto - arrival_spread``.
    Jittered tags within the jitter guard of ``upto`` are held back so the
    emitted stream stays sorted across chunks.
    """

    def __init__(self, params: DetectorParams, t_start: float, arrival_spread: float = 0.0):
        self.params = params
        # ``arrival_spread``: how far (ps) a later push may reach below ``upto``.
        self._guard = 10.0 * params.jitter_sigma + arrival_spread
        self._pending = np.empty(0)
        self._dark_cursor = float(t_start)
        self._final_upto = -np.inf
        self._last = _NO_TAG

    def push(self, arrivals, upto: float, rng: np.random.Generator) -> TagStream:
        return self._process(np.asarray(arrivals, dtype=float), upto - self._guard, upto, rng)

    def flush(self, t_end: float, rng: np.random.Generator, arrivals=()) -> TagStream:
        """Emit everything still held back; dark counts run up to ``t_end``."""
        return self._process(np.asarray(arrivals, dtype=float), np.inf, t_end, rng)

    def _process(self, arrivals, final_upto, dark_upto, rng) -> TagStream:
        p = self.params
        if arrivals.size:
            if p.efficiency < 1:
                arrivals = arrivals[rng.random(arrivals.size) < p.efficiency]
            if p.jitter_sigma > 0:
                arrivals = arrivals + p.jitter_sigma * rng.standard_normal(arrivals.size, dtype=np.float32)
            # A >10 sigma excursion below an already emitted boundary is clamped to it.
            arrivals = np.maximum(arrivals, self._final_upto)
            self._pending = np.concatenate([self._pending, arrivals])
        ready = self._pending < final_upto
        photons = self._pending[ready]
        self._pending = self._pending[~ready]
        dark_end = min(dark_upto, final_upto)
        darks = np.empty(0)
        if dark_end > self._dark_cursor:
            darks = poisson_times(p.dark_rate, self._dark_cursor, dark_end, rng)
            self._dark_cursor = dark_end
        self._final_upto = max(self._final_upto, final_upto) if np.isfinite(final_upto) else self._final_upto

        photons = np.sort(photons, kind="stable")  # nearly sorted already
        if darks.size:
            times, src, _ = _kernels.merge_sorted(photons, darks)
            flags = src.astype(np.uint16) * np.uint16(FLAG_DARK)
        else:
            times, flags = photons, np.zeros(photons.size, np.uint16)
        ts = np.rint(times).astype(np.int64)
        if p.dead_time > 0 and ts.size:
            keep, self._last = _kernels.dead_time_mask(ts, np.int64(round(p.dead_time)), np.int64(self._last))
            ts, flags = ts[keep], flags[keep]
        return TagStream(p.channel, ts, flags)


def detect(arrivals, params: DetectorParams, t_start: float, t_end: float, rng: np.random.Generator) -> TagStream:
    """Turn time-sorted photon arrivals (ps) into detector tags."""
    a = np.asarray(arrivals, dtype=float)
    if a.size > 1 and np.any(np.diff(a) < 0):
        raise InvalidArgument("arrivals must be time-sorted")
    if t_end < t_start:
        raise InvalidArgument(f"t_end ({t_end}) < t_start ({t_start})")
    return StreamingDetector(params, t_start).flush(t_end, rng, a)
