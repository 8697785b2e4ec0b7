"""Stochastic model of a CW biphoton source.

Idler emissions form a homogeneous Poisson process; each signal photon is
offset from its idler by a symmetric Laplace delay whose scale is the
biphoton coherence time.  For this delay profile the signal-idler
cross-correlation is ``g2(tau) = 1 + exp(-|tau|/tc) / (2 R tc)``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .polarization import BellKind, TwoQubitState, bell_state

PS_PER_S = 1e12


def coherence_time_for_g2(pair_rate: float, g2_peak: float) -> float:
    """Coherence time (ps) giving peak cross-correlation ``g2_peak`` at ``pair_rate`` pairs/s."""
    if not g2_peak > 1:
        raise InvalidArgument(f"g2_peak must exceed 1, got {g2_peak}")
    if not pair_rate > 0:
        raise InvalidArgument(f"pair_rate must be positive, got {pair_rate}")
    return PS_PER_S / (2.0 * pair_rate * (g2_peak - 1.0))


@dataclass(frozen=True)
class SourceParams:
    pair_rate: float  # pairs / s
    coherence_time: float  # ps
    emitted_state: TwoQubitState = field(default_factory=lambda: bell_state(BellKind.PHI_PLUS))
    label: str = "S1"

    def __post_init__(self):
        if not self.pair_rate > 0:
            raise InvalidArgument(f"pair_rate must be positive, got {self.pair_rate}")
        if not self.coherence_time > 0:
            raise InvalidArgument(f"coherence_time must be positive, got {self.coherence_time}")

    @property
    def g2_peak(self) -> float:
        return 1.0 + PS_PER_S / (2.0 * self.pair_rate * self.coherence_time)


@dataclass(frozen=True)
class PairEmission:
    t_idler: float  # ps, 1324 nm photon
    t_signal: float  # ps, 795 nm photon
    state_ref: TwoQubitState
    source_label: str


@dataclass(frozen=True, eq=False)
class EmissionBatch(Sequence):
    """Columnar sequence of :class:`PairEmission`, sorted by idler time."""

    t_idler: np.ndarray
    t_signal: np.ndarray
    state: TwoQubitState
    source_label: str

    def __len__(self):
        return self.t_idler.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EmissionBatch(self.t_idler[i], self.t_signal[i], self.state, self.source_label)
        return PairEmission(float(self.t_idler[i]), float(self.t_signal[i]), self.state, self.source_label)

    @property
    def delays(self) -> np.ndarray:
        return self.t_signal - self.t_idler


def poisson_times(rate_hz: float, t_start: float, t_end: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted event times (ps) of a homogeneous Poisson process on [t_start, t_end)."""
    if t_end < t_start:
        raise InvalidArgument(f"t_end ({t_end}) < t_start ({t_start})")
    duration = t_end - t_start
    if duration == 0 or rate_hz <= 0:
        return np.empty(0)
    mean_gap = PS_PER_S / rate_hz
    expected = duration / mean_gap
    n = int(expected + 6.0 * math.sqrt(expected) + 16)
    t = np.cumsum(rng.exponential(mean_gap, n))
    while t[-1] < duration:
        more = np.cumsum(rng.exponential(mean_gap, max(16, n // 8))) + t[-1]
        t = np.concatenate([t, more])
    t = t[: np.searchsorted(t, duration, side="left")]
    return t + t_start


def sample_emissions(params: SourceParams, t_start: float, t_end: float, rng: np.random.Generator) -> EmissionBatch:
    """Pair emissions of one source on [t_start, t_end) ps.

    Deterministic given the generator state: idler times are drawn first,
    then one Laplace delay per pair.
    """
    t_idler = poisson_times(params.pair_rate, t_start, t_end, rng)
    delays = rng.laplace(0.0, params.coherence_time, t_idler.size)
    return EmissionBatch(t_idler, t_idler + delays, params.emitted_state, params.label)


def expected_g2(params: SourceParams, tau: float) -> float:
    rate_per_ps = params.pair_rate / PS_PER_S
    tc = params.coherence_time
    return 1.0 + math.exp(-abs(tau) / tc) / (2.0 * rate_per_ps * tc)
