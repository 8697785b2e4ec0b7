"""Fiber links: attenuation, group delay, polarization drift and the APC loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .polarization import PolarizationOperator, rotation_operator

GROUP_DELAY_PS_PER_KM = 4.9e6  # 4.9 ns/m, standard single-mode fiber
PS_PER_HOUR = 3.6e15


@dataclass(frozen=True)
class FiberParams:
    length: float = 0.0  # km
    loss: float = 0.0  # dB, total including connectors
    delay: float | None = None  # ps; derived from length when None
    drift_rate: float = 0.0  # rad / sqrt(hour)

    def __post_init__(self):
        if self.length < 0:
            raise InvalidArgument(f"length must be >= 0, got {self.length}")
        if self.loss < 0:
            raise InvalidArgument(f"loss must be >= 0, got {self.loss}")
        if self.drift_rate < 0:
            raise InvalidArgument(f"drift_rate must be >= 0, got {self.drift_rate}")
        if self.delay is not None and self.delay < 0:
            raise InvalidArgument(f"delay must be >= 0, got {self.delay}")

    @property
    def delay_ps(self) -> float:
        if self.delay is not None:
            return float(self.delay)
        return self.length * GROUP_DELAY_PS_PER_KM


@dataclass(frozen=True)
class ApcParams:
    check_interval: float = 30.0  # s
    tolerance: float = 0.1  # rad
    insertion_loss: float = 2.0  # dB
    enabled: bool = False

    def __post_init__(self):
        if not self.check_interval > 0:
            raise InvalidArgument(f"check_interval must be > 0, got {self.check_interval}")
        if self.tolerance < 0:
            raise InvalidArgument(f"tolerance must be >= 0, got {self.tolerance}")
        if self.insertion_loss < 0:
            raise InvalidArgument(f"insertion_loss must be >= 0, got {self.insertion_loss}")


@dataclass(frozen=True)
class DriftState:
    current_rotation: PolarizationOperator = field(default_factory=PolarizationOperator.identity)
    last_update: float = 0.0  # ps


def db_to_transmission(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def transmission_probability(fiber: FiberParams, apc: ApcParams) -> float:
    total = fiber.loss + (apc.insertion_loss if apc.enabled else 0.0)
    return db_to_transmission(total)


def _random_axis(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def step_drift(state: DriftState, now: float, drift_rate: float, rng: np.random.Generator) -> DriftState:
    """Advance the link rotation by an isotropic random-walk increment.

    The increment angle is Gaussian with standard deviation
    ``drift_rate * sqrt(elapsed hours)``.
    """
    if now < state.last_update:
        raise InvalidArgument(f"now ({now}) precedes last update ({state.last_update})")
    dt_h = (now - state.last_update) / PS_PER_HOUR
    if dt_h == 0 or drift_rate == 0:
        return DriftState(state.current_rotation, now)
    angle = rng.normal(0.0, drift_rate * math.sqrt(dt_h))
    step = rotation_operator(_random_axis(rng), angle)
    m = step.matrix @ state.current_rotation.matrix
    # Project back to SU(2) to keep round-off from accumulating over long walks.
    u, _, vh = np.linalg.svd(m)
    m = u @ vh
    m = m / np.sqrt(np.linalg.det(m))
    return DriftState(PolarizationOperator(m), now)


def apc_cycle(state: DriftState, apc: ApcParams, now: float) -> tuple[DriftState, bool]:
    """One compensation check: reset to identity when the drift exceeds tolerance."""
    if apc.enabled and state.current_rotation.rotation_angle > apc.tolerance:
        return DriftState(PolarizationOperator.identity(), now), True
    return state, False


@dataclass(frozen=True, eq=False)
class DriftTrajectory:
    """Piecewise-constant rotation of one link: ``rotations[i]`` holds on [times[i], times[i+1])."""

    times: np.ndarray  # ps, ascending, times[0] is the start
    rotations: tuple[PolarizationOperator, ...]

    @classmethod
    def constant(cls, rotation: PolarizationOperator | None = None, start: float = 0.0) -> DriftTrajectory:
        return cls(np.array([start], dtype=float), (rotation or PolarizationOperator.identity(),))

    def segment_index(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, len(self.rotations) - 1)

    def at(self, t: float) -> PolarizationOperator:
        return self.rotations[int(self.segment_index(np.asarray([t]))[0])]


class LinkDrift:
    """Sequential drift + APC state machine for one link.

    ``advance(t)`` steps the random walk on a fixed grid and runs an APC
    check at every multiple of the check interval.
    """

    def __init__(self, fiber: FiberParams, apc: ApcParams, rng: np.random.Generator,
                 step: float, start: float = 0.0):
        self.fiber = fiber
        self.apc = apc
        self.rng = rng
        self.step = float(step)
        self.state = DriftState(PolarizationOperator.identity(), start)
        self.check_interval_ps = apc.check_interval * 1e12
        self._next_check = start + self.check_interval_ps
        self.corrections = 0
        self.checks = 0

    def advance(self, now: float) -> PolarizationOperator:
        while self.state.last_update < now:
            t_next = min(now, self.state.last_update + self.step, self._next_check)
            self.state = step_drift(self.state, t_next, self.fiber.drift_rate, self.rng)
            if t_next >= self._next_check:
                self.checks += 1
                self.state, corrected = apc_cycle(self.state, self.apc, t_next)
                self.corrections += int(corrected)
                self._next_check += self.check_interval_ps
        return self.state.current_rotation


@dataclass(frozen=True, eq=False)
class ArrivalBatch:
    """Photons that survived a link.

    ``index`` points back into the transmitted batch; ``segment`` indexes
    ``trajectory.rotations`` to give the operator in effect at transit.
    """

    times: np.ndarray
    index: np.ndarray
    segment: np.ndarray
    trajectory: DriftTrajectory

    def __len__(self):
        return self.times.size

    def operator(self, i: int) -> PolarizationOperator:
        return self.trajectory.rotations[int(self.segment[i])]


def transmit(times, fiber: FiberParams, apc: ApcParams, drift: DriftTrajectory | None,
             rng: np.random.Generator) -> ArrivalBatch:
    """Send time-sorted photons down a link.

    Each photon survives independently with the link transmission; survivors
    are delayed by the group delay and tagged with the rotation in effect
    when they entered the fiber.
    """
    t = np.asarray(times, dtype=float)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise InvalidArgument("photon times must be sorted")
    p = transmission_probability(fiber, apc)
    keep = np.flatnonzero(rng.random(t.size) < p) if p < 1 else np.arange(t.size)
    drift = drift or DriftTrajectory.constant(start=float(t[0]) if t.size else 0.0)
    seg = drift.segment_index(t[keep])
    return ArrivalBatch(t[keep] + fiber.delay_ps, keep, seg, drift)
