from __future__ import annotations

import math

import numpy as np
import pytest

from swapsim.errors import InvalidArgument
from swapsim.fiber import (
    PS_PER_HOUR,
    ApcParams,
    DriftState,
    DriftTrajectory,
    FiberParams,
    LinkDrift,
    apc_cycle,
    db_to_transmission,
    step_drift,
    transmission_probability,
    transmit,
)
from swapsim.polarization import rotation_operator


def test_db_conversion():
    assert db_to_transmission(0.0) == 1.0
    assert db_to_transmission(10.0) == pytest.approx(0.1)
    assert db_to_transmission(3.0) == pytest.approx(0.501187, rel=1e-5)


def test_apc_insertion_loss_only_when_enabled():
    f = FiberParams(loss=5.0)
    assert transmission_probability(f, ApcParams(enabled=False)) == pytest.approx(db_to_transmission(5.0))
    assert transmission_probability(f, ApcParams(enabled=True, insertion_loss=2.0)) == \
        pytest.approx(db_to_transmission(7.0))


def test_fiber_validation():
    with pytest.raises(InvalidArgument):
        FiberParams(length=-1.0)
    with pytest.raises(InvalidArgument):
        ApcParams(check_interval=0.0)


def test_transmit_thins_and_delays():
    rng = np.random.default_rng(0)
    t = np.arange(200_000, dtype=float) * 1000.0
    out = transmit(t, FiberParams(length=2.0, loss=3.0), ApcParams(), None, rng)
    assert len(out) / t.size == pytest.approx(db_to_transmission(3.0), abs=0.005)
    assert np.allclose(out.times - t[out.index], 2.0 * 4.9e6)
    with pytest.raises(InvalidArgument):
        transmit(t[::-1], FiberParams(), ApcParams(), None, rng)


def test_drift_increment_variance_scales_with_time():
    rng = np.random.default_rng(4)
    rate = 0.1  # rad / sqrt(h)
    angles = [step_drift(DriftState(), PS_PER_HOUR, rate, rng).current_rotation.rotation_angle for _ in range(4000)]
    # Single step: rotation angle is |N(0, rate)|.
    assert np.mean(np.square(angles)) == pytest.approx(rate**2, rel=0.08)


def test_drift_rejects_time_reversal():
    with pytest.raises(InvalidArgument):
        step_drift(DriftState(last_update=10.0), 5.0, 0.1, np.random.default_rng(0))


def test_apc_cycle_resets_only_beyond_tolerance():
    apc = ApcParams(enabled=True, tolerance=0.1)
    small = DriftState(rotation_operator((1, 0, 0), 0.05), 0.0)
    big = DriftState(rotation_operator((1, 0, 0), 0.3), 0.0)
    assert apc_cycle(small, apc, 1.0) == (small, False)
    state, corrected = apc_cycle(big, apc, 1.0)
    assert corrected and state.current_rotation.rotation_angle == pytest.approx(0.0, abs=1e-7)
    assert not apc_cycle(big, ApcParams(enabled=False), 1.0)[1]


def test_link_drift_keeps_rotation_bounded_with_apc():
    fiber = FiberParams(drift_rate=0.3)
    apc = ApcParams(enabled=True, tolerance=0.1, check_interval=30.0)
    link = LinkDrift(fiber, apc, np.random.default_rng(5), step=30e12)
    worst = 0.0
    for k in range(1, 2 * 120 + 1):  # 2 h in 30 s steps
        worst = max(worst, link.advance(k * 30e12).rotation_angle)
    assert link.checks == 240
    assert worst <= 0.1 + 1e-9
    free = LinkDrift(fiber, ApcParams(enabled=False), np.random.default_rng(5), step=30e12)
    free.advance(2 * PS_PER_HOUR)
    assert free.corrections == 0


def test_drift_trajectory_segments():
    traj = DriftTrajectory(np.array([0.0, 10.0, 20.0]),
                           tuple(rotation_operator((0, 0, 1), a) for a in (0.0, 0.5, 1.0)))
    assert traj.at(15.0).rotation_angle == pytest.approx(0.5)
    assert list(traj.segment_index(np.array([-5.0, 0.0, 25.0]))) == [0, 0, 2]
    assert math.isclose(DriftTrajectory.constant().at(3.0).rotation_angle, 0.0, abs_tol=1e-7)
