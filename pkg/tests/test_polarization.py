from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swapsim.errors import InvalidArgument
from swapsim.polarization import (
    BellKind,
    PolarizationOperator,
    TwoQubitState,
    analyzer_projector,
    apply_local,
    bell_state,
    correlation_tensor,
    hwp_operator,
    joint_projection_prob,
    rotation_operator,
)

angles = st.floats(-360.0, 360.0, allow_nan=False)
axes = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_bell_states_are_pure_and_orthonormal():
    states = [bell_state(k) for k in BellKind]
    for i, a in enumerate(states):
        assert a.purity == pytest.approx(1.0)
        for j, b in enumerate(states):
            assert a.fidelity_pure(b) == pytest.approx(1.0 if i == j else 0.0, abs=1e-15)


def test_only_psi_states_are_heraldable():
    assert {k for k in BellKind if k.heraldable} == {BellKind.PSI_PLUS, BellKind.PSI_MINUS}


def test_hwp_maps_h_to_linear_at_twice_the_angle():
    h = np.array([1.0, 0.0])
    for theta in (0.0, 11.25, 22.5, 45.0, 67.5):
        out = hwp_operator(theta).matrix @ h
        expected = np.array([math.cos(math.radians(2 * theta)), math.sin(math.radians(2 * theta))])
        assert np.allclose(out, expected, atol=1e-15)


def test_phi_plus_joint_probability_follows_cos_squared():
    rho = bell_state(BellKind.PHI_PLUS)
    for a, b in [(0, 0), (0, 90), (45, 45), (22.5, 0), (10, 55)]:
        assert joint_projection_prob(rho, a, b) == pytest.approx(0.5 * math.cos(math.radians(a - b)) ** 2)


def test_psi_minus_is_rotation_invariant_anticorrelated():
    rho = bell_state(BellKind.PSI_MINUS)
    for a in (0.0, 30.0, 45.0, 77.0):
        assert joint_projection_prob(rho, a, a) == pytest.approx(0.0, abs=1e-15)
        assert joint_projection_prob(rho, a, a + 90) == pytest.approx(0.5)


def test_correlation_tensor_of_bell_states():
    assert np.allclose(correlation_tensor(bell_state(BellKind.PHI_PLUS)), np.diag([1, 1, -1]))
    assert np.allclose(correlation_tensor(bell_state(BellKind.PSI_MINUS)), np.diag([-1, -1, -1]))


def test_invalid_states_rejected():
    with pytest.raises(InvalidArgument):
        TwoQubitState(np.eye(4))
    with pytest.raises(InvalidArgument):
        TwoQubitState(np.diag([1.5, -0.5, 0, 0]))
    with pytest.raises(InvalidArgument):
        hwp_operator(float("nan"))
    with pytest.raises(InvalidArgument):
        apply_local(PolarizationOperator(np.diag([1.0, 2.0])), PolarizationOperator.identity(),
                    bell_state(BellKind.PHI_PLUS))


def test_rotation_angle_of_rotation_operator():
    for angle in (0.0, 0.3, 1.0, 2.5, math.pi):
        assert rotation_operator((0, 1, 1), angle).rotation_angle == pytest.approx(angle, abs=1e-7)


@given(axes, st.floats(0, 2 * math.pi))
def test_rotation_operator_is_special_unitary(axis, angle):
    u = rotation_operator(axis, angle)
    assert u.is_unitary()
    assert np.linalg.det(u.matrix) == pytest.approx(1.0)


@given(angles, angles, axes, st.floats(0, 2 * math.pi))
@settings(max_examples=60)
def test_local_unitaries_preserve_trace_and_purity(a, b, axis, angle):
    rho = bell_state(BellKind.PHI_PLUS)
    out = apply_local(hwp_operator(a), rotation_operator(axis, angle), rho)
    assert np.trace(out.matrix).real == pytest.approx(1.0, abs=1e-12)
    assert out.purity == pytest.approx(1.0, abs=1e-10)


@given(angles, angles)
def test_orthogonal_outcomes_sum_to_one(a, b):
    rho = TwoQubitState(0.7 * bell_state(BellKind.PSI_MINUS).matrix + 0.3 * np.eye(4) / 4)
    total = sum(joint_projection_prob(rho, a + da, b + db) for da in (0, 90) for db in (0, 90))
    assert total == pytest.approx(1.0, abs=1e-12)


@given(angles)
def test_analyzer_projector_is_rank_one_projector(a):
    p = analyzer_projector(a)
    assert np.allclose(p @ p, p)
    assert np.trace(p).real == pytest.approx(1.0)
