from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swapsim.chsh import (
    DEFAULT_SETTINGS_HWP,
    TSIRELSON,
    chsh_from_counts,
    chsh_s,
    correlation_E,
    fit_fringe,
    setting_grid,
)
from swapsim.errors import InvalidArgument, NoSignalError
from swapsim.polarization import BellKind, bell_state, joint_projection_prob


def _ideal_table(kind: BellKind, n: float = 1e6, settings_hwp=DEFAULT_SETTINGS_HWP):
    rho = bell_state(kind)
    return {(x, y): n * joint_projection_prob(rho, 2 * x, 2 * y) for x, y in setting_grid(settings_hwp)}


def test_correlation_E_examples():
    assert correlation_E((100, 100, 0, 0)) == 1.0
    assert correlation_E((0, 0, 50, 50)) == -1.0
    assert correlation_E((25, 25, 25, 25)) == 0.0
    assert correlation_E({(False, False): 3, (True, True): 1, (False, True): 1, (True, False): 3}) == 0.0
    with pytest.raises(NoSignalError):
        correlation_E((0, 0, 0, 0))
    with pytest.raises(InvalidArgument):
        correlation_E((1, 2, 3))


def test_chsh_s_grouping():
    r = chsh_s((0.5, -0.5, 0.5, 0.5), (0.01, 0.01, 0.01, 0.01))
    assert r.S == pytest.approx(2.0)
    assert r.standard_error == pytest.approx(0.02)
    assert not r.violates_local_realism


@pytest.mark.parametrize("kind", [BellKind.PHI_PLUS, BellKind.PSI_MINUS])
def test_default_settings_reach_tsirelson(kind):
    res = chsh_from_counts(_ideal_table(kind))
    assert res.S == pytest.approx(TSIRELSON, abs=1e-9)
    assert res.settings == (0.0, 45.0, 22.5, 67.5)


def test_mixed_state_s_scales_with_visibility():
    rho = 0.6 * bell_state(BellKind.PSI_MINUS).matrix + 0.4 * np.eye(4) / 4
    from swapsim.polarization import TwoQubitState

    st_ = TwoQubitState(rho)
    table = {(x, y): 1e6 * joint_projection_prob(st_, 2 * x, 2 * y) for x, y in setting_grid()}
    assert chsh_from_counts(table).S == pytest.approx(0.6 * TSIRELSON, abs=1e-9)


def test_poisson_errors_follow_binomial_formula():
    table = _ideal_table(BellKind.PHI_PLUS, n=400.0)
    res = chsh_from_counts(table)
    for e, err in zip(res.E_values, res.E_errors):
        assert err == pytest.approx(math.sqrt((1 - e * e) / 400.0))


def test_bootstrap_errors_agree_with_poisson():
    table = {k: round(v) for k, v in _ideal_table(BellKind.PHI_PLUS, n=2000.0).items()}
    p = chsh_from_counts(table)
    b = chsh_from_counts(table, method="bootstrap", rng=np.random.default_rng(0), n_boot=4000)
    assert b.standard_error == pytest.approx(p.standard_error, rel=0.15)


def test_missing_settings_are_listed():
    table = _ideal_table(BellKind.PHI_PLUS)
    del table[(22.5, 33.75)]
    with pytest.raises(InvalidArgument, match=r"\(22.5, 33.75\)"):
        chsh_from_counts(table)


def test_unphysical_values_warn():
    with pytest.warns(RuntimeWarning):
        r = chsh_s((1.0, -1.0, 1.0, 1.0), (0.01,) * 4)
    assert r.unphysical
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        chsh_s((0.7, -0.7, 0.7, 0.7), (0.01,) * 4)


@given(st.lists(st.integers(0, 10_000), min_size=16, max_size=16), st.integers(1, 50))
@settings(max_examples=80)
def test_s_is_invariant_under_count_scaling(counts, k):
    if any(sum(counts[i:i + 4]) == 0 for i in range(0, 16, 4)):
        return
    grid = setting_grid()
    # Build the table so each E uses one group of four counts.
    a, a2, b, b2 = DEFAULT_SETTINGS_HWP
    keys = []
    for x, y in [(a, b), (a, b2), (a2, b), (a2, b2)]:
        keys += [(x, y), (x + 45, y + 45), (x, y + 45), (x + 45, y)]
    assert sorted(keys) == sorted(grid)
    t1 = dict(zip(keys, counts))
    tk = {key: v * k for key, v in t1.items()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s1, sk = chsh_from_counts(t1), chsh_from_counts(tk)
    assert sk.S == pytest.approx(s1.S, abs=1e-12)
    assert 0.0 <= s1.S <= 4.0 + 1e-12


def test_fringe_fit_recovers_parameters():
    theta = np.arange(0, 180, 15.0)
    truth = 500 + 400 * np.cos(np.radians(4 * (theta - 10.0)))
    fit = fit_fringe(list(zip(theta, truth)))
    assert fit.visibility == pytest.approx(0.8, abs=1e-6)
    assert fit.phase == pytest.approx(10.0, abs=1e-6)
    assert fit.offset == pytest.approx(500.0, rel=1e-6)


def test_fringe_fit_visibility_error_is_calibrated():
    rng = np.random.default_rng(1)
    theta = np.array([0, 15, 30, 45, 60, 75, 90], float)
    mean = 200 + 150 * np.cos(np.radians(4 * theta))
    fits = [fit_fringe(list(zip(theta, rng.poisson(mean)))) for _ in range(400)]
    vis = np.array([f.visibility for f in fits])
    err = np.mean([f.visibility_error for f in fits])
    assert vis.mean() == pytest.approx(0.75, abs=0.01)
    assert vis.std() == pytest.approx(err, rel=0.15)


def test_fringe_fit_validation():
    with pytest.raises(InvalidArgument):
        fit_fringe([(0, 1), (10, 2), (20, 3)])
    with pytest.raises(NoSignalError):
        fit_fringe([(a, 0) for a in (0, 20, 40, 60, 80, 100)])
