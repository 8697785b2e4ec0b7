"""Closed-form expected rates for a scenario.

These formulas are independent of the photon-level engine and serve as
its test oracle: transmissions multiply, detector dead time is treated as
a non-paralyzable live fraction ``1 / (1 + r * tau)``, and windowed
captures use the exact Laplace-plus-Gaussian delay distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize
from scipy.stats import exponnorm, norm

from ..bsm import HERALD_MAP, Detector, joint_outcome_tables
from ..chsh import chsh_from_counts
from ..fiber import db_to_transmission, transmission_probability
from ..polarization import (BellKind, PolarizationOperator, TwoQubitState, analyzer_projector,
                            apply_local)
from .config import ScenarioConfig, SpokeConfig

PS = 1e-12


def live_fraction(rate_hz: float, dead_time_ps: float) -> float:
    return 1.0 / (1.0 + rate_hz * dead_time_ps * PS)


def idler_transmission(cfg: ScenarioConfig, k: int) -> float:
    """Probability an idler of spoke k reaches the BSM splitter."""
    s = cfg.spokes[k]
    return transmission_probability(s.idler_fiber, s.apc) * cfg.hub.bsm.transmission


def signal_transmission(cfg: ScenarioConfig, k: int) -> float:
    return db_to_transmission(cfg.spokes[k].signal_arm.loss)


def _spoke_input_rate(cfg: ScenarioConfig, k: int, pass_prob: float = 0.5) -> float:
    s = cfg.spokes[k]
    return s.source.pair_rate * signal_transmission(cfg, k) * pass_prob * s.detector.efficiency + s.detector.dark_rate


def _hub_input_rates(cfg: ScenarioConfig) -> np.ndarray:
    flux = sum(s.source.pair_rate * idler_transmission(cfg, k) for k, s in enumerate(cfg.spokes))
    return np.array([flux * d.efficiency / 4.0 + d.dark_rate for d in cfg.hub.detectors])


def expected_singles(cfg: ScenarioConfig, pass_prob: float = 0.5) -> dict[str, float]:
    """Detected singles per channel label.

    ``pass_prob`` is the analyzer transmission of the spoke photons; every
    Bell-state source has an unpolarized marginal, so 1/2 at any angle.
    """
    out = {}
    for k, s in enumerate(cfg.spokes):
        r = _spoke_input_rate(cfg, k, pass_prob)
        out[s.label] = r * live_fraction(r, s.detector.dead_time)
    for port, d, r in zip(("Port1-H", "Port1-V", "Port2-H", "Port2-V"), cfg.hub.detectors, _hub_input_rates(cfg)):
        out[port] = r * live_fraction(r, d.dead_time)
    return out


def detected_pair_rate(cfg: ScenarioConfig, k: int) -> float:
    """Spoke-k to hub true coincidence rate with the spoke analyzer removed."""
    s = cfg.spokes[k]
    spoke_live = live_fraction(_spoke_input_rate(cfg, k), s.detector.dead_time)
    hub_rates = _hub_input_rates(cfg)
    hub_eff = np.mean([d.efficiency * live_fraction(r, d.dead_time) for d, r in zip(cfg.hub.detectors, hub_rates)])
    return (s.source.pair_rate * signal_transmission(cfg, k) * s.detector.efficiency * spoke_live
            * idler_transmission(cfg, k) * hub_eff)


def calibrate_pair_rate(cfg: ScenarioConfig, k: int, target_hz: float) -> float:
    """Source pair rate of spoke k giving ``target_hz`` detected spoke-hub pairs."""

    def with_rate(rate):
        s = cfg.spokes[k]
        spokes = list(cfg.spokes)
        spokes[k] = replace(s, source=replace(s.source, pair_rate=rate))
        return replace(cfg, spokes=tuple(spokes))

    def f(log_rate):
        return math.log(detected_pair_rate(with_rate(math.exp(log_rate)), k) / target_hz)

    # Dead time makes the detected rate peak and fall again; stay on the rising branch.
    grid = np.linspace(math.log(1e-3), math.log(1e12), 301)
    values = np.array([f(g) for g in grid])
    top = int(np.argmax(values))
    if values[top] < 0:
        from ..errors import ConfigError

        raise ConfigError(f"spokes[{k}].source.detected_pair_rate_hz",
                          f"{target_hz:g} Hz is not reachable with this link budget")
    return math.exp(optimize.brentq(f, grid[0], grid[top], xtol=1e-13, rtol=1e-14))


def delay_cdf(x, coherence_time: float, sigma: float):
    """CDF of a Laplace(coherence_time) delay plus N(0, sigma) timing noise."""
    x = np.asarray(x, dtype=float)
    if sigma <= 0:
        return np.where(x < 0, 0.5 * np.exp(x / coherence_time), 1.0 - 0.5 * np.exp(-x / coherence_time))
    K = coherence_time / sigma
    return 0.5 * exponnorm.cdf(x, K, scale=sigma) + 0.5 * exponnorm.sf(-x, K, scale=sigma)


def capture_fraction(roi: float, shift, coherence_time: float, sigma: float):
    """P(|delay + shift| <= roi) for the Laplace-plus-Gaussian delay."""
    shift = np.asarray(shift, dtype=float)
    return delay_cdf(roi - shift, coherence_time, sigma) - delay_cdf(-roi - shift, coherence_time, sigma)


@dataclass(frozen=True)
class FourfoldBreakdown:
    true_rate: float
    accidental_rate: float
    herald_rate: float

    @property
    def total(self) -> float:
        return self.true_rate + self.accidental_rate


def _timing_sigmas(cfg: ScenarioConfig) -> tuple[float, float, float]:
    hub_j = float(np.mean([d.jitter_sigma for d in cfg.hub.detectors]))
    hub_wr = cfg.hub.clock.sync_jitter_sigma
    spoke = [math.sqrt(s.detector.jitter_sigma**2 + s.clock.sync_jitter_sigma**2 + hub_j**2 + hub_wr**2)
             for s in cfg.spokes]
    herald = math.sqrt(2.0) * math.hypot(hub_j, hub_wr)
    return spoke[0], spoke[1], herald


def _herald_tables(cfg: ScenarioConfig, hwp1: float, hwp2: float, herald: BellKind,
                   rotations: tuple[PolarizationOperator, PolarizationOperator] | None):
    eye = PolarizationOperator.identity()
    states = []
    for k, s in enumerate(cfg.spokes):
        u = rotations[k] if rotations else eye
        states.append(apply_local(eye, u, s.source.emitted_state))
    pa = analyzer_projector(2.0 * hwp1)
    pb = analyzer_projector(2.0 * hwp2)
    P_ind, P_dist = joint_outcome_tables(states[0], states[1], pa, pb, cfg.hub.bsm.paddle)
    mask = np.zeros((4, 4))
    for m in range(4):
        for n in range(4):
            if HERALD_MAP.get(frozenset({Detector(m), Detector(n)})) is herald:
                mask[m, n] = 1.0
    return (P_ind * mask).sum(axis=(2, 3)), (P_dist * mask).sum(axis=(2, 3))


def expected_fourfold_rate(cfg: ScenarioConfig, hwp1: float, hwp2: float, roi: float,
                           herald: BellKind = BellKind.PSI_MINUS, bsm_window: float | None = None,
                           rotations=None, pair_rates=None) -> FourfoldBreakdown:
    """Expected fourfold rate (true, accidental) for one dwell setting.

    True events: a cross-source idler pair heralds within the BSM window
    and both partner signal photons pass, are detected and fall inside
    their ROI (measured from the earlier herald click; the later source's
    window sees its photon shifted by the idler separation).  Accidentals:
    any other spoke tag in a window, plus heralds made of two idlers from
    one source.  ``pair_rates`` overrides the source rates feeding the BSM.
    """
    if not roi > 0:
        from ..errors import InvalidArgument

        raise InvalidArgument(f"roi must be > 0, got {roi}")
    W = cfg.analysis.bsm_window if bsm_window is None else bsm_window
    rates = pair_rates or [s.source.pair_rate for s in cfg.spokes]
    R = [rates[k] * idler_transmission(cfg, k) for k in range(2)]
    if min(R) <= 0:
        return FourfoldBreakdown(0.0, 0.0, 0.0)
    hub_rates = _hub_input_rates(cfg)
    eta_h = float(np.mean([d.efficiency * live_fraction(r, d.dead_time) for d, r in zip(cfg.hub.detectors, hub_rates)]))
    singles = expected_singles(cfg)
    sig = [signal_transmission(cfg, k) * s.detector.efficiency
           * live_fraction(_spoke_input_rate(cfg, k), s.detector.dead_time) for k, s in enumerate(cfg.spokes)]
    acc = [1.0 - math.exp(-singles[s.label] * 2.0 * roi * PS) for s in cfg.spokes]
    tc = [s.source.coherence_time for s in cfg.spokes]
    sg1, sg2, sgh = _timing_sigmas(cfg)
    Q_ind, Q_dist = _herald_tables(cfg, hwp1, hwp2, herald, rotations)
    bsm = cfg.hub.bsm
    ow = cfg.overlap_width

    # Gauss-Legendre over dt = t_idler2 - t_idler1, split at the kinks.
    span = W + 8.0 * sgh
    edges = sorted({-span, -W, 0.0, W, span})
    nodes, weights = np.polynomial.legendre.leggauss(96)
    dt = np.concatenate([0.5 * (hi - lo) * nodes + 0.5 * (hi + lo) for lo, hi in zip(edges, edges[1:])])
    wt = np.concatenate([0.5 * (hi - lo) * weights for lo, hi in zip(edges, edges[1:])])

    v = bsm.hom_visibility * np.exp(-np.abs(dt) / ow)
    q = v[:, None, None] * Q_ind + (1.0 - v)[:, None, None] * Q_dist  # [dt, x1, x2]
    if sgh > 0:
        in_window = norm.cdf((W - dt) / sgh) - norm.cdf((-W - dt) / sgh)
    else:
        in_window = (np.abs(dt) <= W).astype(float)
    # The later photon's spoke window is shifted by the idler separation.
    t1 = sig[0] * capture_fraction(roi, np.maximum(-dt, 0.0), tc[0], sg1)
    t2 = sig[1] * capture_fraction(roi, np.maximum(dt, 0.0), tc[1], sg2)
    c1 = t1 + acc[0] - t1 * acc[0]
    c2 = t2 + acc[1] - t2 * acc[1]
    true_d = q[:, 0, 0] * t1 * t2
    total_d = q[:, 0, 0] * c1 * c2 + q[:, 0, 1] * c1 * acc[1] + q[:, 1, 0] * acc[0] * c2 + q[:, 1, 1] * acc[0] * acc[1]
    scale = R[0] * R[1] * PS * eta_h**2
    true = scale * float(np.sum(wt * in_window * true_d))
    accidental = scale * float(np.sum(wt * in_window * (total_d - true_d)))
    heralds = scale * float(np.sum(wt * in_window * q.sum(axis=(1, 2))))

    # Two idlers from one source: independent routing, 1/4 chance per herald kind.
    for k in range(2):
        other = 1 - k
        pair_rate = R[k] ** 2 * W * PS * eta_h**2 * 0.25
        f = float(capture_fraction(roi, 0.0, tc[k], (sg1, sg2)[k]))
        one = 0.5 * sig[k] * f
        captured = 1.0 - (1.0 - one) ** 2
        accidental += pair_rate * (captured + (1 - captured) * acc[k]) * acc[other]
        heralds += pair_rate
    return FourfoldBreakdown(true, accidental, heralds)


def expected_counts_table(cfg: ScenarioConfig, roi: float, herald: BellKind = BellKind.PSI_MINUS,
                          settings=None, duration: float = 1.0, bsm_window: float | None = None,
                          rotations=None) -> dict[tuple[float, float], float]:
    """Expected fourfold counts for the 16 CHSH dwell settings."""
    a, a2, b, b2 = settings or cfg.analysis.settings_hwp
    out = {}
    for x in (a, a + 45.0, a2, a2 + 45.0):
        for y in (b, b + 45.0, b2, b2 + 45.0):
            r = expected_fourfold_rate(cfg, x, y, roi, herald, bsm_window, rotations)
            out[(x, y)] = r.total * duration
    return out


def expected_s(cfg: ScenarioConfig, roi: float, herald: BellKind = BellKind.PSI_MINUS, settings=None,
               bsm_window: float | None = None) -> float:
    settings = settings or cfg.analysis.settings_hwp
    table = expected_counts_table(cfg, roi, herald, settings, 1.0, bsm_window)
    return chsh_from_counts(table, settings).S


def heralded_two_photon_state(cfg: ScenarioConfig, herald: BellKind, dt: float = 0.0) -> TwoQubitState:
    """Heralded signal-photon state for idler separation ``dt`` (no accidentals)."""
    from ..bsm import heralded_state, pair_overlap

    v = float(pair_overlap(dt, cfg.hub.bsm, cfg.overlap_width))
    return heralded_state(cfg.spokes[0].source.emitted_state, cfg.spokes[1].source.emitted_state, herald, v,
                          cfg.hub.bsm.paddle)


def effective_hom_visibility(cfg: ScenarioConfig, bsm_window: float | None = None) -> float:
    """Mode overlap averaged over herald separations uniform in the BSM window."""
    W = cfg.analysis.bsm_window if bsm_window is None else bsm_window
    ow = cfg.overlap_width
    return cfg.hub.bsm.hom_visibility * ow / W * (1.0 - math.exp(-W / ow))


def spoke_of(cfg: ScenarioConfig, label: str) -> tuple[int, SpokeConfig]:
    for k, s in enumerate(cfg.spokes):
        if s.label == label:
            return k, s
    raise KeyError(label)
