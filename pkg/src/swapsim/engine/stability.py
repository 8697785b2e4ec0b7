"""Long-run link stability: pair rate, fringe visibilities and S versus time.

One spoke-to-hub link is followed for hours.  Every sample interval a
short burst is "acquired": the link rotation comes from the Monte Carlo
drift + APC state machine, while the coincidence counts are Poisson draws
around closed-form rates (true pairs captured in the window plus
accidentals from the singles), not a photon-level run.  The hub analyzer
for the idler is an ideal linear polarizer after the drifted fiber.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from ..chsh import chsh_from_counts, setting_grid
from ..errors import InvalidArgument
from ..fiber import LinkDrift
from ..polarization import PolarizationOperator, apply_local, joint_projection_prob
from ..rng import derive_rng
from .config import ScenarioConfig
from .oracle import capture_fraction, detected_pair_rate, expected_singles, spoke_of

STABILITY_COLUMNS = ("t_hours", "pair_rate_hz", "visibility_hv", "visibility_diag", "S", "S_error",
                     "rotation_rad", "apc_corrections")
# (spoke HWP, hub HWP) pairs for the two fringe visibilities: H/V basis, then diagonal basis.
HV_SETTINGS = ((0.0, 0.0), (45.0, 0.0))
DIAG_SETTINGS = ((22.5, 22.5), (67.5, 22.5))


@dataclass(frozen=True)
class StabilityRow:
    t_hours: float
    pair_rate_hz: float
    visibility_hv: float
    visibility_diag: float
    S: float
    S_error: float
    rotation_rad: float  # link rotation angle at the start of the burst
    apc_corrections: int  # cumulative

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in STABILITY_COLUMNS)


@dataclass(frozen=True)
class LinkModel:
    """Closed-form rates of one spoke-to-hub link."""

    pair_rate: float  # detected pairs/s, analyzers removed
    capture: float  # fraction of true pairs inside the analysis ROI
    capture_monitor: float  # fraction inside the pair-rate window
    spoke_singles: float  # /s behind the spoke analyzer (unpolarized marginal)
    hub_singles: float  # /s behind the hub analyzer
    roi: float  # ps half-width
    monitor_window: float  # ps half-width

    def coincidence_rate(self, joint_pass: float) -> float:
        acc = self.spoke_singles * self.hub_singles * 2.0 * self.roi * 1e-12
        return self.pair_rate * self.capture * joint_pass + acc

    @property
    def visibility(self) -> float:
        """Fringe visibility of an ideal state through this link: true / (true + accidental)."""
        true = self.pair_rate * self.capture * 0.5
        acc = self.spoke_singles * self.hub_singles * 2.0 * self.roi * 1e-12
        return true / (true + acc)


def link_model(cfg: ScenarioConfig, spoke: str | None = None, roi: float | None = None) -> LinkModel:
    st = cfg.stability
    k, s = spoke_of(cfg, spoke or st.spoke)
    roi = float(roi if roi is not None else st.roi)
    hub_j = float(np.mean([d.jitter_sigma for d in cfg.hub.detectors]))
    sigma = math.sqrt(s.detector.jitter_sigma**2 + hub_j**2 + s.clock.sync_jitter_sigma**2
                      + cfg.hub.clock.sync_jitter_sigma**2)
    tc = s.source.coherence_time
    singles = expected_singles(cfg)
    hub = sum(singles[p] for p in ("Port1-H", "Port1-V", "Port2-H", "Port2-V"))
    return LinkModel(
        pair_rate=detected_pair_rate(cfg, k),
        capture=float(capture_fraction(roi, 0.0, tc, sigma)),
        capture_monitor=float(capture_fraction(st.coincidence_window, 0.0, tc, sigma)),
        spoke_singles=singles[s.label],
        hub_singles=0.5 * hub,
        roi=roi,
        monitor_window=st.coincidence_window,
    )


def _visibility(c_max: float, c_min: float) -> float:
    tot = c_max + c_min
    return float((c_max - c_min) / tot) if tot > 0 else math.nan


def run_stability(cfg: ScenarioConfig, total_hours: float | None = None, sample_interval_s: float | None = None,
                  apc_enabled: bool | None = None, seed: int | None = None) -> list[StabilityRow]:
    """Sampled time series of the link observables.

    ``apc_enabled`` overrides the link's compensation setting; ``seed``
    overrides the config's master seed.
    """
    st = cfg.stability
    hours = float(total_hours if total_hours is not None else st.hours)
    interval = float(sample_interval_s if sample_interval_s is not None else st.sample_interval)
    if not hours > 0:
        raise InvalidArgument(f"hours must be > 0, got {hours}")
    if not interval > 0:
        raise InvalidArgument(f"sample interval must be > 0, got {interval}")
    seed = cfg.master_seed if seed is None else int(seed)
    k, spoke = spoke_of(cfg, st.spoke)
    apc = spoke.apc if apc_enabled is None else replace(spoke.apc, enabled=bool(apc_enabled))
    model = link_model(replace(cfg, spokes=tuple(replace(s, apc=apc) if i == k else s
                                                 for i, s in enumerate(cfg.spokes))))
    settings_hwp = cfg.analysis.settings_hwp
    chsh = setting_grid(settings_hwp)
    plan = list(HV_SETTINGS) + list(DIAG_SETTINGS) + chsh
    dwell = st.burst / (len(plan) + 1)  # last slot: pair-rate measurement without analyzers
    drift = LinkDrift(spoke.idler_fiber, apc, derive_rng(seed, spoke.label, "stability-drift"),
                      step=apc.check_interval * 1e12, start=0.0)
    rng = derive_rng(seed, spoke.label, "stability-counts")
    eye = PolarizationOperator.identity()
    total_s = hours * 3600.0
    n_samples = max(1, int(math.ceil(total_s / interval - 1e-9)))
    acc_monitor = model.spoke_singles * 2.0 * model.hub_singles * 2.0 * model.monitor_window * 1e-12

    rows = []
    for i in range(n_samples):
        t0 = i * interval
        counts = {}
        angle0 = None
        for j, (h1, h2) in enumerate(plan):
            u = drift.advance((t0 + j * dwell) * 1e12)
            if angle0 is None:
                angle0 = u.rotation_angle
            state = apply_local(eye, u, spoke.source.emitted_state)
            p = joint_projection_prob(state, 2.0 * h1, 2.0 * h2)
            counts[(h1, h2, j < 4)] = float(rng.poisson(model.coincidence_rate(p) * dwell))
        drift.advance((t0 + len(plan) * dwell) * 1e12)
        sig = rng.poisson((model.pair_rate * model.capture_monitor + acc_monitor) * dwell)
        bg = rng.poisson(acc_monitor * dwell)
        v_hv = _visibility(counts[(*HV_SETTINGS[0], True)], counts[(*HV_SETTINGS[1], True)])
        v_d = _visibility(counts[(*DIAG_SETTINGS[0], True)], counts[(*DIAG_SETTINGS[1], True)])
        table = {(h1, h2): counts[(h1, h2, False)] for h1, h2 in chsh}
        res = chsh_from_counts(table, settings_hwp)
        rows.append(StabilityRow(t0 / 3600.0, float(sig - bg) / dwell, v_hv, v_d, res.S, res.standard_error,
                                 float(angle0), drift.corrections))
    return rows


def stability_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STABILITY_COLUMNS)
    for r in rows:
        w.writerow([f"{r.t_hours:.6f}", f"{r.pair_rate_hz:.3f}", f"{r.visibility_hv:.6f}", f"{r.visibility_diag:.6f}",
                    f"{r.S:.6f}", f"{r.S_error:.6f}", f"{r.rotation_rad:.6f}", r.apc_corrections])
    return buf.getvalue()
