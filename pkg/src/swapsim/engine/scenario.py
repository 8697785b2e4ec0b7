"""Photon-level simulation of the two-spoke swapping network.

Time runs in chunks aligned with the dwell grid.  Within a chunk:

1. Each source's pairs are split (marked Poisson thinning) into pairs
   whose idler reaches the BSM splitter and pairs whose idler is lost; the
   latter only contribute their signal photon, as a Poisson stream.
2. Idlers at the BSM are paired across sources in time order; pairs
   interfere with probability equal to their mode overlap.  Outcomes (which
   hub detector fires, whether each signal passes its analyzer) are drawn
   jointly from the exact outcome tables of the current polarization state.
3. Photons go through streaming detector models, then node clocks.
4. Optionally, tags are gated to those that can take part in a fourfold
   coincidence, with per-dwell singles and pair monitors kept first.

The drift of each idler link is held constant within a chunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..bsm import joint_outcome_tables, pair_overlap, single_outcome_table
from ..detector import StreamingDetector, TagStream
from ..fiber import LinkDrift, db_to_transmission
from ..polarization import PolarizationOperator, analyzer_projector, apply_local
from ..rng import derive_rng
from ..source import SourceParams, poisson_times, sample_emissions
from .config import HUB_PORTS, ScenarioConfig
from .oracle import idler_transmission

EPOCH_PS = 10**10  # hub-frame start of the first dwell; keeps offset timestamps positive
PAIRING_HORIZON_WIDTHS = 10.0
DELAY_GUARD_WIDTHS = 40.0


@dataclass(frozen=True)
class DwellAnnotation:
    index: int
    hwp1: float
    hwp2: float
    kind: str
    start: int  # ps, hub clock
    end: int
    frames: dict  # node label -> (start, end) in that node's clock

    @property
    def duration_s(self) -> float:
        return (self.end - self.start) * 1e-12

    def to_json(self) -> dict:
        return {"index": self.index, "hwp1_deg": self.hwp1, "hwp2_deg": self.hwp2, "kind": self.kind,
                "start_ps": self.start, "end_ps": self.end,
                "frames": {k: [int(a), int(b)] for k, (a, b) in self.frames.items()}}

    @classmethod
    def from_json(cls, d: dict) -> DwellAnnotation:
        return cls(d["index"], d["hwp1_deg"], d["hwp2_deg"], d["kind"], d["start_ps"], d["end_ps"],
                   {k: (int(a), int(b)) for k, (a, b) in d["frames"].items()})


@dataclass(eq=False)
class TagDataset:
    """Per-channel tag streams plus run metadata."""

    streams: dict[int, TagStream]
    channel_map: dict[str, int]
    dwells: list[DwellAnnotation]
    metadata: dict = field(default_factory=dict)

    @property
    def spoke_labels(self) -> list[str]:
        return [k for k in self.channel_map if k not in HUB_PORTS]

    @property
    def spoke_efficiencies(self) -> tuple[float, ...]:
        return tuple(self.metadata.get("spoke_efficiencies", (1.0, 1.0)))

    @property
    def t_start(self) -> int:
        return int(self.metadata.get("t_start_ps", 0))

    @property
    def t_end(self) -> int:
        return int(self.metadata.get("t_end_ps", 0))

    def stream(self, label: str) -> TagStream:
        return self.streams[self.channel_map[label]]

    def live_time(self, dwell_indices=None) -> float:
        idx = range(len(self.dwells)) if dwell_indices is None else dwell_indices
        return float(sum(self.dwells[i].duration_s for i in idx))

    def blind(self) -> TagDataset:
        return TagDataset({ch: s.blind() for ch, s in self.streams.items()}, dict(self.channel_map),
                          list(self.dwells), dict(self.metadata))

    def __eq__(self, other):
        return (isinstance(other, TagDataset) and self.channel_map == other.channel_map
                and self.streams.keys() == other.streams.keys()
                and all(self.streams[c] == other.streams[c] for c in self.streams)
                and [d.to_json() for d in self.dwells] == [d.to_json() for d in other.dwells])


def _chunks(cfg: ScenarioConfig):
    """Yield (chunk_index, dwell_index, t0, t1) in the hub arrival frame (true time, ps)."""
    step = int(round(cfg.chunk * 1e12))
    t = EPOCH_PS
    c = 0
    for i, d in enumerate(cfg.dwells):
        end = t + int(round(d.duration * 1e12))
        while t < end:
            t1 = min(t + step, end)
            yield c, i, t, t1
            c += 1
            t = t1


def _sample_categories(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1)


class _HubBatch:
    """Hub tags of one batch merged across channels."""

    def __init__(self, batch, hub_channels):
        parts = [batch[ch].timestamps for ch in hub_channels]
        self.offsets = np.cumsum([0] + [p.size for p in parts]).astype(np.int64)
        values = np.concatenate(parts) if parts else np.empty(0, np.int64)
        self.order = _kernels.merge_order(values, self.offsets)
        self.merged = values[self.order]


def _near_context(ts, context, gate):
    """Whether each of ``ts`` has an element of sorted ``context`` within ``gate``."""
    if context is None or context.size == 0 or ts.size == 0:
        return np.zeros(ts.size, dtype=bool)
    lo = np.searchsorted(context, ts[0] - gate)
    hi = np.searchsorted(context, ts[-1] + gate, side="right")
    if hi <= lo:
        return np.zeros(ts.size, dtype=bool)
    return _kernels.nearest_distance(ts, context[lo:hi], np.int64(0)) <= gate


class _Gate:
    """Coincidence gate applied one batch late, with neighbouring batches as context."""

    def __init__(self, hub_channels, spoke_channels, centers, hub_gate, spoke_gate):
        self.hub_channels = list(hub_channels)
        self.spoke_channels = list(spoke_channels)
        self.centers = centers  # spoke channel -> expected (spoke - hub) offset
        self.hub_gate = np.int64(hub_gate)
        self.spoke_gate = np.int64(spoke_gate)
        self.prev = self.held = None  # (batch, _HubBatch)
        self.prev_kept = np.empty(0, np.int64)
        self.kept: dict[int, list] = {ch: [] for ch in self.hub_channels + self.spoke_channels}

    def push(self, batch):
        item = None if batch is None else (batch, _HubBatch(batch, self.hub_channels))
        if self.held is not None:
            self._decide(self.prev, self.held, item)
        self.prev, self.held = self.held, item

    def finish(self):
        self.push(None)
        self.push(None)

    def _near(self, hub, *context):
        near = _kernels.has_neighbor_within(hub.merged, self.hub_gate)
        for c in context:
            if c is not None:
                near |= _near_context(hub.merged, c[1].merged, self.hub_gate)
        return near

    def _decide(self, prev, held, nxt):
        batch, hub = held
        near = self._near(hub, prev, nxt)
        keep_concat = np.empty(near.size, dtype=bool)
        keep_concat[hub.order] = near
        for k, ch in enumerate(self.hub_channels):
            self.kept[ch].append(batch[ch][keep_concat[hub.offsets[k]:hub.offsets[k + 1]]])
        kept_held = hub.merged[near]
        parts = [self.prev_kept, kept_held]
        if nxt is not None:
            # Provisional status of the next batch; only its head matters here.
            parts.append(nxt[1].merged[self._near(nxt[1], held)])
        kept = np.sort(np.concatenate(parts))
        for ch in self.spoke_channels:
            s = batch[ch]
            if s.timestamps.size == 0:
                self.kept[ch].append(s)
                continue
            ref = s.timestamps - np.int64(self.centers[ch])
            self.kept[ch].append(s[_near_context(ref, kept, self.spoke_gate)])
        self.prev_kept = kept_held


def _apply_clock(stream: TagStream, offset: int, jitter: float, rng) -> TagStream:
    if stream.timestamps.size == 0:
        return stream
    t = stream.timestamps + np.int64(offset)
    if jitter > 0:
        t = t + np.rint(jitter * rng.standard_normal(t.size, dtype=np.float32)).astype(np.int64)
    flags = stream.flags
    if np.any(np.diff(t) < 0):
        order = np.argsort(t, kind="stable")
        t, flags = t[order], flags[order]
    return TagStream(stream.channel, t, flags)


def run_scenario(cfg: ScenarioConfig, progress=None) -> TagDataset:
    """Simulate every dwell of ``cfg`` and return the recorded tag dataset."""
    seed = cfg.master_seed
    spokes = cfg.spokes
    hub = cfg.hub
    ow = cfg.overlap_width
    horizon = PAIRING_HORIZON_WIDTHS * ow
    eye = PolarizationOperator.identity()

    fiber_delay = [s.idler_fiber.delay_ps for s in spokes]
    arm_delay = [s.signal_arm.delay_ps for s in spokes]
    t_pre = [idler_transmission(cfg, k) for k in range(2)]
    t_sig = [db_to_transmission(s.signal_arm.loss) for s in spokes]
    total_s = cfg.total_duration
    t_end_true = EPOCH_PS + int(round(total_s * 1e12))

    # Spoke node frame: signal of an idler reaching the hub at t is near t - d_fiber + d_arm.
    frame_shift = [int(round(arm_delay[k] - fiber_delay[k])) for k in range(2)]
    spoke_dets = [
        StreamingDetector(s.detector, EPOCH_PS + frame_shift[k],
                          arrival_spread=DELAY_GUARD_WIDTHS * s.source.coherence_time)
        for k, s in enumerate(spokes)
    ]
    hub_dets = [StreamingDetector(d, EPOCH_PS) for d in hub.detectors]
    drifts = [
        LinkDrift(s.idler_fiber, s.apc, derive_rng(seed, s.label, "drift"), step=cfg.chunk * 1e12, start=0.0)
        for s in spokes
    ]

    spoke_ch = [s.detector.channel for s in spokes]
    hub_ch = [d.channel for d in hub.detectors]
    centers = {spoke_ch[k]: frame_shift[k] + spokes[k].clock.offset - hub.clock.offset for k in range(2)}
    gate = _Gate(hub_ch, spoke_ch, centers, cfg.recording.hub_gate, cfg.recording.spoke_gate) \
        if cfg.recording.gated else None
    full: dict[int, list] = {ch: [] for ch in spoke_ch + hub_ch}

    n_dwells = len(cfg.dwells)
    monitors = {
        "singles": [[0] * 6 for _ in range(n_dwells)],
        "pair_signal": [[0, 0] for _ in range(n_dwells)],
        "pair_background": [[0, 0] for _ in range(n_dwells)],
    }
    mw = int(cfg.recording.monitor_window)
    bg_shift = 10 * mw
    apc_corrections = [0, 0]

    def node_clock(ch):
        if ch in hub_ch:
            return hub.clock
        return spokes[spoke_ch.index(ch)].clock

    def record(batch: dict[int, TagStream], dwell_idx: int, chunk_idx: int):
        clocked = {}
        for ch, s in batch.items():
            clk = node_clock(ch)
            clocked[ch] = _apply_clock(s, clk.offset, clk.sync_jitter_sigma, derive_rng(seed, "clock", ch, chunk_idx))
        mon = monitors
        order = spoke_ch + hub_ch
        for j, ch in enumerate(order):
            mon["singles"][dwell_idx][j] += int(clocked[ch].timestamps.size)
        hub_all = np.sort(np.concatenate([clocked[ch].timestamps for ch in hub_ch]))
        for k in range(2):
            st = clocked[spoke_ch[k]].timestamps
            c = centers[spoke_ch[k]]
            # Coincidences with spoke - hub in [c - mw, c + mw]; background window displaced.
            mon["pair_signal"][dwell_idx][k] += int(_kernels.twofold_count(hub_all, st, np.int64(c - mw), np.int64(c + mw)))
            mon["pair_background"][dwell_idx][k] += int(
                _kernels.twofold_count(hub_all, st, np.int64(c + bg_shift - mw), np.int64(c + bg_shift + mw)))
        if gate is not None:
            gate.push(clocked)
        else:
            for ch, s in clocked.items():
                full[ch].append(s)

    current_dwell = -1
    tables = None
    for c, i, t0, t1 in _chunks(cfg):
        dwell = cfg.dwells[i]
        rot = [drifts[k].advance(float(t0 - EPOCH_PS)) for k in range(2)]
        states = [apply_local(eye, rot[k], spokes[k].source.emitted_state) for k in range(2)]
        pa = analyzer_projector(2.0 * dwell.hwp1)
        pb = analyzer_projector(2.0 * dwell.hwp2)
        if i != current_dwell or any(d.fiber.drift_rate > 0 for d in drifts):
            P_ind, P_dist = joint_outcome_tables(states[0], states[1], pa, pb, hub.bsm.paddle)
            singles_tab = [single_outcome_table(states[0], pa, "a", hub.bsm.paddle),
                           single_outcome_table(states[1], pb, "b", hub.bsm.paddle)]
            marg_pass = [float(np.trace(pa @ states[0].reduced(0)).real),
                         float(np.trace(pb @ states[1].reduced(0)).real)]
            tables = (np.cumsum(P_ind.ravel()), np.cumsum(P_dist.ravel()),
                      [np.cumsum(t.ravel()) for t in singles_tab], marg_pass)
            current_dwell = i
        cdf_ind, cdf_dist, cdf_single, marg_pass = tables

        idler_t = []
        signal_t = []
        lost_signals = []
        for k, s in enumerate(spokes):
            e0, e1 = t0 - fiber_delay[k], t1 - fiber_delay[k]
            rng = derive_rng(seed, s.label, "emit", c)
            thinned = SourceParams(s.source.pair_rate * t_pre[k], s.source.coherence_time, s.source.emitted_state,
                                   s.label)
            em = sample_emissions(thinned, e0, e1, rng)
            idler_t.append(em.t_idler + fiber_delay[k])
            signal_t.append(em.t_signal + arm_delay[k])
            lost_rate = s.source.pair_rate * (1.0 - t_pre[k]) * t_sig[k] * marg_pass[k]
            lost_signals.append(poisson_times(lost_rate, e0, e1, rng) + arm_delay[k])

        rng = derive_rng(seed, "bsm", c)
        nA, nB = idler_t[0].size, idler_t[1].size
        merged, src, pos = _kernels.merge_sorted(idler_t[0], idler_t[1])
        first, second = _kernels.pair_adjacent(merged, src, horizon)
        first_is_a = src[first] == 0
        a_idx = np.where(first_is_a, pos[first], pos[second])
        b_idx = np.where(first_is_a, pos[second], pos[first])

        xA = np.ones(nA, np.int8)
        xB = np.ones(nB, np.int8)
        mA = np.empty(nA, np.int8)
        mB = np.empty(nB, np.int8)
        if a_idx.size:
            dt = idler_t[1][b_idx] - idler_t[0][a_idx]
            v = pair_overlap(dt, hub.bsm, ow)
            interfere = rng.random(a_idx.size) < v
            u = rng.random(a_idx.size)
            cat = np.where(interfere, _sample_categories(cdf_ind, u), _sample_categories(cdf_dist, u))
            xA[a_idx] = cat // 32
            xB[b_idx] = (cat // 16) % 2
            mA[a_idx] = (cat // 4) % 4
            mB[b_idx] = cat % 4
        for k, (x, m, n, paired) in enumerate(((xA, mA, nA, a_idx), (xB, mB, nB, b_idx))):
            alone = np.ones(n, dtype=bool)
            alone[paired] = False
            cnt = int(alone.sum())
            if cnt:
                cat = _sample_categories(cdf_single[k], rng.random(cnt))
                x[alone] = cat // 4
                m[alone] = cat % 4

        batch: dict[int, TagStream] = {}
        rng_det = derive_rng(seed, "detect", c)
        for j, d in enumerate(hub_dets):
            arrivals = _kernels.merge_sorted(idler_t[0][mA == j], idler_t[1][mB == j])[0]
            batch[hub_ch[j]] = d.push(arrivals, float(t1), rng_det)
        for k, (x, d) in enumerate(zip((xA, xB), spoke_dets)):
            passed = signal_t[k][x == 0]
            if t_sig[k] < 1:
                passed = passed[rng_det.random(passed.size) < t_sig[k]]
            arrivals = np.sort(np.concatenate([passed, lost_signals[k]]), kind="stable")
            batch[spoke_ch[k]] = d.push(arrivals, float(t1 + frame_shift[k]), rng_det)
        record(batch, i, c)
        if progress is not None:
            progress(c, t1 - EPOCH_PS, total_s * 1e12)

    # Drain detectors; leftovers belong to the last dwell.
    rng_det = derive_rng(seed, "detect", "flush")
    last = {}
    for j, d in enumerate(hub_dets):
        last[hub_ch[j]] = d.flush(float(t_end_true), rng_det)
    for k, d in enumerate(spoke_dets):
        last[spoke_ch[k]] = d.flush(float(t_end_true + frame_shift[k]), rng_det)
    record(last, n_dwells - 1, -1)
    if gate is not None:
        gate.finish()
        parts = gate.kept
    else:
        parts = full
    apc_corrections = [d.corrections for d in drifts]

    # Node frames and annotations.
    frames_offset = {"hub": hub.clock.offset}
    for k, s in enumerate(spokes):
        frames_offset[s.label] = frame_shift[k] + s.clock.offset
    annotations = []
    t = EPOCH_PS
    for i, d in enumerate(cfg.dwells):
        end = t + int(round(d.duration * 1e12))
        frames = {name: (t + off, end + off) for name, off in frames_offset.items()}
        annotations.append(DwellAnnotation(i, d.hwp1, d.hwp2, d.kind, t + hub.clock.offset, end + hub.clock.offset,
                                           frames))
        t = end

    streams = {}
    for ch in spoke_ch + hub_ch:
        s = TagStream.concat(parts[ch], ch)
        if ch in hub_ch:
            lo, hi = annotations[0].frames["hub"][0], annotations[-1].frames["hub"][1]
        else:
            label = spokes[spoke_ch.index(ch)].label
            lo, hi = annotations[0].frames[label][0], annotations[-1].frames[label][1]
        keep = (s.timestamps >= lo) & (s.timestamps < hi)
        streams[ch] = s if keep.all() else TagStream(ch, s.timestamps[keep], s.flags[keep])

    t_start = min(a for a, _ in annotations[0].frames.values())
    t_stop = max(b for _, b in annotations[-1].frames.values())
    metadata = {
        "scenario": cfg.name,
        "seed": int(seed),
        "config_hash": cfg.config_hash(),
        "config": cfg.document,
        "t_start_ps": int(t_start),
        "t_end_ps": int(t_stop),
        "gated": cfg.recording.gated,
        "recording": {"hub_gate_ps": cfg.recording.hub_gate, "spoke_gate_ps": cfg.recording.spoke_gate,
                      "monitor_window_ps": cfg.recording.monitor_window, "monitor_background_shift_ps": bg_shift},
        "spoke_efficiencies": [s.detector.efficiency for s in spokes],
        "nominal_centers_ps": {spokes[k].label: int(centers[spoke_ch[k]]) for k in range(2)},
        "monitor_channels": [*(s.label for s in spokes), *HUB_PORTS],
        "monitors": monitors,
        "apc_corrections": apc_corrections,
        "source_pair_rates_hz": [s.source.pair_rate for s in spokes],
        "coherence_times_ps": [s.source.coherence_time for s in spokes],
    }
    return TagDataset(streams, cfg.channel_map, annotations, metadata)


def monitor_summary(dataset: TagDataset) -> dict:
    """Run-average singles and spoke-hub pair rates from the per-dwell monitors.

    The pair rate subtracts the displaced-window background and doubles the
    result: the spoke photons have an unpolarized marginal, so the analyzer
    passes half of them at every setting.
    """
    mon = dataset.metadata["monitors"]
    live = dataset.live_time()
    names = dataset.metadata["monitor_channels"]
    singles = np.sum(mon["singles"], axis=0) / live
    sig = np.sum(mon["pair_signal"], axis=0)
    bg = np.sum(mon["pair_background"], axis=0)
    spokes = names[:2]
    return {
        "singles_hz": {n: float(r) for n, r in zip(names, singles)},
        "pair_rate_hz": {spokes[k]: float(2.0 * (sig[k] - bg[k]) / live) for k in range(2)},
        "pair_rate_error_hz": {spokes[k]: float(2.0 * math.sqrt(sig[k] + bg[k]) / live) for k in range(2)},
    }
