"""Shared builders for tests: scenario documents and synthetic tag datasets."""

from __future__ import annotations

import copy

import numpy as np

from swapsim.detector import TagStream
from swapsim.engine.config import HUB_PORTS
from swapsim.engine.scenario import DwellAnnotation, TagDataset

MINI_DOC = {
    "name": "mini",
    "master_seed": 5,
    "spokes": [
        {"label": "S1", "source": {"detected_pair_rate_hz": 1.7e6, "g2_peak": 80, "state": "phi+"},
         "detector": {"type": "spad", "channel": 1}},
        {"label": "S2", "source": {"detected_pair_rate_hz": 1.3e6, "g2_peak": 80, "state": "phi+"},
         "idler_link": {"loss_db": 1.0}, "detector": {"type": "spad", "channel": 2}},
    ],
    "hub": {"detectors": {"type": "snspd", "efficiency": 0.85, "channels": [3, 4, 5, 6]}},
    "acquisition": {
        "chsh": {"settings_hwp_deg": [0, 22.5, 11.25, 33.75], "dwell_s": 0.1},
        "fringes": {"hwp1_deg": [0, 15, 30, 45, 60, 75, 90], "hwp2_deg": [0, 22.5], "dwell_s": 0.05},
    },
}

_IDEAL_DET = {"efficiency": 1.0, "jitter_ps": 0.0, "dark_rate_hz": 0.0, "dead_time_ps": 0.0}


def mini_doc(**overrides) -> dict:
    doc = copy.deepcopy(MINI_DOC)
    doc.update(overrides)
    return doc


def ideal_doc(pair_rate: float = 2e6, chsh_dwell: float = 5.0, bsm_window: float = 300.0, seed: int = 11) -> dict:
    """Lossless, noiseless, perfectly indistinguishable sources with a very high g2 peak.

    Multi-pair emission is the only remaining source of accidentals; the
    narrow herald window keeps its bias on S well below the statistical
    error of a ~1e4-fourfold run.
    """

    def spoke(label, ch):
        return {"label": label, "source": {"pair_rate_hz": pair_rate, "g2_peak": 1e4, "state": "phi+"},
                "detector": {"type": "snspd", "channel": ch, **_IDEAL_DET},
                "clock": {"offset_ps": 0, "sync_jitter_ps": 0.0}}

    return {
        "name": "ideal",
        "master_seed": seed,
        "spokes": [spoke("S1", 1), spoke("S2", 2)],
        "hub": {"bsm": {"excess_loss_db": 0.0, "hom_visibility": 1.0, "overlap_width_ps": 1e9},
                "detectors": {"type": "snspd", "channels": [3, 4, 5, 6], **_IDEAL_DET},
                "clock": {"offset_ps": 0, "sync_jitter_ps": 0.0}},
        "acquisition": {"chsh": {"settings_hwp_deg": [0, 22.5, 11.25, 33.75], "dwell_s": chsh_dwell},
                        "fringes": {"hwp1_deg": [0], "hwp2_deg": [0], "dwell_s": 0.01}},
        "analysis": {"bsm_window_ps": bsm_window},
    }


def synthetic_dataset(rng: np.random.Generator, n_max: int = 10_000, span: int = 10**8,
                      n_dwells: int = 3) -> TagDataset:
    """Random tag streams with planted fourfold structure.

    Hub clicks come partly in close pairs (so heralds exist) and spoke tags
    partly at fixed offsets from them, plus uniform background; all
    timestamps are integers so exact comparisons are meaningful.
    """
    labels = ["S1", "S2"]
    channel_map = {"S1": 1, "S2": 2, **{p: 3 + i for i, p in enumerate(HUB_PORTS)}}
    n_events = int(rng.integers(0, n_max // 3 + 1))
    base = np.sort(rng.integers(0, span, n_events))
    gap = rng.integers(0, 1500, n_events)
    det_a = rng.integers(0, 4, n_events)
    det_b = rng.integers(0, 4, n_events)
    hub = [[] for _ in range(4)]
    for d in range(4):
        hub[d].append(base[det_a == d])
        hub[d].append(base[det_b == d] + gap[det_b == d])
        hub[d].append(rng.integers(0, span, int(rng.integers(0, n_max // 4 + 1))))
    spokes = []
    for k, center in enumerate((850, -1320)):
        keep = rng.random(n_events) < 0.7
        planted = base[keep] + center + rng.integers(-3000, 3000, int(keep.sum()))
        noise = rng.integers(0, span, int(rng.integers(0, n_max // 3 + 1)))
        spokes.append(np.concatenate([planted, noise]))
    streams = {}
    for k, label in enumerate(labels):
        t = np.unique(np.clip(spokes[k], 0, None)).astype(np.int64)[:n_max]
        streams[channel_map[label]] = TagStream(channel_map[label], t, np.zeros(t.size, np.uint16))
    for d, port in enumerate(HUB_PORTS):
        t = np.unique(np.concatenate(hub[d])).astype(np.int64)[:n_max]
        streams[channel_map[port]] = TagStream(channel_map[port], t, np.zeros(t.size, np.uint16))
    edges = np.linspace(0, span + 5000, n_dwells + 1).astype(np.int64)
    dwells = []
    for i in range(n_dwells):
        a, b = int(edges[i]), int(edges[i + 1])
        frames = {"hub": (a, b), "S1": (a, b), "S2": (a, b)}
        dwells.append(DwellAnnotation(i, 0.0, 0.0, "custom", a, b, frames))
    return TagDataset(streams, channel_map, dwells, {"spoke_efficiencies": [1.0, 1.0]})
