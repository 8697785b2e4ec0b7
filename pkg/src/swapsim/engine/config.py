"""Scenario configuration: JSON schema, validation and typed records.

A scenario is a JSON document describing two spokes (source, idler link to
the hub, local signal arm, SPAD, clock), the hub (BSM optics, four
SNSPDs, clock), an acquisition plan of waveplate dwells and defaults for
recording, analysis and stability runs.  Unknown fields are rejected and
every failure carries the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from ..bsm import BsmParams
from ..detector import DetectorParams
from ..errors import ConfigError, InvalidArgument
from ..fiber import ApcParams, FiberParams
from ..polarization import BellKind, PolarizationOperator, bell_state
from ..source import SourceParams, coherence_time_for_g2

HUB_PORTS = ("Port1-H", "Port1-V", "Port2-H", "Port2-V")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_CHANNEL = {"type": "integer", "minimum": 0, "maximum": 65535}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_DETECTOR_OVERRIDES = {
    "type": {"enum": ["spad", "snspd"]},
    "efficiency": _PROB,
    "jitter_ps": _NONNEG,
    "dead_time_ps": _NONNEG,
    "dark_rate_hz": _NONNEG,
}

_CLOCK = _obj({"offset_ps": {"type": "integer"}, "sync_jitter_ps": _NONNEG})

_FIBER = {
    "length_km": _NONNEG,
    "loss_db": _NONNEG,
    "delay_ps": {"anyOf": [_NONNEG, {"type": "null"}]},
}

SCHEMA: dict = _obj(
    {
        "name": {"type": "string", "minLength": 1},
        "notes": {"type": "string"},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "spokes": {
            "type": "array",
            "minItems": 2,
            "maxItems": 2,
            "items": _obj(
                {
                    "label": {"type": "string", "minLength": 1},
                    "source": _obj(
                        {
                            "pair_rate_hz": _POS,
                            "detected_pair_rate_hz": _POS,
                            "g2_peak": {"type": "number", "exclusiveMinimum": 1},
                            "coherence_time_ps": _POS,
                            "state": {"enum": [k.value for k in BellKind]},
                        },
                    ),
                    "idler_link": _obj(
                        {
                            **_FIBER,
                            "drift_rate_rad_per_sqrt_h": _NONNEG,
                            "apc": _obj(
                                {
                                    "enabled": {"type": "boolean"},
                                    "check_interval_s": _POS,
                                    "tolerance_rad": _NONNEG,
                                    "insertion_loss_db": _NONNEG,
                                }
                            ),
                        }
                    ),
                    "signal_arm": _obj(dict(_FIBER)),
                    "detector": _obj({**_DETECTOR_OVERRIDES, "channel": _CHANNEL}, ["channel"]),
                    "clock": _CLOCK,
                },
                ["label", "source", "detector"],
            ),
        },
        "hub": _obj(
            {
                "bsm": _obj(
                    {
                        "excess_loss_db": _NONNEG,
                        "hom_visibility": _PROB,
                        "overlap_width_ps": {"anyOf": [_POS, {"type": "null"}]},
                        "paddle": {
                            "type": "array",
                            "minItems": 2,
                            "maxItems": 2,
                            "items": {
                                "type": "array",
                                "minItems": 2,
                                "maxItems": 2,
                                "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUM},
                            },
                        },
                    }
                ),
                "detectors": _obj(
                    {
                        **_DETECTOR_OVERRIDES,
                        "channels": {"type": "array", "minItems": 4, "maxItems": 4, "items": _CHANNEL},
                    },
                    ["channels"],
                ),
                "clock": _CLOCK,
            },
            ["detectors"],
        ),
        "acquisition": _obj(
            {
                "chsh": _obj(
                    {
                        "settings_hwp_deg": {"type": "array", "minItems": 4, "maxItems": 4, "items": _NUM},
                        "dwell_s": _POS,
                        "n_cycles": {"type": "integer", "minimum": 1},
                    }
                ),
                "fringes": _obj(
                    {
                        "hwp1_deg": {"type": "array", "minItems": 1, "items": _NUM},
                        "hwp2_deg": {"type": "array", "minItems": 1, "items": _NUM},
                        "dwell_s": _POS,
                    }
                ),
                "dwells": {
                    "type": "array",
                    "items": _obj({"hwp1_deg": _NUM, "hwp2_deg": _NUM, "duration_s": _POS},
                                  ["hwp1_deg", "hwp2_deg", "duration_s"]),
                },
                "n_cycles": {"type": "integer", "minimum": 1},
                "paper_scale": _obj(
                    {
                        "chsh_dwell_s": _POS,
                        "chsh_n_cycles": {"type": "integer", "minimum": 1},
                        "fringe_dwell_s": _POS,
                    }
                ),
            }
        ),
        "recording": _obj(
            {
                "gated": {"type": "boolean"},
                "hub_gate_ps": _POS,
                "spoke_gate_ps": _POS,
                "monitor_window_ps": _POS,
            }
        ),
        "engine": _obj({"chunk_s": _POS}),
        "analysis": _obj(
            {
                "bsm_window_ps": _POS,
                "roi_list_ps": {"type": "array", "minItems": 1, "items": _POS},
                "herald": {"enum": ["psi+", "psi-"]},
                "offset_bin_ps": _POS,
            }
        ),
        "stability": _obj(
            {
                "spoke": {"type": "string"},
                "hours": _POS,
                "sample_interval_s": _POS,
                "burst_s": _POS,
                "roi_ps": _POS,
                "coincidence_window_ps": _POS,
            }
        ),
    },
    ["name", "master_seed", "spokes", "hub"],
)


@dataclass(frozen=True)
class ClockModel:
    offset: int = 0  # ps
    sync_jitter_sigma: float = 30.0  # ps

    def __post_init__(self):
        if self.sync_jitter_sigma < 0:
            raise InvalidArgument(f"sync_jitter_sigma must be >= 0, got {self.sync_jitter_sigma}")


@dataclass(frozen=True)
class SpokeConfig:
    label: str
    source: SourceParams
    idler_fiber: FiberParams
    apc: ApcParams
    signal_arm: FiberParams
    detector: DetectorParams
    clock: ClockModel


@dataclass(frozen=True)
class HubConfig:
    bsm: BsmParams
    detectors: tuple[DetectorParams, ...]  # Port1-H, Port1-V, Port2-H, Port2-V
    clock: ClockModel


@dataclass(frozen=True)
class Dwell:
    hwp1: float  # deg, S1 spoke waveplate
    hwp2: float  # deg, S2 spoke waveplate
    duration: float  # s
    kind: str = "custom"  # "chsh", "fringe" or "custom"


@dataclass(frozen=True)
class RecordingParams:
    """Coincidence-gated storage.

    With ``gated`` on, a hub tag is kept only if another hub tag lies
    within ``hub_gate`` and a spoke tag only if it lies within
    ``spoke_gate`` of the expected partner position of a kept hub tag.
    Analyses with herald windows <= hub_gate and ROIs well inside
    spoke_gate are unaffected.
    """

    gated: bool = True
    hub_gate: float = 2_000.0  # ps
    spoke_gate: float = 20_000.0  # ps
    monitor_window: float = 10_000.0  # ps, half-width for spoke-hub pair monitors


@dataclass(frozen=True)
class AnalysisDefaults:
    bsm_window: float = 1_000.0  # ps
    roi_list: tuple[float, ...] = (500.0, 750.0, 1000.0, 1500.0, 2000.0, 3000.0, 4000.0, 5000.0)
    herald: BellKind = BellKind.PSI_MINUS
    settings_hwp: tuple[float, float, float, float] = (0.0, 22.5, 11.25, 33.75)
    offset_bin: float = 100.0  # ps


@dataclass(frozen=True)
class StabilityParams:
    spoke: str = "S1"
    hours: float = 30.0
    sample_interval: float = 600.0  # s
    burst: float = 60.0  # s of acquisition per sample, split evenly over the settings
    roi: float = 2_000.0  # ps half-width
    coincidence_window: float = 10_000.0  # ps half-width for pair-rate counting


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    master_seed: int
    spokes: tuple[SpokeConfig, SpokeConfig]
    hub: HubConfig
    dwells: tuple[Dwell, ...]
    recording: RecordingParams = field(default_factory=RecordingParams)
    chunk: float = 0.1  # s
    analysis: AnalysisDefaults = field(default_factory=AnalysisDefaults)
    stability: StabilityParams = field(default_factory=StabilityParams)
    document: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        channels = [s.detector.channel for s in self.spokes] + [d.channel for d in self.hub.detectors]
        if len(set(channels)) != len(channels):
            raise ConfigError("channels", f"channel ids must be unique, got {channels}")
        labels = [s.label for s in self.spokes]
        if len(set(labels)) != 2:
            raise ConfigError("spokes", f"spoke labels must be unique, got {labels}")

    @property
    def channel_map(self) -> dict[str, int]:
        out = {s.label: s.detector.channel for s in self.spokes}
        out.update({port: d.channel for port, d in zip(HUB_PORTS, self.hub.detectors)})
        return out

    @property
    def total_duration(self) -> float:
        return sum(d.duration for d in self.dwells)

    @property
    def overlap_width(self) -> float:
        if self.hub.bsm.overlap_width is not None:
            return self.hub.bsm.overlap_width
        return 0.5 * sum(s.source.coherence_time for s in self.spokes)

    def spoke(self, label: str) -> SpokeConfig:
        for s in self.spokes:
            if s.label == label:
                return s
        raise InvalidArgument(f"no spoke labelled {label!r}")

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.document).encode()).hexdigest()

    def with_dwells(self, dwells) -> ScenarioConfig:
        return replace(self, dwells=tuple(dwells))


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def validate_document(doc: Any) -> None:
    """Schema check; raises :class:`ConfigError` for the first error found (deterministic order)."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(_path(err.absolute_path) or "<root>", err.message)


def _detector(d: dict, defaults_type: str, channel: int, path: str) -> DetectorParams:
    kind = d.get("type", defaults_type)
    base = DetectorParams.spad(channel) if kind == "spad" else DetectorParams.snspd(channel)
    try:
        return DetectorParams(
            efficiency=d.get("efficiency", base.efficiency),
            jitter_sigma=d.get("jitter_ps", base.jitter_sigma),
            dead_time=d.get("dead_time_ps", base.dead_time),
            dark_rate=d.get("dark_rate_hz", base.dark_rate),
            channel=channel,
        )
    except InvalidArgument as exc:
        raise ConfigError(path, str(exc)) from None


def _fiber(d: dict, path: str, drift_key: str | None = None) -> FiberParams:
    try:
        return FiberParams(
            length=d.get("length_km", 0.0),
            loss=d.get("loss_db", 0.0),
            delay=d.get("delay_ps"),
            drift_rate=d.get(drift_key, 0.0) if drift_key else 0.0,
        )
    except InvalidArgument as exc:
        raise ConfigError(path, str(exc)) from None


def _clock(d: dict) -> ClockModel:
    return ClockModel(offset=int(d.get("offset_ps", 0)), sync_jitter_sigma=float(d.get("sync_jitter_ps", 30.0)))


def _dwells(acq: dict, paper_scale: bool) -> tuple[Dwell, ...]:
    scale = acq.get("paper_scale", {}) if paper_scale else {}
    out: list[Dwell] = []
    if "chsh" in acq:
        c = acq["chsh"]
        a, a2, b, b2 = c.get("settings_hwp_deg", AnalysisDefaults.settings_hwp)
        dwell = scale.get("chsh_dwell_s", c.get("dwell_s", 6.0))
        cycles = scale.get("chsh_n_cycles", c.get("n_cycles", 1))
        grid = [(x, y) for x in (a, a + 45.0, a2, a2 + 45.0) for y in (b, b + 45.0, b2, b2 + 45.0)]
        for _ in range(cycles):
            out.extend(Dwell(float(x), float(y), float(dwell), "chsh") for x, y in grid)
    if "fringes" in acq:
        f = acq["fringes"]
        dwell = scale.get("fringe_dwell_s", f.get("dwell_s", 3.0))
        for y in f.get("hwp2_deg", [0.0, 22.5]):
            out.extend(Dwell(float(x), float(y), float(dwell), "fringe") for x in f.get("hwp1_deg", []))
    for d in acq.get("dwells", []):
        out.append(Dwell(float(d["hwp1_deg"]), float(d["hwp2_deg"]), float(d["duration_s"]), "custom"))
    return tuple(out) * int(acq.get("n_cycles", 1))


def build_config(doc: dict, *, paper_scale: bool = False, seed: int | None = None) -> ScenarioConfig:
    """Validate a scenario document and build the typed configuration.

    Sources given as ``detected_pair_rate_hz`` are calibrated here so that
    the detected spoke-hub pair rate of the finished scenario matches.
    """
    validate_document(doc)
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["master_seed"] = int(seed)

    hub_doc = doc["hub"]
    bsm_doc = hub_doc.get("bsm", {})
    try:
        paddle = PolarizationOperator.identity()
        if "paddle" in bsm_doc:
            m = np.array([[complex(re, im) for re, im in row] for row in bsm_doc["paddle"]])
            paddle = PolarizationOperator(m)
            if not paddle.is_unitary():
                raise InvalidArgument("paddle must be unitary")
        bsm = BsmParams(
            excess_loss=bsm_doc.get("excess_loss_db", 1.3),
            hom_visibility=bsm_doc.get("hom_visibility", 0.80),
            overlap_width=bsm_doc.get("overlap_width_ps"),
            paddle=paddle,
        )
    except InvalidArgument as exc:
        raise ConfigError("hub.bsm", str(exc)) from None
    det_doc = hub_doc["detectors"]
    hub_dets = tuple(
        _detector(det_doc, "snspd", ch, f"hub.detectors.channels[{i}]") for i, ch in enumerate(det_doc["channels"])
    )
    hub = HubConfig(bsm, hub_dets, _clock(hub_doc.get("clock", {})))

    spokes = []
    pending_calibration = []
    for i, s in enumerate(doc["spokes"]):
        path = f"spokes[{i}]"
        src = s["source"]
        if "pair_rate_hz" in src and "detected_pair_rate_hz" in src:
            raise ConfigError(f"{path}.source", "give pair_rate_hz or detected_pair_rate_hz, not both")
        if "pair_rate_hz" not in src and "detected_pair_rate_hz" not in src:
            raise ConfigError(f"{path}.source", "one of pair_rate_hz or detected_pair_rate_hz is required")
        if "g2_peak" in src and "coherence_time_ps" in src:
            raise ConfigError(f"{path}.source", "give g2_peak or coherence_time_ps, not both")
        rate = src.get("pair_rate_hz", 1e6)
        if "detected_pair_rate_hz" in src:
            pending_calibration.append((i, src["detected_pair_rate_hz"]))
        link = s.get("idler_link", {})
        apc_doc = link.get("apc", {})
        try:
            apc = ApcParams(
                check_interval=apc_doc.get("check_interval_s", 30.0),
                tolerance=apc_doc.get("tolerance_rad", 0.1),
                insertion_loss=apc_doc.get("insertion_loss_db", 2.0),
                enabled=apc_doc.get("enabled", False),
            )
        except InvalidArgument as exc:
            raise ConfigError(f"{path}.idler_link.apc", str(exc)) from None
        spokes.append(
            SpokeConfig(
                label=s["label"],
                source=_source(src, rate, s["label"]),
                idler_fiber=_fiber(link, f"{path}.idler_link", "drift_rate_rad_per_sqrt_h"),
                apc=apc,
                signal_arm=_fiber(s.get("signal_arm", {}), f"{path}.signal_arm"),
                detector=_detector(s["detector"], "spad", s["detector"]["channel"], f"{path}.detector"),
                clock=_clock(s.get("clock", {})),
            )
        )

    acq = doc.get("acquisition", {"chsh": {}})
    dwells = _dwells(acq, paper_scale)
    if not dwells:
        raise ConfigError("acquisition", "the acquisition plan has no dwells")

    rec = doc.get("recording", {})
    recording = RecordingParams(
        gated=rec.get("gated", True),
        hub_gate=rec.get("hub_gate_ps", 2_000.0),
        spoke_gate=rec.get("spoke_gate_ps", 20_000.0),
        monitor_window=rec.get("monitor_window_ps", 10_000.0),
    )
    an = doc.get("analysis", {})
    settings = acq.get("chsh", {}).get("settings_hwp_deg", AnalysisDefaults.settings_hwp)
    roi_list = tuple(float(r) for r in an.get("roi_list_ps", AnalysisDefaults.roi_list))
    if any(b <= a for a, b in zip(roi_list, roi_list[1:])):
        raise ConfigError("analysis.roi_list_ps", "ROI half-widths must be strictly increasing")
    analysis = AnalysisDefaults(
        bsm_window=an.get("bsm_window_ps", 1_000.0),
        roi_list=roi_list,
        herald=BellKind(an.get("herald", "psi-")),
        settings_hwp=tuple(float(x) for x in settings),
        offset_bin=an.get("offset_bin_ps", 100.0),
    )
    if recording.gated and analysis.bsm_window > recording.hub_gate:
        raise ConfigError("analysis.bsm_window_ps", "herald window exceeds the recording hub gate")
    st = doc.get("stability", {})
    stability = StabilityParams(
        spoke=st.get("spoke", spokes[0].label),
        hours=st.get("hours", 30.0),
        sample_interval=st.get("sample_interval_s", 600.0),
        burst=st.get("burst_s", 60.0),
        roi=st.get("roi_ps", 2_000.0),
        coincidence_window=st.get("coincidence_window_ps", 10_000.0),
    )
    if stability.spoke not in [s.label for s in spokes]:
        raise ConfigError("stability.spoke", f"unknown spoke {stability.spoke!r}")

    cfg = ScenarioConfig(
        name=doc["name"],
        master_seed=int(doc["master_seed"]),
        spokes=(spokes[0], spokes[1]),
        hub=hub,
        dwells=dwells,
        recording=recording,
        chunk=doc.get("engine", {}).get("chunk_s", 0.1),
        analysis=analysis,
        stability=stability,
        document=doc,
    )
    if pending_calibration:
        from .oracle import calibrate_pair_rate

        # Hub dead time couples the two spokes, so iterate to a fixed point.
        for _ in range(8):
            new = list(cfg.spokes)
            for i, target in pending_calibration:
                rate = calibrate_pair_rate(cfg, i, target)
                new[i] = replace(new[i], source=_source(doc["spokes"][i]["source"], rate, new[i].label))
            cfg = replace(cfg, spokes=(new[0], new[1]))
    return cfg


def _source(src: dict, rate: float, label: str) -> SourceParams:
    if "coherence_time_ps" in src:
        tc = src["coherence_time_ps"]
    else:
        tc = coherence_time_for_g2(rate, src.get("g2_peak", 80.0))
    state = bell_state(BellKind(src.get("state", "phi+")))
    return SourceParams(pair_rate=float(rate), coherence_time=float(tc), emitted_state=state, label=label)


def load_config(path: str | Path, *, paper_scale: bool = False, seed: int | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return build_config(doc, paper_scale=paper_scale, seed=seed)


def preset_path(name: str) -> Path:
    return Path(str(resources.files("swapsim.presets").joinpath(f"{name}.json")))


def load_preset(name: str, **kwargs) -> ScenarioConfig:
    return load_config(preset_path(name), **kwargs)
