"""Command-line entry point: simulate, analyze, stability, schema.

Exit codes: 0 success, 2 usage / configuration / data errors, 3 I/O errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

from .errors import ConfigError, InvalidArgument, NoSignalError

log = logging.getLogger("swapsim")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
DEFAULT_FRINGE_ROI = 1000.0  # ps


class UsageError(Exception):
    pass


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path, name: str, scenario: str, config: str, seed, artifacts: list[Path]) -> dict:
    """Manifest with artifact paths relative to ``out_dir`` and their sha256."""
    from .engine.tagio import atomic_write_text

    doc = {
        "scenario": scenario,
        "config": config,
        "output_directory": ".",
        "seed": seed,
        "artifacts": {str(p.relative_to(out_dir)): sha256_file(p) for p in sorted(artifacts)},
    }
    atomic_write_text(out_dir / name, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc


def verify_manifest(out_dir, name: str = "manifest.json") -> bool:
    out_dir = Path(out_dir)
    doc = json.loads((out_dir / name).read_text())
    return all((out_dir / p).exists() and sha256_file(out_dir / p) == h for p, h in doc["artifacts"].items())


def _resolve_config(spec: str) -> Path:
    from .engine.config import preset_path

    p = Path(spec)
    if p.exists():
        return p
    preset = preset_path(spec)
    if preset.exists():
        return preset
    raise OSError(f"config file {spec!r} not found (and no preset of that name)")


def _apply_threads():
    n = os.environ.get("QTAG_THREADS")
    if not n:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        raise UsageError(f"QTAG_THREADS must be a positive integer, got {n!r}") from None


# --- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .engine.config import load_config
    from .engine.scenario import monitor_summary, run_scenario
    from .engine.tagio import write_dataset

    path = _resolve_config(args.config)
    cfg = load_config(path, paper_scale=args.paper_scale, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("simulating %s: %d dwells, %.1f s", cfg.name, len(cfg.dwells), cfg.total_duration)
    ds = run_scenario(cfg)
    paths = write_dataset(ds, out, blind=args.blind)
    summary = monitor_summary(ds)
    from .engine.tagio import atomic_write_text

    p = out / "monitors.json"
    atomic_write_text(p, json.dumps(summary, indent=1, sort_keys=True) + "\n")
    paths.append(p)
    write_manifest(out, "manifest.json", cfg.name, args.config, cfg.master_seed, paths)
    for k, v in summary["pair_rate_hz"].items():
        log.info("%s: singles %.4g /s, spoke-hub pairs %.4g /s", k, summary["singles_hz"][k], v)
    return EXIT_OK


# --- analyze -----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.9g}"
    return str(x)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _json_safe(x):
    """NaN becomes null so plot data stays strict JSON."""
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def analyze_dataset(ds, roi_list, heralds, settings_hwp, fringe_roi: float = DEFAULT_FRINGE_ROI,
                    bsm_window: float | None = None) -> dict[str, str]:
    """All analysis products of one dataset as {file name: text}."""
    from .analysis import DEFAULT_BSM_WINDOW, fourfold_coincidences, roi_sweep, sweep_csv, window_centers
    from .chsh import chsh_from_counts, fit_fringe, s_vs_rate, setting_grid

    if not ds.dwells:
        raise InvalidArgument("dataset has no dwells")
    if not any(len(s) for s in ds.streams.values()):
        raise NoSignalError("dataset contains no tags")
    bsm_window = DEFAULT_BSM_WINDOW if bsm_window is None else bsm_window
    centers = window_centers(ds)
    kw = {"centers": centers, "bsm_window": bsm_window}
    grid = setting_grid(settings_hwp)
    out = {}
    plot = {"window_centers_ps": centers, "heralds": {}}

    fringe_rows, s_rows, e_rows, count_text = [], [], [], ""
    for herald in heralds:
        hp = {}
        # Fringes: dwells of kind "fringe", grouped by the fixed second waveplate.
        fr = [i for i, d in enumerate(ds.dwells) if d.kind == "fringe"]
        if fr:
            ff = fourfold_coincidences(ds, fringe_roi, herald, **kw)
            by_hwp2: dict[float, dict[float, list]] = {}
            for i in fr:
                d = ds.dwells[i]
                cell = by_hwp2.setdefault(d.hwp2, {}).setdefault(d.hwp1, [0, 0.0])
                cell[0] += ff.get(herald, i)
                cell[1] += d.duration_s
            hp["fringes"] = []
            for hwp2, pts in sorted(by_hwp2.items()):
                angles = sorted(pts)
                counts = [pts[a][0] for a in angles]
                try:
                    fit = fit_fringe(list(zip(angles, counts)))
                    vis, verr, phase = fit.visibility, fit.visibility_error, fit.phase
                    model = [float(v) for v in fit.model(angles)]
                except (InvalidArgument, NoSignalError):
                    vis = verr = phase = math.nan
                    model = [math.nan] * len(angles)
                for a, c, m in zip(angles, counts, model):
                    fringe_rows.append([herald.value, hwp2, a, fringe_roi, c, pts[a][1], m, vis, verr, phase])
                hp["fringes"].append({"hwp2_deg": hwp2, "x": angles, "y": counts,
                                      "yerr": [math.sqrt(c) for c in counts], "fit": model,
                                      "visibility": vis, "visibility_error": verr, "phase_deg": phase})
        # CHSH over the ROI sweep.
        chsh_dwells = [i for i, d in enumerate(ds.dwells) if d.kind == "chsh"]
        if chsh_dwells:
            points = s_vs_rate(ds, roi_list, herald, settings_hwp, **kw)
            sweep = roi_sweep(ds, roi_list, herald, dwell_indices=chsh_dwells, **kw)
            count_text += sweep_csv(ds, sweep, herald) if not count_text else \
                sweep_csv(ds, sweep, herald).split("\n", 1)[1]
            for p, sp in zip(points, sweep):
                s_rows.append([herald.value, p.roi, p.measured_rate_hz, p.corrected_rate_hz, p.S,
                               p.standard_error, p.counts])
                table = {}
                for x, y in grid:
                    table[(x, y)] = float(sum(sp.counts[i] for i in chsh_dwells
                                              if math.isclose(ds.dwells[i].hwp1 % 180, x % 180, abs_tol=1e-9)
                                              and math.isclose(ds.dwells[i].hwp2 % 180, y % 180, abs_tol=1e-9)))
                try:
                    res = chsh_from_counts(table, settings_hwp)
                    e_vals, e_errs = res.E_values, res.E_errors
                except NoSignalError:
                    e_vals = e_errs = (math.nan,) * 4
                names = ("a_b", "a_b'", "a'_b", "a'_b'")
                for name, e, err in zip(names, e_vals, e_errs):
                    e_rows.append([herald.value, p.roi, name, e, err])
            hp["s_vs_rate"] = {"x": [p.measured_rate_hz for p in points], "y": [p.S for p in points],
                               "yerr": [p.standard_error for p in points], "roi_ps": [p.roi for p in points],
                               "corrected_rate_hz": [p.corrected_rate_hz for p in points]}
        plot["heralds"][herald.value] = hp

    if not fringe_rows and not s_rows:
        raise InvalidArgument("dataset has neither fringe nor CHSH dwells")
    out["fringes.csv"] = _csv(("herald", "hwp2_deg", "hwp1_deg", "roi_ps", "counts", "live_time_s", "fit_counts",
                               "visibility", "visibility_error", "phase_deg"), fringe_rows)
    out["e_table.csv"] = _csv(("herald", "roi_ps", "setting", "E", "E_error"), e_rows)
    out["s_vs_rate.csv"] = _csv(("herald", "roi_ps", "measured_rate_hz", "corrected_rate_hz", "S",
                                 "standard_error", "counts"), s_rows)
    if count_text:
        out["counts.csv"] = count_text
    out["plotdata.json"] = json.dumps(_json_safe(plot), indent=1, sort_keys=True, allow_nan=False) + "\n"
    return out


def cmd_analyze(args) -> int:
    from .engine.config import AnalysisDefaults
    from .engine.tagio import atomic_write_text, read_dataset
    from .polarization import BellKind

    data = Path(args.data)
    ds = read_dataset(data)
    cfg_doc = ds.metadata.get("config", {})
    an = cfg_doc.get("analysis", {})
    roi_list = _floats(args.roi, "--roi") if args.roi else an.get("roi_list_ps", AnalysisDefaults.roi_list)
    if args.settings:
        settings = tuple(_floats(args.settings, "--settings"))
        if len(settings) != 4:
            raise UsageError("--settings needs four HWP angles a,a',b,b'")
    else:
        settings = tuple(cfg_doc.get("acquisition", {}).get("chsh", {}).get("settings_hwp_deg",
                                                                          (0.0, 22.5, 11.25, 33.75)))
    heralds = [BellKind.PSI_PLUS, BellKind.PSI_MINUS] if args.herald == "both" else [BellKind(args.herald)]
    files = analyze_dataset(ds, roi_list, heralds, settings, args.fringe_roi, an.get("bsm_window_ps"))
    out = Path(args.out) if args.out else data / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in files.items():
        atomic_write_text(out / name, text)
        paths.append(out / name)
    write_manifest(out, "manifest.json", ds.metadata.get("scenario", ""), str(args.data),
                   ds.metadata.get("seed"), paths)
    for line in files["s_vs_rate.csv"].splitlines()[1:]:
        log.info("%s", line)
    return EXIT_OK


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


# --- stability ---------------------------------------------------------------

def cmd_stability(args) -> int:
    from .engine.config import load_config
    from .engine.stability import run_stability, stability_csv
    from .engine.tagio import atomic_write_text

    if not args.hours > 0:
        raise UsageError(f"--hours must be > 0, got {args.hours}")
    path = _resolve_config(args.config)
    cfg = load_config(path, seed=args.seed)
    apc = None if args.apc == "config" else args.apc == "on"
    rows = run_stability(cfg, args.hours, args.sample_interval, apc_enabled=apc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = out / "stability.csv"
    atomic_write_text(p, stability_csv(rows))
    write_manifest(out, "manifest.json", cfg.name, args.config, cfg.master_seed, [p])
    S = [r.S for r in rows]
    log.info("%d samples, S in [%.3f, %.3f]", len(rows), min(S), max(S))
    return EXIT_OK


def cmd_schema(args) -> int:
    from .engine.config import SCHEMA

    sys.stdout.write(json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swapsim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write a tag dataset")
    s.add_argument("--config", required=True, help="scenario JSON file or bundled preset name")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    s.add_argument("--paper-scale", action="store_true", help="use full-length acquisition durations")
    s.add_argument("--blind", action="store_true", help="zero simulation-only flag bits in the tag files")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="fringes, E values and S versus rate from a dataset")
    a.add_argument("--data", required=True)
    a.add_argument("--roi", default=None, help="comma-separated ROI half-widths in ps")
    a.add_argument("--herald", default="psi-", choices=["psi+", "psi-", "both"])
    a.add_argument("--settings", default=None, help="CHSH HWP angles a,a',b,b' in degrees")
    a.add_argument("--fringe-roi", type=float, default=DEFAULT_FRINGE_ROI)
    a.add_argument("--out", default=None, help="output directory (default: <data>/analysis)")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("stability", help="long-run link stability time series")
    t.add_argument("--config", required=True)
    t.add_argument("--hours", type=float, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--sample-interval", type=float, default=None, help="seconds between samples")
    t.add_argument("--apc", choices=["config", "on", "off"], default="config")
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_stability)

    c = sub.add_parser("schema", help="print the scenario JSON schema")
    c.set_defaults(func=cmd_schema)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _apply_threads()
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, InvalidArgument, NoSignalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
