"""Command-line front end: named reproductions, calibration, extraction.

Each command resolves a settings dictionary (preset defaults overridden by
repeatable ``--set key=value`` flags), runs its pipeline, writes CSV data
plus companion figures, and finishes by writing ``manifest.yaml`` as the
atomic completion marker. Identical config and seed give byte-identical
CSV output.

Exit codes: 0 success, 1 failed validation, 2 usage error, 3 I/O error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import calibration, extraction, reporting, rpu
from .device import (DeviceState, ModelParams, NumericFailure, closed_form_vtn,
                     load_params, run_train, save_params, split_sweep, vt_of)
from .extraction import GapCurve, full_extraction, report_to_dict
from .protocol import (AMPLITUDE_DEFAULT, GAP_GRID_DEFAULT, INIT_MARKER,
                       T_ON_DEFAULT, TABLE1_N, Pulse, PulseTrain,
                       load_schedule, log_read_points, with_intermediate_reads)

COMMANDS = ("simulate", "sweep-n", "sweep-gap", "splits", "extract",
            "calibrate", "rpu-error")

DEFAULT_SEED = 20260810

# Per-command settings and their defaults; every key is --set addressable.
SETTINGS: dict[str, dict] = {
    "sweep-n": {
        "t_on_s": T_ON_DEFAULT,
        "t_gap_s": 10.0,
        "n_list": list(TABLE1_N),
        "amplitude_V": AMPLITUDE_DEFAULT,
    },
    "sweep-gap": {
        "t_on_s": T_ON_DEFAULT,
        "gaps_s": list(GAP_GRID_DEFAULT),
        "n_list": list(TABLE1_N),
        "amplitude_V": AMPLITUDE_DEFAULT,
    },
    "splits": {
        "t_on_s": T_ON_DEFAULT,
        "t_gap_s": 10.0,
        "n_list": list(TABLE1_N),
        "bo_scales": [1.0, 1.25, 1.67],
        "amplitude_V": AMPLITUDE_DEFAULT,
    },
    "simulate": {
        "t_gap_s": 10.0,
        "widths_s": [2.5e-6, 5e-6, 25e-6],
        "count": 1000,
        "amplitude_V": AMPLITUDE_DEFAULT,
        "variant": "deadzone",       # or "ode"
        "dt_max_frac": 0.02,         # ODE step cap as a fraction of t_pw
    },
    "extract": {
        "t_gap_s": 10.0,
        "widths_s": [2.5e-6, 3.5e-6, 5e-6, 7e-6, 10e-6, 25e-6, 50e-6],
        "count": 2000,
        "vt_targets_V": [-0.30, -0.20, -0.10, 0.0],
        "one_shot_points": 25,
        "gap_curve_n_list": [100, 500, 1000, 2000, 5000, 10000],
        "t_on_s": T_ON_DEFAULT,
        "gaps_s": list(GAP_GRID_DEFAULT),
        "n_fix": extraction.DEFAULT_N_FIX,
        "min_tnv_s": extraction.DEFAULT_MIN_TNV,
        "epsilon_V": extraction.DEFAULT_EPSILON,
        "amplitude_V": AMPLITUDE_DEFAULT,
    },
    "calibrate": {
        "d_vt_log_fall_V": 0.30,
        "knee_tpw_s": 2e-6,
        "vt0_V": -1.2,
        "t_on_s": T_ON_DEFAULT,
        "budget": 400,
    },
    "rpu-error": {
        "mode": "decomposition",     # or "compensation" (fig6e)
        "n_list": list(TABLE1_N),
        "t_on_s": T_ON_DEFAULT,
        "p_x": 0.5,
        "p_d": 0.5,
        "trials": 1000,
        "placement_trials": 200,
        "base_gap_s": 10.0,
        # compensation-mode settings
        "t_tar_s": 2e-3,
        "widths_s": [2.5e-6, 5e-6, 25e-6, 50e-6, 1e-4, 2.5e-4],
        "t_gap_s": 10.0,
    },
}

PRESETS: dict[str, tuple[str, dict]] = {
    "fig3a": ("sweep-n", {}),
    "fig3b": ("sweep-gap", {}),
    "fig4c": ("splits", {}),
    "fig6a": ("simulate", {}),
    "fig6e": ("rpu-error", {"mode": "compensation"}),
    "fig7": ("rpu-error", {"mode": "decomposition"}),
}

DEFAULT_PRESET = {"sweep-n": "fig3a", "sweep-gap": "fig3b", "splits": "fig4c",
                  "simulate": "fig6a", "rpu-error": "fig7",
                  "extract": "extract", "calibrate": "calibrate"}


@dataclass
class RunConfig:
    command: str
    params_file: str | None = None
    protocol_file: str | None = None
    output_dir: str = "."
    seed: int = DEFAULT_SEED
    overrides: dict = field(default_factory=dict)
    preset: str | None = None
    figures: bool = True


@dataclass
class RunManifest:
    config: dict
    tool_version: str
    params_hash: str
    duration_s: float
    files: dict   # basename -> sha256

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "tool_version": self.tool_version,
            "params_hash": self.params_hash,
            "duration_s": self.duration_s,
            "files": dict(self.files),
        }


def worker_count() -> int:
    """Sweep parallelism cap from CTF_SIM_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("CTF_SIM_THREADS", "1")))
    except ValueError:
        return 1


def _resolve_settings(config: RunConfig) -> dict:
    settings = dict(SETTINGS[config.command])
    preset = config.preset or DEFAULT_PRESET[config.command]
    if preset in PRESETS:
        cmd, extra = PRESETS[preset]
        if cmd != config.command:
            raise ValueError(f"preset {preset!r} belongs to command {cmd!r}")
        settings.update(extra)
    elif preset not in (DEFAULT_PRESET[config.command],):
        raise ValueError(f"unknown preset {preset!r}")
    for key, value in config.overrides.items():
        if key not in settings:
            raise ValueError(
                f"unknown setting {key!r} for command {config.command!r} "
                f"(known: {', '.join(sorted(settings))})")
        settings[key] = value
    return settings


def _load_model(config: RunConfig) -> tuple[ModelParams, str]:
    if config.params_file:
        path = Path(config.params_file)
        params, _ = load_params(path)
        return params, reporting.sha256_file(path)
    params = calibration.default_params()
    blob = resources.files("ctfsim").joinpath("data/default_params.yaml").read_bytes()
    return params, hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Validation (diagnostics, not exceptions)
# ---------------------------------------------------------------------------

def _validate_train_doc(doc: dict, where: str) -> list[str]:
    problems = []
    for key in ("amplitude_V", "t_pw_s", "N", "t_gap_s"):
        if key not in doc:
            problems.append(f"{where}: missing field {key!r}")
    if problems:
        return problems
    if not (float(doc["t_pw_s"]) > 0.0):
        problems.append(f"{where}: t_pw_s: must be > 0 (got {doc['t_pw_s']})")
    if float(doc["t_gap_s"]) < 0.0:
        problems.append(f"{where}: t_gap_s: must be >= 0 (got {doc['t_gap_s']})")
    if int(doc["N"]) < 1:
        problems.append(f"{where}: N: must be >= 1 (got {doc['N']})")
    reads = doc.get("reads", [])
    if any(b <= a for a, b in zip(reads, reads[1:])):
        problems.append(f"{where}: reads: must be strictly increasing")
    elif reads and (reads[0] < 0 or reads[-1] > int(doc["N"])):
        problems.append(f"{where}: reads: indices outside [0, N]")
    if "T_ON_s" in doc:
        declared = float(doc["T_ON_s"])
        actual = int(doc["N"]) * float(doc["t_pw_s"])
        if not math.isclose(declared, actual, rel_tol=1e-9, abs_tol=0.0):
            problems.append(
                f"{where}: arithmetic mismatch: N x t_pw_s = {actual!r} "
                f"but T_ON_s declares {declared!r}")
    return problems


def validate(config: RunConfig) -> list[str]:
    """All invariant violations in the config, with file/field context."""
    diags = []
    if config.command not in COMMANDS:
        diags.append(f"command: unknown command {config.command!r}")
        return diags
    try:
        _resolve_settings(config)
    except ValueError as exc:
        diags.append(str(exc))
    if not (0 <= config.seed < 2 ** 64):
        diags.append(f"seed: must fit in an unsigned 64-bit value (got {config.seed})")
    if config.params_file:
        path = Path(config.params_file)
        if not path.is_file():
            diags.append(f"{path}: params file not found")
        else:
            try:
                load_params(path)
            except (ValueError, KeyError, yaml.YAMLError) as exc:
                diags.append(f"{path}: {exc}")
    if config.protocol_file:
        path = Path(config.protocol_file)
        if not path.is_file():
            diags.append(f"{path}: protocol file not found")
        else:
            try:
                with open(path) as fh:
                    doc = yaml.safe_load(fh)
                steps = doc.get("trains", []) if isinstance(doc, dict) else []
                if not isinstance(doc, dict):
                    diags.append(f"{path}: protocol document must be a mapping")
                initialized = False
                for i, entry in enumerate(steps):
                    where = f"{path}: trains[{i}]"
                    if entry == INIT_MARKER:
                        initialized = True
                    elif isinstance(entry, dict):
                        diags.extend(_validate_train_doc(entry, where))
                        if not initialized:
                            diags.append(f"{where}: train not preceded by an "
                                         f"{INIT_MARKER!r} marker")
                    else:
                        diags.append(f"{where}: expected {INIT_MARKER!r} or a train mapping")
            except yaml.YAMLError as exc:
                diags.append(f"{path}: {exc}")
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        diags.append(f"{out}: output directory not writable ({exc})")
    return diags


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def _map_grid(fn, items):
    threads = worker_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _pipeline_sweep_n(settings, params, out: Path, config) -> list[Path]:
    n_list = [int(n) for n in settings["n_list"]]
    t_on = float(settings["t_on_s"])
    gap = float(settings["t_gap_s"])
    rows = []
    for n in n_list:
        w = t_on / n
        rows.append((n, w, params.VT0_V, closed_form_vtn(n, w, gap, params)))
    files = [reporting.write_csv(out / "fig3a.csv", "N,t_pw_s,vt0_V,vtn_V", rows)]
    if config.figures:
        files.append(reporting.render_vtn_vs_n(
            out / "fig3a.png", [r[0] for r in rows], [r[3] for r in rows], params.VT0_V))
    return files


def _pipeline_sweep_gap(settings, params, out: Path, config) -> list[Path]:
    n_list = [int(n) for n in settings["n_list"]]
    gaps = [float(g) for g in settings["gaps_s"]]
    t_on = float(settings["t_on_s"])
    grid = [(n, g) for n in n_list for g in gaps]
    vts = _map_grid(lambda ng: closed_form_vtn(ng[0], t_on / ng[0], ng[1], params), grid)
    rows = [(n, t_on / n, g, v) for (n, g), v in zip(grid, vts)]
    files = [reporting.write_csv(out / "fig3b.csv", "N,t_pw_s,t_gap_s,vtn_V", rows)]
    if config.figures:
        curves = []
        for n in n_list:
            pts = [(g, v) for (nn, g), v in zip(grid, vts) if nn == n]
            curves.append((f"N={n}", [p[0] for p in pts], [p[1] for p in pts]))
        files.append(reporting.render_gap_curves(out / "fig3b.png", curves))
    return files


def _pipeline_splits(settings, params, out: Path, config) -> list[Path]:
    n_list = [int(n) for n in settings["n_list"]]
    t_on = float(settings["t_on_s"])
    gap = float(settings["t_gap_s"])
    bo_scales = [float(b) for b in settings["bo_scales"]]
    splits = [(f"bo_scale={b:g}", params.with_bo_scale(b)) for b in bo_scales]
    result = split_sweep(splits, n_list, t_on, gap=gap)
    rows = []
    for lab, b in zip(result.labels, bo_scales):
        for n, v in zip(result.n_values, result.vt[lab]):
            rows.append((lab, b, n, t_on / n, v))
    files = [reporting.write_csv(out / "fig4c.csv", "label,bo_scale,N,t_pw_s,vtn_V", rows)]
    if config.figures:
        series = [(lab, list(result.vt[lab])) for lab in result.labels]
        files.append(reporting.render_split_curves(out / "fig4c.png",
                                                   list(result.n_values), series))
    return files


def _pipeline_simulate(settings, params, out: Path, config) -> list[Path]:
    if config.protocol_file:
        schedule = load_schedule(config.protocol_file)
        trains = schedule.pulse_trains()
        labels = [f"train{i:02d}" for i in range(len(trains))]
        stem = "trace"
    else:
        count = int(settings["count"])
        gap = float(settings["t_gap_s"])
        amplitude = float(settings["amplitude_V"])
        reads = log_read_points(count)
        trains = [with_intermediate_reads(
            PulseTrain(Pulse(amplitude, float(w)), count, gap), reads)
            for w in settings["widths_s"]]
        labels = [f"tpw={w:g}s" for w in settings["widths_s"]]
        stem = "fig6a"
    variant = str(settings.get("variant", "deadzone"))
    ode = calibration.default_ode_params() if variant == "ode" else None
    files = []
    plotted = []
    for i, (label, train) in enumerate(zip(labels, trains)):
        dt_max = float(settings.get("dt_max_frac", 0.02)) * train.pulse.width
        trace = run_train(train, params, variant, ode=ode, dt_max=dt_max)
        rows = list(trace.entries)
        files.append(reporting.write_csv(out / f"{stem}_{i:02d}.csv",
                                         "pulse_index,vt_V", rows))
        plotted.append((label, trace.pulse_numbers, trace.vt_values))
    if config.figures:
        files.append(reporting.render_traces(out / f"{stem}.png", plotted))
    return files


def _pipeline_extract(settings, params, out: Path, config) -> list[Path]:
    gap = float(settings["t_gap_s"])
    amplitude = float(settings["amplitude_V"])
    count = int(settings["count"])
    # intermediate-read traces, sampled after every pulse
    traces = []
    for w in settings["widths_s"]:
        train = with_intermediate_reads(
            PulseTrain(Pulse(amplitude, float(w)), count, gap),
            tuple(range(count + 1)))
        traces.append(run_train(train, params))
    # single-pulse (one-shot) programming curve
    n_os = int(settings["one_shot_points"])
    os_widths = np.logspace(math.log10(3e-6), math.log10(float(settings["t_on_s"])), n_os)
    one_shot = [(float(w), closed_form_vtn(1, float(w), gap, params)) for w in os_widths]
    # gap-recovery curves for the critical-gap table
    gaps = [float(g) for g in settings["gaps_s"]]
    curves = []
    for n in settings["gap_curve_n_list"]:
        n = int(n)
        w = float(settings["t_on_s"]) / n
        pts = tuple((g, closed_form_vtn(n, w, g, params)) for g in gaps)
        curves.append(GapCurve(points=pts, n=n, t_pw=w))
    reports = full_extraction(
        traces, one_shot, curves, [float(t) for t in settings["vt_targets_V"]],
        n_fix=int(settings["n_fix"]), min_tnv=float(settings["min_tnv_s"]),
        epsilon=float(settings["epsilon_V"]),
        metadata={"source": "simulated with the shipped dead-zone variant"})
    files = [
        reporting.write_csv(out / "t_trap_vs_target.csv", extraction.TRAP_CSV_HEADER,
                            [(r.vt_tar, r.t_trap_s) for r in reports]),
        reporting.write_csv(out / "t_crit_vs_tpw.csv", extraction.TCRIT_CSV_HEADER,
                            list(reports[0].t_crit_by_tpw)),
        reporting.write_yaml(out / "extraction_report.yaml",
                             {"reports": [report_to_dict(r) for r in reports]}),
    ]
    if config.figures:
        files.append(reporting.render_extraction(
            out / "extraction.png",
            [(r.vt_tar, r.t_trap_s) for r in reports],
            list(reports[0].t_crit_by_tpw)))
    return files


def _pipeline_calibrate(settings, params, out: Path, config) -> list[Path]:
    anchors = calibration.AnchorSet(
        d_vt_log_fall=float(settings["d_vt_log_fall_V"]),
        knee_tpw=float(settings["knee_tpw_s"]),
        vt0=float(settings["vt0_V"]),
        t_on=float(settings["t_on_s"]))
    seed_params = calibration.analytic_seed(anchors)
    result = calibration.fit(anchors, seed_params, int(settings["budget"]))
    save_params(result.params, out / "fitted_params.yaml",
                ode=calibration.make_default_ode_params())
    files = [out / "fitted_params.yaml"]
    files.append(reporting.write_yaml(out / "fit_report.yaml",
                                      calibration.fit_report_dict(result, anchors)))
    return files


def _pipeline_rpu_error(settings, params, out: Path, config) -> list[Path]:
    if settings["mode"] == "compensation":
        return _pipeline_compensation(settings, params, out, config)
    t_on = float(settings["t_on_s"])
    reports = rpu.error_decomposition(
        [int(n) for n in settings["n_list"]],
        float(settings["p_x"]), float(settings["p_d"]),
        lambda n: t_on / n, params,
        trials=int(settings["trials"]), seed=int(config.seed),
        base_gap=float(settings["base_gap_s"]),
        placement_trials=int(settings["placement_trials"]))
    rows = [(r.n, r.random_rel_err, r.systematic_rel_err, r.gap_noise_rel)
            for r in reports]
    files = [reporting.write_csv(out / "fig7.csv",
                                 "n,random_rel_err,systematic_rel_err,gap_noise_rel",
                                 rows)]
    if config.figures:
        files.append(reporting.render_error_decomposition(out / "fig7.png", reports))
    return files


def _pipeline_compensation(settings, params, out: Path, config) -> list[Path]:
    t_tar = float(settings["t_tar_s"])
    gap = float(settings["t_gap_s"])
    rows = []
    widths, d_unc, d_cmp = [], [], []
    # reference: the wide-pulse limit, delivering the full target write time
    v_ref = vt_of(DeviceState(t_nv_s=t_tar), params)
    for w in settings["widths_s"]:
        w = float(w)
        n_unc = max(1, round(t_tar / w))
        v_unc = closed_form_vtn(n_unc, w, gap, params)
        train = rpu.compensated_schedule(w, t_tar, params, gap=gap)
        v_cmp = closed_form_vtn(train.count, w, gap, params)
        def_unc = v_ref - v_unc
        def_cmp = v_ref - v_cmp
        ratio = math.inf if def_cmp == 0.0 else def_unc / abs(def_cmp)
        rows.append((w, n_unc, v_unc, train.count, v_cmp, def_unc, def_cmp, ratio))
        widths.append(w)
        d_unc.append(def_unc)
        d_cmp.append(def_cmp)
    files = [reporting.write_csv(
        out / "fig6e.csv",
        "t_pw_s,n_uncomp,vt_uncomp_V,n_comp,vt_comp_V,deficiency_uncomp_V,"
        "deficiency_comp_V,ratio", rows)]
    if config.figures:
        files.append(reporting.render_compensation(out / "fig6e.png",
                                                   widths, d_unc, d_cmp))
    return files


PIPELINES = {
    "sweep-n": _pipeline_sweep_n,
    "sweep-gap": _pipeline_sweep_gap,
    "splits": _pipeline_splits,
    "simulate": _pipeline_simulate,
    "extract": _pipeline_extract,
    "calibrate": _pipeline_calibrate,
    "rpu-error": _pipeline_rpu_error,
}


def run(config: RunConfig) -> RunManifest:
    """Execute the configured pipeline; the manifest is written last."""
    t_start = time.perf_counter()
    settings = _resolve_settings(config)
    params, params_hash = _load_model(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = PIPELINES[config.command](settings, params, out, config)
    manifest = RunManifest(
        config={
            "command": config.command,
            "preset": config.preset or DEFAULT_PRESET[config.command],
            "params_file": config.params_file,
            "protocol_file": config.protocol_file,
            "seed": config.seed,
            "settings": _yaml_safe(settings),
            "generator": f"{rpu.GENERATOR_NAME}-v{rpu.GENERATOR_VERSION}",
        },
        tool_version=__version__,
        params_hash=params_hash,
        duration_s=time.perf_counter() - t_start,
        files={Path(f).name: reporting.sha256_file(f) for f in files},
    )
    tmp = out / "manifest.yaml.tmp"
    reporting.write_yaml(tmp, manifest.to_dict())
    tmp.replace(out / "manifest.yaml")
    return manifest


def _yaml_safe(obj):
    if isinstance(obj, dict):
        return {k: _yaml_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_yaml_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------

def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"--set expects key=value, got {text!r}")
    key, _, raw = text.partition("=")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctfsim",
        description="Charge-trap flash pulse-fragmentation simulator and analysis toolkit")
    parser.add_argument("--version", action="version", version=f"ctfsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--params", dest="params_file", metavar="FILE",
                       help="model parameter file (default: shipped calibration)")
        p.add_argument("--protocol", dest="protocol_file", metavar="FILE",
                       help="experiment schedule file (simulate command)")
        p.add_argument("--out", dest="output_dir", default=".", metavar="DIR",
                       help="output directory (default: current directory)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, metavar="U64",
                       help="base seed for Monte Carlo pipelines")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       type=_parse_override, metavar="KEY=VALUE",
                       help="override a pipeline setting (repeatable)")
        p.add_argument("--preset", default=None, metavar="NAME",
                       help=f"named reproduction preset ({', '.join(sorted(PRESETS))})")
        p.add_argument("--no-figures", dest="figures", action="store_false",
                       help="skip figure rendering, write delimited data only")
        p.add_argument("--validate-only", action="store_true",
                       help="report configuration diagnostics and exit")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.preset is not None and args.preset not in PRESETS:
        parser.error(f"unknown preset {args.preset!r}")
    config = RunConfig(
        command=args.command,
        params_file=args.params_file,
        protocol_file=args.protocol_file,
        output_dir=args.output_dir,
        seed=args.seed,
        overrides=dict(args.overrides),
        preset=args.preset,
        figures=args.figures,
    )
    if args.validate_only:
        diags = validate(config)
        for d in diags:
            print(d)
        return 1 if diags else 0
    try:
        manifest = run(config)
    except FileNotFoundError as exc:
        print(f"ctfsim: I/O error: {exc}", file=sys.stderr)
        return 3
    except NumericFailure as exc:
        print(f"ctfsim: numeric failure in {config.command}: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"ctfsim: I/O error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"ctfsim: {exc}", file=sys.stderr)
        return 2
    for name in manifest.files:
        print(f"wrote {Path(config.output_dir) / name}")
    print(f"manifest: {Path(config.output_dir) / 'manifest.yaml'} "
          f"({manifest.duration_s:.2f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
