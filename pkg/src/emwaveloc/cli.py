"""Command-line front end.

Exit codes: 0 success, 1 input or config error, 2 numerical failure in the
pipeline, 3 no event detected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config
from .detect import ArrivalSet, DetectionError, InsufficientSensorsError
from .locate import (EventEstimate, LocateResult, NoEventError, build_report, estimate_from_report,
                     hull_bbox, locate_arrivals, prepare_arrivals, validate)
from .measurements import InputError, SensorSet, load_sensor_registry, load_traces, write_sensor_registry, write_traces
from .mesh import MeshError, write_mesh_csv
from .speedmap import median_speed, speed_from_surface, write_speed_csv
from .surface import SurfaceError, write_grid_csv
from .synthetic import error_report, load_scenario, scenario_sites, synth_traces

log = logging.getLogger("emwaveloc")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_NO_EVENT = 0, 1, 2, 3


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.set)
    if getattr(args, "out", None):
        cfg = cfg.replace(output_dir=args.out)
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _inputs(args, cfg: RunConfig):
    registry = load_sensor_registry(args.registry)
    traces = load_traces(args.traces, registry, min_samples=cfg.filter_n, interval=cfg.reporting_interval)
    return registry, traces


def _arrivals(args, cfg: RunConfig, out: Path):
    """(registry, arrivals, detection, epoch) from either traces or a saved arrival set."""
    if args.arrivals:
        registry = load_sensor_registry(args.registry)
        arrivals = ArrivalSet.read(args.arrivals)
        missing = [s for s in arrivals.sensor_ids if s not in registry]
        if missing:
            raise InputError(f"arrival sensors not in registry: {', '.join(missing)}")
        return registry, arrivals, None, None
    if not args.traces:
        raise InputError("either --traces or --arrivals is required")
    registry, traces = _inputs(args, cfg)
    filtered, avg, det, arrivals = prepare_arrivals(traces, cfg)
    if not args.no_figures:
        from .plotting import plot_traces
        plot_traces(filtered, avg, det, out / "traces.png")
    return registry, arrivals, det, traces.epoch


def _synthetic_block(path, estimate: EventEstimate, f_T: float) -> dict:
    scenario, _ = load_scenario(path)
    err = error_report(estimate, scenario, f_T)
    lag = (scenario.f0 - f_T) / scenario.ramp_rate
    return {"t_event_raw_s": estimate.t_event, "t_event_corrected_s": estimate.t_event - lag,
            "true_source": list(scenario.source), "true_t0_s": scenario.t0, **err}


def cmd_detect(args) -> int:
    cfg = _config(args)
    registry, traces = _inputs(args, cfg)
    try:
        filtered, avg, det, arrivals = prepare_arrivals(traces, cfg)
    except NoEventError:
        _emit({"event": None})
        return EXIT_NO_EVENT
    out = _outdir(cfg)
    arrivals.write(out / "arrivals.csv")
    payload = {"event": det.to_dict(), "arrivals": len(arrivals), "omitted": arrivals.omitted,
               "t_R_used": arrivals.t_R}
    (out / "detection.json").write_text(json.dumps(payload, indent=2))
    if not args.no_figures:
        from .plotting import plot_traces
        plot_traces(filtered, avg, det, out / "traces.png")
    _emit(payload)
    return EXIT_OK


def _run_locate(args, cfg: RunConfig, out: Path) -> tuple[LocateResult, SensorSet, dict]:
    registry, arrivals, det, epoch = _arrivals(args, cfg, out)
    arrivals.write(out / "arrivals.csv")
    result = locate_arrivals(arrivals, registry, cfg, det)
    report = build_report(result, epoch)
    if args.scenario:
        report["synthetic"] = _synthetic_block(args.scenario, result.estimate, result.arrivals.f_T)
    return result, registry, report


def cmd_locate(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    result, registry, report = _run_locate(args, cfg, out)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    write_grid_csv(result.relative_grid(), out / "arrival_surface.csv", "relative_arrival_s")
    write_mesh_csv(result.surface.mesh, out / "mesh.csv", result.arrivals.sensor_ids)
    if not args.no_figures:
        from .plotting import plot_arrival_map, plot_validation
        plot_arrival_map(result, registry, out / "arrival_map.png")
        plot_validation(result.report, out / "validation.png")
    _emit(report)
    return EXIT_OK


def cmd_speedmap(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    result, registry, report = _run_locate(args, cfg, out)
    pts = registry.lonlat(result.arrivals.sensor_ids)
    bbox = cfg.bbox if cfg.bbox is not None else hull_bbox(pts)
    surface = result.surface
    field = speed_from_surface(surface, bbox, cfg.speed_resolution, cfg.gradient_floor)
    rows = write_speed_csv(field, out / "speed.csv")
    if rows == 0:
        log.warning("every cell is singular (gradient below %g s/mile); speed CSV has no data rows",
                    cfg.gradient_floor)
    if not args.no_figures:
        from .plotting import plot_speed_map
        plot_speed_map(field, out / "speed_map.png", registry.subset(result.arrivals.sensor_ids))
    summary = {"cells_defined": rows, "cells_singular": int(field.singular_mask.sum()),
               "median_speed_mi_per_s": None if rows == 0 else median_speed(field),
               "speed_resolution_deg": cfg.speed_resolution, "event": report["event"]}
    (out / "speed_summary.json").write_text(json.dumps(summary, indent=2))
    _emit(summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    scenario, raw = load_scenario(args.scenario)
    sites = scenario_sites(raw, scenario, Path(args.scenario).parent)
    traces = synth_traces(scenario, sites)
    write_traces(traces, out / "traces.csv", scenario.epoch)
    write_sensor_registry(sites, out / "registry.csv")
    summary = {"sensors": len(sites), "samples_per_trace": len(traces[0]) if traces else 0,
               "faults": scenario.faults, "seed": scenario.seed}
    _emit(summary)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args)
    registry = load_sensor_registry(args.registry)
    arrivals = ArrivalSet.read(args.arrivals)
    estimate = estimate_from_report(json.loads(Path(args.report).read_text()))
    rep = validate(arrivals, registry, estimate, t_R=arrivals.t_R, iqr_factor=cfg.iqr_factor,
                   min_delta_t=cfg.min_delta_t, intercept=cfg.regression_intercept, rule=cfg.outlier_rule)
    payload = {"skipped": rep.skipped, "message": rep.message or None,
               "slope_s_per_mile": None if rep.skipped else rep.slope,
               "intercept_s": rep.intercept if cfg.regression_intercept else None,
               "delta_t_threshold_s": None if rep.skipped else rep.delta_t_threshold,
               "outliers": rep.outliers,
               "residuals_s": {k: (None if np.isnan(v) else v) for k, v in rep.residual_map().items()}}
    out = _outdir(cfg)
    (out / "validation.json").write_text(json.dumps(payload, indent=2))
    if not args.no_figures and not rep.skipped:
        from .plotting import plot_validation
        plot_validation(rep, out / "validation.png")
    _emit(payload)
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emwaveloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, traces=True, arrivals=False, registry=True, scenario=False):
        if registry:
            sp.add_argument("--registry", required=True, help="sensor registry CSV (id,lat,lon,label)")
        if traces:
            sp.add_argument("--traces", required=not arrivals, help="trace CSV (t,sensor_id,f)")
        if arrivals:
            sp.add_argument("--arrivals", help="arrival CSV from a previous run (uses its .json sidecar)")
        if scenario:
            sp.add_argument("--scenario", help="scenario JSON of a synthetic run; adds error figures")
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", help="output directory (config key output_dir)")
        sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    sp = sub.add_parser("detect", help="detect the event and extract arrival times")
    common(sp)
    sp.set_defaults(func=cmd_detect)
    sp = sub.add_parser("locate", help="locate the event and validate sensors")
    common(sp, arrivals=True, scenario=True)
    sp.set_defaults(func=cmd_locate)
    sp = sub.add_parser("speedmap", help="propagation speed map from the validated surface")
    common(sp, arrivals=True, scenario=True)
    sp.set_defaults(func=cmd_speedmap)
    sp = sub.add_parser("simulate", help="write traces and registry for a synthetic scenario")
    common(sp, traces=False, registry=False)
    sp.add_argument("scenario", help="scenario JSON")
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("validate", help="rerun sensor validation on an existing report")
    common(sp, traces=False)
    sp.add_argument("--report", required=True, help="report.json from locate")
    sp.add_argument("--arrivals", required=True, help="arrival CSV with its .json sidecar")
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("config", help="print the effective configuration")
    common(sp, traces=False, registry=False)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except NoEventError:
        _emit({"event": None})
        return EXIT_NO_EVENT
    except (InputError, ConfigError, InsufficientSensorsError, DetectionError, MeshError,
            OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SurfaceError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
