"""Event location: surface argmin, event time, and regression-based sensor validation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .detect import (ArrivalSet, DetectionError, EventDetection, InsufficientSensorsError,
                     detect_event_start, relative_arrival_times, system_average_frequency)
from .measurements import FrequencyTrace, SensorSet, moving_average
from .mesh import delaunay
from .surface import ArrivalSurface, ScalarGrid, SurfaceError, fit_surface

log = logging.getLogger(__name__)

EARTH_RADIUS_MI = 3958.8


class NoEventError(DetectionError):
    """No disturbance found in the traces."""


def great_circle_distance(a, b):
    """Haversine distance in miles between (lon, lat) points; broadcasts."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lon1, lat1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lon2, lat2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    d = 2.0 * EARTH_RADIUS_MI * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


@dataclass
class EventEstimate:
    lon_event: float
    lat_event: float
    t_min: float
    t_event: float
    outliers: list[str] = field(default_factory=list)
    iterations: int = 1
    grid_resolution: float = 0.02
    sensors_used: int = 0


@dataclass
class ValidationReport:
    """Delay-versus-distance regression through the origin and its outliers."""

    sensor_ids: list[str]
    distances: np.ndarray
    delays: np.ndarray
    slope: float
    residuals: np.ndarray
    delta_t_threshold: float
    outliers: list[str]
    intercept: float = 0.0
    skipped: bool = False
    message: str = ""

    def residual_map(self) -> dict[str, float]:
        return dict(zip(self.sensor_ids, self.residuals.tolist()))


def find_minimum(grid: ScalarGrid) -> tuple[float, float, float]:
    """Unmasked cell centre with the smallest value; ties go to the smallest
    latitude, then the smallest longitude."""
    vals = np.where(grid.mask & np.isfinite(grid.values), grid.values, np.inf)
    if not np.isfinite(vals).any():
        raise SurfaceError("all grid cells are masked")
    # row-major argmin returns the first minimum: lowest lat row, then lowest lon
    j, i = np.unravel_index(int(np.argmin(vals)), vals.shape)
    return float(grid.lons[i]), float(grid.lats[j]), float(vals[j, i])


def refine_minimum(surface: ArrivalSurface, grid: ScalarGrid, lon: float, lat: float,
                   factor: int = 10) -> tuple[float, float, float]:
    """Re-scan the 3x3 cell neighbourhood of a grid minimum at `factor` times
    the resolution; returns the best point (never worse than the input)."""
    base = surface.eval_points(np.array([lon]), np.array([lat]))[0]
    if factor <= 1:
        return lon, lat, float(base)
    n = 3 * factor
    lons = lon - 1.5 * grid.d_lon + grid.d_lon / factor * (np.arange(n) + 0.5)
    lats = lat - 1.5 * grid.d_lat + grid.d_lat / factor * (np.arange(n) + 0.5)
    X, Y = np.meshgrid(lons, lats)
    vals = surface.eval_points(X, Y, fill=np.inf)
    j, i = np.unravel_index(int(np.argmin(vals)), vals.shape)
    if vals[j, i] < base:
        return float(lons[i]), float(lats[j]), float(vals[j, i])
    return lon, lat, float(base)


def validate(arrivals: ArrivalSet, sites: SensorSet, estimate: EventEstimate, t_R: float | None = None,
             iqr_factor: float = 1.5, min_delta_t: float = 0.1,
             intercept: bool = False, rule: str = "fence") -> ValidationReport:
    """Check measured delays against a constant-speed delay/distance line.

    Delay is the absolute crossing time minus the estimated event time; the
    line is fitted through the origin (or with an intercept, for
    diagnostics).  With ``d = max(iqr_factor * IQR(residuals), min_delta_t)``
    a sensor is an outlier when its residual lies outside ``[Q1 - d, Q3 + d]``
    (rule ``"fence"``) or when ``|residual| > d`` (rule ``"absolute"``).
    Fewer than 4 sensors: validation is skipped.
    """
    ids = list(arrivals.sensor_ids)
    crossings = arrivals.crossings if t_R is None else arrivals.relative + t_R
    dist = great_circle_distance(sites.lonlat(ids), np.array([estimate.lon_event, estimate.lat_event]))
    dist = np.atleast_1d(dist)
    delay = np.asarray(crossings, dtype=float) - estimate.t_event
    if len(ids) < 4:
        log.warning("validation skipped: %d sensors (need 4)", len(ids))
        return ValidationReport(ids, dist, delay, math.nan, np.full(len(ids), math.nan), math.nan, [],
                                skipped=True, message=f"validation skipped: {len(ids)} sensors, need 4")
    if intercept:
        slope, icpt = np.polyfit(dist, delay, 1)
    else:
        slope, icpt = float(dist @ delay / (dist @ dist)), 0.0
    resid = delay - (slope * dist + icpt)
    q75, q25 = np.percentile(resid, [75, 25])
    delta = max(iqr_factor * (q75 - q25), min_delta_t)
    if rule == "fence":
        bad = (resid < q25 - delta) | (resid > q75 + delta)
    elif rule == "absolute":
        bad = np.abs(resid) > delta
    else:
        raise ValueError(f"unknown outlier rule {rule!r}")
    outliers = [sid for sid, b in zip(ids, bad) if b]
    return ValidationReport(ids, dist, delay, float(slope), resid, float(delta), outliers, float(icpt))


@dataclass
class LocateResult:
    estimate: EventEstimate
    report: ValidationReport
    surface: ArrivalSurface
    grid: ScalarGrid
    arrivals: ArrivalSet
    detection: Optional[EventDetection] = None
    # add to surface values to express them relative to arrivals.t_R
    surface_offset: float = 0.0

    def __iter__(self):
        return iter((self.estimate, self.report, self.surface))

    def relative_grid(self) -> ScalarGrid:
        return self.grid.with_values(self.grid.values + self.surface_offset)


def hull_bbox(points: np.ndarray) -> tuple[float, float, float, float]:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def _locate_once(arrivals: ArrivalSet, registry: SensorSet, cfg: RunConfig):
    pts = registry.lonlat(arrivals.sensor_ids)
    mesh = delaunay(pts)
    # fit in a frame anchored at the earliest absolute crossing so the
    # choice of t_R cannot perturb the result
    c_ref = float(arrivals.crossings.min())
    surface = fit_surface(mesh, arrivals.crossings - c_ref, n_neighbors=cfg.n_neighbors)
    bbox = cfg.bbox if cfg.bbox is not None else hull_bbox(pts)
    grid = surface.eval_grid(bbox, cfg.grid_resolution)
    lon, lat, _ = find_minimum(grid)
    lon, lat, vmin = refine_minimum(surface, grid, lon, lat, cfg.refine_factor)
    t_event = vmin + c_ref
    est = EventEstimate(lon, lat, t_event - arrivals.t_R, t_event,
                        grid_resolution=cfg.grid_resolution, sensors_used=len(arrivals))
    return est, surface, grid, c_ref


def locate_arrivals(arrivals: ArrivalSet, registry: SensorSet, config: RunConfig | None = None,
                    detection: EventDetection | None = None) -> LocateResult:
    """Triangulate, fit, scan, validate; drop outliers and repeat.

    At most ``config.max_iterations`` location passes are made.  Outliers
    found on the last pass are reported but not removed.
    """
    cfg = config or RunConfig()
    if len(arrivals) < 3:
        raise InsufficientSensorsError(f"insufficient sensors: {len(arrivals)}, at least 3 needed")
    active = arrivals
    removed: list[str] = []
    for it in range(1, cfg.max_iterations + 1):
        est, surface, grid, c_ref = _locate_once(active, registry, cfg)
        report = validate(active, registry, est, iqr_factor=cfg.iqr_factor,
                          min_delta_t=cfg.min_delta_t, intercept=cfg.regression_intercept,
                          rule=cfg.outlier_rule)
        if not report.outliers or it == cfg.max_iterations:
            break
        keep = [s for s in active.sensor_ids if s not in set(report.outliers)]
        if len(keep) < 3:
            raise InsufficientSensorsError(
                f"insufficient sensors after outlier removal: {len(keep)} remain")
        log.info("pass %d: removing outliers %s", it, ", ".join(report.outliers))
        removed += report.outliers
        active = active.subset(keep)
    est.outliers = removed
    est.iterations = it
    return LocateResult(est, report, surface, grid, active, detection, c_ref - active.t_R)


def prepare_arrivals(traces: Sequence[FrequencyTrace], config: RunConfig | None = None):
    """Filter, detect and extract arrivals; returns (filtered, average, detection, arrivals)."""
    cfg = config or RunConfig()
    filtered = [moving_average(tr, cfg.filter_n) for tr in traces]
    if not filtered:
        raise InsufficientSensorsError("insufficient sensors: no traces")
    avg = system_average_frequency(filtered, cfg.reporting_interval)
    det = detect_event_start(avg, cfg.detection_params())
    if det is None:
        raise NoEventError("no event detected")
    arrivals = relative_arrival_times(filtered, det, max_delay=cfg.max_delay,
                                      lookback=cfg.confirm_window, t_ref_offset=cfg.t_ref_offset)
    return filtered, avg, det, arrivals


def locate_event(traces: Sequence[FrequencyTrace], registry: SensorSet,
                 config: RunConfig | None = None) -> LocateResult:
    """Full pipeline from raw traces: filter, detect, arrivals, locate with validation.

    The result unpacks as ``estimate, report, surface``.
    """
    cfg = config or RunConfig()
    _, _, det, arrivals = prepare_arrivals(traces, cfg)
    return locate_arrivals(arrivals, registry, cfg, det)


def build_report(result: LocateResult, epoch: str | None = None) -> dict:
    est, rep = result.estimate, result.report
    out = {
        "event": {"lon": est.lon_event, "lat": est.lat_event,
                  "t_event_epoch_s": est.t_event, "t_min_s": est.t_min},
        "detection": {"t_R": result.arrivals.t_R, "f_T": result.arrivals.f_T,
                      "direction": result.arrivals.direction},
        "validation": {"slope_s_per_mile": None if rep.skipped else rep.slope,
                       "delta_t_threshold_s": None if rep.skipped else rep.delta_t_threshold,
                       "outliers": sorted(set(est.outliers) | set(rep.outliers))},
        "quality": {"iterations": est.iterations, "sensors_used": est.sensors_used,
                    "grid_resolution_deg": est.grid_resolution},
    }
    if epoch:
        out["epoch"] = epoch
    return out


def estimate_from_report(report: dict) -> EventEstimate:
    ev = report["event"]
    q = report.get("quality", {})
    return EventEstimate(float(ev["lon"]), float(ev["lat"]), float(ev["t_min_s"]),
                         float(ev["t_event_epoch_s"]), grid_resolution=float(q.get("grid_resolution_deg", 0.02)),
                         sensors_used=int(q.get("sensors_used", 0)))
