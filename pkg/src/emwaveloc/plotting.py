"""Figures written to files next to the CSV and JSON outputs.

Uses ``matplotlib.figure.Figure`` directly, so no GUI backend is touched.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .detect import EventDetection
from .locate import LocateResult, ValidationReport
from .measurements import FrequencyTrace, SensorSet
from .speedmap import SpeedField
from .surface import ScalarGrid

_MAX_CELLS = 600


def _thin(grid: ScalarGrid, values: np.ndarray, mask: np.ndarray):
    step = max(1, int(np.ceil(max(values.shape) / _MAX_CELLS)))
    lon, lat = grid.mesh()
    sl = (slice(None, None, step), slice(None, None, step))
    return lon[sl], lat[sl], np.where(mask, values, np.nan)[sl]


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def plot_arrival_map(result: LocateResult, registry: SensorSet, path) -> Path:
    """Contours of relative arrival time with the mesh, sensors and estimate."""
    grid = result.relative_grid()
    X, Y, Z = _thin(grid, grid.values, grid.mask)
    fig = Figure(figsize=(9, 5.5))
    ax = fig.add_subplot()
    cs = ax.contourf(X, Y, Z, levels=20, cmap="viridis")
    ax.contour(X, Y, Z, levels=20, colors="k", linewidths=0.3)
    fig.colorbar(cs, ax=ax, label="relative arrival time (s)")
    mesh = result.surface.mesh
    ax.triplot(mesh.points[:, 0], mesh.points[:, 1], mesh.triangles, color="0.4", lw=0.4)
    used = registry.lonlat(result.arrivals.sensor_ids)
    ax.plot(used[:, 0], used[:, 1], "o", ms=3, color="white", mec="k", mew=0.5, label="sensors")
    dropped = [s for s in result.estimate.outliers if s in registry]
    if dropped:
        bad = registry.lonlat(dropped)
        ax.plot(bad[:, 0], bad[:, 1], "x", color="red", ms=7, label="outliers")
    est = result.estimate
    ax.plot(est.lon_event, est.lat_event, "*", color="red", ms=14, mec="k", label="estimate")
    ax.set_xlabel("longitude (deg)")
    ax.set_ylabel("latitude (deg)")
    ax.set_aspect("equal", adjustable="box")
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_speed_map(field: SpeedField, path, registry: SensorSet | None = None) -> Path:
    X, Y, Z = _thin(field.grid, field.speeds, field.defined)
    fig = Figure(figsize=(9, 5.5))
    ax = fig.add_subplot()
    if np.isfinite(Z).any():
        lo, hi = np.nanpercentile(Z, [2, 98])
        mesh = ax.pcolormesh(X, Y, Z, shading="nearest", cmap="plasma", vmin=lo, vmax=hi)
        fig.colorbar(mesh, ax=ax, label="speed (mi/s)")
    else:
        ax.text(0.5, 0.5, "no defined speeds", transform=ax.transAxes, ha="center")
    if registry is not None:
        pts = registry.lonlat()
        ax.plot(pts[:, 0], pts[:, 1], "k.", ms=3)
    ax.set_xlabel("longitude (deg)")
    ax.set_ylabel("latitude (deg)")
    ax.set_aspect("equal", adjustable="box")
    return _save(fig, path)


def plot_traces(traces: Sequence[FrequencyTrace], avg: FrequencyTrace, detection: EventDetection | None,
                path) -> Path:
    fig = Figure(figsize=(9, 4.5))
    ax = fig.add_subplot()
    for tr in traces:
        ax.plot(tr.t, tr.f, lw=0.5, color="0.6")
    ax.plot(avg.t, avg.f, lw=1.5, color="C0", label="system average")
    if detection is not None:
        ax.axhline(detection.f_T, color="C3", ls="--", lw=1, label=f"f_T = {detection.f_T:.4f} Hz")
        ax.axvline(detection.t_R, color="C2", ls=":", lw=1, label=f"t_R = {detection.t_R:.2f} s")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (Hz)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_validation(report: ValidationReport, path) -> Path:
    """Measured delay against distance with the fitted line and flagged sensors."""
    fig = Figure(figsize=(6, 4.5))
    ax = fig.add_subplot()
    bad = np.isin(report.sensor_ids, report.outliers)
    ax.plot(report.distances[~bad], report.delays[~bad], "o", ms=4, label="sensors")
    if bad.any():
        ax.plot(report.distances[bad], report.delays[bad], "x", color="red", ms=8, label="outliers")
    if not report.skipped:
        d = np.linspace(0.0, float(report.distances.max()), 50)
        ax.plot(d, report.slope * d + report.intercept, "k-", lw=1,
                label=f"{1.0 / report.slope:.0f} mi/s" if report.slope > 0 else "fit")
    ax.set_xlabel("distance to estimate (mi)")
    ax.set_ylabel("delay (s)")
    ax.legend(fontsize=8)
    return _save(fig, path)
