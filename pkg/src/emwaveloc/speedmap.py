"""Wave propagation speed from the gradient of a gridded arrival-time field."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .surface import ArrivalSurface, ScalarGrid, SurfaceError


@dataclass(frozen=True)
class UnitDistances:
    """Miles per degree: constant in latitude, ``lon_equator * cos(lat)`` in longitude."""

    lat_miles: float = 69.055
    lon_equator_miles: float = 69.172

    def lon_miles(self, lat):
        return self.lon_equator_miles * np.cos(np.radians(lat))


@dataclass(frozen=True)
class SpeedField:
    grid: ScalarGrid
    speeds: np.ndarray
    singular_mask: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.grid.mask & ~self.singular_mask & np.isfinite(self.speeds)


def _axis_gradient(values, mask, step, axis):
    v = np.where(mask, values, np.nan)
    g = np.full(v.shape, np.nan)
    ok = np.zeros(v.shape, dtype=bool)
    n = v.shape[axis]
    if n < 2:
        return g, ok

    def sl(a, b):
        idx = [slice(None)] * v.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    prev_ok = np.zeros(v.shape, dtype=bool)
    next_ok = np.zeros(v.shape, dtype=bool)
    prev_ok[sl(1, None)] = mask[sl(None, -1)]
    next_ok[sl(None, -1)] = mask[sl(1, None)]
    prev_v = np.full(v.shape, np.nan)
    next_v = np.full(v.shape, np.nan)
    prev_v[sl(1, None)] = v[sl(None, -1)]
    next_v[sl(None, -1)] = v[sl(1, None)]

    both = mask & prev_ok & next_ok
    fwd = mask & next_ok & ~prev_ok
    bwd = mask & prev_ok & ~next_ok
    g[both] = (next_v[both] - prev_v[both]) / (2 * step)
    g[fwd] = (next_v[fwd] - v[fwd]) / step
    g[bwd] = (v[bwd] - prev_v[bwd]) / step
    ok = both | fwd | bwd
    return g, ok


def grid_gradient(grid: ScalarGrid) -> tuple[ScalarGrid, ScalarGrid]:
    """Finite-difference (dT/dlon, dT/dlat) in s/degree.

    Central differences where both neighbours are unmasked, one-sided where
    only one is; a cell with neither neighbour along an axis is masked.
    """
    g_lon, ok_lon = _axis_gradient(grid.values, grid.mask, grid.d_lon, axis=1)
    g_lat, ok_lat = _axis_gradient(grid.values, grid.mask, grid.d_lat, axis=0)
    ok = ok_lon & ok_lat
    if not ok.any():
        raise SurfaceError("no cell has computable gradients")
    g_lon[~ok] = np.nan
    g_lat[~ok] = np.nan
    return grid.with_values(g_lon, ok), grid.with_values(g_lat, ok)


def rescale_gradient(g_lon: ScalarGrid, g_lat: ScalarGrid, unit: UnitDistances | None = None):
    """Convert s/degree gradients to s/mile using each cell's latitude."""
    unit = unit or UnitDistances()
    _, lat = g_lon.mesh()
    return (g_lon.with_values(g_lon.values / unit.lon_miles(lat)),
            g_lat.with_values(g_lat.values / unit.lat_miles))


def composite_gradient(g_dlon: ScalarGrid, g_dlat: ScalarGrid) -> ScalarGrid:
    """Cellwise Euclidean norm of the two per-mile gradients."""
    if g_dlon.values.shape != g_dlat.values.shape:
        raise SurfaceError("gradient grids are not aligned")
    return g_dlon.with_values(np.hypot(g_dlon.values, g_dlat.values), g_dlon.mask & g_dlat.mask)


def invert_to_speed(composite: ScalarGrid, floor: float = 1e-4) -> SpeedField:
    """Speed (miles/s) = 1 / composite gradient; cells under `floor` are singular."""
    if not floor > 0:
        raise ValueError("gradient floor must be positive")
    g = composite.values
    singular = composite.mask & ~(g >= floor)
    speeds = np.full(g.shape, np.nan)
    good = composite.mask & ~singular
    speeds[good] = 1.0 / g[good]
    return SpeedField(composite, speeds, singular)


def speed_field(grid: ScalarGrid, floor: float = 1e-4, unit: UnitDistances | None = None) -> SpeedField:
    g_lon, g_lat = grid_gradient(grid)
    return invert_to_speed(composite_gradient(*rescale_gradient(g_lon, g_lat, unit)), floor)


def speed_from_surface(surface: ArrivalSurface, bbox, resolution: float, floor: float = 1e-4,
                       unit: UnitDistances | None = None) -> SpeedField:
    return speed_field(surface.eval_grid(bbox, resolution), floor, unit)


def interior_mask(mask: np.ndarray, margin: int = 2) -> np.ndarray:
    """Cells whose (2*margin+1)^2 neighbourhood is entirely unmasked."""
    out = mask.copy()
    for _ in range(margin):
        m = out.copy()
        m[1:, :] &= out[:-1, :]
        m[:-1, :] &= out[1:, :]
        m[:, 1:] &= out[:, :-1]
        m[:, :-1] &= out[:, 1:]
        m[1:, 1:] &= out[:-1, :-1]
        m[:-1, :-1] &= out[1:, 1:]
        m[1:, :-1] &= out[:-1, 1:]
        m[:-1, 1:] &= out[1:, :-1]
        m[0, :] = m[-1, :] = False
        m[:, 0] = m[:, -1] = False
        out = m
    return out


def write_speed_csv(field: SpeedField, path) -> int:
    """``lon,lat,speed_mi_per_s`` for defined cells; returns the row count."""
    lon, lat = field.grid.mesh()
    sel = field.defined
    with Path(path).open("w", newline="") as fh:
        fh.write("# crs=lonlat-degrees\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lon", "lat", "speed_mi_per_s"])
        for a, b, v in zip(lon[sel], lat[sel], field.speeds[sel]):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(v))])
    return int(sel.sum())


def median_speed(field: SpeedField, margin: int = 2) -> float:
    sel = field.defined & interior_mask(field.grid.mask, margin)
    return float(np.median(field.speeds[sel])) if sel.any() else math.nan
