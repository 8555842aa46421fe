"""Sensor registries, frequency traces, filtering and threshold crossings."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_INTERVAL = 0.1
DEFAULT_FILTER_N = 5


class InputError(ValueError):
    """Malformed or inconsistent input file."""


@dataclass(frozen=True)
class SensorSite:
    id: str
    lat: float
    lon: float
    label: Optional[str] = None

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise InputError(f"sensor {self.id}: latitude {self.lat} out of range [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise InputError(f"sensor {self.id}: longitude {self.lon} out of range [-180, 180]")


@dataclass
class SensorSet:
    sites: list[SensorSite]

    def __post_init__(self):
        self.sites = list(self.sites)
        self._idx: dict[str, int] = {}
        for i, s in enumerate(self.sites):
            if s.id in self._idx:
                raise InputError(f"duplicate sensor id {s.id!r}")
            self._idx[s.id] = i

    def __len__(self):
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def __contains__(self, sensor_id):
        return sensor_id in self._idx

    def __getitem__(self, sensor_id) -> SensorSite:
        return self.sites[self._idx[sensor_id]]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.sites]

    def lonlat(self, ids: Iterable[str] | None = None) -> np.ndarray:
        """(n, 2) array of (lon, lat), optionally for a subset of ids in the given order."""
        sites = self.sites if ids is None else [self[i] for i in ids]
        return np.array([(s.lon, s.lat) for s in sites], dtype=float).reshape(-1, 2)

    def subset(self, ids: Iterable[str]) -> "SensorSet":
        return SensorSet([self[i] for i in ids])


@dataclass
class FrequencyTrace:
    """Timestamped frequency samples of one sensor.

    ``t`` is seconds since the file epoch, strictly increasing; ``interval``
    is the nominal reporting interval.
    """

    sensor_id: str
    t: np.ndarray
    f: np.ndarray
    interval: float = DEFAULT_INTERVAL

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.t.shape != self.f.shape or self.t.ndim != 1:
            raise InputError(f"trace {self.sensor_id}: t and f must be 1-d and equally long")
        if len(self.t) > 1 and not (np.diff(self.t) > 0).all():
            raise InputError(f"trace {self.sensor_id}: timestamps must be strictly increasing")
        if not np.isfinite(self.f).all() or not np.isfinite(self.t).all():
            raise InputError(f"trace {self.sensor_id}: non-finite sample")
        if not self.interval > 0:
            raise InputError("reporting interval must be positive")

    def __len__(self):
        return len(self.t)

    def shifted(self, dt: float) -> "FrequencyTrace":
        return FrequencyTrace(self.sensor_id, self.t + dt, self.f.copy(), self.interval)


class TraceList(list):
    """List of traces that remembers the file epoch (ISO-8601 string or None)."""

    def __init__(self, traces=(), epoch: str | None = None):
        super().__init__(traces)
        self.epoch = epoch

    def by_id(self) -> dict[str, FrequencyTrace]:
        return {tr.sensor_id: tr for tr in self}


def _data_lines(fh):
    """Yield (line_number, line) skipping blank and '#' comment lines."""
    for lineno, line in enumerate(fh, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line


def load_sensor_registry(path) -> SensorSet:
    """Read ``id,lat,lon[,label]`` CSV into a :class:`SensorSet`."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(_data_lines(fh))
    if not rows:
        raise InputError(f"{path}: empty registry")
    header = [h.strip() for h in next(csv.reader([rows[0][1]]))]
    if header[:3] != ["id", "lat", "lon"]:
        raise InputError(f"{path}: expected header 'id,lat,lon[,label]', got {','.join(header)!r}")
    sites = []
    seen: dict[str, int] = {}
    for lineno, line in rows[1:]:
        rec = next(csv.reader([line]))
        if len(rec) < 3:
            raise InputError(f"{path}: row {lineno}: expected at least 3 fields")
        sid = rec[0].strip()
        try:
            lat = float(rec[1])
            lon = float(rec[2])
        except ValueError:
            raise InputError(f"{path}: row {lineno}: cannot parse coordinates {rec[1]!r}, {rec[2]!r}") from None
        if sid in seen:
            raise InputError(f"{path}: row {lineno}: duplicate sensor id {sid!r} (first at row {seen[sid]})")
        seen[sid] = lineno
        label = rec[3].strip() if len(rec) > 3 and rec[3].strip() else None
        try:
            sites.append(SensorSite(sid, lat, lon, label))
        except InputError as exc:
            raise InputError(f"{path}: row {lineno}: {exc}") from None
    return SensorSet(sites)


def write_sensor_registry(registry: SensorSet, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("# crs=lonlat-degrees\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lat", "lon", "label"])
        for s in registry:
            w.writerow([s.id, repr(s.lat), repr(s.lon), s.label or ""])


def load_traces(path, registry: SensorSet, min_samples: int = DEFAULT_FILTER_N,
                interval: float = DEFAULT_INTERVAL) -> TraceList:
    """Read a ``t,sensor_id,f`` CSV; returns traces in registry order.

    Traces shorter than `min_samples` are dropped with a warning.
    """
    path = Path(path)
    epoch = None
    samples: dict[str, list[tuple[float, float, int]]] = {}
    header = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped[1:].strip()
                if body.startswith("epoch="):
                    epoch = body[len("epoch="):].strip()
                continue
            rec = next(csv.reader([line]))
            if header is None:
                header = [h.strip() for h in rec]
                if header != ["t", "sensor_id", "f"]:
                    raise InputError(f"{path}: row {lineno}: expected header 't,sensor_id,f'")
                continue
            if len(rec) != 3:
                raise InputError(f"{path}: row {lineno}: expected 3 fields, got {len(rec)}")
            sid = rec[1].strip()
            try:
                t = float(rec[0])
                f = float(rec[2])
            except ValueError:
                raise InputError(f"{path}: row {lineno}: cannot parse number in {line.strip()!r}") from None
            if not (math.isfinite(t) and math.isfinite(f)):
                raise InputError(f"{path}: row {lineno}: non-finite value")
            if sid not in registry:
                raise InputError(f"{path}: row {lineno}: sensor id {sid!r} not in registry")
            samples.setdefault(sid, []).append((t, f, lineno))
    if header is None:
        raise InputError(f"{path}: missing header 't,sensor_id,f'")

    traces = TraceList(epoch=epoch)
    for sid in registry.ids:
        rows = samples.get(sid)
        if not rows:
            continue
        rows.sort(key=lambda r: r[0])
        for a, b in zip(rows, rows[1:]):
            if a[0] == b[0]:
                raise InputError(f"{path}: row {b[2]}: duplicate timestamp {b[0]!r} for sensor {sid!r}")
        if len(rows) < min_samples:
            log.warning("dropping sensor %s: %d samples < %d", sid, len(rows), min_samples)
            continue
        traces.append(FrequencyTrace(sid, [r[0] for r in rows], [r[1] for r in rows], interval))
    return traces


def write_traces(traces: Iterable[FrequencyTrace], path, epoch: str | None = None) -> None:
    """Write the canonical trace CSV: rows ordered by time, then by trace order."""
    traces = list(traces)
    if epoch is None:
        epoch = getattr(traces, "epoch", None)
    rows = []
    for k, tr in enumerate(traces):
        for t, f in zip(tr.t.tolist(), tr.f.tolist()):
            rows.append((t, k, tr.sensor_id, f))
    rows.sort(key=lambda r: (r[0], r[1]))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if epoch:
            fh.write(f"# epoch={epoch}\n")
        fh.write("t,sensor_id,f\n")
        for t, _, sid, f in rows:
            fh.write(f"{t!r},{sid},{f!r}\n")


def moving_average(trace: FrequencyTrace, n: int = DEFAULT_FILTER_N) -> FrequencyTrace:
    """Centred moving mean over `n` samples (odd), window shrinking
    symmetrically at the trace ends so the length is preserved."""
    if n < 1 or n % 2 == 0:
        raise ValueError(f"window size must be a positive odd integer, got {n}")
    f = trace.f
    m = len(f)
    if m == 0:
        raise InputError(f"trace {trace.sensor_id} is empty")
    half = n // 2
    k = np.arange(m)
    reach = np.minimum(np.minimum(k, m - 1 - k), half)
    total = f.copy()
    lo = f.copy()
    hi = f.copy()
    for j in range(1, half + 1):
        sel = reach >= j
        idx = k[sel]
        for nb in (f[idx - j], f[idx + j]):
            total[sel] += nb
            lo[sel] = np.minimum(lo[sel], nb)
            hi[sel] = np.maximum(hi[sel], nb)
    # the rounded mean of equal samples can miss by an ulp; keep it inside the window
    out = np.clip(total / (2 * reach + 1), lo, hi)
    return FrequencyTrace(trace.sensor_id, trace.t.copy(), out, trace.interval)


def crossing_time(trace: FrequencyTrace, f_threshold: float, direction: str = "falling",
                  t_from: float | None = None, max_gap: float | None = None) -> float | None:
    """Earliest time the linearly interpolated trace crosses `f_threshold`.

    A falling crossing is a segment with ``f_k > f_T >= f_{k+1}`` (mirrored
    for rising).  Only crossings at or after `t_from` count.  A crossing on
    a segment longer than `max_gap` (default twice the reporting interval)
    is not bridged and gives None.
    """
    if direction not in ("falling", "rising"):
        raise ValueError(f"direction must be 'falling' or 'rising', got {direction!r}")
    t, f = trace.t, trace.f
    if len(t) < 2:
        return None
    if max_gap is None:
        max_gap = 2.0 * trace.interval
    if direction == "falling":
        seg = (f[:-1] > f_threshold) & (f[1:] <= f_threshold)
    else:
        seg = (f[:-1] < f_threshold) & (f[1:] >= f_threshold)
    for k in np.flatnonzero(seg):
        if f[k + 1] == f_threshold:
            tc = float(t[k + 1])
        else:
            tc = float(t[k] + (f_threshold - f[k]) * (t[k + 1] - t[k]) / (f[k + 1] - f[k]))
        if t_from is not None and tc < t_from:
            continue
        if t[k + 1] - t[k] > max_gap * (1 + 1e-9):
            return None
        return tc
    return None
