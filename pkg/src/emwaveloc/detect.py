"""Event detection on the system-average frequency and relative arrival times."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .measurements import DEFAULT_INTERVAL, FrequencyTrace, InputError, crossing_time

log = logging.getLogger(__name__)


class DetectionError(ValueError):
    """Detection could not run on the given input."""


class InsufficientSensorsError(ValueError):
    """Fewer sensors than a triangulation needs."""


@dataclass(frozen=True)
class DetectionParams:
    delta_f: float = 0.005
    rocof_threshold: float = 0.001
    majority_fraction: float = 0.75
    confirm_window: float = 4.0

    def __post_init__(self):
        for name in ("delta_f", "rocof_threshold", "majority_fraction", "confirm_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.majority_fraction > 1:
            raise ValueError("majority_fraction must be <= 1")


@dataclass(frozen=True)
class EventDetection:
    t_start: float
    f_start: float
    f_T: float
    t_R: float
    direction: str

    def to_dict(self) -> dict:
        return {"t_start": self.t_start, "f_start": self.f_start, "f_T": self.f_T,
                "t_R": self.t_R, "direction": self.direction}


@dataclass
class ArrivalSet:
    """Per-sensor arrival times relative to the common reference ``t_R``.

    ``crossings`` keeps the absolute crossing times the relative values were
    derived from; ``omitted`` lists sensors without a usable crossing.
    """

    sensor_ids: list[str]
    relative: np.ndarray
    t_R: float
    f_T: float
    direction: str = "falling"
    crossings: Optional[np.ndarray] = None
    omitted: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.relative = np.asarray(self.relative, dtype=float)
        if self.crossings is None:
            self.crossings = self.relative + self.t_R
        self.crossings = np.asarray(self.crossings, dtype=float)
        if len(set(self.sensor_ids)) != len(self.sensor_ids):
            raise ValueError("at most one arrival per sensor")
        if len(self.sensor_ids) != len(self.relative):
            raise ValueError("sensor_ids and relative arrivals differ in length")

    def __len__(self):
        return len(self.sensor_ids)

    def entries(self) -> list[tuple[str, float]]:
        return list(zip(self.sensor_ids, self.relative.tolist()))

    def subset(self, keep: Sequence[str]) -> "ArrivalSet":
        keep = set(keep)
        idx = [i for i, s in enumerate(self.sensor_ids) if s in keep]
        dropped = [s for s in self.sensor_ids if s not in keep]
        return ArrivalSet([self.sensor_ids[i] for i in idx], self.relative[idx], self.t_R, self.f_T,
                          self.direction, self.crossings[idx], self.omitted + dropped)

    def write(self, path) -> None:
        """CSV ``sensor_id,relative_arrival`` plus a ``.json`` sidecar."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sensor_id", "relative_arrival"])
            for sid, r in self.entries():
                w.writerow([sid, repr(r)])
        sidecar = {"t_R": self.t_R, "f_T": self.f_T, "direction": self.direction,
                   "omitted": list(self.omitted)}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def read(cls, path) -> "ArrivalSet":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        ids, rel = [], []
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if not rows or rows[0] != ["sensor_id", "relative_arrival"]:
            raise InputError(f"{path}: expected header 'sensor_id,relative_arrival'")
        for lineno, row in enumerate(rows[1:], start=2):
            try:
                rel.append(float(row[1]))
            except (IndexError, ValueError):
                raise InputError(f"{path}: row {lineno}: cannot parse arrival") from None
            ids.append(row[0])
        return cls(ids, np.array(rel), float(meta["t_R"]), float(meta["f_T"]),
                   meta.get("direction", "falling"), omitted=list(meta.get("omitted", [])))


def system_average_frequency(traces: Sequence[FrequencyTrace], interval: float | None = None,
                             min_coverage: float = 0.5) -> FrequencyTrace:
    """Mean frequency on nominal ticks ``t0 + k * interval``, with ``t0``
    the earliest timestamp of any trace (so a common time shift moves the
    ticks with the data).

    A sensor contributes to the tick nearest each of its samples (within
    half an interval).  Only ticks reported by at least `min_coverage` of
    the sensors are kept.
    """
    if not traces:
        raise DetectionError("no traces to average")
    if interval is None:
        interval = traces[0].interval
    t0 = min(float(tr.t[0]) for tr in traces if len(tr))
    ks, fs = [], []
    for tr in traces:
        k = np.rint((tr.t - t0) / interval).astype(np.int64)
        off = np.abs(tr.t - t0 - k * interval)
        keep = off <= interval / 2
        k, f, off = k[keep], tr.f[keep], off[keep]
        # one sample per tick per sensor: the nearest one
        order = np.lexsort((off, k))
        k, f = k[order], f[order]
        first = np.concatenate([[True], k[1:] != k[:-1]])
        ks.append(k[first])
        fs.append(f[first])
    k_all = np.concatenate(ks)
    f_all = np.concatenate(fs)
    ticks, inv = np.unique(k_all, return_inverse=True)
    count = np.bincount(inv, minlength=len(ticks))
    total = np.bincount(inv, weights=f_all, minlength=len(ticks))
    keep = count >= min_coverage * len(traces)
    if not keep.any():
        raise DetectionError("traces have no overlapping coverage")
    return FrequencyTrace("system-average", t0 + ticks[keep] * interval, total[keep] / count[keep], interval)


def rocof(trace: FrequencyTrace) -> FrequencyTrace:
    """Backward difference quotient in Hz/s, stamped at the later sample."""
    if len(trace) < 2:
        raise ValueError("ROCOF needs at least 2 samples")
    return FrequencyTrace(trace.sensor_id, trace.t[1:], np.diff(trace.f) / np.diff(trace.t), trace.interval)


def detect_event_start(avg: FrequencyTrace, params: DetectionParams | None = None) -> EventDetection | None:
    """Find the event start on the average frequency; None when no event.

    The start is the left end of the first difference interval whose
    |ROCOF| exceeds the threshold and from which at least
    ``majority_fraction`` of the |ROCOF| samples over the following
    ``confirm_window`` also exceed it.
    """
    params = params or DetectionParams()
    if len(avg) < 2 or avg.t[-1] - avg.t[0] < params.confirm_window:
        raise DetectionError(
            f"average frequency spans {avg.t[-1] - avg.t[0]:.3f} s, shorter than the "
            f"{params.confirm_window} s confirmation window")
    r = rocof(avg)
    exceed = np.abs(r.f) > params.rocof_threshold
    csum = np.concatenate([[0], np.cumsum(exceed)])
    ends = np.searchsorted(r.t, r.t + params.confirm_window - 1e-9 * avg.interval, side="left")
    complete = r.t + params.confirm_window <= r.t[-1] + 0.5 * avg.interval
    for j in np.flatnonzero(exceed & complete):
        e = ends[j]
        frac = (csum[e] - csum[j]) / (e - j)
        if frac >= params.majority_fraction:
            direction = "falling" if np.median(r.f[j:e]) < 0 else "rising"
            t_start = float(avg.t[j])
            f_start = float(avg.f[j])
            f_T = f_start - params.delta_f if direction == "falling" else f_start + params.delta_f
            return EventDetection(t_start, f_start, f_T, t_start, direction)
    return None


def relative_arrival_times(traces: Sequence[FrequencyTrace], detection: EventDetection,
                           max_delay: float = 30.0, lookback: float = 4.0,
                           t_ref_offset: float = 0.0) -> ArrivalSet:
    """Crossing time of ``f_T`` minus the reference time for every sensor.

    Crossings are searched from ``t_R - lookback``.  If a sensor crosses
    before the detection's ``t_R`` the reference is moved back to that
    crossing so no relative arrival is negative.  `t_ref_offset` shifts the
    reference by a constant (location results do not depend on it).
    Sensors without a crossing, or crossing more than `max_delay` seconds
    after the reference, are omitted.
    """
    found: list[tuple[str, float]] = []
    omitted: list[str] = []
    for tr in traces:
        tc = crossing_time(tr, detection.f_T, detection.direction, t_from=detection.t_R - lookback)
        if tc is None:
            omitted.append(tr.sensor_id)
        else:
            found.append((tr.sensor_id, tc))
    t_R = detection.t_R
    if found:
        t_R = min(t_R, min(tc for _, tc in found))
    t_R += t_ref_offset
    late = [sid for sid, tc in found if tc - t_R > max_delay]
    if late:
        log.warning("excluding %d sensor(s) crossing more than %.0f s after t_R: %s",
                    len(late), max_delay, ", ".join(late))
    found = [(sid, tc) for sid, tc in found if tc - t_R <= max_delay]
    omitted += late
    if omitted:
        log.info("sensors without usable crossing: %s", ", ".join(omitted))
    if len(found) < 3:
        raise InsufficientSensorsError(
            f"insufficient sensors: {len(found)} crossing(s) of f_T, at least 3 needed")
    ids = [sid for sid, _ in found]
    crossings = np.array([tc for _, tc in found])
    return ArrivalSet(ids, crossings - t_R, t_R, detection.f_T, detection.direction, crossings, omitted)


def detect(traces: Sequence[FrequencyTrace], params: DetectionParams | None = None,
           interval: float | None = None) -> EventDetection | None:
    """Average the (already filtered) traces and run :func:`detect_event_start`."""
    avg = system_average_frequency(traces, interval or (traces[0].interval if traces else DEFAULT_INTERVAL))
    return detect_event_start(avg, params)
