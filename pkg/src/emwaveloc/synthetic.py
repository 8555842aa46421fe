"""Synthetic events with known ground truth.

A scenario places a source, an event time and a speed model; every sensor
sees a flat pre-event frequency that starts ramping down when the wave
front reaches it (straight great-circle ray) and levels off at the
post-event value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .locate import EventEstimate, great_circle_distance
from .measurements import FrequencyTrace, SensorSet, SensorSite, TraceList

CONTINENTAL_BBOX = (-125.0, 24.0, -66.0, 50.0)
DEFAULT_EPOCH = "2014-11-21T13:48:00Z"


@dataclass
class SyntheticScenario:
    """Ground-truth event.

    ``bands`` (optional) is a list of ``(outer_radius_mi, speed)`` rings
    around the source, innermost first; the last ring extends to infinity
    whatever its radius.  Without bands the constant ``speed`` applies.
    ``faults`` maps sensor id to a timestamp offset in seconds.
    """

    source: tuple[float, float]
    t0: float = 30.0
    speed: float = 500.0
    bands: Optional[list[tuple[float, float]]] = None
    f0: float = 60.005
    f_final: float = 59.975
    ramp_rate: float = 0.01
    noise_sd: float = 0.0
    reporting_interval: float = 0.1
    t_begin: float = 0.0
    duration: float = 120.0
    faults: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    epoch: str = DEFAULT_EPOCH

    def __post_init__(self):
        self.source = (float(self.source[0]), float(self.source[1]))
        speeds = [s for _, s in self.bands] if self.bands else [self.speed]
        if any(not s > 0 for s in speeds):
            raise ValueError("every speed must be positive")
        if not self.f_final < self.f0:
            raise ValueError("f_final must be below f0 (falling event)")
        if self.noise_sd < 0 or not self.ramp_rate > 0 or not self.reporting_interval > 0:
            raise ValueError("noise_sd >= 0, ramp_rate > 0 and reporting_interval > 0 required")

    @property
    def crossing_lag(self) -> float:
        """Delay from front arrival to crossing ``f0 - delta_f`` for delta_f = 0.005 Hz."""
        return 0.005 / self.ramp_rate

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScenario":
        d = dict(d)
        for key in ("n_sensors", "bbox", "registry"):
            d.pop(key, None)
        if "bands" in d and d["bands"] is not None:
            d["bands"] = [(math.inf if r is None else float(r), float(s)) for r, s in d["bands"]]
        d["source"] = tuple(d["source"])
        return cls(**d)


def travel_time(scenario: SyntheticScenario, distance_mi):
    """Time (s) for the front to cover `distance_mi` from the source."""
    d = np.asarray(distance_mi, dtype=float)
    if not scenario.bands:
        return d / scenario.speed
    total = np.zeros_like(d)
    inner = 0.0
    for k, (outer, speed) in enumerate(scenario.bands):
        if k == len(scenario.bands) - 1:
            outer = math.inf
        total += np.clip(d - inner, 0.0, outer - inner) / speed
        inner = outer
    return total


def synth_arrival(scenario: SyntheticScenario, site) -> float:
    """True front arrival time at `site` (a SensorSite or (lon, lat))."""
    lonlat = (site.lon, site.lat) if isinstance(site, SensorSite) else tuple(site)
    d = great_circle_distance(np.array(scenario.source), np.array(lonlat))
    return float(scenario.t0 + travel_time(scenario, d))


def _profile(scenario: SyntheticScenario, t, t_arr):
    drop = np.clip((t - t_arr) * scenario.ramp_rate, 0.0, scenario.f0 - scenario.f_final)
    return scenario.f0 - drop


def synth_traces(scenario: SyntheticScenario, sites: SensorSet) -> TraceList:
    """Traces for every site; noise drawn from ``default_rng(scenario.seed)``
    in site order, then fault offsets added to the faulted timestamps."""
    rng = np.random.default_rng(scenario.seed)
    n = int(round(scenario.duration / scenario.reporting_interval))
    t = scenario.t_begin + scenario.reporting_interval * np.arange(n)
    out = TraceList(epoch=scenario.epoch)
    for s in sites:
        f = _profile(scenario, t, synth_arrival(scenario, s))
        if scenario.noise_sd > 0:
            f = f + rng.normal(0.0, scenario.noise_sd, size=n)
        out.append(FrequencyTrace(s.id, t + scenario.faults.get(s.id, 0.0), f, scenario.reporting_interval))
    return out


def jittered_layout(n: int, rng, bbox=CONTINENTAL_BBOX, prefix: str = "S") -> SensorSet:
    """`n` sites, one per randomly chosen cell of a grid roughly matched to
    the bbox aspect ratio, uniformly placed inside the cell."""
    lon_min, lat_min, lon_max, lat_max = bbox
    aspect = (lon_max - lon_min) / (lat_max - lat_min)
    nx = max(1, int(round(math.sqrt(n * aspect))))
    ny = max(1, int(math.ceil(n / nx)))
    while nx * ny < n:
        ny += 1
    xs = np.linspace(lon_min, lon_max, nx + 1)
    ys = np.linspace(lat_min, lat_max, ny + 1)
    cells = rng.choice(nx * ny, size=n, replace=False)
    sites = []
    for k, c in enumerate(sorted(cells)):
        i, j = divmod(int(c), ny)
        lon = rng.uniform(xs[i], xs[i + 1])
        lat = rng.uniform(ys[j], ys[j + 1])
        sites.append(SensorSite(f"{prefix}{k:03d}", float(lat), float(lon)))
    return SensorSet(sites)


def random_scenario(rng, speed: float, n_sensors: int | None = None, noise_sd: float = 0.0,
                    bbox=CONTINENTAL_BBOX, margin: float = 0.2, **kw) -> tuple[SyntheticScenario, SensorSet]:
    """Random layout and a source uniformly inside the central part of `bbox`
    (`margin` is the fraction trimmed from each side)."""
    if n_sensors is None:
        n_sensors = int(rng.integers(40, 81))
    sites = jittered_layout(n_sensors, rng, bbox)
    lon_min, lat_min, lon_max, lat_max = bbox
    w, h = lon_max - lon_min, lat_max - lat_min
    src = (float(rng.uniform(lon_min + margin * w, lon_max - margin * w)),
           float(rng.uniform(lat_min + margin * h, lat_max - margin * h)))
    seed = int(rng.integers(2**31))
    return SyntheticScenario(src, speed=speed, noise_sd=noise_sd, seed=seed, **kw), sites


def error_report(estimate: EventEstimate, scenario: SyntheticScenario, f_T: float | None = None) -> dict:
    """Distance (miles) and time (s) error of an estimate against the truth.

    ``time_error_corrected_s`` removes the constant lag between front
    arrival and threshold crossing (known for synthetic ramps).
    """
    d = great_circle_distance(np.array([estimate.lon_event, estimate.lat_event]), np.array(scenario.source))
    lag = scenario.crossing_lag if f_T is None else (scenario.f0 - f_T) / scenario.ramp_rate
    return {
        "distance_error_mi": float(d),
        "time_error_s": abs(estimate.t_event - scenario.t0),
        "time_error_corrected_s": abs(estimate.t_event - lag - scenario.t0),
    }


def load_scenario(path) -> tuple[SyntheticScenario, dict]:
    """Read a JSON scenario file; returns the scenario and the raw dict
    (which may also carry ``n_sensors``, ``bbox`` and ``registry``)."""
    raw = json.loads(Path(path).read_text())
    return SyntheticScenario.from_dict(raw), raw


def scenario_sites(raw: dict, scenario: SyntheticScenario, base: Path | None = None) -> SensorSet:
    from .measurements import load_sensor_registry

    if raw.get("registry"):
        p = Path(raw["registry"])
        if base is not None and not p.is_absolute():
            p = base / p
        return load_sensor_registry(p)
    rng = np.random.default_rng(scenario.seed)
    return jittered_layout(int(raw.get("n_sensors", 40)), rng, tuple(raw.get("bbox", CONTINENTAL_BBOX)))
