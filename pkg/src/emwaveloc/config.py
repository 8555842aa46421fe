"""Run configuration: every tunable constant as a named key.

Config files are flat ``key = value`` text; ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .detect import DetectionParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    filter_n: int = 5
    reporting_interval: float = 0.1
    delta_f: float = 0.005
    rocof_threshold: float = 0.001
    majority_fraction: float = 0.75
    confirm_window: float = 4.0
    max_delay: float = 30.0
    # lon_min, lat_min, lon_max, lat_max; None -> bounding box of the sensor hull
    bbox: Optional[tuple[float, float, float, float]] = None
    grid_resolution: float = 0.02
    refine_factor: int = 10
    max_iterations: int = 3
    iqr_factor: float = 1.5
    min_delta_t: float = 0.1
    # "fence": outside [Q1 - d, Q3 + d]; "absolute": |residual| > d
    outlier_rule: str = "fence"
    regression_intercept: bool = False
    n_neighbors: int = 14
    t_ref_offset: float = 0.0
    speed_resolution: float = 0.1
    gradient_floor: float = 1e-4
    output_dir: str = "out"

    def __post_init__(self):
        if self.filter_n < 1 or self.filter_n % 2 == 0:
            raise ConfigError("filter_n must be a positive odd integer")
        for name in ("reporting_interval", "grid_resolution", "speed_resolution",
                     "gradient_floor", "max_delay", "iqr_factor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.refine_factor < 1:
            raise ConfigError("refine_factor must be >= 1")
        if self.min_delta_t < 0:
            raise ConfigError("min_delta_t must be >= 0")
        if self.outlier_rule not in ("fence", "absolute"):
            raise ConfigError("outlier_rule must be 'fence' or 'absolute'")
        if self.bbox is not None and len(self.bbox) != 4:
            raise ConfigError("bbox needs 4 numbers: lon_min,lat_min,lon_max,lat_max")
        try:
            self.detection_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def detection_params(self) -> DetectionParams:
        return DetectionParams(self.delta_f, self.rocof_threshold, self.majority_fraction,
                               self.confirm_window)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(RunConfig(), key)
    raw = raw.strip()
    try:
        if key == "bbox":
            if raw.lower() in ("", "none", "auto"):
                return None
            return tuple(float(v) for v in raw.replace(" ", "").split(","))
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            key = key.strip()
            try:
                values[key] = _coerce(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    values.update(parse_overrides(overrides))
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if key == "bbox":
            value = "auto" if value is None else ",".join(repr(float(v)) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
