"""Locate power-grid disturbances from timestamped frequency measurements.

Pipeline: filter traces, detect the event on the system-average frequency,
extract per-sensor arrival times, triangulate the sensors, fit a C1 arrival
surface, take its minimum as the event location, validate sensors against a
delay/distance regression, and turn the surface gradient into a speed map.
"""

from .config import ConfigError, RunConfig, load_config
from .detect import (ArrivalSet, DetectionError, DetectionParams, EventDetection,
                     InsufficientSensorsError, detect, detect_event_start,
                     relative_arrival_times, rocof, system_average_frequency)
from .locate import (EventEstimate, LocateResult, NoEventError, ValidationReport, build_report,
                     find_minimum, great_circle_distance, locate_arrivals, locate_event,
                     refine_minimum, validate)
from .measurements import (FrequencyTrace, InputError, SensorSet, SensorSite, TraceList,
                           crossing_time, load_sensor_registry, load_traces, moving_average,
                           write_sensor_registry, write_traces)
from .mesh import MeshError, TriMesh, delaunay, incircle
from .speedmap import (SpeedField, UnitDistances, composite_gradient, grid_gradient,
                       invert_to_speed, rescale_gradient, speed_field)
from .surface import ArrivalSurface, ScalarGrid, SurfaceError, fit_surface
from .synthetic import SyntheticScenario, error_report, synth_arrival, synth_traces

__version__ = "0.1.0"
