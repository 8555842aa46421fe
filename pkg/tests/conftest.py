import numpy as np
import pytest
from hypothesis import settings

from emwaveloc.measurements import FrequencyTrace, SensorSet, SensorSite

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def ramp_trace(sid="A", t_arr=10.0, f0=60.005, rate=0.005, duration=40.0, interval=0.1, f_final=None, t_begin=0.0):
    """Flat at f0, then falling at `rate` Hz/s from t_arr (optionally holding at f_final)."""
    n = int(round(duration / interval))
    t = t_begin + interval * np.arange(n)
    f = f0 - np.clip(t - t_arr, 0.0, None) * rate
    if f_final is not None:
        f = np.maximum(f, f_final)
    return FrequencyTrace(sid, t, f, interval)


@pytest.fixture
def square_sites():
    return SensorSet([SensorSite("a", 0.0, 0.0), SensorSite("b", 0.0, 1.0),
                      SensorSite("c", 1.0, 0.0), SensorSite("d", 1.0, 1.0)])
