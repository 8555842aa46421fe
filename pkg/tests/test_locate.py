import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emwaveloc.config import RunConfig
from emwaveloc.detect import ArrivalSet, InsufficientSensorsError
from emwaveloc.locate import (EventEstimate, NoEventError, build_report, estimate_from_report, find_minimum,
                              great_circle_distance, locate_arrivals, locate_event, refine_minimum, validate)
from emwaveloc.measurements import FrequencyTrace, SensorSet, SensorSite
from emwaveloc.surface import ScalarGrid, SurfaceError
from emwaveloc.synthetic import SyntheticScenario, error_report, jittered_layout, synth_arrival, synth_traces

lonlat = st.tuples(st.floats(-180, 180), st.floats(-90, 90))


def test_distance_identical_points():
    assert great_circle_distance((-95.0, 38.0), (-95.0, 38.0)) == 0.0


def test_distance_one_degree_latitude():
    assert great_circle_distance((0.0, 30.0), (0.0, 31.0)) == pytest.approx(69.09, abs=0.01)
    assert great_circle_distance((0.0, 30.0), (0.0, 31.0)) == pytest.approx(3958.8 * np.pi / 180, rel=1e-12)


def test_distance_symmetric_random_pairs():
    rng = np.random.default_rng(0)
    a = np.column_stack([rng.uniform(-180, 180, 100), rng.uniform(-90, 90, 100)])
    b = np.column_stack([rng.uniform(-180, 180, 100), rng.uniform(-90, 90, 100)])
    np.testing.assert_array_equal(great_circle_distance(a, b), great_circle_distance(b, a))


@given(lonlat, lonlat)
def test_distance_non_negative_and_bounded(a, b):
    d = great_circle_distance(a, b)
    assert 0.0 <= d <= np.pi * 3958.8 + 1e-9


def grid_from(values, mask=None):
    values = np.asarray(values, dtype=float)
    return ScalarGrid(-96.0, 37.0, 1.0, 1.0, values, np.ones(values.shape, bool) if mask is None else mask)


def test_find_minimum_unique():
    v = np.full((3, 3), 2.0)
    v[1, 1] = 0.42
    assert find_minimum(grid_from(v)) == (-95.0, 38.0, 0.42)


def test_find_minimum_constant_grid_tie_rule():
    mask = np.ones((3, 3), bool)
    mask[0, 0] = False
    assert find_minimum(grid_from(np.ones((3, 3)), mask))[:2] == (-95.0, 37.0)


def test_find_minimum_all_masked():
    with pytest.raises(SurfaceError):
        find_minimum(grid_from(np.ones((2, 2)), np.zeros((2, 2), bool)))


def proportional_set(speed=500.0, n=12, seed=0, shift=None):
    rng = np.random.default_rng(seed)
    sites = jittered_layout(n, rng)
    est = EventEstimate(-95.0, 38.0, 0.0, 100.0)
    d = great_circle_distance(sites.lonlat(), np.array([est.lon_event, est.lat_event]))
    cross = est.t_event + d / speed
    if shift:
        cross[shift[0]] += shift[1]
    arr = ArrivalSet(sites.ids, cross - 99.0, 99.0, 59.995, crossings=cross)
    return arr, sites, est


def test_validate_exact_proportional():
    arr, sites, est = proportional_set()
    rep = validate(arr, sites, est)
    assert rep.slope == pytest.approx(0.002, rel=1e-12)
    np.testing.assert_allclose(rep.residuals, 0.0, atol=1e-12)
    assert rep.outliers == []


@pytest.mark.parametrize("rule", ["fence", "absolute"])
def test_validate_flags_shifted_sensor(rule):
    arr, sites, est = proportional_set(shift=(5, 1.0))
    rep = validate(arr, sites, est, rule=rule)
    assert rep.outliers == [arr.sensor_ids[5]]


def test_validate_three_sensors_skipped(caplog):
    arr, sites, est = proportional_set(n=3)
    rep = validate(arr, sites, est)
    assert rep.skipped and rep.outliers == []
    assert "skipped" in rep.message


def test_validate_uses_given_t_R():
    arr, sites, est = proportional_set()
    moved = ArrivalSet(arr.sensor_ids, arr.relative, arr.t_R, arr.f_T)
    assert np.allclose(validate(moved, sites, est, t_R=99.0).residuals, 0.0, atol=1e-9)


def test_validate_intercept_option():
    arr, sites, est = proportional_set()
    rep = validate(arr, sites, est, intercept=True)
    assert rep.intercept == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=30)
@given(st.floats(50, 5000))
def test_validate_slope_absorbs_speed(speed):
    arr, sites, est = proportional_set(speed=speed, seed=3)
    rep = validate(arr, sites, est)
    assert rep.slope == pytest.approx(1 / speed, rel=1e-9)
    assert np.abs(rep.residuals).max() <= 1e-9
    assert rep.outliers == []


def scenario_run(seed=1, n=40, speed=500.0, faults=None, cfg=None):
    rng = np.random.default_rng(seed)
    sites = jittered_layout(n, rng)
    scen = SyntheticScenario((-92.0, 37.5), speed=speed, faults=faults or {}, seed=seed)
    return scen, sites, locate_event(synth_traces(scen, sites), sites, cfg or RunConfig())


def test_refine_never_worse():
    scen, sites, res = scenario_run()
    lon, lat, v = find_minimum(res.grid)
    rl, ra, rv = refine_minimum(res.surface, res.grid, lon, lat, 10)
    assert rv <= v
    assert abs(rl - lon) <= 1.5 * res.grid.d_lon and abs(ra - lat) <= 1.5 * res.grid.d_lat


def test_locate_clean_estimate_inside_hull_and_consistent():
    scen, sites, res = scenario_run()
    est = res.estimate
    assert res.surface.mesh.find_triangle(est.lon_event, est.lat_event)[0] >= 0
    assert est.t_event == pytest.approx(est.t_min + res.arrivals.t_R, abs=1e-9)
    assert est.outliers == [] and est.iterations == 1
    assert res.report.slope > 0
    assert res.report.slope == pytest.approx(1 / 500.0, rel=0.25)


@pytest.mark.xfail(strict=True, reason="C1 interpolation of the cone apex at ~300 mi sensor spacing "
                                       "leaves tens of miles of error; see the decisions ledger")
def test_locate_clean_within_grid_bound():
    scen, sites, res = scenario_run()
    err = error_report(res.estimate, scen)
    assert err["distance_error_mi"] <= max(2 * 0.02 * 69, 10)
    assert err["time_error_corrected_s"] <= 0.1


def test_locate_flags_faulted_sensor():
    scen, sites, res = scenario_run(seed=2, faults={"S010": 1.0})
    assert "S010" in res.estimate.outliers
    assert "S010" not in res.arrivals.sensor_ids
    assert res.estimate.iterations >= 2


@pytest.mark.xfail(strict=True, reason="final error is bounded by the clean-data error, which exceeds "
                                       "the grid bound; see the decisions ledger")
def test_locate_faulted_final_error_within_bound():
    scen, sites, res = scenario_run(seed=2, faults={"S010": 1.0})
    assert error_report(res.estimate, scen)["distance_error_mi"] <= max(2 * 0.02 * 69, 10)


def test_removing_fault_does_not_hurt():
    _, _, clean = scenario_run(seed=2)
    scen, _, faulted = scenario_run(seed=2, faults={"S010": 1.0})
    e_clean = error_report(clean.estimate, scen)["distance_error_mi"]
    e_fault = error_report(faulted.estimate, scen)["distance_error_mi"]
    assert e_fault <= e_clean + 2 * 0.02 * 69


def test_t_R_invariance_bit_identical():
    scen, sites, res = scenario_run(seed=4)
    traces = synth_traces(scen, sites)
    other = locate_event(traces, sites, RunConfig(t_ref_offset=5.0))
    np.testing.assert_allclose(other.arrivals.relative, res.arrivals.relative - 5.0, atol=1e-12)
    np.testing.assert_allclose(other.relative_grid().values[res.grid.mask] + 5.0,
                               res.relative_grid().values[res.grid.mask], atol=1e-9)
    assert (other.estimate.lon_event, other.estimate.lat_event, other.estimate.t_event) == \
           (res.estimate.lon_event, res.estimate.lat_event, res.estimate.t_event)


def test_deterministic():
    a = scenario_run(seed=5)[2].estimate
    b = scenario_run(seed=5)[2].estimate
    assert a == b


def test_insufficient_sensors_after_removal(monkeypatch):
    import emwaveloc.locate as loc

    sites = SensorSet([SensorSite("a", 30, -100), SensorSite("b", 40, -100), SensorSite("c", 35, -90),
                       SensorSite("d", 35.5, -95)])
    arr = ArrivalSet(sites.ids, [0.0, 0.1, 0.2, 0.3], 10.0, 59.995)
    real = loc.validate

    def flag_two(*args, **kw):
        rep = real(*args, **kw)
        rep.outliers = ["c", "d"]
        return rep

    monkeypatch.setattr(loc, "validate", flag_two)
    with pytest.raises(InsufficientSensorsError, match="after outlier removal: 2 remain"):
        locate_arrivals(arr, sites)


def test_fewer_than_three_arrivals():
    sites = SensorSet([SensorSite("a", 30, -100), SensorSite("b", 40, -100)])
    with pytest.raises(InsufficientSensorsError, match="insufficient sensors"):
        locate_arrivals(ArrivalSet(sites.ids, [0.0, 0.1], 0.0, 60.0), sites)


def test_no_event_raises():
    sites = jittered_layout(5, np.random.default_rng(0))
    traces = [FrequencyTrace(s, np.arange(300) * 0.1, np.full(300, 60.0)) for s in sites.ids]
    with pytest.raises(NoEventError):
        locate_event(traces, sites)


def test_report_schema_round_trip():
    scen, sites, res = scenario_run(seed=6)
    rep = build_report(res, "2014-11-21T13:48:00Z")
    assert set(rep) == {"event", "detection", "validation", "quality", "epoch"}
    assert set(rep["event"]) == {"lon", "lat", "t_event_epoch_s", "t_min_s"}
    assert set(rep["detection"]) == {"t_R", "f_T", "direction"}
    assert set(rep["validation"]) == {"slope_s_per_mile", "delta_t_threshold_s", "outliers"}
    assert set(rep["quality"]) == {"iterations", "sensors_used", "grid_resolution_deg"}
    back = estimate_from_report(rep)
    assert (back.lon_event, back.lat_event, back.t_event) == (res.estimate.lon_event, res.estimate.lat_event,
                                                              res.estimate.t_event)


def test_locate_result_unpacks():
    estimate, report, surface = scenario_run(seed=7)[2]
    assert isinstance(estimate, EventEstimate)
    assert surface.mesh.n_points == estimate.sensors_used
