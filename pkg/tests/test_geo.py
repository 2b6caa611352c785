import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsbtrack import geo

from oracles import kruger_forward

CM = 119.0
CFG = geo.ProjectionConfig(central_meridian=CM, false_easting=500000.0)


def test_equator_on_central_meridian():
    x, y, z = geo.project(0.0, CM, 100.0, CFG)
    assert x == pytest.approx(500000.0, abs=1e-9)
    assert y == pytest.approx(0.0, abs=1e-9)
    assert z == 100.0


def test_origin_round_trip():
    x, y, _ = geo.project(0.0, CM, 0.0, CFG)
    lat, lon = geo.unproject(x, y, CFG)
    assert abs(lat) < 1e-9 and abs(lon - CM) < 1e-9
    lat, lon = geo.unproject(500000.0, 0.0, CFG)
    assert abs(lat) < 1e-9 and abs(lon - CM) < 1e-9


def test_matches_series_oracle_at_30n():
    x, y, _ = geo.project(30.0, CM + 1.0, 0.0, CFG)
    xo, yo = kruger_forward(30.0, CM + 1.0, CM, 500000.0)
    assert abs(x - xo) < 1e-3 and abs(y - yo) < 1e-3


def test_unproject_oracle_point():
    xo, yo = kruger_forward(30.0, CM + 1.0, CM, 500000.0)
    lat, lon = geo.unproject(xo, yo, CFG)
    assert abs(lat - 30.0) < 1e-9 and abs(lon - (CM + 1.0)) < 1e-9


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(3)
    lat = rng.uniform(-60, 60, 50)
    lon = CM + rng.uniform(-5, 5, 50)
    x, y, _ = geo.project(lat, lon, np.zeros(50), CFG)
    for k in range(50):
        xs, ys, _ = geo.project(lat[k], lon[k], 0.0, CFG)
        assert x[k] == xs and y[k] == ys


def test_out_of_zone_rejected():
    with pytest.raises(ValueError, match="zone bound"):
        geo.project(30.0, CM + 6.5, 0.0, CFG)


def test_unproject_rejects_nonfinite():
    with pytest.raises(ValueError):
        geo.unproject(np.nan, 0.0, CFG)


def test_northing_monotone_on_central_meridian():
    lat = np.linspace(-80, 80, 401)
    _, y, _ = geo.project(lat, np.full_like(lat, CM), np.zeros_like(lat), CFG)
    assert np.all(np.diff(y) > 0)


def test_projection_config_validation():
    with pytest.raises(ValueError):
        geo.ProjectionConfig(0.0, 0.0, a=-1.0)
    with pytest.raises(ValueError):
        geo.ProjectionConfig(0.0, 0.0, f=1.5)
    assert geo.ProjectionConfig.for_longitude(118.6).central_meridian == 119.0


@pytest.mark.parametrize("v, psi, theta, expect", [
    (10.0, 0.0, 0.0, (0.0, 10.0, 0.0)),
    (10.0, math.pi / 2, 0.0, (10.0, 0.0, 0.0)),
    (10.0, 0.0, math.pi / 2, (0.0, 0.0, 10.0)),
])
def test_decompose_velocity_examples(v, psi, theta, expect):
    assert np.allclose(geo.decompose_velocity(v, psi, theta), expect, atol=1e-12)


def test_negative_speed_rejected():
    with pytest.raises(ValueError):
        geo.decompose_velocity(-1.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0.0, 400.0), psi=st.floats(0.0, 2 * math.pi), theta=st.floats(-math.pi / 2, math.pi / 2))
def test_velocity_norm_preserved(v, psi, theta):
    vx, vy, vz = geo.decompose_velocity(v, psi, theta)
    assert math.hypot(vx, vy, vz) == pytest.approx(v, rel=1e-12, abs=0.0)


def test_to_observation_examples():
    rec = geo.AdsbRecord(t=0.0, lon=CM, lat=0.0, alt=50.0, v=0.0, psi=0.3, theta=0.1)
    o = geo.to_observation(rec, CFG)
    assert (o.vx, o.vy, o.vz) == (0.0, 0.0, 0.0)
    assert o.x == pytest.approx(500000.0, abs=1e-9) and o.y == pytest.approx(0.0, abs=1e-9)


def test_record_round_trip():
    state = np.array([510000.0, 3.5e6, 400.0, 12.0, -20.0, 1.5])
    rec = geo.observation_to_record(3.0, state, CFG)
    back = geo.records_to_array([rec], CFG)[0]
    assert np.allclose(back[:3], state[:3], atol=1e-6)
    assert np.allclose(back[3:], state[3:], atol=1e-12)


def test_record_validation():
    with pytest.raises(ValueError):
        geo.AdsbRecord(t=0.0, lon=0.0, lat=95.0, alt=0.0, v=1.0, psi=0.0, theta=0.0)
    with pytest.raises(ValueError):
        geo.AdsbRecord(t=0.0, lon=0.0, lat=0.0, alt=0.0, v=-1.0, psi=0.0, theta=0.0)
