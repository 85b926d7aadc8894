import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from traji.geo import (ARCMIN_KM, EARTH_RADIUS_KM, NMI_KM, PolarSingularityError, geo_consistency_check,
                       geo_perfect_action, geo_step, haversine_distance, wrap_lon)


def test_constants():
    assert EARTH_RADIUS_KM == 6378.137
    assert NMI_KM == 1.852
    # one arc minute on this sphere is a little longer than the nautical mile
    assert ARCMIN_KM == pytest.approx(1.85532, abs=1e-5)


def test_one_degree_of_latitude():
    d = haversine_distance((0, 0), (0, 1))
    assert d == pytest.approx(EARTH_RADIUS_KM * math.pi / 180, rel=1e-12)
    assert d / NMI_KM == pytest.approx(60.108, abs=1e-3)


def test_haversine_broadcast():
    p = np.array([[0, 0], [10, 20]])
    q = np.array([[0, 1], [10, 20]])
    d = haversine_distance(p, q)
    assert d.shape == (2,) and d[1] == 0.0


def test_antimeridian():
    assert haversine_distance((179.5, 0), (-179.5, 0)) == pytest.approx(haversine_distance((0, 0), (1, 0)))


def test_wrap_lon():
    np.testing.assert_allclose(wrap_lon([180, -180, 190, -190, 0]), [-180, -180, -170, 170, 0])


def test_step_north():
    # 60 knots for one hour is one degree of latitude
    s = geo_step((-70.0, 40.0), (60.0, 0.0, 1.0))
    assert s.lon == pytest.approx(-70.0) and s.lat == pytest.approx(41.0)


def test_step_east_scaled_by_latitude():
    s = geo_step((0.0, 60.0), (60.0, 90.0, 1.0))
    assert s.lon == pytest.approx(2.0) and s.lat == pytest.approx(60.0)


def test_step_crosses_antimeridian():
    s = geo_step((179.9, 0.0), (60.0, 90.0, 0.5))
    assert s.lon == pytest.approx(-179.6)


def test_polar_rejected():
    with pytest.raises(PolarSingularityError):
        geo_step((0.0, 86.0), (10.0, 0.0, 1.0))


def test_bad_dt():
    with pytest.raises(ValueError):
        geo_step((0.0, 0.0), (10.0, 0.0, 0.0))


def test_zero_displacement():
    assert tuple(geo_perfect_action((1, 2), (1, 2), 0.5)) == (0.0, 0.0, 0.5)


def test_consistency_small_step():
    # one hour at 15 knots mid latitude: flat update agrees with haversine to well under 1%
    assert geo_consistency_check((-70.0, 41.0), (15.0, 45.0, 1.0)) < 1e-2
    assert geo_consistency_check((0.0, 0.0), (0.0, 45.0, 1.0)) == 0.0


@settings(max_examples=200, deadline=None)
@given(lon=st.floats(-180, 179.99), lat=st.floats(-80, 80), sog=st.floats(0.1, 40),
       cog=st.floats(0, 359.99), dt=st.floats(1 / 60, 2))
def test_perfect_action_inverts_step(lon, lat, sog, cog, dt):
    s = (lon, lat)
    nxt = geo_step(s, (sog, cog, dt))
    a = geo_perfect_action(s, nxt, dt)
    assert a.dt == dt and 0 <= a.cog < 360
    back = geo_step(s, a)
    assert haversine_distance(back, nxt) < 1e-6


@settings(max_examples=200, deadline=None)
@given(lon=st.floats(-180, 180), lat=st.floats(-80, 80), lon2=st.floats(-180, 180), lat2=st.floats(-80, 80))
def test_haversine_metric(lon, lat, lon2, lat2):
    d = haversine_distance((lon, lat), (lon2, lat2))
    assert 0 <= d <= math.pi * EARTH_RADIUS_KM + 1e-9
    assert d == pytest.approx(haversine_distance((lon2, lat2), (lon, lat)), abs=1e-9)


def test_equatorial_one_mile():
    assert geo_consistency_check((0.0, 0.0), (1.0, 90.0, 1.0)) < 1e-3


def test_five_miles_at_sixty():
    for cog in (0.0, 45.0, 90.0, 200.0):
        assert geo_consistency_check((-80.0, 60.0), (5.0, cog, 1.0)) < 1e-2


def test_zero_speed_unchanged():
    assert tuple(geo_step((-80.0, 25.0), (0.0, 123.0, 1.0))) == (-80.0, 25.0)


@settings(max_examples=200, deadline=None)
@given(lon=st.floats(-179, 179), lat=st.floats(-60, 60), sog=st.floats(0.01, 1), cog=st.floats(0, 180))
def test_opposite_courses_cancel(lon, lat, sog, cog):
    # out and back along the reverse course lands within metres of the start
    out = geo_step((lon, lat), (sog, cog, 1.0))
    back = geo_step(out, (sog, cog + 180.0, 1.0))
    assert abs(back.lat - lat) < 1e-4 and abs(wrap_lon(back.lon - lon)) < 1e-4


@settings(max_examples=200, deadline=None)
@given(lon=st.floats(-180, 179.999), lat=st.floats(-85, 85), sog=st.floats(0, 60), cog=st.floats(0, 360),
       dt=st.floats(1e-3, 5))
def test_longitude_stays_wrapped(lon, lat, sog, cog, dt):
    s = geo_step((lon, lat), (sog, cog, dt))
    assert -180.0 <= s.lon < 180.0
