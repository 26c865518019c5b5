import math

import pytest
from hypothesis import given, strategies as st

from servicenet.errors import ValidationError
from servicenet.model.geo import EARTH_RADIUS_KM, GeoPoint, haversine_km

# Reference distances computed independently with the spherical law of
# cosines on the same R = 6371 km sphere.
SYDNEY = GeoPoint(-33.8688, 151.2093)
LONDON = GeoPoint(51.5074, -0.1278)
SHANGHAI = GeoPoint(31.2304, 121.4737)
BEIJING = GeoPoint(39.9042, 116.4074)


def law_of_cosines_km(a: GeoPoint, b: GeoPoint) -> float:
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    cos_c = (math.sin(p1) * math.sin(p2)
             + math.cos(p1) * math.cos(p2) * math.cos(dl))
    return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, cos_c)))


def test_sydney_london():
    d = haversine_km(SYDNEY, LONDON)
    assert d == pytest.approx(16993.9, rel=0.005)
    assert d == pytest.approx(law_of_cosines_km(SYDNEY, LONDON), rel=1e-9)


def test_shanghai_beijing():
    d = haversine_km(SHANGHAI, BEIJING)
    assert d == pytest.approx(1067.7, rel=0.005)


def test_zero_distance():
    assert haversine_km(SHANGHAI, SHANGHAI) == 0.0


def test_antipodal():
    a = GeoPoint(0.0, 0.0)
    b = GeoPoint(0.0, 180.0)
    assert haversine_km(a, b) == pytest.approx(math.pi * EARTH_RADIUS_KM, rel=0.001)


def test_geopoint_validation():
    with pytest.raises(ValidationError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValidationError):
        GeoPoint(0.0, -180.0)  # lon range is (-180, 180]
    with pytest.raises(ValidationError):
        GeoPoint(float("nan"), 0.0)
    with pytest.raises(ValidationError):
        GeoPoint(0.0, float("inf"))
    GeoPoint(90.0, 180.0)  # boundary values are legal


points = st.builds(GeoPoint,
                   st.floats(min_value=-90, max_value=90),
                   st.floats(min_value=-179.999, max_value=180))


@given(points, points)
def test_symmetry(a, b):
    assert haversine_km(a, b) == pytest.approx(haversine_km(b, a), abs=1e-9)


@given(points, points)
def test_bounds_and_agreement_with_oracle(a, b):
    d = haversine_km(a, b)
    assert 0.0 <= d <= math.pi * EARTH_RADIUS_KM + 1e-6
    assert d == pytest.approx(law_of_cosines_km(a, b), abs=1e-3)


@given(points, points, points)
def test_triangle_inequality(a, b, c):
    assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-6
