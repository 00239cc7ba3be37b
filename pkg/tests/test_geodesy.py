import math
import random

import hypothesis.strategies as st
import pytest
from geographiclib.geodesic import Geodesic
from hypothesis import given

from georag.geodesy import (
    LEVELS,
    AccuracyLevel,
    CoordinateError,
    GeoCoord,
    bucket,
    geodesic,
    geodesic_km,
)

WGS84 = Geodesic.WGS84


def reference_km(a, b):
    return WGS84.Inverse(a.lat, a.lon, b.lat, b.lon)["s12"] / 1000.0


coords = st.builds(GeoCoord, st.floats(-90, 90), st.floats(-180, 180))


def test_identity():
    p = GeoCoord(48.8566, 2.3522)
    assert geodesic_km(p, p) == 0.0


def test_one_degree_of_equator():
    ref = reference_km(GeoCoord(0, 0), GeoCoord(0, 1))
    assert ref == pytest.approx(111.319, rel=1e-3)
    got = geodesic(GeoCoord(0, 0), GeoCoord(0, 1))
    assert not got.fallback_used
    assert got.km == pytest.approx(ref, rel=1e-3)


def test_near_antipodal_uses_fallback():
    a, b = GeoCoord(0, 0), GeoCoord(0.5, 179.7)
    got = geodesic(a, b)
    assert got.fallback_used
    assert math.isfinite(got.km)
    assert got.km == pytest.approx(reference_km(a, b), rel=5e-3)


@pytest.mark.parametrize("lat, lon", [(91, 0), (-90.5, 0), (0, 180.1), (float("nan"), 0), (0, float("inf"))])
def test_invalid_coordinates(lat, lon):
    with pytest.raises(CoordinateError):
        GeoCoord(lat, lon)


@given(coords, coords)
def test_symmetric_exactly(a, b):
    assert geodesic(a, b) == geodesic(b, a)


@given(coords, coords)
def test_upper_bound(a, b):
    assert 0.0 <= geodesic_km(a, b) <= 20040.0


def test_agrees_with_reference_on_random_pairs():
    rng = random.Random(2024)
    checked = 0
    while checked < 1000:
        a = GeoCoord(rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = GeoCoord(rng.uniform(-90, 90), rng.uniform(-180, 180))
        got = geodesic(a, b)
        if got.fallback_used:
            continue
        assert got.km == pytest.approx(reference_km(a, b), rel=1e-3)
        checked += 1


def test_triangle_inequality_random_triples():
    rng = random.Random(7)
    for _ in range(2000):
        a, b, c = (GeoCoord(rng.uniform(-90, 90), rng.uniform(-180, 180)) for _ in range(3))
        legs = [geodesic(a, b), geodesic(b, c), geodesic(a, c)]
        if any(g.fallback_used for g in legs):
            continue
        assert legs[2].km <= legs[0].km + legs[1].km + 1e-6


def test_dateline_crossing_short():
    a, b = GeoCoord(10, 179.9), GeoCoord(10, -179.9)
    got = geodesic(a, b)
    assert not got.fallback_used
    assert got.km == pytest.approx(reference_km(a, b), rel=1e-9)
    assert got.km < 25


def test_poles():
    a, b = GeoCoord(90, 0), GeoCoord(-90, 0)
    assert geodesic_km(a, b) == pytest.approx(reference_km(a, b), rel=1e-3)


# bucketing

def test_thresholds_exact():
    assert [lvl.threshold_km for lvl in LEVELS] == [1, 25, 200, 750, 2500]
    assert [lvl.name for lvl in LEVELS] == ["STREET", "CITY", "REGION", "COUNTRY", "CONTINENT"]


@pytest.mark.parametrize("d, expected", [
    (0.5, set(AccuracyLevel)),
    (100.0, {AccuracyLevel.REGION, AccuracyLevel.COUNTRY, AccuracyLevel.CONTINENT}),
    (3000.0, set()),
    (1.0, set(AccuracyLevel)),
    (2500.0, {AccuracyLevel.CONTINENT}),
])
def test_bucket_examples(d, expected):
    assert bucket(d) == expected


@pytest.mark.parametrize("bad", [-0.1, float("nan"), float("inf")])
def test_bucket_rejects(bad):
    with pytest.raises(ValueError):
        bucket(bad)


@given(st.floats(0, 1e5), st.floats(0, 1e5))
def test_bucket_monotone_and_upward_closed(d1, d2):
    lo, hi = sorted((d1, d2))
    assert bucket(hi) <= bucket(lo)
    hits = bucket(lo)
    if hits:
        finest = min(hits, key=lambda lvl: lvl.threshold_km)
        assert hits == {lvl for lvl in LEVELS if lvl.threshold_km >= finest.threshold_km}
