from random import Random

import pytest

from servicenet.client.filters import (
    DEFAULT_RADIUS_KM, Filter, FilterGateway, PeerProfile, Predicate,
    gateway_accept,
)
from servicenet.errors import ValidationError
from servicenet.model.geo import GeoPoint, haversine_km
from servicenet.pubsub.router import Envelope

# Shanghai-ish fixture coordinates: CHEN posts, TOM is ~3 km away,
# JERRY ~1,000 km away; LILY posts a remote-capable request.
CHEN = GeoPoint(31.2304, 121.4737)
TOM = GeoPoint(31.25, 121.45)
JERRY = GeoPoint(39.9042, 116.4074)


def wanted_env(lat=None, lon=None, remote_capable=None, category="plumbing",
               **extra):
    attrs = {"kind": "wanted", **extra}
    if lat is not None:
        attrs["lat"], attrs["lon"] = lat, lon
    if remote_capable is not None:
        attrs["remote_capable"] = remote_capable
    return Envelope.new(f"svc.request.{category}", "AAAAAA", attrs=attrs)


def profile_at(point):
    return PeerProfile(pid="BBBBBB", nickname="Tom", location=point)


def test_filter_parse_round_trip():
    f = Filter.parse("svc.request.*; within_km 25; budget_cents ge 1000")
    assert str(f.pattern) == "svc.request.*"
    assert f.predicates == (Predicate("location", "within_km", 25.0),
                            Predicate("budget_cents", "ge", 1000))
    f2 = Filter.parse(str(f))
    assert f2 == f
    with pytest.raises(ValidationError):
        Filter.parse("")
    with pytest.raises(ValidationError):
        Filter.parse("svc.request.*; nonsense")
    with pytest.raises(ValidationError):
        Filter.parse("svc.request.*; a unknownop b")


def test_pattern_must_match_subject():
    f = Filter.parse("svc.request.plumbing")
    prof = profile_at(TOM)
    assert gateway_accept(wanted_env(), [f], prof)
    assert not gateway_accept(wanted_env(category="tutoring"), [f], prof)
    assert not gateway_accept(wanted_env(), [], prof)


def test_radius_scoping_nearby_vs_distant():
    f = Filter.parse(f"svc.request.>; within_km {DEFAULT_RADIUS_KM}")
    env = wanted_env(lat=CHEN.lat, lon=CHEN.lon, remote_capable=False)
    assert gateway_accept(env, [f], profile_at(TOM))
    assert not gateway_accept(env, [f], profile_at(JERRY))


def test_remote_capable_bypasses_radius():
    f = Filter.parse("svc.request.>; within_km 25")
    env = wanted_env(lat=CHEN.lat, lon=CHEN.lon, remote_capable=True)
    assert gateway_accept(env, [f], profile_at(JERRY))
    # string "true" from wire attrs counts as truthy
    env2 = wanted_env(lat=CHEN.lat, lon=CHEN.lon, remote_capable="true")
    assert gateway_accept(env2, [f], profile_at(JERRY))


def test_missing_attrs_fail_closed():
    prof = profile_at(TOM)
    f = Filter.parse("svc.request.>; within_km 25")
    assert not gateway_accept(wanted_env(), [f], prof)  # no lat/lon at all
    f2 = Filter.parse("svc.request.>; budget_cents ge 1000")
    assert not gateway_accept(wanted_env(lat=31.0, lon=121.0), [f2], prof)
    # profile without a location cannot pass a radius check either
    noloc = PeerProfile(pid="BBBBBB")
    env = wanted_env(lat=CHEN.lat, lon=CHEN.lon, remote_capable=False)
    assert not gateway_accept(env, [f], noloc)


def test_comparison_predicates():
    prof = profile_at(TOM)
    env = wanted_env(lat=31.0, lon=121.0, budget_cents=5000, currency="cny")
    assert gateway_accept(env, [Filter.parse("svc.>; budget_cents ge 5000")], prof)
    assert not gateway_accept(env, [Filter.parse("svc.>; budget_cents gt 5000")], prof)
    assert gateway_accept(env, [Filter.parse("svc.>; currency eq cny")], prof)
    assert not gateway_accept(env, [Filter.parse("svc.>; currency eq usd")], prof)
    assert gateway_accept(env, [Filter.parse("svc.>; budget_cents lt 9999")], prof)


def test_any_filter_suffices_all_predicates_required():
    prof = profile_at(TOM)
    env = wanted_env(lat=CHEN.lat, lon=CHEN.lon, budget_cents=100)
    narrow = Filter.parse("svc.>; budget_cents ge 5000")
    broad = Filter.parse("svc.request.>")
    assert not gateway_accept(env, [narrow], prof)
    assert gateway_accept(env, [narrow, broad], prof)
    both = Filter.parse("svc.>; budget_cents ge 50; within_km 25")
    assert gateway_accept(env, [both], prof)


def test_gateway_counters(tmp_path):
    gw = FilterGateway(profile=profile_at(TOM),
                       filters=[Filter.parse("svc.request.>; within_km 25")])
    assert gw.accept(wanted_env(lat=CHEN.lat, lon=CHEN.lon))
    assert not gw.accept(wanted_env(lat=JERRY.lat, lon=JERRY.lon))
    assert not gw.accept(wanted_env())  # missing attrs
    assert (gw.accepted, gw.rejected, gw.rejected_missing_attr) == (1, 2, 1)


def test_geo_scoping_matches_distance_oracle():
    """Randomized agreement: gateway radius decision == direct haversine."""
    rng = Random(4)
    f = Filter.parse("svc.>; within_km 25")
    for _ in range(300):
        me = GeoPoint(rng.uniform(-60, 60), rng.uniform(-179, 180))
        origin = GeoPoint(me.lat + rng.uniform(-0.5, 0.5),
                          me.lon + rng.uniform(-0.5, 0.5))
        env = wanted_env(lat=origin.lat, lon=origin.lon, remote_capable=False)
        expect = haversine_km(origin, me) <= 25.0
        assert gateway_accept(env, [f], profile_at(me)) == expect
