from __future__ import annotations

import math
import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldm.errors import DegeneratePolygon, UnknownDevice, ValidationError
from ldm.events import EventKind, GeofenceZone, ZoneKind
from ldm.geo import GeoPoint, Polygon
from ldm.ingest import Detection, FrameRecord
from ldm.geo import PixelBox
from oracles import chord_distance, winding_contains

ORIGIN = (60.1699, 24.9384)
M_PER_DEG_LAT = 6_371_000 * math.pi / 180


def offset(north_m=0.0, east_m=0.0, alt=None, origin=ORIGIN):
    lat = origin[0] + north_m / M_PER_DEG_LAT
    lon = origin[1] + east_m / (M_PER_DEG_LAT * math.cos(math.radians(origin[0])))
    return GeoPoint(lat, lon, alt)


def square(half_m, origin=ORIGIN):
    return Polygon([offset(-half_m, -half_m, origin=origin), offset(-half_m, half_m, origin=origin),
                    offset(half_m, half_m, origin=origin), offset(half_m, -half_m, origin=origin)])


def subscribe(ldm, device_id, kind="vehicle", region_tag=None):
    return ldm.auth.subscribe(kind, device_id, region_tag=region_tag)[1].value


def report_cyclist(ldm, token, device_id, at, pos=None):
    pos = pos or offset()
    det = Detection("cyclist", PixelBox(10, 10, 20, 40), 0.92, pos)
    return ldm.ingest.ingest_frame(token, FrameRecord(f"{device_id}-{at}", device_id, at, "720p", detections=(det,)))


def test_proximity_alert_for_nearby_foreign_cyclist(ldm):
    blue = subscribe(ldm, "blue")
    subscribe(ldm, "red")
    ldm.tracker.update_location("blue", offset(-5), 1000)
    annotated = report_cyclist(ldm, blue, "blue", 1000)
    ldm.tracker.update_location("red", offset(east_m=30), 1500)
    events = ldm.events.poll_events("red")
    assert len(events) == 1
    e = events[0]
    assert (e.kind, e.target_device, e.subject) == (EventKind.PROXIMITY_ALERT, "red", annotated.object_ids[0])
    assert e.distance == pytest.approx(30, abs=0.01)
    assert ldm.events.poll_events("blue") == []


def test_no_alert_outside_radius(ldm):
    blue = subscribe(ldm, "blue")
    subscribe(ldm, "red")
    ldm.tracker.update_location("blue", offset(), 1000)
    report_cyclist(ldm, blue, "blue", 1000)
    ldm.tracker.update_location("red", offset(east_m=80), 1500)
    assert ldm.events.poll_events("red") == []


def test_no_alert_for_stale_object(ldm):
    blue = subscribe(ldm, "blue")
    subscribe(ldm, "red")
    ldm.tracker.update_location("blue", offset(), 1000)
    report_cyclist(ldm, blue, "blue", 1000)
    ldm.tracker.update_location("red", offset(east_m=10), 3001)
    assert ldm.events.poll_events("red") == []


def test_proximity_debounce(ldm):
    blue = subscribe(ldm, "blue")
    subscribe(ldm, "red")
    ldm.tracker.update_location("blue", offset(), 1000)
    report_cyclist(ldm, blue, "blue", 1000)
    ldm.tracker.update_location("red", offset(east_m=10), 1100)
    ldm.tracker.update_location("red", offset(east_m=12), 1200)
    assert len(ldm.events.poll_events("red")) == 1


def test_nofly_violation_and_debounce(ldm):
    subscribe(ldm, "uav", "uav")
    ldm.events.create_zone(GeofenceZone("nf", ZoneKind.NO_FLY, square(10), 0, 120))
    inside = offset(2, 2, alt=50)
    ldm.tracker.update_location("uav", inside, 1000)
    ldm.tracker.update_location("uav", inside, 2000)
    ldm.tracker.update_location("uav", inside, 5999)
    assert [e.at for e in ldm.events.poll_events("uav")] == [1000]
    ldm.tracker.update_location("uav", inside, 6000)
    assert [e.at for e in ldm.events.poll_events("uav")] == [1000, 6000]


def test_nofly_reentry_emits_again(ldm):
    subscribe(ldm, "uav", "uav")
    ldm.events.create_zone(GeofenceZone("nf", ZoneKind.NO_FLY, square(10), 0, 120))
    ldm.tracker.update_location("uav", offset(0, 0, 50), 1000)
    ldm.tracker.update_location("uav", offset(0, 50, 50), 1100)
    ldm.tracker.update_location("uav", offset(0, 0, 50), 1200)
    assert [e.at for e in ldm.events.poll_events("uav")] == [1000, 1200]


def test_nofly_altitude_band(ldm):
    subscribe(ldm, "uav", "uav")
    ldm.events.create_zone(GeofenceZone("nf", ZoneKind.NO_FLY, square(10), 0, 120))
    ldm.tracker.update_location("uav", offset(0, 0, 150), 1000)
    assert ldm.events.poll_events("uav") == []


def test_field_boundary_exit(ldm):
    subscribe(ldm, "sprayer", "uav")
    subscribe(ldm, "other", "uav")
    ldm.events.create_zone(GeofenceZone("field", ZoneKind.FIELD_BOUNDARY, square(50), 0, 30,
                                        bound_devices=frozenset({"sprayer"})))
    ldm.tracker.update_location("sprayer", offset(0, 0, 5), 1000)
    ldm.tracker.update_location("other", offset(0, 200, 5), 1000)
    assert ldm.events.poll_events("sprayer") == ldm.events.poll_events("other") == []
    ldm.tracker.update_location("sprayer", offset(0, 80, 5), 2000)
    assert [e.kind for e in ldm.events.poll_events("sprayer")] == [EventKind.GEOFENCE_EXIT_VIOLATION]


def test_zone_validation():
    with pytest.raises(DegeneratePolygon):
        Polygon([offset(), offset(1)])
    with pytest.raises(ValidationError):
        GeofenceZone("z", ZoneKind.NO_FLY, square(10), alt_min=100, alt_max=50)
    with pytest.raises(ValidationError):
        GeofenceZone("z", ZoneKind.NO_FLY, square(10), bound_devices=frozenset({"x"}))


def test_duplicate_zone_id_rejected(ldm):
    ldm.events.create_zone(GeofenceZone("z", ZoneKind.NO_FLY, square(10)))
    with pytest.raises(ValidationError):
        ldm.events.create_zone(GeofenceZone("z", ZoneKind.NO_FLY, square(20)))


def test_region_tags_scope_zones(ldm):
    subscribe(ldm, "a", "uav", region_tag="edge-a")
    subscribe(ldm, "b", "uav", region_tag="edge-b")
    ldm.events.create_zone(GeofenceZone("nf", ZoneKind.NO_FLY, square(10), region_tag="edge-a"))
    ldm.tracker.update_location("a", offset(), 1000)
    ldm.tracker.update_location("b", offset(), 1000)
    assert len(ldm.events.poll_events("a")) == 1
    assert ldm.events.poll_events("b") == []


def test_poll_cursor_semantics(ldm):
    subscribe(ldm, "uav", "uav")
    assert ldm.events.poll_events("uav") == []
    ldm.events.create_zone(GeofenceZone("z1", ZoneKind.NO_FLY, square(10)))
    ldm.events.create_zone(GeofenceZone("z2", ZoneKind.NO_FLY, square(20)))
    ldm.tracker.update_location("uav", offset(), 1000)
    e1, e2 = ldm.events.poll_events("uav", 0)
    assert ldm.events.poll_events("uav", e1.event_id) == [e2]
    assert ldm.events.poll_events("uav", 0) == [e1, e2]
    with pytest.raises(UnknownDevice):
        ldm.events.poll_events("ghost")


def test_long_poll_wakes_on_new_event(ldm):
    subscribe(ldm, "uav", "uav")
    ldm.events.create_zone(GeofenceZone("z", ZoneKind.NO_FLY, square(10)))
    got = []
    waiter = threading.Thread(target=lambda: got.extend(ldm.events.poll_events("uav", 0, timeout_s=5)))
    waiter.start()
    ldm.tracker.update_location("uav", offset(), 1000)
    waiter.join(5)
    assert len(got) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_random_traces_alerts_are_sound_and_complete(seed):
    """Random reporters and movers: alerts must match a brute-force recomputation."""
    from ldm.config import ServiceConfig
    from ldm.service import LocalDynamicMap

    rng = random.Random(seed)
    ldm = LocalDynamicMap(ServiceConfig(), clock=lambda: 10**9)
    tokens = {d: subscribe(ldm, d) for d in ("a", "b", "c")}
    zone = GeofenceZone("nf", ZoneKind.NO_FLY, square(30))
    ldm.events.create_zone(zone)
    zone_verts = [(v.lat, v.lon) for v in zone.polygon.vertices]
    objects = []
    for step in range(60):
        at = 1000 + step * 100
        for d in tokens:
            pos = offset(rng.uniform(-120, 120), rng.uniform(-120, 120))
            ldm.tracker.update_location(d, pos, at)
            if rng.random() < 0.1:
                p = offset(rng.uniform(-120, 120), rng.uniform(-120, 120))
                objects.append((report_cyclist(ldm, tokens[d], d, at, p).object_ids[0], p, at, d))
    for e in ldm.events.all_events():
        if e.kind is EventKind.PROXIMITY_ALERT:
            oid, p, t, src = next(o for o in objects if o[0] == e.subject)
            assert src != e.target_device
            assert chord_distance(e.position.lat, e.position.lon, p.lat, p.lon) <= 50 + 1e-6
            assert e.distance <= 50
            assert e.at - 2000 <= t <= e.at
        else:
            assert winding_contains((e.position.lat, e.position.lon), zone_verts)
    for d in tokens:
        ids = [e.event_id for e in ldm.events.poll_events(d)]
        assert ids == sorted(set(ids))
