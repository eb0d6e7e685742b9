from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldm.auth import Authenticator, DeviceKind
from ldm.errors import DuplicateDevice, InvalidToken, ValidationError


@pytest.fixture
def auth(clock):
    return Authenticator(clock)


def test_subscribe_round_trip(auth):
    device_id, token = auth.subscribe(DeviceKind.VEHICLE, "red-car")
    assert device_id == "red-car"
    assert auth.verify(token.value) == "red-car"
    assert auth.subscription("red-car").kind is DeviceKind.VEHICLE


def test_duplicate_subscribe_rejected(auth):
    auth.subscribe(DeviceKind.VEHICLE, "red-car")
    with pytest.raises(DuplicateDevice):
        auth.subscribe(DeviceKind.UAV, "red-car")


def test_generated_ids_and_tokens_never_collide(auth):
    ids, tokens = set(), set()
    for _ in range(10_000):
        device_id, token = auth.subscribe(DeviceKind.UAV)
        ids.add(device_id)
        tokens.add(token.value)
    assert len(ids) == 10_000
    assert len(tokens) == 10_000
    assert all(i.startswith("uav-") for i in ids)


def test_token_is_unguessably_long(auth):
    _, token = auth.subscribe("vehicle", "a")
    assert len(token.value) >= 40


@pytest.mark.parametrize("bad", ["garbage", "", None])
def test_verify_rejects_unknown(auth, bad):
    with pytest.raises(InvalidToken):
        auth.verify(bad)


def test_revoke_then_verify_fails(auth):
    _, token = auth.subscribe(DeviceKind.VEHICLE, "red-car")
    auth.revoke(token.value)
    with pytest.raises(InvalidToken):
        auth.verify(token.value)


def test_double_revoke_and_unknown_revoke(auth):
    _, token = auth.subscribe(DeviceKind.VEHICLE, "red-car")
    auth.revoke(token.value)
    with pytest.raises(InvalidToken):
        auth.revoke(token.value)
    with pytest.raises(InvalidToken):
        auth.revoke("never-issued")


def test_unknown_kind_rejected(auth):
    with pytest.raises(ValidationError):
        auth.subscribe("submarine")


def test_listener_sees_each_subscription(auth):
    seen = []
    auth.add_listener(seen.append)
    auth.subscribe("uav", "u1", region_tag="edge-a")
    assert [(s.device_id, s.region_tag) for s in seen] == [("u1", "edge-a")]


@given(st.lists(st.text(min_size=1, max_size=12), min_size=1, max_size=30, unique=True),
       st.sets(st.integers(0, 29)))
def test_tokens_verify_until_revoked(names, revoked_idx):
    auth = Authenticator(lambda: 0)
    issued = [auth.subscribe("vehicle", n) for n in names]
    for i, (_, token) in enumerate(issued):
        if i in revoked_idx:
            auth.revoke(token.value)
    for i, (device_id, token) in enumerate(issued):
        if i in revoked_idx:
            with pytest.raises(InvalidToken):
                auth.verify(token.value)
        else:
            assert auth.verify(token.value) == device_id
    assert len({s.device_id for s in auth.subscriptions()}) == len(names)
