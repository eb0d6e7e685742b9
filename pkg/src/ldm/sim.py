"""Deterministic tick-based scenario runner that drives the HTTP API.

Scenario time is injected into every request, so a run only depends on the
scenario file and its seed, never on wall-clock speed. Tokens are redacted
from the transcript so two runs against fresh services are byte-identical.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import httpx

from . import wire
from .auth import DeviceKind
from .errors import LdmError, ValidationError
from .geo import EARTH_RADIUS_M, GeoPoint
from .ingest import Detection

REDACTED = "<redacted>"
BUILTIN_SCENARIOS = ("occluded-cyclist", "uav-nofly", "field-spray")


class EndpointUnreachable(LdmError):
    code = "endpoint_unreachable"


class ScenarioAbort(LdmError):
    code = "scenario_abort"


@dataclass(frozen=True)
class Waypoint:
    position: GeoPoint
    at: int


@dataclass(frozen=True)
class Agent:
    device_id: str
    kind: DeviceKind
    waypoints: tuple[Waypoint, ...]
    frames: dict[int, tuple[Detection, ...]] = field(default_factory=dict)
    region_tag: str | None = None
    quality: str = "720p"

    def __post_init__(self) -> None:
        times = [w.at for w in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError(f"agent {self.device_id!r}: waypoint times must strictly increase")

    def position_at(self, t: int) -> GeoPoint | None:
        """Linear interpolation between waypoints; None outside the waypoint span."""
        wps = self.waypoints
        if not wps or t < wps[0].at or t > wps[-1].at:
            return None
        for a, b in zip(wps, wps[1:]):
            if t == a.at:
                return a.position
            if a.at < t < b.at:
                f = (t - a.at) / (b.at - a.at)
                pa, pb = a.position, b.position
                alt = None
                if pa.alt is not None and pb.alt is not None:
                    alt = pa.alt + f * (pb.alt - pa.alt)
                return GeoPoint(pa.lat + f * (pb.lat - pa.lat), pa.lon + f * (pb.lon - pa.lon), alt)
        return wps[-1].position


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_ms: int
    tick_ms: int = 100
    start_ms: int = 0
    agents: tuple[Agent, ...] = ()
    zones: tuple[dict, ...] = ()
    expect: tuple[dict, ...] | None = None
    position_noise_m: float = 0.0

    def __post_init__(self) -> None:
        if self.tick_ms <= 0:
            raise ValidationError("tick_ms must be positive")
        if self.duration_ms < 0:
            raise ValidationError("duration_ms must be >= 0")
        ids = [a.device_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValidationError("agent device ids must be unique")

    @property
    def ticks(self) -> range:
        return range(self.duration_ms // self.tick_ms)

    def time_of(self, tick: int) -> int:
        return self.start_ms + tick * self.tick_ms


# parsing

SCENARIO_FIELDS = ("name", "seed", "tick_ms", "duration_ms", "zones", "agents", "start_ms", "expect",
                   "position_noise_m", "description")
AGENT_FIELDS = ("device_id", "kind", "waypoints", "frames", "region_tag", "quality")
EXPECT_FIELDS = ("tick", "kind", "target_device", "subject")


def scenario_from_wire(d: Any) -> Scenario:
    d = wire.require_fields(d, ("name", "seed", "duration_ms"), SCENARIO_FIELDS, "scenario")
    agents = []
    for raw in d.get("agents") or []:
        a = wire.require_fields(raw, ("device_id", "kind", "waypoints"), AGENT_FIELDS, "agent")
        waypoints = []
        for w in a["waypoints"]:
            w = wire.require_fields(w, ("lat", "lon", "at"), ("alt",), "waypoint")
            waypoints.append(Waypoint(GeoPoint(w["lat"], w["lon"], w.get("alt")), wire.as_int(w["at"], "at")))
        frames: dict[int, tuple[Detection, ...]] = {}
        for key, dets in (a.get("frames") or {}).items():
            try:
                tick = int(key)
            except ValueError:
                raise ValidationError(f"frame key {key!r} is not a tick index") from None
            frames[tick] = tuple(wire.detection_from_wire(x) for x in dets)
        agents.append(
            Agent(
                device_id=wire.as_str(a["device_id"], "device_id"),
                kind=DeviceKind.parse(a["kind"]),
                waypoints=tuple(waypoints),
                frames=frames,
                region_tag=wire.as_str(a.get("region_tag"), "region_tag", optional=True),
                quality=wire.as_str(a.get("quality", "720p"), "quality"),
            )
        )
    zones = tuple(d.get("zones") or ())
    for z in zones:
        wire.zone_from_wire(z)  # validate up front
    expect = d.get("expect")
    if expect is not None:
        expect = tuple(wire.require_fields(e, EXPECT_FIELDS, (), "expected event") for e in expect)
    return Scenario(
        name=wire.as_str(d["name"], "name"),
        seed=wire.as_int(d["seed"], "seed"),
        duration_ms=wire.as_int(d["duration_ms"], "duration_ms"),
        tick_ms=wire.as_int(d.get("tick_ms", 100), "tick_ms"),
        start_ms=wire.as_int(d.get("start_ms", 0), "start_ms"),
        agents=tuple(agents),
        zones=zones,
        expect=expect,
        position_noise_m=float(d.get("position_noise_m", 0.0)),
    )


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name."""
    path = Path(path_or_name)
    if not path.exists() and str(path_or_name) in BUILTIN_SCENARIOS:
        text = resources.files("ldm.scenarios").joinpath(f"{path_or_name}.json").read_text(encoding="utf-8")
    else:
        text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_wire(data)


# running


@dataclass
class ScenarioTranscript:
    name: str
    seed: int
    entries: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def to_wire(self) -> dict:
        return {"scenario": self.name, "seed": self.seed, "entries": self.entries, "events": self.events}

    def dumps(self) -> str:
        return wire.dumps(self.to_wire())

    def event_keys(self) -> list[dict]:
        return [
            {"tick": e["tick"], "kind": e["event"]["kind"], "target_device": e["event"]["target_device"],
             "subject": e["event"]["subject"]}
            for e in self.events
        ]

    def mismatches(self, expected: Sequence[dict]) -> list[str]:
        got = self.event_keys()
        want = [dict(e) for e in expected]
        problems = [f"missing expected event {e}" for e in want if e not in got]
        problems += [f"unexpected event {e}" for e in got if e not in want]
        if not problems and got != want:
            problems.append("events arrived in a different order than expected")
        return problems


def _jitter(p: GeoPoint, rng: random.Random, sigma_m: float) -> GeoPoint:
    if sigma_m <= 0:
        return p
    north, east = rng.gauss(0, sigma_m), rng.gauss(0, sigma_m)
    dlat = math.degrees(north / EARTH_RADIUS_M)
    dlon = math.degrees(east / (EARTH_RADIUS_M * math.cos(math.radians(p.lat))))
    return GeoPoint(p.lat + dlat, p.lon + dlon, p.alt)


class _Driver:
    def __init__(self, client: httpx.Client, transcript: ScenarioTranscript) -> None:
        self.client = client
        self.transcript = transcript

    def call(self, tick: int | None, agent: str | None, op: str, method: str, url: str, *,
             token: str | None = None, body: Any = None, params: dict | None = None) -> Any:
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        try:
            if method == "GET":
                resp = self.client.get(url, params=params, headers=headers)
            else:
                resp = self.client.post(url, content=wire.dumps(body), params=params,
                                        headers={**headers, "Content-Type": "application/json"})
        except httpx.TransportError as exc:
            raise EndpointUnreachable(f"{method} {url}: {exc}") from exc
        try:
            payload = resp.json()
        except ValueError:
            payload = {"raw": resp.text}
        shown = dict(payload) if isinstance(payload, dict) else payload
        if isinstance(shown, dict) and "token" in shown:
            shown["token"] = REDACTED
        entry = {"tick": tick, "agent": agent, "op": op, "request": {"method": method, "path": url},
                 "status": resp.status_code, "response": shown}
        if body is not None:
            entry["request"]["body"] = body
        if params:
            entry["request"]["params"] = params
        self.transcript.entries.append(entry)
        if resp.status_code >= 400:
            raise ScenarioAbort(f"{op} for {agent}: HTTP {resp.status_code} {payload}")
        return payload


def run_scenario(scenario: Scenario, client: httpx.Client) -> ScenarioTranscript:
    """Play ``scenario`` against the service behind ``client``.

    Per tick, agents act in list order (location fix, then any scripted
    frames), then every agent polls its events without waiting.
    """
    transcript = ScenarioTranscript(scenario.name, scenario.seed)
    if not scenario.agents:
        return transcript
    rng = random.Random(f"{scenario.name}:{scenario.seed}")
    driver = _Driver(client, transcript)

    tokens: dict[str, str] = {}
    for agent in scenario.agents:
        body = {"kind": agent.kind.value, "device_id": agent.device_id}
        if agent.region_tag:
            body["region_tag"] = agent.region_tag
        resp = driver.call(None, agent.device_id, "subscribe", "POST", "/v1/subscribe", body=body)
        tokens[agent.device_id] = resp["token"]
    operator = tokens[scenario.agents[0].device_id]
    for zone in scenario.zones:
        driver.call(None, None, "create_zone", "POST", "/v1/zones", token=operator, body=zone)

    cursors = {a.device_id: 0 for a in scenario.agents}
    for tick in scenario.ticks:
        t = scenario.time_of(tick)
        for agent in scenario.agents:
            token = tokens[agent.device_id]
            pos = agent.position_at(t)
            if pos is not None:
                pos = _jitter(pos, rng, scenario.position_noise_m)
                body = {"lat": pos.lat, "lon": pos.lon, "at": t}
                if pos.alt is not None:
                    body["alt"] = pos.alt
                driver.call(tick, agent.device_id, "location", "POST",
                            f"/v1/devices/{agent.device_id}/location", token=token, body=body)
            if tick in agent.frames:
                frame = {
                    "frame_id": f"{scenario.name}:{agent.device_id}:{tick}",
                    "device_id": agent.device_id,
                    "capture_ts": t,
                    "quality": agent.quality,
                    "payload_ref": f"sim://{scenario.name}/{scenario.seed}/{agent.device_id}/{tick}",
                    "detections": [wire.detection_to_wire(d) for d in agent.frames[tick]],
                }
                driver.call(tick, agent.device_id, "frame", "POST", "/v1/frames", token=token, body=frame)
        for agent in scenario.agents:
            events = driver.call(tick, agent.device_id, "poll", "GET", "/v1/events",
                                 token=tokens[agent.device_id],
                                 params={"after": cursors[agent.device_id], "timeout_ms": 0})
            for event in events:
                transcript.events.append({"tick": tick, "agent": agent.device_id, "event": event})
                cursors[agent.device_id] = max(cursors[agent.device_id], event["event_id"])
    return transcript
