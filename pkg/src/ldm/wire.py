"""JSON wire formats for the API, journal, frame logs, zone files and eval logs.

Parsers are strict: unknown keys and missing required keys raise
ValidationError. Timestamps are integer epoch milliseconds.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, TypeVar

from .errors import LdmError, MalformedLog, ValidationError
from .events import Event, GeofenceZone, ZoneKind
from .geo import GeoPoint, PixelBox, Polygon
from .ingest import AnnotatedFrame, Detection, FrameRecord, StageLatency
from .metrics import FrameAnnotation, LabeledBox, MatchCounts, MetricsReport, Role
from .store import LayerKind, MapObject, MapSnapshot
from .tracking import Device

T = TypeVar("T")


def dumps(payload: Any) -> str:
    """Canonical compact JSON used for every response body and log line."""
    return json.dumps(payload, separators=(",", ":"), sort_keys=True, ensure_ascii=False, allow_nan=False)


def require_fields(d: Any, required: Iterable[str], optional: Iterable[str] = (), where: str = "object") -> dict:
    if not isinstance(d, Mapping):
        raise ValidationError(f"{where} must be a JSON object")
    required = tuple(required)
    allowed = set(required) | set(optional)
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown field(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ValidationError(f"{where}: missing field(s) {', '.join(missing)}")
    return dict(d)


def as_str(value: Any, name: str, *, optional: bool = False) -> str | None:
    if value is None and optional:
        return None
    if not isinstance(value, str):
        raise ValidationError(f"{name} must be a string")
    return value


def as_int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name} must be an integer")
    return value


# geometry


def point_to_wire(p: GeoPoint) -> dict:
    return {"lat": p.lat, "lon": p.lon, "alt": p.alt}


def point_from_wire(d: Any, where: str = "position") -> GeoPoint:
    d = require_fields(d, ("lat", "lon"), ("alt",), where)
    return GeoPoint(d["lat"], d["lon"], d.get("alt"))


def box_to_wire(b: PixelBox) -> dict:
    return {"x": b.x, "y": b.y, "w": b.w, "h": b.h}


def box_from_wire(d: Any) -> PixelBox:
    d = require_fields(d, ("x", "y", "w", "h"), (), "bbox")
    return PixelBox(d["x"], d["y"], d["w"], d["h"])


# store


def object_to_wire(o: MapObject) -> dict:
    return {
        "object_id": o.object_id,
        "class": o.object_class,
        "position": point_to_wire(o.position),
        "timestamp": o.timestamp,
        "layer": o.layer.value,
        "source_device": o.source_device,
        "confidence": o.confidence,
        "attributes": dict(o.attributes),
    }


OBJECT_FIELDS = ("object_id", "class", "position", "timestamp", "layer", "source_device", "confidence")


def object_from_wire(d: Any) -> MapObject:
    d = require_fields(d, OBJECT_FIELDS, ("attributes",), "object")
    return MapObject(
        object_id=as_str(d["object_id"], "object_id"),
        object_class=as_str(d["class"], "class"),
        position=point_from_wire(d["position"]),
        timestamp=as_int(d["timestamp"], "timestamp"),
        layer=LayerKind.parse(d["layer"]),
        source_device=as_str(d["source_device"], "source_device"),
        confidence=d["confidence"],
        attributes=d.get("attributes") or {},
    )


def snapshot_to_wire(s: MapSnapshot) -> dict:
    return {"at": s.at, "objects": [object_to_wire(o) for o in s.objects]}


# ingest


def detection_to_wire(d: Detection) -> dict:
    return {
        "class": d.object_class,
        "bbox": box_to_wire(d.bbox),
        "confidence": d.confidence,
        "world_position": None if d.world_position is None else point_to_wire(d.world_position),
    }


def detection_from_wire(d: Any) -> Detection:
    d = require_fields(d, ("class", "bbox", "confidence"), ("world_position",), "detection")
    wp = d.get("world_position")
    return Detection(
        object_class=as_str(d["class"], "class"),
        bbox=box_from_wire(d["bbox"]),
        confidence=d["confidence"],
        world_position=None if wp is None else point_from_wire(wp, "world_position"),
    )


def frame_to_wire(f: FrameRecord) -> dict:
    return {
        "frame_id": f.frame_id,
        "device_id": f.device_id,
        "capture_ts": f.capture_ts,
        "quality": f.quality,
        "payload_ref": f.payload_ref,
        "detections": None if f.detections is None else [detection_to_wire(d) for d in f.detections],
    }


def frame_from_wire(d: Any) -> FrameRecord:
    d = require_fields(d, ("frame_id", "device_id", "capture_ts", "quality"), ("payload_ref", "detections"), "frame")
    dets = d.get("detections")
    if dets is not None and not isinstance(dets, list):
        raise ValidationError("detections must be a list")
    return FrameRecord(
        frame_id=as_str(d["frame_id"], "frame_id"),
        device_id=as_str(d["device_id"], "device_id"),
        capture_ts=as_int(d["capture_ts"], "capture_ts"),
        quality=as_str(d["quality"], "quality"),
        payload_ref=as_str(d.get("payload_ref", ""), "payload_ref"),
        detections=None if dets is None else tuple(detection_from_wire(x) for x in dets),
    )


def latency_to_wire(s: StageLatency) -> dict:
    return {"frame_id": s.frame_id, "detection_ms": s.detection_ms, "filtering_ms": s.filtering_ms}


def latency_from_wire(d: Any) -> StageLatency:
    d = require_fields(d, ("frame_id", "detection_ms", "filtering_ms"), (), "latency record")
    return StageLatency(as_str(d["frame_id"], "frame_id"), d["detection_ms"], d["filtering_ms"])


def annotated_to_wire(a: AnnotatedFrame) -> dict:
    return {
        "frame_id": a.frame_id,
        "device_id": a.device_id,
        "capture_ts": a.capture_ts,
        "accepted_detections": [detection_to_wire(d) for d in a.accepted_detections],
        "latency": latency_to_wire(a.latency),
        "object_ids": list(a.object_ids),
    }


# zones and events

ZONE_FIELDS = ("zone_id", "kind", "vertices", "alt_min", "alt_max", "bound_devices", "region_tag")


def zone_to_wire(z: GeofenceZone) -> dict:
    return {
        "zone_id": z.zone_id,
        "kind": z.kind.value,
        "vertices": [{"lat": v.lat, "lon": v.lon} for v in z.polygon.vertices],
        "alt_min": z.alt_min,
        "alt_max": z.alt_max,
        "bound_devices": sorted(z.bound_devices),
        "region_tag": z.region_tag,
    }


def zone_from_wire(d: Any) -> GeofenceZone:
    d = require_fields(d, ("zone_id", "kind", "vertices"), ZONE_FIELDS, "zone")
    vertices = d["vertices"]
    if not isinstance(vertices, list):
        raise ValidationError("vertices must be a list")
    bound = d.get("bound_devices") or []
    if not isinstance(bound, list) or not all(isinstance(b, str) for b in bound):
        raise ValidationError("bound_devices must be a list of device ids")
    return GeofenceZone(
        zone_id=as_str(d["zone_id"], "zone_id"),
        kind=ZoneKind.parse(d["kind"]),
        polygon=Polygon([point_from_wire(v, "vertex") for v in vertices]),
        alt_min=d.get("alt_min"),
        alt_max=d.get("alt_max"),
        bound_devices=frozenset(bound),
        region_tag=as_str(d.get("region_tag"), "region_tag", optional=True),
    )


def event_to_wire(e: Event) -> dict:
    out = {
        "event_id": e.event_id,
        "kind": e.kind.value,
        "target_device": e.target_device,
        "subject": e.subject,
        "at": e.at,
        "position": point_to_wire(e.position),
    }
    if e.distance is not None:
        out["distance"] = e.distance
    return out


def device_to_wire(d: Device) -> dict:
    return {
        "device_id": d.device_id,
        "kind": d.kind.value,
        "last_position": None if d.last_position is None else point_to_wire(d.last_position),
        "last_update": d.last_update,
        "status": d.status.value,
        "region_tag": d.region_tag,
    }


# evaluation logs


def annotation_from_wire(d: Any) -> FrameAnnotation:
    d = require_fields(d, ("frame_id", "role", "boxes"), ("quality",), "annotation")
    role = Role.parse(d["role"])
    if not isinstance(d["boxes"], list):
        raise ValidationError("boxes must be a list")
    boxes = []
    for b in d["boxes"]:
        b = require_fields(b, ("class", "bbox"), ("confidence",), "box")
        conf = b.get("confidence")
        if conf is not None and (isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0 <= conf <= 1):
            raise ValidationError("box confidence must be in [0, 1]")
        boxes.append(LabeledBox(as_str(b["class"], "class"), box_from_wire(b["bbox"]), conf))
    return FrameAnnotation(
        as_str(d["frame_id"], "frame_id"), role, tuple(boxes), as_str(d.get("quality"), "quality", optional=True)
    )


def annotation_to_wire(a: FrameAnnotation) -> dict:
    boxes = []
    for b in a.boxes:
        box = {"class": b.object_class, "bbox": box_to_wire(b.bbox)}
        if b.confidence is not None:
            box["confidence"] = b.confidence
        boxes.append(box)
    return {"frame_id": a.frame_id, "role": a.role.value, "quality": a.quality, "boxes": boxes}


def counts_to_wire(c: MatchCounts) -> dict:
    return {"tp": c.tp, "fp": c.fp, "fn": c.fn}


def report_to_wire(r: MetricsReport) -> dict:
    return {
        "label": r.label,
        "frames": r.frames,
        "counts": counts_to_wire(r.counts),
        "precision": r.precision,
        "recall": r.recall,
        "mean_detection_ms": r.mean_detection_ms,
        "mean_filtering_ms": r.mean_filtering_ms,
    }


# newline-delimited JSON files


def iter_ndjson(path: str | Path, parse: Callable[[Any], T]) -> Iterator[T]:
    """Parse every non-blank line; any bad line raises MalformedLog with its number."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield parse(json.loads(line))
            except (LdmError, TypeError, ValueError) as exc:
                raise MalformedLog(f"{path}:{lineno}: {exc}") from exc


def read_ndjson(path: str | Path, parse: Callable[[Any], T]) -> list[T]:
    return list(iter_ndjson(path, parse))


def write_ndjson(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")
