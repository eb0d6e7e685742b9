"""Frame intake: token check, detection, confidence filtering, storage, publication.

Video bytes never enter the pipeline. A frame carries an opaque
``payload_ref`` and either pre-computed detections or nothing, in which case
the configured :class:`Detector` produces them.
"""

from __future__ import annotations

import logging
import math
import random
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

from .auth import Authenticator
from .errors import DetectorFailure, InvalidToken, NoPosition, UnknownRun, ValidationError
from .geo import GeoPoint, PixelBox
from .store import LayerKind, MapObject, ObjectStore, check_timestamp
from .tracking import DeviceTracker

log = logging.getLogger(__name__)

DEFAULT_CONFIDENCE_THRESHOLD = 0.5
DEFAULT_LATENCY_BUDGET_MS = 100.0
DEFAULT_RUN = "default"


def _check_ratio(value: object, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValidationError(f"{name} must be a finite number")
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must be in [0, 1], got {value}")
    return float(value)


@dataclass(frozen=True)
class Detection:
    object_class: str
    bbox: PixelBox
    confidence: float
    world_position: GeoPoint | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.object_class, str) or not self.object_class:
            raise ValidationError("detection class must be a non-empty string")
        _check_ratio(self.confidence, "confidence")


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    device_id: str
    capture_ts: int
    quality: str
    payload_ref: str = ""
    detections: tuple[Detection, ...] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.frame_id, str) or not self.frame_id:
            raise ValidationError("frame_id must be a non-empty string")
        if not isinstance(self.device_id, str) or not self.device_id:
            raise ValidationError("device_id must be a non-empty string")
        check_timestamp(self.capture_ts, "capture_ts")
        if not isinstance(self.quality, str) or not self.quality:
            raise ValidationError("quality label must be non-empty")
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class StageLatency:
    frame_id: str
    detection_ms: float
    filtering_ms: float

    def __post_init__(self) -> None:
        for name in ("detection_ms", "filtering_ms"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be a finite number >= 0")

    @property
    def total_ms(self) -> float:
        return self.detection_ms + self.filtering_ms


@dataclass(frozen=True)
class AnnotatedFrame:
    frame_id: str
    device_id: str
    capture_ts: int
    accepted_detections: tuple[Detection, ...]
    latency: StageLatency
    object_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class DetectorResult:
    detections: Sequence[Detection]
    detection_ms: float
    filtering_ms: float


class Detector(Protocol):
    def detect(self, frame: FrameRecord) -> DetectorResult: ...


class StagedDetector:
    """Base for real detectors: times the two stages with a wall clock.

    Subclasses implement ``extract_features`` (the detection stage) and
    ``classify`` (the filtering stage).
    """

    def extract_features(self, frame: FrameRecord) -> object:
        raise NotImplementedError

    def classify(self, frame: FrameRecord, features: object) -> Sequence[Detection]:
        raise NotImplementedError

    def detect(self, frame: FrameRecord) -> DetectorResult:
        t0 = time.perf_counter()
        features = self.extract_features(frame)
        t1 = time.perf_counter()
        detections = self.classify(frame, features)
        t2 = time.perf_counter()
        return DetectorResult(list(detections), (t1 - t0) * 1000.0, (t2 - t1) * 1000.0)


class MockDetector:
    """Scripted detector with seeded, reproducible stage latencies.

    Latencies are drawn from normal distributions clipped at zero; with zero
    jitter every frame reports exactly the configured means. Frames whose id is
    in ``fail_on`` raise DetectorFailure.
    """

    def __init__(
        self,
        script: Mapping[str, Sequence[Detection]] | None = None,
        *,
        detection_ms: float = 0.0,
        filtering_ms: float = 0.0,
        detection_jitter_ms: float = 0.0,
        filtering_jitter_ms: float = 0.0,
        seed: int = 0,
        fail_on: Sequence[str] = (),
    ) -> None:
        self.script = {k: list(v) for k, v in (script or {}).items()}
        self.detection_ms = detection_ms
        self.filtering_ms = filtering_ms
        self.detection_jitter_ms = detection_jitter_ms
        self.filtering_jitter_ms = filtering_jitter_ms
        self.fail_on = set(fail_on)
        self._rng = random.Random(seed)

    def _draw(self, mean: float, jitter: float) -> float:
        if jitter <= 0:
            return mean
        return max(0.0, self._rng.gauss(mean, jitter))

    def detect(self, frame: FrameRecord) -> DetectorResult:
        if frame.frame_id in self.fail_on:
            raise DetectorFailure(f"scripted failure on frame {frame.frame_id!r}")
        detection_ms = self._draw(self.detection_ms, self.detection_jitter_ms)
        filtering_ms = self._draw(self.filtering_ms, self.filtering_jitter_ms)
        return DetectorResult(list(self.script.get(frame.frame_id, [])), detection_ms, filtering_ms)


@dataclass(frozen=True)
class LatencySummary:
    frames: int
    mean_detection_ms: float
    mean_filtering_ms: float
    mean_total_ms: float
    budget_ms: float

    @property
    def within_budget(self) -> bool:
        return self.mean_total_ms <= self.budget_ms


def summarize_latencies(records: Sequence[StageLatency], budget_ms: float = DEFAULT_LATENCY_BUDGET_MS) -> LatencySummary:
    if not records:
        raise ValidationError("no latency records to summarize")
    n = len(records)
    det = math.fsum(r.detection_ms for r in records) / n
    fil = math.fsum(r.filtering_ms for r in records) / n
    tot = math.fsum(r.total_ms for r in records) / n
    return LatencySummary(n, det, fil, tot, budget_ms)


class IngestPipeline:
    """Runs frames through detection and stores the accepted detections.

    Frames from one device are serialised in arrival order; distinct devices
    proceed in parallel. Objects and the latency record for a frame are
    committed before its AnnotatedFrame is returned.
    """

    def __init__(
        self,
        auth: Authenticator,
        tracker: DeviceTracker,
        store: ObjectStore,
        detector: Detector | None = None,
        *,
        confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
        latency_budget_ms: float = DEFAULT_LATENCY_BUDGET_MS,
    ) -> None:
        self.auth = auth
        self.tracker = tracker
        self.store = store
        self.detector: Detector = detector or MockDetector()
        self.confidence_threshold = _check_ratio(confidence_threshold, "confidence_threshold")
        self.latency_budget_ms = latency_budget_ms
        self._runs: dict[str, list[StageLatency]] = {DEFAULT_RUN: []}
        self.current_run = DEFAULT_RUN
        self._published: dict[str, list[AnnotatedFrame]] = defaultdict(list)
        self._device_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._lock = threading.Lock()

    def start_run(self, run_id: str) -> None:
        """Start a new latency log and make it the current one."""
        with self._lock:
            self._runs.setdefault(run_id, [])
            self.current_run = run_id

    def latency_log(self, run_id: str | None = None) -> list[StageLatency]:
        run_id = self.current_run if run_id is None else run_id
        with self._lock:
            if run_id not in self._runs:
                raise UnknownRun(f"unknown run {run_id!r}")
            return list(self._runs[run_id])

    def latency_summary(self, run_id: str | None = None) -> LatencySummary:
        return summarize_latencies(self.latency_log(run_id), self.latency_budget_ms)

    def published(self, device_id: str) -> list[AnnotatedFrame]:
        with self._lock:
            return list(self._published.get(device_id, ()))

    def ingest_frame(self, token: str | None, frame: FrameRecord) -> AnnotatedFrame:
        device_id = self.auth.verify(token)
        if device_id != frame.device_id:
            raise InvalidToken("token does not belong to the frame's device")
        with self._lock:
            device_lock = self._device_locks[device_id]
        with device_lock:
            return self._process(frame)

    def _process(self, frame: FrameRecord) -> AnnotatedFrame:
        device = self.tracker.get(frame.device_id)
        if frame.detections is None:
            try:
                result = self.detector.detect(frame)
            except DetectorFailure:
                log.warning("detector failed on frame %s; skipping", frame.frame_id)
                raise
            except Exception as exc:
                log.warning("detector crashed on frame %s: %s; skipping", frame.frame_id, exc)
                raise DetectorFailure(str(exc)) from exc
            detections = list(result.detections)
            latency = StageLatency(frame.frame_id, result.detection_ms, result.filtering_ms)
        else:
            # no detector stage ran
            detections = list(frame.detections)
            latency = StageLatency(frame.frame_id, 0.0, 0.0)

        accepted = [(i, d) for i, d in enumerate(detections) if d.confidence >= self.confidence_threshold]
        objs = []
        for index, det in accepted:
            position = det.world_position or device.last_position
            if position is None:
                raise NoPosition(f"detection {index} of frame {frame.frame_id!r} has no position to anchor to")
            attributes = {
                "frame_id": frame.frame_id,
                "detection_index": str(index),
                "quality": frame.quality,
            }
            if device.region_tag:
                attributes["region_tag"] = device.region_tag
            objs.append(
                MapObject(
                    object_id=f"{frame.frame_id}#{index}",
                    object_class=det.object_class,
                    position=position,
                    timestamp=frame.capture_ts,
                    layer=LayerKind.HIGHLY_DYNAMIC,
                    source_device=frame.device_id,
                    confidence=det.confidence,
                    attributes=attributes,
                )
            )
        self.store.insert_many(objs)
        annotated = AnnotatedFrame(
            frame.frame_id,
            frame.device_id,
            frame.capture_ts,
            tuple(d for _, d in accepted),
            latency,
            tuple(o.object_id for o in objs),
        )
        with self._lock:
            self._runs[self.current_run].append(latency)
            self._published[frame.device_id].append(annotated)
        return annotated
