"""Detection-quality evaluation: per-frame matching, precision, recall, reports."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import FrameMismatch, MalformedLog, ValidationError
from .geo import PixelBox, iou
from .ingest import StageLatency

DEFAULT_IOU_THRESHOLD = 0.5


class Role(str, enum.Enum):
    GROUND_TRUTH = "ground_truth"
    PREDICTED = "predicted"

    @classmethod
    def parse(cls, value: "str | Role") -> "Role":
        if isinstance(value, Role):
            return value
        aliases = {"gt": cls.GROUND_TRUTH, "pred": cls.PREDICTED, "prediction": cls.PREDICTED}
        value = str(value).lower()
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown annotation role {value!r}") from None


@dataclass(frozen=True)
class LabeledBox:
    object_class: str
    bbox: PixelBox
    confidence: float | None = None


@dataclass(frozen=True)
class FrameAnnotation:
    frame_id: str
    role: Role
    boxes: tuple[LabeledBox, ...] = ()
    quality: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role.parse(self.role))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.role is Role.PREDICTED and any(b.confidence is None for b in self.boxes):
            raise ValidationError("predicted boxes must carry a confidence")


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValidationError("match counts must be non-negative")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def match_frame(gt: FrameAnnotation, pred: FrameAnnotation, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MatchCounts:
    """Greedy one-to-one matching of predictions to same-class ground truth.

    Predictions are visited in descending confidence (stable for ties); each
    takes the unmatched ground-truth box with the highest IoU at or above the
    threshold, earliest in list order on ties.
    """
    if gt.frame_id != pred.frame_id:
        raise FrameMismatch(f"frame ids differ: {gt.frame_id!r} vs {pred.frame_id!r}")
    if not 0.0 < iou_threshold <= 1.0:
        raise ValidationError("iou_threshold must be in (0, 1]")
    order = sorted(range(len(pred.boxes)), key=lambda i: -(pred.boxes[i].confidence or 0.0))
    taken = [False] * len(gt.boxes)
    tp = 0
    for i in order:
        p = pred.boxes[i]
        best, best_iou = -1, -1.0
        for j, g in enumerate(gt.boxes):
            if taken[j] or g.object_class != p.object_class:
                continue
            overlap = iou(p.bbox, g.bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best, best_iou = j, overlap
        if best >= 0:
            taken[best] = True
            tp += 1
    return MatchCounts(tp, len(pred.boxes) - tp, len(gt.boxes) - tp)


def precision(c: MatchCounts) -> float | None:
    denom = c.tp + c.fp
    return None if denom == 0 else c.tp / denom


def recall(c: MatchCounts) -> float | None:
    denom = c.tp + c.fn
    return None if denom == 0 else c.tp / denom


def format_ratio(value: float | None, digits: int = 3) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


@dataclass(frozen=True)
class MetricsReport:
    label: str
    counts: MatchCounts
    precision: float | None
    recall: float | None
    mean_detection_ms: float | None = None
    mean_filtering_ms: float | None = None
    frames: int = 0


@dataclass
class _Group:
    counts: MatchCounts = field(default_factory=MatchCounts)
    frames: int = 0
    detection: list[float] = field(default_factory=list)
    filtering: list[float] = field(default_factory=list)


GROUP_KEYS = ("quality", "none")


def _index(log: Iterable[FrameAnnotation], role: Role) -> dict[str, FrameAnnotation]:
    out: dict[str, FrameAnnotation] = {}
    for ann in log:
        if ann.role is not role:
            raise MalformedLog(f"frame {ann.frame_id!r}: expected role {role.value}, got {ann.role.value}")
        if ann.frame_id in out:
            raise MalformedLog(f"duplicate {role.value} frame {ann.frame_id!r}")
        out[ann.frame_id] = ann
    return out


def run_eval(
    gt_log: Iterable[FrameAnnotation],
    pred_log: Iterable[FrameAnnotation],
    latency_log: Iterable[StageLatency] = (),
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    group_by: str = "quality",
) -> list[MetricsReport]:
    """Micro-averaged precision/recall per group, plus mean stage latencies.

    Frames present in only one log are matched against an empty counterpart.
    Groups appear in order of first appearance (ground truth first).
    """
    if group_by not in GROUP_KEYS:
        raise ValidationError(f"group_by must be one of {GROUP_KEYS}")
    gts = _index(gt_log, Role.GROUND_TRUTH)
    preds = _index(pred_log, Role.PREDICTED)

    label_of: dict[str, str] = {}
    groups: dict[str, _Group] = {}
    frame_ids = list(gts) + [f for f in preds if f not in gts]
    for frame_id in frame_ids:
        gt = gts.get(frame_id)
        pred = preds.get(frame_id)
        if group_by == "none":
            label = "all"
        else:
            qualities = {a.quality for a in (gt, pred) if a is not None and a.quality is not None}
            if len(qualities) > 1:
                raise MalformedLog(f"frame {frame_id!r} has conflicting quality labels {sorted(qualities)}")
            label = qualities.pop() if qualities else "unlabeled"
        gt = gt or FrameAnnotation(frame_id, Role.GROUND_TRUTH)
        pred = pred or FrameAnnotation(frame_id, Role.PREDICTED)
        group = groups.setdefault(label, _Group())
        group.counts = group.counts + match_frame(gt, pred, iou_threshold)
        group.frames += 1
        label_of[frame_id] = label

    for record in latency_log:
        label = label_of.get(record.frame_id)
        if label is None:
            continue
        groups[label].detection.append(record.detection_ms)
        groups[label].filtering.append(record.filtering_ms)

    def mean(xs: Sequence[float]) -> float | None:
        return math.fsum(xs) / len(xs) if xs else None

    return [
        MetricsReport(
            label,
            g.counts,
            precision(g.counts),
            recall(g.counts),
            mean(g.detection),
            mean(g.filtering),
            g.frames,
        )
        for label, g in groups.items()
    ]


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Plain-text table aligned on columns; undefined values print as n/a."""
    header = ("group", "frames", "tp", "fp", "fn", "precision", "recall", "det_ms", "filt_ms")
    rows = [header]
    for r in reports:
        rows.append(
            (
                r.label,
                str(r.frames),
                str(r.counts.tp),
                str(r.counts.fp),
                str(r.counts.fn),
                format_ratio(r.precision),
                format_ratio(r.recall),
                format_ratio(r.mean_detection_ms, 2),
                format_ratio(r.mean_filtering_ms, 2),
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)
