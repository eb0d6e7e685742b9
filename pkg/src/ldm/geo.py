"""Geometry primitives: great-circle distance, polygon containment, box IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DegeneratePolygon, ValidationError

EARTH_RADIUS_M = 6_371_000.0

# Distance (meters, projected frame) within which a point counts as on an edge.
BOUNDARY_TOLERANCE_M = 1e-6

MAX_POLYGON_SPAN_DEG = 90.0


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84-style position in decimal degrees; ``alt`` in meters or None."""

    lat: float
    lon: float
    alt: float | None = None

    def __post_init__(self) -> None:
        for name in ("lat", "lon"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"{name} must be a number, got {value!r}")
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value!r}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"lat out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"lon out of range: {self.lon}")
        if self.alt is not None:
            if isinstance(self.alt, bool) or not isinstance(self.alt, (int, float)) or not math.isfinite(self.alt):
                raise ValidationError(f"alt must be a finite number, got {self.alt!r}")


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned image box: top-left corner plus width and height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValidationError(f"box {name} must be a finite number, got {value!r}")
        if self.x < 0 or self.y < 0:
            raise ValidationError("box coordinates must be non-negative")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError("box width and height must be positive")

    @property
    def area(self) -> float:
        return self.w * self.h


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a spherical Earth; altitude ignored."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    # Rounding can push h a hair above 1 for antipodal points.
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c) -> float:
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c) -> bool:
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and on_segment(q1, q2, p1):
        return True
    if d2 == 0 and on_segment(q1, q2, p2):
        return True
    if d3 == 0 and on_segment(p1, p2, q1):
        return True
    if d4 == 0 and on_segment(p1, p2, q2):
        return True
    return False


@dataclass(frozen=True)
class Polygon:
    """A simple polygon over geographic vertices, closure implied.

    Validation happens in an equirectangular projection centred on the vertex
    centroid. A repeated closing vertex is dropped on construction.
    """

    vertices: tuple[GeoPoint, ...]
    _origin: tuple[float, float] = field(init=False, repr=False, compare=False)
    _projected: tuple[tuple[float, float], ...] = field(init=False, repr=False, compare=False)

    def __init__(self, vertices: Sequence[GeoPoint]) -> None:
        verts = list(vertices)
        if len(verts) >= 2 and (verts[0].lat, verts[0].lon) == (verts[-1].lat, verts[-1].lon):
            verts = verts[:-1]
        object.__setattr__(self, "vertices", tuple(verts))
        if len(verts) < 3:
            raise DegeneratePolygon(f"polygon needs at least 3 vertices, got {len(verts)}")

        lats = [v.lat for v in verts]
        lons = [v.lon for v in verts]
        if max(lats) - min(lats) >= MAX_POLYGON_SPAN_DEG or max(lons) - min(lons) >= MAX_POLYGON_SPAN_DEG:
            raise DegeneratePolygon("polygon spans 90 degrees or more; only local zones are supported")

        origin = (sum(lats) / len(lats), sum(lons) / len(lons))
        object.__setattr__(self, "_origin", origin)
        projected = tuple(self.project(v) for v in verts)
        object.__setattr__(self, "_projected", projected)

        if abs(_shoelace(projected)) <= 1e-9:
            raise DegeneratePolygon("polygon has zero projected area")
        n = len(projected)
        for i in range(n):
            a1, a2 = projected[i], projected[(i + 1) % n]
            for j in range(i + 1, n):
                # adjacent edges share a vertex by construction
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(a1, a2, projected[j], projected[(j + 1) % n]):
                    raise DegeneratePolygon("polygon edges self-intersect")

    def project(self, p: GeoPoint) -> tuple[float, float]:
        """Local planar coordinates (east, north) in meters."""
        lat0, lon0 = self._origin
        k = math.pi / 180.0 * EARTH_RADIUS_M
        return ((p.lon - lon0) * k * math.cos(math.radians(lat0)), (p.lat - lat0) * k)

    @property
    def projected(self) -> tuple[tuple[float, float], ...]:
        return self._projected

    def area_m2(self) -> float:
        return abs(_shoelace(self._projected))


def _shoelace(pts: Sequence[tuple[float, float]]) -> float:
    total = 0.0
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return total / 2.0


def point_in_polygon(p: GeoPoint, poly: Polygon) -> bool:
    """True when ``p`` is inside ``poly`` or on its boundary."""
    px, py = poly.project(p)
    pts = poly.projected
    inside = False
    n = len(pts)
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        length = math.hypot(ex, ey)
        cross = ex * (py - ay) - ey * (px - ax)
        if abs(cross) <= BOUNDARY_TOLERANCE_M * length:
            dot = (px - ax) * ex + (py - ay) * ey
            slack = BOUNDARY_TOLERANCE_M * length
            if -slack <= dot <= length * length + slack:
                return True
        if (ay > py) != (by > py):
            x_cross = ax + (py - ay) * ex / ey
            if px < x_cross:
                inside = not inside
    return inside


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return min(1.0, inter / union)
