"""Value types for segments, endpoints and correspondences."""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_MIN_LENGTH = 30.0


@dataclass(frozen=True)
class Endpoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite endpoint ({self.x}, {self.y})")

    def __add__(self, other: "MovementVector") -> "Endpoint":
        return Endpoint(self.x + other.dx, self.y + other.dy)


@dataclass(frozen=True)
class MovementVector:
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.dx) and math.isfinite(self.dy)):
            raise ValueError("non-finite movement vector")

    @property
    def norm(self) -> float:
        return math.hypot(self.dx, self.dy)


@dataclass(frozen=True)
class LineSegment:
    p1: Endpoint
    p2: Endpoint
    id: int | None = None

    def __post_init__(self):
        if self.p1.x == self.p2.x and self.p1.y == self.p2.y:
            raise ValueError("degenerate segment: both endpoints coincide")

    @classmethod
    def from_coords(cls, x1, y1, x2, y2, id=None) -> "LineSegment":
        return cls(Endpoint(float(x1), float(y1)), Endpoint(float(x2), float(y2)), id)

    def coords(self) -> tuple[float, float, float, float]:
        return self.p1.x, self.p1.y, self.p2.x, self.p2.y

    def with_id(self, id: int) -> "LineSegment":
        return LineSegment(self.p1, self.p2, id)


@dataclass(frozen=True)
class Correspondence:
    source: LineSegment
    target: LineSegment
    id: int

    def __post_init__(self):
        if self.source.id != self.id or self.target.id != self.id:
            raise ValueError("source, target and correspondence ids must agree")


def length(seg: LineSegment) -> float:
    return math.hypot(seg.p2.x - seg.p1.x, seg.p2.y - seg.p1.y)


def passes_length_filter(seg: LineSegment, min_length: float = DEFAULT_MIN_LENGTH) -> bool:
    # segments strictly shorter than min_length are dropped
    return length(seg) >= min_length


def scale_to_level(seg: LineSegment, level: int) -> LineSegment:
    """Endpoint coordinates at pyramid ``level`` (level 0 is full resolution)."""
    if level < 0:
        raise ValueError("level must be >= 0")
    if level == 0:
        return seg
    s = 2.0 ** level
    return LineSegment(Endpoint(seg.p1.x / s, seg.p1.y / s),
                       Endpoint(seg.p2.x / s, seg.p2.y / s), seg.id)


def orientation(seg: LineSegment) -> float:
    """Undirected orientation in [0, pi)."""
    return math.atan2(seg.p2.y - seg.p1.y, seg.p2.x - seg.p1.x) % math.pi
