"""Axis-aligned bounding box arithmetic.

Boxes are continuous (sub-pixel) and stored as (left, top, width, height).
Area is width * height with no +1 pixel convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """A box in pixel space: top-left corner plus size."""

    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        for v in (self.left, self.top, self.width, self.height):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {self!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"degenerate box (width/height must be > 0): {self!r}")

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.left + self.width / 2.0, self.top + self.height / 2.0)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.left + dx, self.top + dy, self.width, self.height)


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.right, b.right) - max(a.left, b.left)
    h = min(a.bottom, b.bottom) - max(a.top, b.top)
    if w <= 0 or h <= 0:
        return 0.0
    # rounding in right/bottom can push w*h a hair past the smaller box
    return min(w * h, a.area, b.area)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes, 1 iff they coincide."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU: iou minus (hull area - union area) / hull area.

    Lies in (-1, 1]; equals iou when the enclosing hull is exactly the union.
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    hull_w = max(a.right, b.right) - min(a.left, b.left)
    hull_h = max(a.bottom, b.bottom) - min(a.top, b.top)
    hull = hull_w * hull_h
    return inter / union - (hull - union) / hull


def aspect_ratio(b: BBox) -> float:
    """Height divided by width."""
    return b.height / b.width
