"""Axis-aligned boxes, polygon rasterization and the maximal inscribed box.

Coordinates are continuous pixels with the origin at the top-left corner,
x growing rightward and y growing downward. A pixel cell ``(col, row)``
covers ``[col, col+1) x [row, row+1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyRegionError, ValidationError

# Freeman 8-direction steps in image coordinates (y down), 0 = east, counter-clockwise.
FREEMAN_STEPS = (
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box ``[x1, x2] x [y1, y2]``; requires ``x1 <= x2`` and ``y1 <= y2``."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates {vals}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValidationError(f"box corners out of order {vals}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scale(self, s: float) -> "BBox":
        """Scale about the coordinate origin."""
        return BBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def dilate(self, factor: float) -> "BBox":
        """Scale width and height by ``factor`` about the box center."""
        cx, cy = self.center
        return BBox.from_center(cx, cy, self.width * factor, self.height * factor)

    def clamp(self, width: float, height: float) -> "BBox":
        """Clip to the frame ``[0, width] x [0, height]``.

        A box lying entirely outside collapses onto the nearest frame edge.
        """
        x1 = min(max(self.x1, 0.0), width)
        x2 = min(max(self.x2, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        y2 = min(max(self.y2, 0.0), height)
        return BBox(x1, y1, x2, y2)

    def corners(self) -> list[tuple[float, float]]:
        return [
            (self.x1, self.y1),
            (self.x2, self.y1),
            (self.x2, self.y2),
            (self.x1, self.y2),
        ]


def area(b: BBox) -> float:
    return b.area


def intersection(a: BBox, b: BBox) -> Optional[BBox]:
    """Overlap box, or ``None`` when the boxes share no positive area."""
    x1 = max(a.x1, b.x1)
    y1 = max(a.y1, b.y1)
    x2 = min(a.x2, b.x2)
    y2 = min(a.y2, b.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2, y2)


def intersection_area(a: BBox, b: BBox) -> float:
    inter = intersection(a, b)
    return 0.0 if inter is None else inter.area


def union_area(a: BBox, b: BBox) -> float:
    return a.area + b.area - intersection_area(a, b)


def bbox_from_corners(xs: Sequence[float], ys: Sequence[float]) -> BBox:
    """Axis-aligned hull of a 4-corner annotation."""
    if len(xs) != 4 or len(ys) != 4:
        raise ValidationError(f"expected 4 x and 4 y values, got {len(xs)} and {len(ys)}")
    vals = [float(v) for v in (*xs, *ys)]
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError("non-finite corner coordinate")
    return BBox(min(vals[:4]), min(vals[4:]), max(vals[:4]), max(vals[4:]))


@dataclass(frozen=True)
class Polygon:
    """Closed polygon; the last vertex implicitly connects to the first."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValidationError(f"polygon needs at least 3 vertices, got {len(verts)}")
        if not all(math.isfinite(v) for p in verts for v in p):
            raise ValidationError("non-finite polygon vertex")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_chain_code(cls, start: tuple[float, float], codes: Iterable[int]) -> "Polygon":
        """Decode an 8-direction Freeman chain into its vertex list."""
        x, y = start
        verts = [(x, y)]
        for c in codes:
            c = int(c)
            if not 0 <= c <= 7:
                raise ValidationError(f"chain code digit {c} outside 0..7")
            dx, dy = FREEMAN_STEPS[c]
            x, y = x + dx, y + dy
            verts.append((x, y))
        if len(verts) > 1 and verts[-1] == verts[0]:
            verts.pop()
        return cls(tuple(verts))

    def bounds(self) -> BBox:
        xs = [p[0] for p in self.vertices]
        ys = [p[1] for p in self.vertices]
        return BBox(min(xs), min(ys), max(xs), max(ys))

    def map(self, fn) -> "Polygon":
        return Polygon(tuple(fn(x, y) for x, y in self.vertices))


@dataclass(frozen=True)
class BinaryMask:
    """Boolean raster; ``cells[row, col]`` with shape ``(height, width)``."""

    width: int
    height: int
    cells: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("mask dimensions must be >= 1")
        cells = np.asarray(self.cells, dtype=bool)
        if cells.shape != (self.height, self.width):
            raise ValidationError(
                f"cells shape {cells.shape} does not match {self.height}x{self.width}"
            )
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr, dtype=bool)
        return cls(arr.shape[1], arr.shape[0], arr)


def rasterize(p: Polygon, width: int, height: int) -> BinaryMask:
    """Cells whose centers fall inside ``p`` under the even-odd rule."""
    b = p.bounds()
    if b.x1 < 0 or b.y1 < 0 or b.x2 > width or b.y2 > height:
        raise ValidationError(f"polygon {b.as_tuple()} exceeds frame {width}x{height}")
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    px, py = np.meshgrid(cx, cy)
    inside = np.zeros((height, width), dtype=bool)
    verts = p.vertices
    n = len(verts)
    for i in range(n):
        xa, ya = verts[i]
        xb, yb = verts[(i + 1) % n]
        if ya == yb:
            continue
        # half-open in y so a vertex shared by two edges is counted once
        straddles = (ya > py) != (yb > py)
        x_cross = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= straddles & (px < x_cross)
    return BinaryMask(width, height, inside)


def _largest_in_histogram(heights: np.ndarray, bottom: int, best):
    """Scan one histogram row with a monotonic stack, updating ``best``.

    ``best`` is ``(area, y1, x1, x2, y2)``; ties prefer smaller y1 then x1.
    """
    stack: list[int] = []
    n = len(heights)
    for i in range(n + 1):
        h = heights[i] if i < n else 0
        while stack and heights[stack[-1]] >= h:
            top_h = int(heights[stack.pop()])
            if top_h == 0:
                continue
            left = stack[-1] + 1 if stack else 0
            a = top_h * (i - left)
            y1 = bottom - top_h + 1
            if (a, -y1, -left) > (best[0], -best[1], -best[2]):
                best = (a, y1, left, i, bottom + 1)
        stack.append(i)
    return best


def maximal_inscribed_box(m: BinaryMask) -> BBox:
    """Largest all-true axis-aligned rectangle, as an integer-corner box.

    Row-by-row height histogram plus monotonic stack, O(width * height).
    """
    cells = m.cells
    if not cells.any():
        raise EmptyRegionError("mask has no true cells")
    heights = np.zeros(m.width, dtype=np.int64)
    best = (0, m.height, m.width, 0, 0)
    for row in range(m.height):
        heights = np.where(cells[row], heights + 1, 0)
        best = _largest_in_histogram(heights, row, best)
    _, y1, x1, x2, y2 = best
    return BBox(float(x1), float(y1), float(x2), float(y2))
