"""Tracker contract and the non-learned baselines.

A tracker is initialized from one frame and box, then stepped with frames
only; ground truth never reaches it after initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateError, UndefinedCorrelationError, ValidationError
from .geometry import BBox

MIN_BOX_SIDE = 2.0


@dataclass
class TrackerState:
    prev_frame: np.ndarray
    prev_box: BBox
    extra: dict = field(default_factory=dict)


def ensure_min_size(box: BBox, width: int, height: int, min_side: float = MIN_BOX_SIDE) -> tuple[BBox, bool]:
    """Inflate a collapsed box to ``min_side`` about its center, kept inside the frame."""
    if box.width >= min_side and box.height >= min_side:
        return box, False
    w = max(box.width, min_side)
    h = max(box.height, min_side)
    cx, cy = box.center
    cx = min(max(cx, w / 2.0), width - w / 2.0)
    cy = min(max(cy, h / 2.0), height - h / 2.0)
    return BBox.from_center(cx, cy, w, h), True


class Tracker:
    """Base class: subclasses implement :meth:`predict`."""

    name = "tracker"

    def init(self, frame: np.ndarray, box: BBox) -> TrackerState:
        frame = np.asarray(frame, dtype=np.float64)
        if box.area <= 0:
            raise DegenerateError("initial box has zero area")
        h, w = frame.shape
        clamped = box.clamp(w, h)
        if clamped.area <= 0:
            raise DegenerateError("initial box does not intersect the frame")
        return TrackerState(frame, clamped, {"guard_count": 0})

    def step(self, state: TrackerState, frame: np.ndarray) -> tuple[TrackerState, BBox]:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != state.prev_frame.shape:
            raise ValidationError(
                f"frame shape {frame.shape} differs from previous {state.prev_frame.shape}"
            )
        h, w = frame.shape
        box = self.predict(state, frame).clamp(w, h)
        box, guarded = ensure_min_size(box, w, h)
        extra = dict(state.extra)
        if guarded:
            extra["guard_count"] = extra.get("guard_count", 0) + 1
        return TrackerState(frame, box, extra), box

    def predict(self, state: TrackerState, frame: np.ndarray) -> BBox:
        raise NotImplementedError

    def track(self, frames, box: BBox) -> list[BBox]:
        """Boxes for every frame; the first is the (clamped) initial box."""
        state = self.init(frames[0], box)
        out = [state.prev_box]
        for f in frames[1:]:
            state, b = self.step(state, f)
            out.append(b)
        return out


class StaticTracker(Tracker):
    name = "static"

    def predict(self, state, frame):
        return state.prev_box


# relative energy below which an input counts as constant
FLAT_TOLERANCE = 1e-12


def _norm_floor(x: np.ndarray) -> float:
    """Centered-norm threshold: float residue of mean removal on a constant array stays below it."""
    return FLAT_TOLERANCE * math.sqrt(x.size) * max(1.0, float(np.max(np.abs(x))))


def ncc(template: np.ndarray, patch: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation in [-1, 1]."""
    t = np.asarray(template, dtype=np.float64)
    p = np.asarray(patch, dtype=np.float64)
    if t.shape != p.shape:
        raise ValidationError(f"shape mismatch {t.shape} vs {p.shape}")
    tf, pf = _norm_floor(t), _norm_floor(p)
    t = t - t.mean()
    p = p - p.mean()
    tn, pn = math.sqrt(float(np.sum(t * t))), math.sqrt(float(np.sum(p * p)))
    if tn <= tf or pn <= pf:
        raise UndefinedCorrelationError("zero-variance input")
    return float(np.clip(np.sum(t * p) / (tn * pn), -1.0, 1.0))


def _ncc_map(template: np.ndarray, window: np.ndarray) -> np.ndarray:
    """NCC of ``template`` at every valid placement inside ``window``; NaN where undefined."""
    th, tw = template.shape
    t = template - template.mean()
    tn = math.sqrt(float(np.sum(t * t)))
    if tn <= _norm_floor(template):
        raise UndefinedCorrelationError("zero-variance template")
    views = sliding_window_view(window, (th, tw))
    means = views.mean(axis=(2, 3), keepdims=True)
    centered = views - means
    num = np.einsum("ijkl,kl->ij", centered, t)
    pn = np.sqrt(np.einsum("ijkl,ijkl->ij", centered, centered))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / (pn * tn)
    out[pn <= _norm_floor(window)] = np.nan
    return out


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


class NCCTracker(Tracker):
    """Translation-only template matching over a search window twice the box size.

    The template is the previous box (rounded to whole pixels) cut from the
    previous frame; every integer shift keeping it inside the window is
    scored and the best one moves the box. Ties go to the smallest shift.
    """

    name = "ncc"

    def __init__(self, context_factor: float = 2.0):
        self.context_factor = context_factor

    def predict(self, state, frame):
        h, w = frame.shape
        pb = state.prev_box
        tx1, ty1 = _round(pb.x1), _round(pb.y1)
        tx2, ty2 = max(_round(pb.x2), tx1 + 1), max(_round(pb.y2), ty1 + 1)
        tx1, ty1 = max(tx1, 0), max(ty1, 0)
        tx2, ty2 = min(tx2, w), min(ty2, h)
        if tx2 - tx1 < 1 or ty2 - ty1 < 1:
            return pb
        template = state.prev_frame[ty1:ty2, tx1:tx2]
        win = pb.dilate(self.context_factor).clamp(w, h)
        wx1, wy1 = max(_round(win.x1), 0), max(_round(win.y1), 0)
        wx2, wy2 = min(_round(win.x2), w), min(_round(win.y2), h)
        wx1, wy1 = min(wx1, tx1), min(wy1, ty1)
        wx2, wy2 = max(wx2, tx2), max(wy2, ty2)
        try:
            scores = _ncc_map(template, frame[wy1:wy2, wx1:wx2])
        except UndefinedCorrelationError:
            return pb
        if np.all(np.isnan(scores)):
            return pb
        best = np.nanmax(scores)
        iy, ix = np.nonzero(scores == best)
        dx = ix + wx1 - tx1
        dy = iy + wy1 - ty1
        k = int(np.argmin(dx * dx + dy * dy))
        return pb.translate(float(dx[k]), float(dy[k]))
