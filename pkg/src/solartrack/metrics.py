"""Per-frame overlap metrics and their sequence/dataset aggregates.

Counting follows the single-object convention: on an annotated frame with a
prediction, a match is one true positive and a miss is one false positive
plus one false negative; an annotated frame without a prediction is one
false negative. Frames without ground truth never enter any metric.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Optional

from .errors import DegenerateError, NothingToEvaluateError, ValidationError
from .geometry import BBox, intersection_area, union_area

DEFAULT_THRESHOLD = 0.5

OverlapFn = Callable[[BBox, BBox], float]


@dataclass(frozen=True)
class FramePair:
    frame_index: int
    gt: Optional[BBox]
    pred: Optional[BBox]

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValidationError(f"negative frame index {self.frame_index}")


@dataclass
class MatchCounts:
    n_tp: int = 0
    n_fp: int = 0
    n_fn: int = 0


@dataclass(frozen=True)
class MetricReport:
    iou_mean: float
    fscore_iou: float
    af1: float
    ota: float
    iogt_mean: float
    fscore_iogt: float
    atb_mean: float
    frames_evaluated: int

    COLUMNS = ("iou_mean", "fscore_iou", "af1", "ota", "iogt_mean", "fscore_iogt", "atb_mean")

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in self.COLUMNS)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d[k] for k in (*cls.COLUMNS, "frames_evaluated")})


def iou(gt: BBox, pred: BBox) -> float:
    u = union_area(gt, pred)
    if u <= 0.0:
        raise DegenerateError("degenerate pair: union area is zero")
    return intersection_area(gt, pred) / u


def iogt(gt: BBox, pred: BBox) -> float:
    if gt.area <= 0.0:
        raise DegenerateError("degenerate ground truth: zero area")
    return intersection_area(gt, pred) / gt.area


def atb(gt: BBox, pred: BBox) -> float:
    if gt.area <= 0.0:
        raise DegenerateError("degenerate ground truth: zero area")
    return pred.area / gt.area


def area_precision_recall(gt: BBox, pred: BBox) -> tuple[float, float]:
    """Shared area over tracked area, and shared area over ground-truth area."""
    inter = intersection_area(gt, pred)
    p = inter / pred.area if pred.area > 0 else 0.0
    r = inter / gt.area if gt.area > 0 else 0.0
    return p, r


def area_f1(gt: BBox, pred: BBox) -> float:
    p, r = area_precision_recall(gt, pred)
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def is_match(gt: BBox, pred: BBox, threshold: float = DEFAULT_THRESHOLD, overlap: OverlapFn = iou) -> bool:
    if not 0.0 < threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside (0, 1]")
    return overlap(gt, pred) >= threshold


def _annotated(frames: Iterable[FramePair]) -> list[FramePair]:
    scored = [f for f in frames if f.gt is not None]
    if not scored:
        raise NothingToEvaluateError("nothing to evaluate: no annotated frames")
    return scored


def match_counts(frames: Iterable[FramePair], threshold: float = DEFAULT_THRESHOLD,
                 overlap: OverlapFn = iou) -> MatchCounts:
    counts = MatchCounts()
    for f in _annotated(frames):
        if f.pred is None:
            counts.n_fn += 1
        elif is_match(f.gt, f.pred, threshold, overlap):
            counts.n_tp += 1
        else:
            counts.n_fp += 1
            counts.n_fn += 1
    return counts


def fscore(frames: Iterable[FramePair], threshold: float = DEFAULT_THRESHOLD,
           overlap: OverlapFn = iou) -> tuple[float, float, float]:
    """Returns ``(precision, recall, fscore)``; zero denominators give 0."""
    c = match_counts(frames, threshold, overlap)
    precision = c.n_tp / (c.n_tp + c.n_fp) if c.n_tp + c.n_fp else 0.0
    recall = c.n_tp / (c.n_tp + c.n_fn) if c.n_tp + c.n_fn else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def af1(frames: Iterable[FramePair]) -> float:
    scored = _annotated(frames)
    total = sum(area_f1(f.gt, f.pred) for f in scored if f.pred is not None)
    return total / len(scored)


def ota(frames: Iterable[FramePair], threshold: float = DEFAULT_THRESHOLD,
        overlap: OverlapFn = iou) -> float:
    scored = _annotated(frames)
    c = match_counts(scored, threshold, overlap)
    # one ground-truth box per annotated frame
    return 1.0 - (c.n_fn + c.n_fp) / len(scored)


def aggregate(frames: Iterable[FramePair], threshold: float = DEFAULT_THRESHOLD) -> MetricReport:
    """All seven table columns, pooled over the annotated frames given.

    Missing predictions score 0 for IoU, IoGT and AF1 and are left out of
    the tracked-box-size mean, which is undefined for them.
    """
    scored = _annotated(frames)
    n = len(scored)
    predicted = [f for f in scored if f.pred is not None]
    iou_sum = sum(iou(f.gt, f.pred) for f in predicted)
    iogt_sum = sum(iogt(f.gt, f.pred) for f in predicted)
    atbs = [atb(f.gt, f.pred) for f in predicted]
    return MetricReport(
        iou_mean=iou_sum / n,
        fscore_iou=fscore(scored, threshold, iou)[2],
        af1=af1(scored),
        ota=ota(scored, threshold, iou),
        iogt_mean=iogt_sum / n,
        fscore_iogt=fscore(scored, threshold, iogt)[2],
        atb_mean=sum(atbs) / len(atbs) if atbs else 0.0,
        frames_evaluated=n,
    )
