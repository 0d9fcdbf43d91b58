"""Event records, annotation files, image screening and sequence assembly.

On-disk layout of one event directory::

    <event_id>/
        000000.pgm, 000001.pgm, ...   frames (binary P5, 8-bit)
        annotations.txt               sparse labels, ``i,x1,x2,x3,x4,y1,y2,y3,y4``
        truth.csv                     dense labels, same format (synthetic data only)
        meta.json                     event id, type and image header
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence as Seq

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import BBox, Polygon, bbox_from_corners, maximal_inscribed_box, rasterize
from .solarcoord import ImageHeader, hpc_box_to_pixel, hpc_to_pixel

log = logging.getLogger(__name__)

EVENT_TYPES = ("AR", "CH")
SOURCES = ("HMI", "SPOCA", "other")
MIN_TRACK_RECORDS = 3
BLACK_THRESHOLD = 0.02
TRAIN_LAST_YEAR = 2017
TEST_YEAR = 2018

EVENT_CSV_HEADER = ["event_id", "event_type", "source", "start_time", "end_time", "x1", "y1", "x2", "y2"]
ANNOTATION_FILE = "annotations.txt"
TRUTH_FILE = "truth.csv"
META_FILE = "meta.json"


def parse_time(text: str) -> datetime:
    """ISO-8601 timestamp; naive values are taken as UTC."""
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_time(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    event_type: str
    source: str
    start_time: datetime
    end_time: datetime
    hpc_box: BBox
    chain_code: Optional[Polygon] = None

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise ValidationError(f"unknown event type {self.event_type!r}")
        if self.start_time > self.end_time:
            raise ValidationError(f"record {self.event_id}: start_time after end_time")


@dataclass(frozen=True)
class EventTrack:
    event_id: str
    records: tuple

    @property
    def event_type(self) -> str:
        return self.records[0].event_type

    @property
    def start_time(self) -> datetime:
        return self.records[0].start_time


def group_records(records: Iterable[EventRecord], min_records: int = MIN_TRACK_RECORDS) -> list[EventTrack]:
    """One time-sorted track per event id; short tracks are dropped."""
    groups: dict[str, list[EventRecord]] = {}
    for r in records:
        groups.setdefault(r.event_id, []).append(r)
    tracks = []
    for event_id, recs in groups.items():
        types = {r.event_type for r in recs}
        if len(types) > 1:
            raise ValidationError(f"inconsistent track {event_id}: event types {sorted(types)}")
        if len(recs) < min_records:
            log.debug("dropping %s: %d records", event_id, len(recs))
            continue
        recs.sort(key=lambda r: r.start_time)
        tracks.append(EventTrack(event_id, tuple(recs)))
    return tracks


def sample_times(start: datetime, end: datetime) -> list[datetime]:
    """Start, end and the three points splitting the report into four equal parts."""
    if start > end:
        raise ValidationError("start after end")
    if start == end:
        return [start]
    step = (end - start) / 4
    return [start + k * step for k in range(4)] + [end]


def dedupe_times(times: Iterable[datetime]) -> list[datetime]:
    """Drop repeated timestamps, keeping the first occurrence."""
    seen = set()
    out = []
    for t in times:
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def split_by_year(tracks: Iterable[EventTrack]) -> tuple[list[EventTrack], list[EventTrack]]:
    """Tracks starting in or before 2017 train; tracks starting in 2018 test."""
    train, test = [], []
    for t in tracks:
        year = t.start_time.year
        if year <= TRAIN_LAST_YEAR:
            train.append(t)
        elif year == TEST_YEAR:
            test.append(t)
    return train, test


# -- annotations ----------------------------------------------------------

def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class Annotation:
    frame_index: int
    xs: tuple
    ys: tuple

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValidationError("negative frame index")
        if len(self.xs) != 4 or len(self.ys) != 4:
            raise ValidationError("annotation needs 4 x and 4 y corners")

    @classmethod
    def from_bbox(cls, frame_index: int, box: BBox) -> "Annotation":
        x1, y1 = _round_half_up(box.x1), _round_half_up(box.y1)
        x2, y2 = _round_half_up(box.x2), _round_half_up(box.y2)
        return cls(frame_index, (x1, x2, x2, x1), (y1, y1, y2, y2))

    @property
    def bbox(self) -> BBox:
        return bbox_from_corners(self.xs, self.ys)

    def to_line(self) -> str:
        vals = [self.frame_index, *(_round_half_up(v) for v in self.xs), *(_round_half_up(v) for v in self.ys)]
        return ",".join(str(v) for v in vals)


def format_annotations(annotations: Iterable[Annotation]) -> str:
    return "".join(a.to_line() + "\n" for a in annotations)


def write_annotations(path, annotations: Iterable[Annotation]):
    Path(path).write_text(format_annotations(annotations), encoding="utf-8")


def parse_annotations_text(text: str) -> list[Annotation]:
    out = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise ParseError(f"expected 9 fields, got {len(parts)}", line=lineno)
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", line=lineno) from None
        if vals[0] in seen:
            raise ParseError(f"duplicate frame index {vals[0]}", line=lineno)
        seen.add(vals[0])
        try:
            out.append(Annotation(vals[0], tuple(vals[1:5]), tuple(vals[5:9])))
        except ValidationError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


def parse_annotations(path) -> list[Annotation]:
    return parse_annotations_text(Path(path).read_text(encoding="utf-8"))


# -- images ---------------------------------------------------------------

class Screen(str, Enum):
    OK = "ok"
    BLACK = "black"
    MISSING = "missing"


def screen_image(img: Optional[np.ndarray], threshold: float = BLACK_THRESHOLD) -> Screen:
    if img is None:
        return Screen.MISSING
    if float(np.mean(img)) < threshold:
        return Screen.BLACK
    return Screen.OK


def write_pgm(path, img: np.ndarray):
    """Write a [0, 1] float image as 8-bit binary PGM."""
    data = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(buf[start:pos]))
    return tokens, pos + 1


def decode_pgm(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    """Decode binary PGM (8 or 16 bit) bytes, normalized to [0, 1]."""
    if buf[:2] != b"P5":
        raise ParseError(f"{name}: not a binary PGM")
    try:
        (w, h, maxval), offset = _pgm_tokens(buf, 3)
    except ValueError:
        raise ParseError(f"{name}: bad PGM header") from None
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(buf) - offset < n:
        raise ParseError(f"{name}: truncated PGM data")
    arr = np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset).reshape(h, w)
    return arr.astype(np.float64) / maxval


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes(), str(path))


def load_image(path) -> Optional[np.ndarray]:
    """Image or ``None`` when the file is absent or unreadable."""
    try:
        return read_pgm(path)
    except (OSError, ParseError):
        return None


# -- labeling -------------------------------------------------------------

def label_box(record: EventRecord, mode: str, h: ImageHeader) -> BBox:
    """Pixel-space label from the HEK box or the chain-code inscribed box."""
    if mode == "hek_box":
        return hpc_box_to_pixel(record.hpc_box, h)
    if mode == "chain_inscribed":
        if record.chain_code is None:
            raise ValidationError(f"record {record.event_id} has no chain code")
        poly = record.chain_code.map(lambda x, y: hpc_to_pixel(x, y, h))
        mask = rasterize(poly, h.width, h.height)
        return maximal_inscribed_box(mask)
    raise ValidationError(f"unknown label mode {mode!r}")


# -- event CSV ------------------------------------------------------------

def write_event_csv(path, records: Iterable[EventRecord]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_CSV_HEADER)
        for r in records:
            b = r.hpc_box
            w.writerow([r.event_id, r.event_type, r.source, format_time(r.start_time),
                        format_time(r.end_time), repr(b.x1), repr(b.y1), repr(b.x2), repr(b.y2)])


def read_event_csv(path, chain_dir=None) -> list[EventRecord]:
    """Parse an event CSV; chain codes come from ``<chain_dir>/<event_id>.chain`` when present."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVENT_CSV_HEADER:
            raise ParseError(f"unexpected header {header}", line=1)
        rows = list(enumerate(reader, start=2))
    chains: dict[str, dict] = {}
    out = []
    for lineno, row in rows:
        if not row:
            continue
        if len(row) != len(EVENT_CSV_HEADER):
            raise ParseError(f"expected {len(EVENT_CSV_HEADER)} fields", line=lineno)
        d = dict(zip(EVENT_CSV_HEADER, row))
        try:
            start, end = parse_time(d["start_time"]), parse_time(d["end_time"])
            box = BBox(*(float(d[k]) for k in ("x1", "y1", "x2", "y2")))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        chain = None
        if chain_dir is not None:
            if d["event_id"] not in chains:
                chains[d["event_id"]] = read_chain_file(Path(chain_dir) / f"{d['event_id']}.chain")
            chain = chains[d["event_id"]].get(start)
        try:
            out.append(EventRecord(d["event_id"], d["event_type"], d["source"], start, end, box, chain))
        except ValidationError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


def read_chain_file(path) -> dict:
    """``start_time,x1,y1,x2,y2,...`` lines -> ``{start_time: Polygon}``; missing file -> {}."""
    p = Path(path)
    if not p.exists():
        return {}
    out = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 7 or (len(parts) - 1) % 2:
            raise ParseError("expected a timestamp and at least 3 vertex pairs", line=lineno)
        try:
            coords = [float(v) for v in parts[1:]]
            poly = Polygon(tuple(zip(coords[::2], coords[1::2])))
            out[parse_time(parts[0])] = poly
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


def write_chain_file(path, chains: dict):
    lines = []
    for start, poly in chains.items():
        coords = ",".join(f"{x!r},{y!r}" for x, y in poly.vertices)
        lines.append(f"{format_time(start)},{coords}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


# -- sequences ------------------------------------------------------------

@dataclass
class Sequence:
    """Frames plus sparse annotations; ``truth`` holds dense labels when known."""

    frames: list
    annotations: dict
    meta: dict = field(default_factory=dict)
    truth: Optional[list] = None

    def __post_init__(self):
        n = len(self.frames)
        for i in self.annotations:
            if not 0 <= i < n:
                raise ValidationError(f"annotation index {i} outside {n} frames")
        if self.truth is not None and len(self.truth) != n:
            raise ValidationError("dense truth length must equal frame count")

    @property
    def name(self) -> str:
        return str(self.meta.get("event_id", "sequence"))

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def annotated_indices(self) -> list[int]:
        return sorted(self.annotations)

    def gt_box(self, i: int) -> Optional[BBox]:
        a = self.annotations.get(i)
        return None if a is None else a.bbox

    def training_pairs(self) -> list[tuple[int, int]]:
        """Consecutive annotated frame pairs."""
        idx = self.annotated_indices()
        return list(zip(idx[:-1], idx[1:]))


def header_to_dict(h: ImageHeader) -> dict:
    return {
        "cdelt1": h.cdelt1, "cdelt2": h.cdelt2, "crpix1": h.crpix1, "crpix2": h.crpix2,
        "rsun": h.rsun, "width": h.width, "height": h.height,
        "obs_time": None if h.obs_time is None else format_time(h.obs_time),
    }


def header_from_dict(d: dict) -> ImageHeader:
    t = d.get("obs_time")
    return ImageHeader(float(d["cdelt1"]), float(d["cdelt2"]), float(d["crpix1"]), float(d["crpix2"]),
                       float(d["rsun"]), int(d["width"]), int(d["height"]),
                       None if t is None else parse_time(t))


def write_sequence(directory, seq: Sequence):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_pgm(d / f"{i:06d}.pgm", frame)
    write_annotations(d / ANNOTATION_FILE, (seq.annotations[i] for i in seq.annotated_indices()))
    if seq.truth is not None:
        write_annotations(d / TRUTH_FILE, (Annotation.from_bbox(i, b) for i, b in enumerate(seq.truth)))
    meta = dict(seq.meta)
    if isinstance(meta.get("header"), ImageHeader):
        meta["header"] = header_to_dict(meta["header"])
    (d / META_FILE).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_sequence(directory) -> Sequence:
    d = Path(directory)
    frame_paths = sorted(d.glob("[0-9]" * 6 + ".pgm"))
    if not frame_paths:
        raise ValidationError(f"{d}: no frames")
    frames = [read_pgm(p) for p in frame_paths]
    anns = {a.frame_index: a for a in parse_annotations(d / ANNOTATION_FILE)}
    truth = None
    if (d / TRUTH_FILE).exists():
        dense = parse_annotations(d / TRUTH_FILE)
        truth = [a.bbox for a in sorted(dense, key=lambda a: a.frame_index)]
    meta = {}
    if (d / META_FILE).exists():
        meta = json.loads((d / META_FILE).read_text(encoding="utf-8"))
        if isinstance(meta.get("header"), dict):
            meta["header"] = header_from_dict(meta["header"])
    meta.setdefault("event_id", d.name)
    return Sequence(frames, anns, meta, truth)


def load_corpus(root) -> list[Sequence]:
    """Every event directory directly under ``root``, in name order."""
    dirs = sorted(p for p in Path(root).iterdir() if p.is_dir() and (p / ANNOTATION_FILE).exists())
    return [load_sequence(p) for p in dirs]
