"""Event-directory construction: query, limb filter, grouping, image matching, labeling."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .dataset import (
    Annotation,
    Screen,
    Sequence,
    dedupe_times,
    format_time,
    group_records,
    header_to_dict,
    label_box,
    sample_times,
    split_by_year,
    write_event_csv,
    write_sequence,
)
from .errors import SolarTrackError
from .ingest import HekQuery, IngestClient
from .solarcoord import box_within_limb

log = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


@dataclass
class BuildReport:
    kept: list = field(default_factory=list)
    dropped: dict = field(default_factory=dict)
    records_in: int = 0
    records_off_limb: int = 0
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kept": self.kept, "dropped": dict(sorted(self.dropped.items())),
            "records_in": self.records_in, "records_off_limb": self.records_off_limb,
            "train": self.train, "test": self.test,
        }


def build_dataset(client: IngestClient, queries: Iterable[HekQuery], out_dir,
                  label_mode: str = "hek_box") -> BuildReport:
    """Write one event directory per surviving track plus ``manifest.json``.

    Records whose HEK box leaves the solar limb are dropped first, then ids
    with fewer than three records, then events with any missing or black frame.
    Each record labels the frame at its start time.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = BuildReport()
    records = []
    for q in queries:
        records += client.query_events(q)
    report.records_in = len(records)
    write_event_csv(out / "events.csv", records)

    on_disk = []
    limb_dropped_ids = set()
    for r in records:
        h = client.fetch_header(r.start_time)
        if box_within_limb(r.hpc_box, h.rsun):
            on_disk.append(r)
        else:
            report.records_off_limb += 1
            limb_dropped_ids.add(r.event_id)
    surviving_ids = {r.event_id for r in on_disk}
    for eid in sorted(limb_dropped_ids - surviving_ids):
        report.dropped[eid] = "off_limb"

    tracks = group_records(on_disk)
    grouped = {t.event_id for t in tracks}
    for eid in sorted(surviving_ids - grouped):
        report.dropped[eid] = "too_few_records"

    for track in tracks:
        times = dedupe_times(t for r in track.records for t in sample_times(r.start_time, r.end_time))
        frames, bad = [], None
        for t in times:
            got = client.fetch_image(t)
            if got.status is not Screen.OK:
                bad = f"{got.status.value}_image"
                break
            frames.append(got.image)
        if bad is not None:
            report.dropped[track.event_id] = bad
            continue
        try:
            annotations = {}
            for r in track.records:
                idx = times.index(r.start_time)
                h = client.fetch_header(r.start_time)
                annotations[idx] = Annotation.from_bbox(idx, label_box(r, label_mode, h))
        except SolarTrackError as exc:
            report.dropped[track.event_id] = f"label_error: {exc}"
            continue
        header = client.fetch_header(track.start_time)
        meta = {
            "event_id": track.event_id, "event_type": track.event_type,
            "start_time": format_time(track.start_time), "label_mode": label_mode,
            "header": header_to_dict(header),
            "frame_times": [format_time(t) for t in times],
        }
        write_sequence(out / track.event_id, Sequence(frames, annotations, meta))
        report.kept.append(track.event_id)

    kept = [t for t in tracks if t.event_id in set(report.kept)]
    train, test = split_by_year(kept)
    report.train = [t.event_id for t in train]
    report.test = [t.event_id for t in test]
    (out / MANIFEST_FILE).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n",
                                     encoding="utf-8")
    log.info("built %d events, dropped %d", len(report.kept), len(report.dropped))
    return report
