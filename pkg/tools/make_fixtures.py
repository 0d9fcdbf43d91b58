"""Regenerate the bundled offline fixtures under src/solartrack/fixtures/demo.

Five events exercise every build-dataset filter:

    ar-good    3 records, on disk                 -> kept (train year)
    ar-short   2 records                          -> dropped, too few records
    ar-limb    3 records past the limb            -> dropped, off limb
    ch-good    3 records with chain codes         -> kept (test year)
    ch-black   3 records, one black frame         -> dropped, black image

The AR query result spans two HEK pages.
"""

import json
import shutil
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from solartrack.dataset import sample_times, write_pgm  # noqa: E402
from solartrack.ingest import FIXTURE_TIME_FORMAT, HekQuery, format_header_text  # noqa: E402
from solartrack.solarcoord import ImageHeader, hpc_to_pixel  # noqa: E402
from solartrack.synthgen import disk_background  # noqa: E402

OUT = ROOT / "src" / "solartrack" / "fixtures" / "demo"
SIZE = 64
CDELT = 38.4
CRPIX = 33.0
RSUN = 960.0
REPORT = timedelta(hours=4)

AR_QUERY = HekQuery("AR", datetime(2014, 1, 1, tzinfo=timezone.utc), datetime(2014, 2, 1, tzinfo=timezone.utc))
CH_QUERY = HekQuery("CH", datetime(2018, 1, 1, tzinfo=timezone.utc), datetime(2018, 2, 1, tzinfo=timezone.utc))


def wkt(points):
    pts = list(points) + [points[0]]
    return "POLYGON((" + ",".join(f"{x:g} {y:g}" for x, y in pts) + "))"


def box_wkt(x1, y1, x2, y2):
    return wkt([(x1, y1), (x2, y1), (x2, y2), (x1, y2)])


def records(event_id, etype, frm, t0, boxes, chains=None):
    out = []
    for k, box in enumerate(boxes):
        start = t0 + k * REPORT
        rec = {
            "frm_specificid": event_id, "event_type": etype, "frm_name": frm,
            "event_starttime": start.strftime("%Y-%m-%dT%H:%M:%S"),
            "event_endtime": (start + REPORT).strftime("%Y-%m-%dT%H:%M:%S"),
            "hpc_bbox": box_wkt(*box),
        }
        if chains is not None:
            rec["hpc_boundcc"] = wkt(chains[k])
        out.append(rec)
    return out


def shifted(box, dx):
    return (box[0] + dx, box[1], box[2] + dx, box[3])


def main():
    if OUT.exists():
        shutil.rmtree(OUT)
    (OUT / "hek").mkdir(parents=True)
    (OUT / "hv").mkdir(parents=True)

    t_ar = datetime(2014, 1, 10, tzinfo=timezone.utc)
    t_short = datetime(2014, 1, 12, tzinfo=timezone.utc)
    t_limb = datetime(2014, 1, 14, tzinfo=timezone.utc)
    t_ch = datetime(2018, 1, 5, tzinfo=timezone.utc)
    t_black = datetime(2018, 1, 8, tzinfo=timezone.utc)

    ar_box = (-230.0, -115.0, 115.0, 150.0)
    ar_good = records("ar-good", "AR", "HMI SHARP", t_ar, [shifted(ar_box, 60 * k) for k in range(3)])
    ar_short = records("ar-short", "AR", "HMI SHARP", t_short, [(100.0, 100.0, 400.0, 300.0)] * 2)
    ar_limb = records("ar-limb", "AR", "HMI SHARP", t_limb, [(900.0, -100.0, 1150.0, 150.0)] * 3)

    ch_box = (-300.0, -340.0, 60.0, 20.0)
    # L-shaped outline: the inscribed box is smaller than the HEK box
    ch_chain = [[(x1, y1), (x2, y1), (x2, (y1 + y2) / 2), ((x1 + x2) / 2, (y1 + y2) / 2), ((x1 + x2) / 2, y2), (x1, y2)]
                for x1, y1, x2, y2 in (shifted(ch_box, 50 * k) for k in range(3))]
    ch_good = records("ch-good", "CH", "SPoCA", t_ch, [shifted(ch_box, 50 * k) for k in range(3)], ch_chain)
    ch_black = records("ch-black", "CH", "SPoCA", t_black, [(-100.0, 100.0, 200.0, 350.0)] * 3,
                       [[(-100.0, 100.0), (200.0, 100.0), (200.0, 350.0), (-100.0, 350.0)]] * 3)

    pages = {
        AR_QUERY: {"result": ar_good[:2] + ar_short, "overmax": True},
        AR_QUERY.with_page(2): {"result": ar_limb + ar_good[2:], "overmax": False},
        CH_QUERY: {"result": ch_good + ch_black, "overmax": False},
    }
    for q, payload in pages.items():
        (OUT / "hek" / f"{q.fixture_key()}.json").write_text(json.dumps(payload, indent=1) + "\n")

    bg = disk_background(SIZE, RSUN / CDELT)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE] + 0.5
    black_done = False
    for rec in ar_good + ar_short + ar_limb + ch_good + ch_black:
        start = datetime.fromisoformat(rec["event_starttime"]).replace(tzinfo=timezone.utc)
        end = datetime.fromisoformat(rec["event_endtime"]).replace(tzinfo=timezone.utc)
        xs_ys = [tuple(map(float, p.split())) for p in rec["hpc_bbox"][9:-2].split(",")]
        cx = np.mean([p[0] for p in xs_ys[:4]])
        cy = np.mean([p[1] for p in xs_ys[:4]])
        for t in sample_times(start, end):
            stem = t.strftime(FIXTURE_TIME_FORMAT)
            h = ImageHeader(CDELT, CDELT, CRPIX, CRPIX, RSUN, SIZE, SIZE, t)
            (OUT / "hv" / f"{stem}.hdr").write_text(format_header_text(h))
            px, py = hpc_to_pixel(cx, cy, h)
            g = np.exp(-0.5 * (((xx - px) / 3.0) ** 2 + ((yy - py) / 2.5) ** 2))
            img = bg + 0.4 * g if rec["event_type"] == "AR" else bg * (1 - 0.7 * g)
            if rec["frm_specificid"] == "ch-black" and t > start and not black_done:
                img = np.zeros_like(img)
                black_done = True
            write_pgm(OUT / "hv" / f"{stem}.pgm", np.clip(img, 0, 1))
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
