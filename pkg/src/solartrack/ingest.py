"""HEK event queries and Helioviewer image/header retrieval.

Two transports share one client: :class:`FixtureTransport` reads a directory
laid out as::

    fixtures/hek/<query-hash>.json
    fixtures/hv/<YYYYmmddTHHMMSS>.pgm
    fixtures/hv/<YYYYmmddTHHMMSS>.hdr      KEY=value header lines

and :class:`HttpTransport` talks to the live services. Payload parsing sits
in small versioned parser functions so a format change breaks only one.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import re
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .dataset import EventRecord, Screen, decode_pgm, format_time, parse_time, screen_image
from .errors import ParseError, TransportError, ValidationError
from .geometry import BBox, Polygon
from .solarcoord import ImageHeader

log = logging.getLogger(__name__)

DEFAULT_SOURCES = {"AR": "HMI", "CH": "SPOCA"}
HEK_PARSER_VERSION = "hek-json-1"
HEADER_PARSER_VERSION = "kv-header-1"
FIXTURE_TIME_FORMAT = "%Y%m%dT%H%M%S"
# small offline corpus shipped with the package
DEMO_FIXTURES = Path(__file__).resolve().parent / "fixtures" / "demo"


@dataclass(frozen=True)
class HekQuery:
    event_type: str
    start: datetime
    end: datetime
    source: Optional[str] = None
    page: int = 1

    def __post_init__(self):
        if self.event_type not in DEFAULT_SOURCES:
            raise ValidationError(f"unsupported event type {self.event_type!r}")
        if not self.start < self.end:
            raise ValidationError("query time range is empty")
        if self.source is None:
            object.__setattr__(self, "source", DEFAULT_SOURCES[self.event_type])
        if self.page < 1:
            raise ValidationError("page numbers start at 1")

    def with_page(self, page: int) -> "HekQuery":
        return HekQuery(self.event_type, self.start, self.end, self.source, page)

    def canonical(self) -> str:
        return "|".join([self.event_type, format_time(self.start), format_time(self.end),
                         str(self.source), str(self.page)])

    def fixture_key(self) -> str:
        return hashlib.sha1(self.canonical().encode("utf-8")).hexdigest()[:16]

    def params(self) -> dict:
        """Query-string parameters for the HEK search endpoint."""
        return {
            "cmd": "search", "type": "column", "event_type": self.event_type,
            "event_starttime": format_time(self.start), "event_endtime": format_time(self.end),
            "event_coordsys": "helioprojective", "x1": -1200, "x2": 1200, "y1": -1200, "y2": 1200,
            "cosec": 2, "page": self.page,
        }


@dataclass
class FetchPolicy:
    max_retries: int = 3
    backoff_base: float = 1.0
    rate_limit: float = 2.0
    fixture_dir: Optional[Path] = None
    image_tolerance_s: float = 600.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.rate_limit <= 0:
            raise ValidationError("rate_limit must be positive")


# -- parsers --------------------------------------------------------------

_WKT_POINT = re.compile(r"(-?[\d.eE+-]+)\s+(-?[\d.eE+-]+)")


def parse_wkt_polygon(text: str) -> list[tuple[float, float]]:
    if not text or "POLYGON" not in text.upper():
        raise ValueError(f"not a WKT polygon: {text!r}")
    body = text[text.index("((") + 2:text.rindex("))")]
    pts = [(float(a), float(b)) for a, b in _WKT_POINT.findall(body)]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    return pts


def _source_of(frm_name: str) -> str:
    up = frm_name.upper()
    if "HMI" in up:
        return "HMI"
    if "SPOCA" in up:
        return "SPOCA"
    return "other"


def parse_hek_payload(data: bytes) -> tuple[list[EventRecord], bool]:
    """Records of one HEK result page, plus whether more pages follow."""
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"HEK payload is not JSON: {exc}") from None
    if not isinstance(payload, dict) or "result" not in payload:
        raise ParseError("HEK payload has no 'result' list", field="result")
    out = []
    for raw in payload["result"]:
        def need(key):
            v = raw.get(key)
            if v in (None, ""):
                raise ParseError("missing value", field=key)
            return v

        event_id = raw.get("frm_specificid") or need("kb_archivid")
        try:
            start = parse_time(need("event_starttime"))
        except ValueError:
            raise ParseError("bad timestamp", field="event_starttime") from None
        try:
            end = parse_time(need("event_endtime"))
        except ValueError:
            raise ParseError("bad timestamp", field="event_endtime") from None
        try:
            pts = parse_wkt_polygon(need("hpc_bbox"))
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            box = BBox(min(xs), min(ys), max(xs), max(ys))
        except ValueError:
            raise ParseError("bad polygon", field="hpc_bbox") from None
        chain = None
        if raw.get("hpc_boundcc"):
            try:
                chain = Polygon(tuple(parse_wkt_polygon(raw["hpc_boundcc"])))
            except ValueError:
                raise ParseError("bad polygon", field="hpc_boundcc") from None
        try:
            rec = EventRecord(str(event_id), need("event_type"), _source_of(raw.get("frm_name", "")),
                              start, end, box, chain)
        except ValidationError as exc:
            raise ParseError(str(exc), field="event_type") from None
        out.append(rec)
    return out, bool(payload.get("overmax", False))


_HEADER_KEYS = {
    "cdelt1": ("CDELT1",), "cdelt2": ("CDELT2",), "crpix1": ("CRPIX1",), "crpix2": ("CRPIX2",),
    "rsun": ("RSUN_OBS", "RSUN"), "width": ("NAXIS1",), "height": ("NAXIS2",),
}


def _header_from_map(values: dict) -> ImageHeader:
    kw = {}
    for name, keys in _HEADER_KEYS.items():
        for k in keys:
            if k in values:
                try:
                    kw[name] = float(values[k]) if name not in ("width", "height") else int(float(values[k]))
                except ValueError:
                    raise ParseError(f"non-numeric value {values[k]!r}", field=k) from None
                break
        else:
            raise ParseError("missing header key", field=keys[0])
    obs = values.get("DATE-OBS") or values.get("DATE_OBS")
    try:
        kw["obs_time"] = parse_time(obs) if obs else None
        return ImageHeader(**kw)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def parse_header_text(text: str) -> ImageHeader:
    """``KEY=value`` lines (fixture ``.hdr`` files)."""
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ParseError(f"expected KEY=value, got {line!r}")
        values[key.strip().upper()] = val.strip().strip("'\"")
    return _header_from_map(values)


def format_header_text(h: ImageHeader) -> str:
    lines = [f"CDELT1={h.cdelt1!r}", f"CDELT2={h.cdelt2!r}", f"CRPIX1={h.crpix1!r}",
             f"CRPIX2={h.crpix2!r}", f"RSUN_OBS={h.rsun!r}", f"NAXIS1={h.width}", f"NAXIS2={h.height}"]
    if h.obs_time is not None:
        lines.append(f"DATE-OBS={format_time(h.obs_time)}")
    return "\n".join(lines) + "\n"


def parse_jp2_header_xml(text: str) -> ImageHeader:
    """Helioviewer ``getJP2Header`` XML: FITS keys as child elements."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"bad JP2 header XML: {exc}") from None
    values = {el.tag.upper(): (el.text or "").strip() for el in root.iter()}
    return _header_from_map(values)


def decode_image(data: bytes) -> np.ndarray:
    """PGM or (live mode) PNG bytes -> grayscale float image in [0, 1]."""
    if data[:2] == b"P5":
        return decode_pgm(data)
    from PIL import Image

    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


# -- transports -----------------------------------------------------------

class RateLimiter:
    """Minimum spacing between requests, shared across threads."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            now = self.clock()
            if self._next is not None and now < self._next:
                self.sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


class FixtureTransport:
    """Directory-backed stand-in for the live services; performs no network I/O."""

    def __init__(self, root):
        self.root = Path(root)

    def hek_page(self, query: HekQuery) -> bytes:
        path = self.root / "hek" / f"{query.fixture_key()}.json"
        if not path.exists():
            raise TransportError(f"no HEK fixture for query {query.canonical()} ({path.name})")
        return path.read_bytes()

    def _times(self) -> list[datetime]:
        out = []
        for p in sorted((self.root / "hv").glob("*.hdr")):
            try:
                out.append(datetime.strptime(p.stem, FIXTURE_TIME_FORMAT).replace(tzinfo=timezone.utc))
            except ValueError:
                continue
        return out

    def closest(self, t: datetime) -> Optional[datetime]:
        times = self._times()
        if not times:
            return None
        return min(times, key=lambda c: (abs((c - t).total_seconds()), c))

    def header_text(self, t: datetime) -> str:
        return (self.root / "hv" / f"{t.strftime(FIXTURE_TIME_FORMAT)}.hdr").read_text(encoding="utf-8")

    def image_bytes(self, t: datetime) -> Optional[bytes]:
        p = self.root / "hv" / f"{t.strftime(FIXTURE_TIME_FORMAT)}.pgm"
        return p.read_bytes() if p.exists() else None


@dataclass
class LiveConfig:
    hek_url: str = "https://www.lmsal.com/hek/her"
    helioviewer_url: str = "https://api.helioviewer.org/v2"
    source_id: int = 10
    timeout: float = 30.0

    @classmethod
    def from_file(cls, path) -> "LiveConfig":
        from .harness import parse_kv_text

        d = parse_kv_text(Path(path).read_text(encoding="utf-8"))
        kw = {}
        for k, v in d.items():
            if k not in cls.__dataclass_fields__:
                raise ValidationError(f"unknown live config key {k!r}")
            kw[k] = type(getattr(cls(), k))(v)
        return cls(**kw)


class HttpTransport:
    """Live HEK/Helioviewer access.

    ``get`` is the single network primitive; tests substitute a recording stub.
    """

    def __init__(self, config: Optional[LiveConfig] = None, policy: Optional[FetchPolicy] = None,
                 get: Optional[Callable[[str, dict], bytes]] = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.config = config or LiveConfig()
        self.policy = policy or FetchPolicy()
        self._get = get or self._urlopen
        self.limiter = RateLimiter(self.policy.rate_limit, clock, sleep)
        self.sleep = sleep
        self._closest_cache: dict = {}

    def _urlopen(self, url: str, params: dict) -> bytes:
        full = f"{url}?{urllib.parse.urlencode(params)}"
        with urllib.request.urlopen(full, timeout=self.config.timeout) as resp:
            return resp.read()

    def request(self, url: str, params: dict) -> bytes:
        last = None
        for attempt in range(self.policy.max_retries + 1):
            self.limiter.acquire()
            try:
                return self._get(url, params)
            except (OSError, urllib.error.URLError) as exc:
                last = exc
                log.warning("request to %s failed (attempt %d): %s", url, attempt + 1, exc)
                if attempt < self.policy.max_retries:
                    self.sleep(self.policy.backoff_base * 2 ** attempt)
        raise TransportError(f"{url}: {last}")

    def hek_page(self, query: HekQuery) -> bytes:
        return self.request(self.config.hek_url, query.params())

    def _closest_info(self, t: datetime) -> dict:
        key = format_time(t)
        if key not in self._closest_cache:
            data = self.request(f"{self.config.helioviewer_url}/getClosestImage/",
                                {"date": key + "Z", "sourceId": self.config.source_id})
            try:
                info = json.loads(data.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ParseError(f"getClosestImage payload: {exc}") from None
            self._closest_cache[key] = info
            if "date" in info:
                # the matched image is its own closest image
                self._closest_cache.setdefault(format_time(parse_time(info["date"])), info)
        return self._closest_cache[key]

    def closest(self, t: datetime) -> Optional[datetime]:
        info = self._closest_info(t)
        if "date" not in info:
            return None
        return parse_time(info["date"])

    def header_text(self, t: datetime) -> str:
        info = self._closest_info(t)
        return self.request(f"{self.config.helioviewer_url}/getJP2Header/", {"id": info["id"]}).decode("utf-8")

    def image_bytes(self, t: datetime) -> Optional[bytes]:
        return self.request(f"{self.config.helioviewer_url}/takeScreenshot/", {
            "date": format_time(t) + "Z", "imageScale": 2.4204409,
            "layers": f"[{self.config.source_id},1,100]", "x0": 0, "y0": 0,
            "width": 1024, "height": 1024, "display": "true",
        })


# -- client ---------------------------------------------------------------

@dataclass
class FetchedImage:
    image: Optional[np.ndarray]
    header: Optional[ImageHeader]
    status: Screen
    obs_time: Optional[datetime] = None


class IngestClient:
    """Event queries with pagination, closest-header lookup and screened images."""

    def __init__(self, transport, policy: Optional[FetchPolicy] = None, header_parser=None):
        self.transport = transport
        self.policy = policy or FetchPolicy()
        if header_parser is None:
            header_parser = parse_header_text if isinstance(transport, FixtureTransport) else parse_jp2_header_xml
        self.header_parser = header_parser
        self._headers: dict = {}

    @classmethod
    def from_fixtures(cls, root, policy: Optional[FetchPolicy] = None) -> "IngestClient":
        return cls(FixtureTransport(root), policy)

    def query_events(self, q: HekQuery) -> list[EventRecord]:
        out = []
        page = q
        while True:
            records, more = parse_hek_payload(self.transport.hek_page(page))
            out += [r for r in records if r.event_type == q.event_type and r.source == q.source]
            if not more or not records:
                return out
            page = page.with_page(page.page + 1)

    def fetch_header(self, t: datetime) -> ImageHeader:
        obs = self.transport.closest(t)
        if obs is None:
            raise TransportError(f"no image near {format_time(t)}")
        return self._header_at(obs)

    def _header_at(self, obs: datetime) -> ImageHeader:
        if obs not in self._headers:
            h = self.header_parser(self.transport.header_text(obs))
            if h.obs_time is None:
                h = ImageHeader(h.cdelt1, h.cdelt2, h.crpix1, h.crpix2, h.rsun, h.width, h.height, obs)
            self._headers[obs] = h
        return self._headers[obs]

    def fetch_image(self, t: datetime) -> FetchedImage:
        obs = self.transport.closest(t)
        if obs is None or abs((obs - t).total_seconds()) > self.policy.image_tolerance_s:
            return FetchedImage(None, None, Screen.MISSING)
        data = self.transport.image_bytes(obs)
        if data is None:
            return FetchedImage(None, None, Screen.MISSING, obs)
        try:
            img = decode_image(data)
        except (ParseError, OSError) as exc:
            log.warning("undecodable image at %s: %s", format_time(obs), exc)
            return FetchedImage(None, None, Screen.MISSING, obs)
        header = self._header_at(obs)
        return FetchedImage(img, header, screen_image(img), obs)
