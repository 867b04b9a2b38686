"""OGC WMS 1.3.0 client: capabilities parsing, GetMap URLs and budgeted tile fetches."""

from __future__ import annotations

import logging
import socket
import time
import urllib.error
import urllib.parse
import urllib.request
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .budget import RateBudget
from .errors import (
    CrsMismatch,
    CrsUnsupported,
    DecodeError,
    DimensionOutOfRange,
    FormatUnsupported,
    HttpError,
    LayerNotFound,
    NoLayers,
    NotACapabilitiesDocument,
    RetriesExceeded,
    WmsError,
    XmlMalformed,
)
from .geo import BoundingBox, GeoTransform
from .raster import RasterImage, decode_image

log = logging.getLogger(__name__)

WMS_VERSION = "1.3.0"
WMS_NS = "http://www.opengis.net/wms"
XLINK_NS = "http://www.w3.org/1999/xlink"
MAX_DIMENSION = 8192
USER_AGENT = "solaris-tiler/0.1"

# WMS 1.3.0 uses the CRS's own axis order in BBOX; geographic EPSG codes are lat/lon.
AXIS_ORDER = {
    "EPSG:4326": "yx",
    "EPSG:4258": "yx",
    "CRS:84": "xy",
    "EPSG:3857": "xy",
    "EPSG:28992": "xy",
    "EPSG:25831": "xy",
    "EPSG:25832": "xy",
    "EPSG:31370": "xy",
}

RETRY_STATUSES = frozenset({502, 503, 504})
DEFAULT_BACKOFF = (1.0, 2.0)  # sleeps before the 2nd and 3rd attempt

_RESERVED_KEYS = {
    "service", "version", "request", "layers", "crs", "srs", "bbox",
    "width", "height", "format", "styles", "time",
}


@dataclass(frozen=True)
class LayerInfo:
    layer_name: str
    title: str = ""
    crs_ids: tuple[str, ...] = ()
    bbox: Optional[BoundingBox] = None
    time_dimension: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class WmsEndpoint:
    name: str
    base_url: str
    layers: tuple[LayerInfo, ...]
    formats: tuple[str, ...]
    crs_ids: tuple[str, ...]
    version: str = WMS_VERSION
    monthly_budget: Optional[int] = None
    axis_order: Optional[str] = None  # "xy" | "yx"; None consults AXIS_ORDER

    def __post_init__(self):
        u = urllib.parse.urlsplit(self.base_url)
        if u.scheme not in ("http", "https") or not u.netloc:
            raise ValueError(f"base_url must be an absolute http(s) URL, got {self.base_url!r}")
        if not self.layers:
            raise NoLayers(f"endpoint {self.name!r} has no named layers")
        names = [l.layer_name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in endpoint {self.name!r}")
        if self.axis_order not in (None, "xy", "yx"):
            raise ValueError(f"axis_order must be 'xy' or 'yx', got {self.axis_order!r}")
        if self.monthly_budget is not None and self.monthly_budget <= 0:
            raise ValueError("monthly_budget must be positive")

    def layer(self, name: str) -> LayerInfo:
        for l in self.layers:
            if l.layer_name == name:
                return l
        raise LayerNotFound(f"layer {name!r} not offered by {self.name!r}")

    def axis_order_for(self, crs_id: str) -> str:
        return self.axis_order or AXIS_ORDER.get(crs_id.upper(), "xy")


@dataclass(frozen=True)
class GetMapRequest:
    layer_name: str
    crs_id: str
    bbox: BoundingBox
    width_px: int
    height_px: int
    format: str = "image/png"
    year: Optional[str] = None

    def __post_init__(self):
        for what, v in (("width_px", self.width_px), ("height_px", self.height_px)):
            if not 1 <= v <= MAX_DIMENSION:
                raise DimensionOutOfRange(f"{what}={v} outside 1..{MAX_DIMENSION}")
        if self.bbox.crs_id != self.crs_id:
            raise CrsMismatch(f"request CRS {self.crs_id} but bbox in {self.bbox.crs_id}")

    @property
    def geotransform(self) -> GeoTransform:
        return GeoTransform(self.bbox.min_x, self.bbox.max_y, self.bbox.width / self.width_px)


# capabilities


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child(el: ET.Element, name: str) -> Optional[ET.Element]:
    for c in el:
        if _local(c.tag) == name:
            return c
    return None


def _children(el: ET.Element, name: str) -> list[ET.Element]:
    return [c for c in el if _local(c.tag) == name]


def _text(el: Optional[ET.Element]) -> str:
    return (el.text or "").strip() if el is not None else ""


def _expand_time(values: str) -> tuple[str, ...]:
    out = []
    for item in values.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split("/")
        # "2012/2018/P1Y" style yearly ranges
        if len(parts) == 3 and parts[2].upper() == "P1Y" and parts[0].isdigit() and parts[1].isdigit():
            out.extend(str(y) for y in range(int(parts[0]), int(parts[1]) + 1))
        else:
            out.append(item)
    return tuple(out)


def _layer_bbox(el: ET.Element) -> Optional[BoundingBox]:
    for b in _children(el, "BoundingBox"):
        crs = b.get("CRS") or b.get("SRS")
        if not crs:
            continue
        try:
            v = [float(b.get(k)) for k in ("minx", "miny", "maxx", "maxy")]
            if AXIS_ORDER.get(crs.upper()) == "yx":
                v = [v[1], v[0], v[3], v[2]]
            return BoundingBox(*v, crs_id=crs)
        except (TypeError, ValueError):
            continue
    return None


def _walk_layers(el: ET.Element, inherited_crs: tuple[str, ...], inherited_time, out: list[LayerInfo]):
    own = tuple(_text(c) for c in _children(el, "CRS") + _children(el, "SRS") if _text(c))
    crs_ids = tuple(dict.fromkeys(inherited_crs + own))
    time_dim = inherited_time
    for d in _children(el, "Dimension") + _children(el, "Extent"):
        if (d.get("name") or "").lower() == "time":
            time_dim = _expand_time(_text(d)) or None
    name = _text(_child(el, "Name"))
    if name:
        out.append(
            LayerInfo(
                layer_name=name,
                title=_text(_child(el, "Title")),
                crs_ids=crs_ids,
                bbox=_layer_bbox(el),
                time_dimension=time_dim,
            )
        )
    for sub in _children(el, "Layer"):
        _walk_layers(sub, crs_ids, time_dim, out)


def parse_capabilities(
    xml_document: bytes,
    name: Optional[str] = None,
    base_url: Optional[str] = None,
    monthly_budget: Optional[int] = None,
    axis_order: Optional[str] = None,
) -> WmsEndpoint:
    """Parse a WMS 1.3.0 GetCapabilities document.

    Every named ``Layer`` becomes a :class:`LayerInfo`, with CRS lists and the
    time dimension inherited from parent layers. ``base_url`` defaults to the
    GetMap ``OnlineResource`` advertised in the document.
    """
    try:
        root = ET.fromstring(xml_document)
    except ET.ParseError as e:
        raise XmlMalformed(str(e)) from None
    if _local(root.tag) != "WMS_Capabilities":
        raise NotACapabilitiesDocument(f"root element is {_local(root.tag)!r}, expected 'WMS_Capabilities'")

    service = _child(root, "Service")
    capability = _child(root, "Capability")
    if capability is None:
        raise NoLayers("document has no Capability section")

    formats: list[str] = []
    href = None
    request = _child(capability, "Request")
    getmap = _child(request, "GetMap") if request is not None else None
    if getmap is not None:
        formats = [_text(f) for f in _children(getmap, "Format") if _text(f)]
        for res in getmap.iter():
            if _local(res.tag) == "OnlineResource" and res.get(f"{{{XLINK_NS}}}href"):
                href = res.get(f"{{{XLINK_NS}}}href")
                break

    layers: list[LayerInfo] = []
    for top in _children(capability, "Layer"):
        _walk_layers(top, (), None, layers)
    if not layers:
        raise NoLayers("capabilities advertise no named layers")

    url = base_url or href
    if not url:
        raise NotACapabilitiesDocument("no GetMap OnlineResource and no base_url given")
    crs_ids = tuple(dict.fromkeys(c for l in layers for c in l.crs_ids))
    return WmsEndpoint(
        name=name or _text(_child(service, "Title") if service is not None else None) or "wms",
        base_url=url,
        version=root.get("version", WMS_VERSION),
        layers=tuple(layers),
        formats=tuple(formats),
        crs_ids=crs_ids,
        monthly_budget=monthly_budget,
        axis_order=axis_order,
    )


def render_capabilities(ep: WmsEndpoint) -> bytes:
    """Serialize an endpoint back to a minimal capabilities document."""
    ET.register_namespace("", WMS_NS)
    ET.register_namespace("xlink", XLINK_NS)
    q = lambda t: f"{{{WMS_NS}}}{t}"  # noqa: E731
    root = ET.Element(q("WMS_Capabilities"), {"version": ep.version})
    service = ET.SubElement(root, q("Service"))
    ET.SubElement(service, q("Name")).text = "WMS"
    ET.SubElement(service, q("Title")).text = ep.name
    cap = ET.SubElement(root, q("Capability"))
    getmap = ET.SubElement(ET.SubElement(cap, q("Request")), q("GetMap"))
    for f in ep.formats:
        ET.SubElement(getmap, q("Format")).text = f
    get = ET.SubElement(ET.SubElement(ET.SubElement(getmap, q("DCPType")), q("HTTP")), q("Get"))
    ET.SubElement(get, q("OnlineResource"), {f"{{{XLINK_NS}}}href": ep.base_url})
    top = ET.SubElement(cap, q("Layer"))
    ET.SubElement(top, q("Title")).text = ep.name
    for layer in ep.layers:
        el = ET.SubElement(top, q("Layer"), {"queryable": "0"})
        ET.SubElement(el, q("Name")).text = layer.layer_name
        ET.SubElement(el, q("Title")).text = layer.title
        for crs in layer.crs_ids:
            ET.SubElement(el, q("CRS")).text = crs
        if layer.bbox is not None:
            b = layer.bbox
            v = [b.min_x, b.min_y, b.max_x, b.max_y]
            if AXIS_ORDER.get(b.crs_id.upper()) == "yx":
                v = [v[1], v[0], v[3], v[2]]
            attrs = dict(zip(("minx", "miny", "maxx", "maxy"), (repr(x) for x in v)))
            ET.SubElement(el, q("BoundingBox"), {"CRS": b.crs_id, **attrs})
        if layer.time_dimension:
            dim = ET.SubElement(el, q("Dimension"), {"name": "time", "units": "ISO8601"})
            dim.text = ",".join(layer.time_dimension)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


# GetMap


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def build_getmap_url(ep: WmsEndpoint, req: GetMapRequest) -> str:
    """Deterministic GetMap URL; the string doubles as the catalog's audit key."""
    layer = ep.layer(req.layer_name)
    if req.format not in ep.formats:
        raise FormatUnsupported(f"{req.format!r} not in {list(ep.formats)}")
    if req.crs_id not in layer.crs_ids and req.crs_id not in ep.crs_ids:
        raise CrsUnsupported(f"{req.crs_id!r} not offered for layer {req.layer_name!r}")
    b = req.bbox
    coords = (b.min_x, b.min_y, b.max_x, b.max_y)
    if ep.axis_order_for(req.crs_id) == "yx":
        coords = (b.min_y, b.min_x, b.max_y, b.max_x)
    params = [
        ("SERVICE", "WMS"),
        ("VERSION", WMS_VERSION),
        ("REQUEST", "GetMap"),
        ("LAYERS", req.layer_name),
        ("CRS", req.crs_id),
        ("BBOX", ",".join(_fmt(c) for c in coords)),
        ("WIDTH", str(req.width_px)),
        ("HEIGHT", str(req.height_px)),
        ("FORMAT", req.format),
        ("STYLES", ""),
    ]
    if req.year:
        params.append(("TIME", req.year))

    base, _, query = ep.base_url.partition("?")
    extra = [
        (k, v)
        for k, v in urllib.parse.parse_qsl(query, keep_blank_values=True)
        if k.lower() not in _RESERVED_KEYS
    ]
    enc = lambda s: urllib.parse.quote(s, safe=":/,")  # noqa: E731
    return base + "?" + "&".join(f"{enc(k)}={enc(v)}" for k, v in params + extra)


def capabilities_url(url: str) -> str:
    base, _, query = url.partition("?")
    kept = [(k, v) for k, v in urllib.parse.parse_qsl(query, keep_blank_values=True)
            if k.lower() not in ("service", "request", "version")]
    params = [("SERVICE", "WMS"), ("REQUEST", "GetCapabilities"), ("VERSION", WMS_VERSION)] + kept
    return base + "?" + urllib.parse.urlencode(params)


def _http_get(url: str, timeout: float) -> tuple[int, str, bytes]:
    req = urllib.request.Request(url, headers={"User-Agent": USER_AGENT})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.status, resp.headers.get("Content-Type", ""), resp.read()


def fetch_capabilities(url: str, name: Optional[str] = None, timeout: float = 30.0, **kw) -> WmsEndpoint:
    try:
        _, _, body = _http_get(capabilities_url(url), timeout)
    except urllib.error.HTTPError as e:
        raise HttpError(e.code, str(e.reason)) from None
    except (urllib.error.URLError, OSError) as e:
        raise WmsError(f"cannot reach {url}: {e}") from None
    return parse_capabilities(body, name=name, **kw)


def _service_exception_text(body: bytes) -> str:
    try:
        root = ET.fromstring(body)
    except ET.ParseError:
        return body[:200].decode("utf-8", "replace")
    msgs = [(" ".join(e.itertext())).strip() for e in root.iter() if _local(e.tag) == "ServiceException"]
    return "; ".join(m for m in msgs if m) or f"XML response with root {_local(root.tag)!r}"


def _is_timeout(e: BaseException) -> bool:
    if isinstance(e, (socket.timeout, TimeoutError)):
        return True
    return isinstance(e, urllib.error.URLError) and isinstance(e.reason, (socket.timeout, TimeoutError))


@dataclass
class FetchOutcome:
    image: RasterImage
    url: str
    attempts: int
    statuses: list = field(default_factory=list)


def fetch_tile_outcome(
    ep: WmsEndpoint,
    req: GetMapRequest,
    budget: RateBudget,
    timeout: float = 60.0,
    backoff: Sequence[float] = DEFAULT_BACKOFF,
    sleep: Callable[[float], None] = time.sleep,
    http_get: Callable[[str, float], tuple[int, str, bytes]] = _http_get,
    on_attempt: Optional[Callable[[], None]] = None,
) -> FetchOutcome:
    """Like :func:`fetch_tile` but also reports how many attempts were spent.

    ``on_attempt`` is called after each budget grant, including attempts that
    end in an exception.
    """
    url = build_getmap_url(ep, req)
    max_attempts = len(backoff) + 1
    statuses: list = []
    for attempt in range(1, max_attempts + 1):
        budget.acquire(1)
        if on_attempt is not None:
            on_attempt()
        try:
            status, ctype, body = http_get(url, timeout)
        except urllib.error.HTTPError as e:
            statuses.append(e.code)
            if e.code not in RETRY_STATUSES:
                detail = e.read()[:200].decode("utf-8", "replace") if e.fp else ""
                raise HttpError(e.code, detail or str(e.reason)) from None
        except Exception as e:
            if not _is_timeout(e):
                raise WmsError(f"GET {url} failed: {e}") from None
            statuses.append("timeout")
        else:
            statuses.append(status)
            if "xml" in ctype.lower() or body.lstrip()[:1] == b"<":
                raise DecodeError(f"WMS service exception: {_service_exception_text(body)}")
            img = decode_image(body, req.geotransform, req.crs_id)
            if (img.width, img.height) != (req.width_px, req.height_px):
                raise DecodeError(
                    f"server returned {img.width}x{img.height}, requested {req.width_px}x{req.height_px}"
                )
            return FetchOutcome(img, url, attempt, statuses)
        if attempt < max_attempts:
            log.info("transient failure %s on %s, retrying", statuses[-1], url)
            sleep(backoff[attempt - 1])
    raise RetriesExceeded(f"GET {url} failed {max_attempts} times: {statuses}")


def fetch_tile(ep: WmsEndpoint, req: GetMapRequest, budget: RateBudget, **kw) -> RasterImage:
    """Fetch one GetMap image, spending one budget unit per attempt.

    Timeouts and HTTP 502/503/504 are retried with exponential backoff; other
    HTTP errors raise :class:`HttpError` straight away.
    """
    return fetch_tile_outcome(ep, req, budget, **kw).image
