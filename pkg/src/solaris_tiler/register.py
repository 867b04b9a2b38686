"""Building footprints, solar-panel register records, linkage and tile labels.

Register data is incomplete, so a tile with buildings but no linked panel is
``unlabeled`` rather than a negative example.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .errors import CrsMismatch, EmptyInput, InvalidGeometry, MissingId, ParseError, UnsupportedGeometry
from .geo import Point, Polygon, Tile, check_same_crs, point_in_polygon, polygon_intersects_bbox

PANEL_FIELDS = (
    "record_id",
    "postcode",
    "house_number",
    "building_object_id",
    "x",
    "y",
    "install_date",
    "capacity_kw",
    "placement",
)


class Placement(str, enum.Enum):
    rooftop = "rooftop"
    open_area = "open_area"


class Label(str, enum.Enum):
    positive = "positive"
    unlabeled = "unlabeled"
    no_building = "no_building"


@dataclass(frozen=True)
class BuildingPolygon:
    building_id: str
    footprint: Polygon
    status: Optional[str] = None
    purpose: Optional[str] = None
    year_built: Optional[int] = None


@dataclass(frozen=True)
class PanelRecord:
    record_id: str
    postcode: Optional[str] = None
    house_number: Optional[str] = None
    building_object_id: Optional[str] = None
    location: Optional[Point] = None
    install_date: Optional[dt.date] = None
    capacity_kw: Optional[float] = None
    placement: Optional[Placement] = None

    @property
    def address(self) -> Optional[tuple[str, str]]:
        if self.postcode and self.house_number:
            return (self.postcode, self.house_number)
        return None


@dataclass(frozen=True)
class AddressPoint:
    postcode: str
    house_number: str
    location: Point


@dataclass(frozen=True)
class Reject:
    record_id: str
    reason: str


@dataclass
class PanelLoad:
    records: list[PanelRecord]
    rejects: list[Reject]


@dataclass
class Linkage:
    links: dict[str, str] = field(default_factory=dict)  # panel id -> building id
    unresolved: list[str] = field(default_factory=list)
    via: dict[str, str] = field(default_factory=dict)  # panel id -> "building_object_id" | "address" | "location"

    def panels_by_building(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for pid, bid in self.links.items():
            out[bid].append(pid)
        return {k: sorted(v) for k, v in out.items()}


@dataclass(frozen=True)
class TileAnnotation:
    tile_id: str
    building_ids: tuple[str, ...]
    linked_panel_ids: tuple[str, ...]
    label: Label

    def to_dict(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "building_ids": list(self.building_ids),
            "linked_panel_ids": list(self.linked_panel_ids),
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TileAnnotation":
        return cls(d["tile_id"], tuple(d["building_ids"]), tuple(d["linked_panel_ids"]), Label(d["label"]))


# loading


def _feature_id(feature: Mapping, props: Mapping) -> Optional[str]:
    for v in (feature.get("id"), props.get("building_id"), props.get("id")):
        if v is not None and str(v) != "":
            return str(v)
    return None


def _opt_int(v) -> Optional[int]:
    if v is None or v == "":
        return None
    try:
        return int(v)
    except (TypeError, ValueError):
        return None


def polygon_from_coords(coords: Sequence) -> Polygon:
    if not coords:
        raise InvalidGeometry("polygon has no rings")
    return Polygon(coords[0], tuple(coords[1:]))


def polygon_from_geojson(obj: Mapping) -> Polygon:
    """First polygon in a GeoJSON geometry, Feature or FeatureCollection."""
    kind = obj.get("type")
    if kind == "FeatureCollection":
        feats = obj.get("features") or []
        if not feats:
            raise ParseError("FeatureCollection is empty")
        return polygon_from_geojson(feats[0])
    if kind == "Feature":
        return polygon_from_geojson(obj.get("geometry") or {})
    try:
        if kind == "Polygon":
            return polygon_from_coords(obj["coordinates"])
        if kind == "MultiPolygon":
            return polygon_from_coords(obj["coordinates"][0])
    except (KeyError, IndexError, TypeError, InvalidGeometry) as e:
        raise ParseError(f"bad polygon geometry: {e}") from None
    raise UnsupportedGeometry(f"expected a Polygon, got {kind!r}")


def load_buildings(geojson_bytes: bytes) -> list[BuildingPolygon]:
    """Read a GeoJSON FeatureCollection of building footprints.

    MultiPolygon features become one building per part, with ids suffixed
    ``#0``, ``#1``, ... Coordinates are taken as-is in the run's CRS.
    """
    try:
        doc = json.loads(geojson_bytes)
    except (ValueError, UnicodeDecodeError) as e:
        raise ParseError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("expected a GeoJSON FeatureCollection")

    out: list[BuildingPolygon] = []
    seen: set[str] = set()
    for i, feat in enumerate(doc.get("features") or []):
        props = feat.get("properties") or {}
        fid = _feature_id(feat, props)
        if fid is None:
            raise MissingId(f"feature {i} has no id or building_id")
        geom = feat.get("geometry") or {}
        kind = geom.get("type")
        try:
            if kind == "Polygon":
                parts = [(fid, polygon_from_coords(geom["coordinates"]))]
            elif kind == "MultiPolygon":
                parts = [(f"{fid}#{j}", polygon_from_coords(c)) for j, c in enumerate(geom["coordinates"])]
            else:
                raise UnsupportedGeometry(f"feature {i} ({fid}): unsupported geometry {kind!r}")
        except (KeyError, TypeError, IndexError, InvalidGeometry) as e:
            raise ParseError(f"feature {i} ({fid}): bad geometry: {e}") from None
        for bid, poly in parts:
            if bid in seen:
                raise ParseError(f"feature {i}: duplicate building id {bid!r}")
            seen.add(bid)
            out.append(
                BuildingPolygon(
                    building_id=bid,
                    footprint=poly,
                    status=props.get("status"),
                    purpose=props.get("purpose"),
                    year_built=_opt_int(props.get("year_built")),
                )
            )
    return out


def _read_csv(data: bytes) -> tuple[list[str], list[list[str]]]:
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise ParseError(f"input is not UTF-8: {e}") from None
    try:
        rows = list(csv.reader(io.StringIO(text, newline=""), strict=True))
    except csv.Error as e:
        raise ParseError(f"malformed CSV: {e}") from None
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise EmptyInput("CSV has no header")
    return [h.strip() for h in rows[0]], rows[1:]


def _panel_from_row(rid: str, get, cutoff: Optional[dt.date]) -> PanelRecord | Reject:
    loc = None
    xs, ys = get("x"), get("y")
    if xs or ys:
        try:
            loc = (float(xs), float(ys))
        except (TypeError, ValueError):
            return Reject(rid, "location is not numeric")
        if not all(math.isfinite(v) for v in loc):
            return Reject(rid, "location is not numeric")

    cap = None
    if get("capacity_kw"):
        try:
            cap = float(get("capacity_kw"))
        except ValueError:
            return Reject(rid, "capacity_kw is not a number")
        if not cap > 0 or not math.isfinite(cap):
            return Reject(rid, "capacity_kw must be positive")

    date = None
    if get("install_date"):
        try:
            date = dt.date.fromisoformat(get("install_date"))
        except ValueError:
            return Reject(rid, "install_date is not an ISO-8601 date")
        if cutoff is not None and date > cutoff:
            return Reject(rid, f"install_date after cutoff {cutoff.isoformat()}")

    placement = None
    if get("placement"):
        raw = get("placement").lower().replace(" ", "_")
        try:
            placement = Placement(raw)
        except ValueError:
            return Reject(rid, "placement must be rooftop or open_area")

    rec = PanelRecord(
        record_id=rid,
        postcode=get("postcode") or None,
        house_number=get("house_number") or None,
        building_object_id=get("building_object_id") or None,
        location=loc,
        install_date=date,
        capacity_kw=cap,
        placement=placement,
    )
    if rec.building_object_id is None and rec.address is None and rec.location is None:
        return Reject(rid, "no linkage key")
    return rec


def load_panels(
    csv_bytes: bytes,
    schema_map: Optional[Mapping[str, str]] = None,
    cutoff: Optional[dt.date] = None,
) -> PanelLoad:
    """Parse a register extract.

    ``schema_map`` maps PanelRecord field names (``record_id``, ``postcode``,
    ``house_number``, ``building_object_id``, ``x``, ``y``, ``install_date``,
    ``capacity_kw``, ``placement``) to CSV column names; unmapped fields look for
    a column of the same name. Invalid rows land in ``rejects``.
    """
    schema_map = dict(schema_map or {})
    unknown = set(schema_map) - set(PANEL_FIELDS)
    if unknown:
        raise ParseError(f"schema_map has unknown fields {sorted(unknown)}")
    header, rows = _read_csv(csv_bytes)
    if not rows:
        raise EmptyInput("CSV has a header but no records")
    index = {name: i for i, name in enumerate(header)}
    cols: dict[str, Optional[int]] = {}
    for f in PANEL_FIELDS:
        col = schema_map.get(f, f)
        if col not in index and f in schema_map:
            raise ParseError(f"column {col!r} (for {f}) not in header {header}")
        cols[f] = index.get(col)

    records: list[PanelRecord] = []
    rejects: list[Reject] = []
    seen: set[str] = set()
    for n, row in enumerate(rows, start=1):
        def get(f, row=row):
            i = cols[f]
            return row[i].strip() if i is not None and i < len(row) else ""

        rid = get("record_id") if cols["record_id"] is not None else f"row-{n}"
        if len(row) != len(header):
            rejects.append(Reject(rid or f"row-{n}", f"expected {len(header)} fields, got {len(row)}"))
            continue
        if not rid:
            rejects.append(Reject(f"row-{n}", "missing record_id"))
            continue
        if rid in seen:
            rejects.append(Reject(rid, "duplicate record_id"))
            continue
        result = _panel_from_row(rid, get, cutoff)
        if isinstance(result, Reject):
            rejects.append(result)
        else:
            seen.add(rid)
            records.append(result)
    return PanelLoad(records, rejects)


def load_addresses(csv_bytes: bytes) -> list[AddressPoint]:
    """CSV with columns ``postcode, house_number, x, y``."""
    header, rows = _read_csv(csv_bytes)
    need = ("postcode", "house_number", "x", "y")
    missing = [c for c in need if c not in header]
    if missing:
        raise ParseError(f"address CSV lacks columns {missing}")
    idx = [header.index(c) for c in need]
    out: dict[tuple[str, str], AddressPoint] = {}
    for n, row in enumerate(rows, start=1):
        try:
            pc, hn, x, y = (row[i].strip() for i in idx)
            pt = AddressPoint(pc, hn, (float(x), float(y)))
        except (IndexError, ValueError):
            raise ParseError(f"address row {n} is malformed: {row}") from None
        if (pc, hn) in out:
            raise ParseError(f"duplicate address {pc} {hn} at row {n}")
        out[(pc, hn)] = pt
    return list(out.values())


def rejects_jsonl(rejects: Iterable[Reject]) -> bytes:
    return b"".join(
        json.dumps({"record_id": r.record_id, "reason": r.reason}).encode() + b"\n" for r in rejects
    )


# linkage


class _BuildingIndex:
    """Uniform grid over building envelopes; lookups return candidates sorted by id."""

    def __init__(self, buildings: Sequence[BuildingPolygon], cell: float = 100.0):
        self.cell = cell
        self.buildings = sorted(buildings, key=lambda b: b.building_id)
        self._grid: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, b in enumerate(self.buildings):
            x0, y0, x1, y1 = b.footprint.envelope
            for gx in range(math.floor(x0 / cell), math.floor(x1 / cell) + 1):
                for gy in range(math.floor(y0 / cell), math.floor(y1 / cell) + 1):
                    self._grid[(gx, gy)].append(i)

    def candidates(self, x0: float, y0: float, x1: float, y1: float) -> list[BuildingPolygon]:
        c = self.cell
        hits: set[int] = set()
        for gx in range(math.floor(x0 / c), math.floor(x1 / c) + 1):
            for gy in range(math.floor(y0 / c), math.floor(y1 / c) + 1):
                hits.update(self._grid.get((gx, gy), ()))
        return [self.buildings[i] for i in sorted(hits)]

    def containing(self, p: Point) -> Optional[BuildingPolygon]:
        for b in self.candidates(p[0], p[1], p[0], p[1]):
            if point_in_polygon(p, b.footprint):
                return b
        return None


def link_panels(
    panels: Sequence[PanelRecord],
    buildings: Sequence[BuildingPolygon],
    addresses: Sequence[AddressPoint] = (),
) -> Linkage:
    """Attach each panel to at most one building.

    Tried in order: exact ``building_object_id`` (or the lowest ``id#k`` part of
    a split multipolygon), the address point's containing footprint, then the
    panel's own location. Overlapping footprints resolve to the smallest id.
    """
    index = _BuildingIndex(buildings)
    by_id = {b.building_id: b for b in buildings}
    parts: dict[str, str] = {}
    for bid in sorted(by_id, reverse=True):
        if "#" in bid:
            parts[bid.rsplit("#", 1)[0]] = bid
    addr = {(a.postcode, a.house_number): a.location for a in addresses}

    out = Linkage()
    for p in sorted(panels, key=lambda r: r.record_id):
        hit, how = None, None
        if p.building_object_id:
            hit = p.building_object_id if p.building_object_id in by_id else parts.get(p.building_object_id)
            how = "building_object_id"
        if hit is None and p.address in addr:
            b = index.containing(addr[p.address])
            hit, how = (b.building_id if b else None), "address"
        if hit is None and p.location is not None:
            b = index.containing(p.location)
            hit, how = (b.building_id if b else None), "location"
        if hit is None:
            out.unresolved.append(p.record_id)
        else:
            out.links[p.record_id] = hit
            out.via[p.record_id] = how
    return out


def label_tiles(
    tiles: Sequence[Tile],
    buildings: Sequence[BuildingPolygon],
    linkage: Linkage,
    crs_id: Optional[str] = None,
) -> list[TileAnnotation]:
    """Annotate each tile with the footprints it touches and their linked panels."""
    if tiles:
        grid_crs = check_same_crs(*(t.bbox.crs_id for t in tiles))
        if crs_id is not None and crs_id != grid_crs:
            raise CrsMismatch(f"tiles are in {grid_crs}, buildings in {crs_id}")
    index = _BuildingIndex(buildings)
    panels_of = linkage.panels_by_building()
    out = []
    for t in tiles:
        b = t.bbox
        ids = tuple(
            bp.building_id
            for bp in index.candidates(b.min_x, b.min_y, b.max_x, b.max_y)
            if polygon_intersects_bbox(bp.footprint, b)
        )
        linked = tuple(sorted(pid for bid in ids for pid in panels_of.get(bid, ())))
        if not ids:
            label = Label.no_building
        elif linked:
            label = Label.positive
        else:
            label = Label.unlabeled
        out.append(TileAnnotation(t.tile_id, ids, linked, label))
    return out
