"""Planar geometry: bounding boxes, tile grids, north-up geotransforms, polygons.

All coordinates are projected metres in a single opaque CRS. Nothing here does
I/O or reprojection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import CrsMismatch, EmptyExtent, InvalidGeometry, ResolutionMismatch

Point = tuple[float, float]
Ring = tuple[Point, ...]

# Tolerance (in pixels) when deciding that a coordinate falls on a pixel edge.
PIXEL_SNAP_TOL = 1e-6


@dataclass(frozen=True)
class BoundingBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float
    crs_id: str

    def __post_init__(self):
        if not self.crs_id:
            raise InvalidGeometry("crs_id must be non-empty")
        vals = (self.min_x, self.min_y, self.max_x, self.max_y)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometry(f"non-finite bbox coordinate in {vals}")
        if not (self.max_x > self.min_x and self.max_y > self.min_y):
            raise EmptyExtent(f"degenerate bbox {vals}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersects(self, other: "BoundingBox") -> bool:
        return not (
            other.min_x > self.max_x
            or other.max_x < self.min_x
            or other.min_y > self.max_y
            or other.max_y < self.min_y
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.min_x, self.min_y, self.max_x, self.max_y)


@dataclass(frozen=True)
class TileGridSpec:
    """Grid anchored at its north-west corner, extending east and south."""

    origin_x: float
    origin_y: float
    tile_px: int
    resolution: float

    def __post_init__(self):
        if not isinstance(self.tile_px, int) or self.tile_px <= 0:
            raise InvalidGeometry(f"tile_px must be a positive integer, got {self.tile_px!r}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise InvalidGeometry(f"resolution must be positive, got {self.resolution!r}")

    @classmethod
    def anchored_at(cls, bbox: BoundingBox, tile_px: int, resolution: float) -> "TileGridSpec":
        return cls(bbox.min_x, bbox.max_y, tile_px, resolution)

    @property
    def tile_size_m(self) -> float:
        return self.tile_px * self.resolution


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine transform with square pixels.

    ``origin_x``/``origin_y`` are the west and north edges of pixel (0, 0).
    """

    origin_x: float
    origin_y: float
    pixel_size: float

    def __post_init__(self):
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise InvalidGeometry(f"pixel_size must be positive, got {self.pixel_size!r}")


@dataclass(frozen=True)
class Tile:
    col: int
    row: int
    bbox: BoundingBox
    width_px: int
    height_px: int
    tile_id: str
    resolution: float

    @property
    def geotransform(self) -> GeoTransform:
        return GeoTransform(self.bbox.min_x, self.bbox.max_y, self.resolution)


def _clean_ring(coords: Iterable[Sequence[float]]) -> Ring:
    ring = tuple((float(p[0]), float(p[1])) for p in coords)
    if len(ring) > 1 and ring[0] == ring[-1]:
        ring = ring[:-1]
    if len(set(ring)) < 3:
        raise InvalidGeometry(f"ring needs at least 3 distinct vertices, got {len(set(ring))}")
    if ring_area(ring) == 0:
        raise InvalidGeometry("ring has zero area")
    return ring


def ring_area(ring: Sequence[Point]) -> float:
    """Signed shoelace area; positive for counter-clockwise rings."""
    s = 0.0
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return s / 2.0


@dataclass(frozen=True)
class Polygon:
    """Exterior ring plus optional holes. Rings are implicitly closed."""

    exterior: Ring
    holes: tuple[Ring, ...] = ()
    envelope: tuple[float, float, float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "exterior", _clean_ring(self.exterior))
        object.__setattr__(self, "holes", tuple(_clean_ring(h) for h in self.holes))
        xs = [p[0] for p in self.exterior]
        ys = [p[1] for p in self.exterior]
        object.__setattr__(self, "envelope", (min(xs), min(ys), max(xs), max(ys)))

    @classmethod
    def from_bbox(cls, bbox: BoundingBox) -> "Polygon":
        return cls(
            (
                (bbox.min_x, bbox.min_y),
                (bbox.max_x, bbox.min_y),
                (bbox.max_x, bbox.max_y),
                (bbox.min_x, bbox.max_y),
            )
        )

    @property
    def rings(self) -> tuple[Ring, ...]:
        return (self.exterior, *self.holes)

    @property
    def area(self) -> float:
        return abs(ring_area(self.exterior)) - sum(abs(ring_area(h)) for h in self.holes)


def tile_id_for(spec: TileGridSpec, crs_id: str, col: int, row: int) -> str:
    return (
        f"{crs_id}_{spec.origin_x:.3f}_{spec.origin_y:.3f}_{spec.resolution:.3f}"
        f"_{spec.tile_px}_c{col}r{row}"
    )


def _whole_pixels(distance: float, resolution: float, what: str) -> int:
    px = distance / resolution
    n = round(px)
    if abs(px - n) > PIXEL_SNAP_TOL:
        raise ResolutionMismatch(f"{what} ({distance} m) is not a whole number of {resolution} m pixels")
    return n


def make_tile_grid(bbox: BoundingBox, spec: TileGridSpec) -> list[Tile]:
    """Partition ``bbox`` into tiles of ``spec.tile_px`` pixels, row-major from the north-west.

    Tiles on the east and south edges are clipped to the box, never padded.
    ``col``/``row`` count from the grid origin, which must lie on or north-west
    of the box with the box edges on whole-pixel offsets from it.
    """
    res = spec.resolution
    if bbox.min_x < spec.origin_x or bbox.max_y > spec.origin_y:
        raise EmptyExtent("bbox extends west or north of the grid origin")
    px0 = _whole_pixels(bbox.min_x - spec.origin_x, res, "bbox west offset")
    px1 = _whole_pixels(bbox.max_x - spec.origin_x, res, "bbox east offset")
    py0 = _whole_pixels(spec.origin_y - bbox.max_y, res, "bbox north offset")
    py1 = _whole_pixels(spec.origin_y - bbox.min_y, res, "bbox south offset")
    if px1 <= px0 or py1 <= py0:
        raise EmptyExtent("bbox is smaller than one pixel")

    def x_at(px: int) -> float:
        if px == px0:
            return bbox.min_x
        if px == px1:
            return bbox.max_x
        return spec.origin_x + px * res

    def y_at(py: int) -> float:
        if py == py0:
            return bbox.max_y
        if py == py1:
            return bbox.min_y
        return spec.origin_y - py * res

    t = spec.tile_px
    tiles = []
    for row in range(py0 // t, (py1 - 1) // t + 1):
        top, bottom = max(row * t, py0), min((row + 1) * t, py1)
        for col in range(px0 // t, (px1 - 1) // t + 1):
            left, right = max(col * t, px0), min((col + 1) * t, px1)
            tiles.append(
                Tile(
                    col=col,
                    row=row,
                    bbox=BoundingBox(x_at(left), y_at(bottom), x_at(right), y_at(top), bbox.crs_id),
                    width_px=right - left,
                    height_px=bottom - top,
                    tile_id=tile_id_for(spec, bbox.crs_id, col, row),
                    resolution=res,
                )
            )
    return tiles


def world_to_pixel(gt: GeoTransform, x: float, y: float) -> tuple[int, int]:
    col = math.floor((x - gt.origin_x) / gt.pixel_size)
    row = math.floor((gt.origin_y - y) / gt.pixel_size)
    return col, row


def pixel_to_world(gt: GeoTransform, col: int, row: int) -> tuple[float, float]:
    """World coordinates of the pixel centre."""
    # raster.rasterize_polygons repeats these exact expressions; keep them in sync
    return gt.origin_x + (col + 0.5) * gt.pixel_size, gt.origin_y - (row + 0.5) * gt.pixel_size


def _ring_crossings(x: float, y: float, ring: Ring) -> int:
    n = 0
    x1, y1 = ring[-1]
    for x2, y2 in ring:
        # half-open in y: an edge counts when y is in (min, max]
        if (y1 >= y) != (y2 >= y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                n += 1
        x1, y1 = x2, y2
    return n


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    """Even-odd test over all rings.

    Points on a north or west edge count as inside, points on a south or east
    edge as outside, so polygons sharing an edge never both claim a point.
    """
    x, y = p
    e = poly.envelope
    # exact shortcut: no edge can cross a scanline outside the y-extent
    if y < e[1] or y > e[3]:
        return False
    return sum(_ring_crossings(x, y, r) for r in poly.rings) % 2 == 1


def _segment_hits_box(x1, y1, x2, y2, bx0, by0, bx1, by1) -> bool:
    # Liang-Barsky clip against a closed box
    t0, t1 = 0.0, 1.0
    dx, dy = x2 - x1, y2 - y1
    for p, q in ((-dx, x1 - bx0), (dx, bx1 - x1), (-dy, y1 - by0), (dy, by1 - y1)):
        if p == 0:
            if q < 0:
                return False
        else:
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
            if t0 > t1:
                return False
    return True


def _exterior_contains(x: float, y: float, poly: Polygon) -> bool:
    return _ring_crossings(x, y, poly.exterior) % 2 == 1


def polygon_intersects_bbox(poly: Polygon, bbox: BoundingBox) -> bool:
    """True if the exterior ring touches, crosses, contains or lies inside ``bbox``.

    Holes are ignored and touching boundaries count, so the answer errs on the
    side of True.
    """
    ex0, ey0, ex1, ey1 = poly.envelope
    b = bbox
    if ex1 < b.min_x or ex0 > b.max_x or ey1 < b.min_y or ey0 > b.max_y:
        return False
    ring = poly.exterior
    x1, y1 = ring[-1]
    for x2, y2 in ring:
        if _segment_hits_box(x1, y1, x2, y2, b.min_x, b.min_y, b.max_x, b.max_y):
            return True
        x1, y1 = x2, y2
    # no edge reaches the box: it is either wholly inside the polygon or wholly outside
    return _exterior_contains((b.min_x + b.max_x) / 2, (b.min_y + b.max_y) / 2, poly)


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, cx, cy) -> bool:
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


def segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    """Closed segment intersection, collinear overlap included."""
    o1 = _orient(*a, *b, *c)
    o2 = _orient(*a, *b, *d)
    o3 = _orient(*c, *d, *a)
    o4 = _orient(*c, *d, *b)
    if ((o1 > 0 and o2 < 0) or (o1 < 0 and o2 > 0)) and ((o3 > 0 and o4 < 0) or (o3 < 0 and o4 > 0)):
        return True
    return (
        (o1 == 0 and _on_segment(*a, *b, *c))
        or (o2 == 0 and _on_segment(*a, *b, *d))
        or (o3 == 0 and _on_segment(*c, *d, *a))
        or (o4 == 0 and _on_segment(*c, *d, *b))
    )


def polygons_intersect(a: Polygon, b: Polygon) -> bool:
    """Exterior-ring intersection test (holes ignored, touching counts)."""
    ae, be = a.envelope, b.envelope
    if ae[2] < be[0] or ae[0] > be[2] or ae[3] < be[1] or ae[1] > be[3]:
        return False
    ra, rb = a.exterior, b.exterior
    for i in range(len(ra)):
        p, q = ra[i - 1], ra[i]
        for j in range(len(rb)):
            if segments_intersect(p, q, rb[j - 1], rb[j]):
                return True
    return _exterior_contains(*ra[0], b) or _exterior_contains(*rb[0], a)


def check_same_crs(*crs_ids: str) -> str:
    distinct = set(crs_ids)
    if len(distinct) > 1:
        raise CrsMismatch(f"mixed CRS identifiers: {sorted(distinct)}")
    return crs_ids[0]
