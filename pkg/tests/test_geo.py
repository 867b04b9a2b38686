import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solaris_tiler.errors import CrsMismatch, EmptyExtent, InvalidGeometry, ResolutionMismatch
from solaris_tiler.geo import (
    BoundingBox,
    GeoTransform,
    Polygon,
    TileGridSpec,
    check_same_crs,
    make_tile_grid,
    pixel_to_world,
    point_in_polygon,
    polygon_intersects_bbox,
    polygons_intersect,
    segments_intersect,
    world_to_pixel,
)

CRS = "EPSG:28992"
UNIT_SQUARE = Polygon(((0, 0), (1, 0), (1, 1), (0, 1)))


def bbox(x0, y0, x1, y1):
    return BoundingBox(x0, y0, x1, y1, CRS)


def grid(b, res, tile_px):
    return make_tile_grid(b, TileGridSpec.anchored_at(b, tile_px, res))


def star_polygon(rng, n, cx=0.0, cy=0.0, rmin=0.2, rmax=1.0):
    """Random simple polygon: vertices at sorted angles around a centre."""
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = rng.uniform(rmin, rmax, n)
    return Polygon(tuple((cx + r * math.cos(a), cy + r * math.sin(a)) for a, r in zip(angles, radii)))


# tile grid


def test_grid_one_km_tile_at_20cm():
    tiles = grid(bbox(0, 0, 1000, 1000), 0.20, 5000)
    assert len(tiles) == 1
    t = tiles[0]
    assert (t.width_px, t.height_px) == (5000, 5000)
    assert t.bbox.area == 1_000_000


def test_grid_8x8_at_25cm():
    tiles = grid(bbox(0, 0, 1000, 1000), 0.25, 500)
    assert len(tiles) == 64
    assert all((t.width_px, t.height_px) == (500, 500) for t in tiles)
    assert all(abs(t.bbox.width - 125) < 1e-9 and abs(t.bbox.height - 125) < 1e-9 for t in tiles)


def test_grid_clips_east_column():
    tiles = grid(bbox(0, 0, 1100, 1000), 0.25, 500)
    assert len(tiles) == 72
    assert max(t.col for t in tiles) == 8 and max(t.row for t in tiles) == 7
    east = [t for t in tiles if t.col == 8]
    assert len(east) == 8
    assert all(t.width_px == 400 and t.height_px == 500 for t in east)
    assert all(abs(t.bbox.width - 100.0) < 1e-9 for t in east)


def test_grid_row_major_from_north_west():
    tiles = grid(bbox(0, 0, 1000, 1000), 0.25, 500)
    assert [(t.col, t.row) for t in tiles[:9]] == [(c, 0) for c in range(8)] + [(0, 1)]
    assert tiles[0].bbox.max_y == 1000 and tiles[0].bbox.min_x == 0
    assert tiles[-1].bbox.min_y == 0 and tiles[-1].bbox.max_x == 1000


def test_degenerate_bbox_is_empty_extent():
    with pytest.raises(EmptyExtent):
        make_tile_grid(BoundingBox(5, 0, 5, 1000, CRS), TileGridSpec(5, 1000, 500, 0.25))


def test_bbox_needs_crs():
    with pytest.raises(InvalidGeometry):
        BoundingBox(0, 0, 1, 1, "")


def test_fractional_pixel_extent_rejected():
    with pytest.raises(ResolutionMismatch):
        grid(bbox(0, 0, 1000.1, 1000), 0.25, 500)


def test_grid_with_offset_origin_keeps_global_indices():
    spec = TileGridSpec(0, 1000, 500, 0.25)
    tiles = make_tile_grid(bbox(150, 700, 300, 900), spec)
    # x 150..300 -> px 600..1200 -> cols 1, 2 ; y 900..700 -> px 400..1200 -> rows 0, 1, 2
    assert sorted({t.col for t in tiles}) == [1, 2]
    assert sorted({t.row for t in tiles}) == [0, 1, 2]
    assert sum(t.width_px * t.height_px for t in tiles) == 600 * 800


def test_tile_ids_format_and_uniqueness():
    tiles = grid(bbox(0, 0, 1000, 1000), 0.25, 500)
    assert tiles[0].tile_id == "EPSG:28992_0.000_1000.000_0.250_500_c0r0"
    assert len({t.tile_id for t in tiles}) == 64


def test_grid_is_deterministic():
    b = bbox(1000, 2000, 3250, 4000)
    assert [t.tile_id for t in grid(b, 0.5, 300)] == [t.tile_id for t in grid(b, 0.5, 300)]


@settings(max_examples=200, deadline=None)
@given(
    w=st.integers(1, 3000),
    h=st.integers(1, 3000),
    tile_px=st.integers(40, 1200),
    res_cm=st.integers(1, 200),
    x0=st.integers(-10_000, 10_000),
    y0=st.integers(-10_000, 10_000),
)
def test_grid_partitions_exactly(w, h, tile_px, res_cm, x0, y0):
    res = Fraction(res_cm, 100)
    b = BoundingBox(x0, y0, float(x0 + w * res), float(y0 + h * res), CRS)
    tiles = make_tile_grid(b, TileGridSpec.anchored_at(b, tile_px, float(res)))
    # pixel rectangles from indices: disjoint and covering
    seen = 0
    for t in tiles:
        assert 0 < t.width_px <= tile_px and 0 < t.height_px <= tile_px
        assert abs(t.bbox.width - t.width_px * float(res)) < 1e-9 * max(1, abs(x0))
        seen += t.width_px * t.height_px
    assert seen == w * h
    assert sum(Fraction(t.width_px * t.height_px) * res * res for t in tiles) == w * h * res * res
    cols = sorted({t.col for t in tiles})
    rows = sorted({t.row for t in tiles})
    assert len(tiles) == len(cols) * len(rows)


# geotransform


def test_world_to_pixel_examples():
    gt = GeoTransform(0, 1000, 0.25)
    assert world_to_pixel(gt, 0.1, 999.9) == (0, 0)
    assert world_to_pixel(gt, 125.0, 875.0) == (500, 500)
    assert world_to_pixel(gt, -0.1, 1000.1) == (-1, -1)


def test_pixel_to_world_examples():
    assert pixel_to_world(GeoTransform(0, 1000, 0.25), 0, 0) == (0.125, 999.875)
    assert pixel_to_world(GeoTransform(0, 1000, 1.0), 10, 10) == (10.5, 989.5)


@settings(max_examples=300)
@given(
    col=st.integers(0, 100_000),
    row=st.integers(0, 100_000),
    ox=st.floats(-1e6, 1e6),
    oy=st.floats(-1e6, 1e6),
    ps=st.sampled_from([0.1, 0.2, 0.25, 0.5, 1.0, 2.0, 10.0]),
)
def test_geotransform_round_trip(col, row, ox, oy, ps):
    gt = GeoTransform(ox, oy, ps)
    assert world_to_pixel(gt, *pixel_to_world(gt, col, row)) == (col, row)


# point in polygon


def test_point_in_polygon_examples():
    assert point_in_polygon((0.5, 0.5), UNIT_SQUARE)
    assert not point_in_polygon((2, 2), UNIT_SQUARE)
    annulus = Polygon(((0, 0), (3, 0), (3, 3), (0, 3)), (((1, 1), (2, 1), (2, 2), (1, 2)),))
    assert not point_in_polygon((1.5, 1.5), annulus)
    assert point_in_polygon((0.5, 1.5), annulus)


def test_half_open_boundary_rule():
    # north and west edges inside, south and east edges outside
    assert point_in_polygon((0.0, 0.5), UNIT_SQUARE)
    assert point_in_polygon((0.5, 1.0), UNIT_SQUARE)
    assert not point_in_polygon((1.0, 0.5), UNIT_SQUARE)
    assert not point_in_polygon((0.5, 0.0), UNIT_SQUARE)


def test_adjacent_polygons_never_both_claim_a_point():
    left = Polygon(((0, 0), (1, 0), (1, 1), (0, 1)))
    right = Polygon(((1, 0), (2, 0), (2, 1), (1, 1)))
    below = Polygon(((0, -1), (1, -1), (1, 0), (0, 0)))
    for p in [(1.0, y / 10) for y in range(11)] + [(x / 10, 0.0) for x in range(11)]:
        claims = sum(point_in_polygon(p, q) for q in (left, right, below))
        assert claims <= 1, p


def _convex_inside_oracle(p, ring):
    """Strictly inside a CCW convex ring iff left of every edge (shoelace sign of each triangle)."""
    x, y = p
    n = len(ring)
    for i in range(n):
        (x1, y1), (x2, y2) = ring[i], ring[(i + 1) % n]
        if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) <= 0:
            return False
    return True


def test_point_in_polygon_matches_convex_oracle():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 1000:
        k = int(rng.integers(3, 10))
        angles = np.sort(rng.uniform(0, 2 * math.pi, k))
        r = rng.uniform(0.5, 5.0)
        ring = tuple((r * math.cos(a), r * math.sin(a)) for a in angles)
        try:
            poly = Polygon(ring)
        except InvalidGeometry:
            continue
        p = tuple(rng.uniform(-6, 6, 2))
        assert point_in_polygon(p, poly) == _convex_inside_oracle(p, ring)
        checked += 1


def test_polygon_validation():
    with pytest.raises(InvalidGeometry):
        Polygon(((0, 0), (1, 1), (0, 0)))
    with pytest.raises(InvalidGeometry):
        Polygon(((0, 0), (1, 1), (2, 2)))
    closed = Polygon(((0, 0), (1, 0), (1, 1), (0, 0)))
    assert len(closed.exterior) == 3


# polygon vs bbox


def test_polygon_intersects_bbox_examples():
    assert polygon_intersects_bbox(UNIT_SQUARE, bbox(0, 0, 10, 10))
    assert not polygon_intersects_bbox(UNIT_SQUARE, bbox(5, 5, 6, 6))
    big = Polygon(((-10, -10), (10, -10), (10, 10), (-10, 10)))
    assert polygon_intersects_bbox(big, bbox(1, 1, 2, 2))  # box inside polygon
    assert polygon_intersects_bbox(UNIT_SQUARE, bbox(1, 1, 2, 2))  # corner touch
    assert polygon_intersects_bbox(UNIT_SQUARE, bbox(0.5, -1, 0.6, 3))  # crossing, no vertex inside


def test_polygon_bbox_concave_pocket():
    u = Polygon(((0, 0), (3, 0), (3, 3), (2, 3), (2, 1), (1, 1), (1, 3), (0, 3)))
    assert not polygon_intersects_bbox(u, bbox(1.2, 1.5, 1.8, 2.5))
    assert polygon_intersects_bbox(u, bbox(1.2, 0.5, 1.8, 2.5))


def test_polygon_bbox_no_false_negatives_vs_sampling():
    rng = np.random.default_rng(11)
    for _ in range(500):
        poly = star_polygon(rng, int(rng.integers(3, 12)), *rng.uniform(-1, 1, 2))
        x0, y0 = rng.uniform(-2, 2, 2)
        w, h = rng.uniform(0.01, 1.5, 2)
        b = bbox(x0, y0, x0 + w, y0 + h)
        xs = np.linspace(b.min_x, b.max_x, 25)
        ys = np.linspace(b.min_y, b.max_y, 25)
        sampled = any(point_in_polygon((x, y), poly) for x in xs for y in ys)
        if sampled:
            assert polygon_intersects_bbox(poly, b)


def test_polygons_intersect():
    assert polygons_intersect(UNIT_SQUARE, Polygon(((0.5, 0.5), (2, 0.5), (2, 2))))
    assert polygons_intersect(UNIT_SQUARE, Polygon(((-1, -1), (5, -1), (5, 5), (-1, 5))))
    assert not polygons_intersect(UNIT_SQUARE, Polygon(((2, 2), (3, 2), (3, 3))))


def test_segments_intersect_collinear_and_touching():
    assert segments_intersect((0, 0), (2, 0), (1, 0), (3, 0))
    assert segments_intersect((0, 0), (1, 1), (1, 1), (2, 0))
    assert not segments_intersect((0, 0), (1, 0), (2, 0), (3, 0))


def test_check_same_crs():
    assert check_same_crs(CRS, CRS) == CRS
    with pytest.raises(CrsMismatch):
        check_same_crs(CRS, "EPSG:25832")
