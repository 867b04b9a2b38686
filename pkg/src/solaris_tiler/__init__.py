"""Tile aerial WMS imagery into a masked, register-labelled training catalog."""

from .geo import (
    BoundingBox,
    GeoTransform,
    Polygon,
    Tile,
    TileGridSpec,
    make_tile_grid,
    pixel_to_world,
    point_in_polygon,
    polygon_intersects_bbox,
    world_to_pixel,
)

__version__ = "0.1.0"
