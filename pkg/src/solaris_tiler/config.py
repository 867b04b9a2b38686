"""Pipeline configuration (TOML or JSON), validated eagerly."""

from __future__ import annotations

import datetime as dt
import json
import sys
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .budget import DEFAULT_MONTHLY_BUDGET
from .errors import ConfigError, GeometryError
from .geo import BoundingBox, Tile, TileGridSpec, make_tile_grid
from .register import PANEL_FIELDS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SPECTRA = ("rgb", "ir")

_TOP_KEYS = {
    "crs_id", "bbox", "resolution", "tile_px", "grid_origin", "endpoints",
    "buildings_path", "panels_path", "schema_map", "addresses_path", "output_dir",
    "workers", "invert_mask", "redact_locations", "fill_value", "install_cutoff",
    "budget_dir", "timeout",
}
_ENDPOINT_KEYS = {"name", "base_url", "layers", "years", "monthly_budget", "axis_order", "format"}


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    base_url: str
    layers: Mapping[str, str]  # spectrum -> layer name, may contain "{year}"
    years: tuple[str, ...]
    monthly_budget: int = DEFAULT_MONTHLY_BUDGET
    axis_order: Optional[str] = None
    format: str = "image/png"


@dataclass(frozen=True)
class PipelineConfig:
    crs_id: str
    bbox: BoundingBox
    resolution: float
    tile_px: int
    endpoints: tuple[EndpointConfig, ...]
    buildings_path: Path
    panels_path: Path
    output_dir: Path
    schema_map: Mapping[str, str] = field(default_factory=dict)
    addresses_path: Optional[Path] = None
    grid_origin: Optional[tuple[float, float]] = None
    workers: int = 4
    invert_mask: bool = False
    redact_locations: bool = False
    fill_value: int = 0
    install_cutoff: Optional[dt.date] = None
    budget_dir: Optional[Path] = None
    timeout: float = 60.0

    @property
    def grid_spec(self) -> TileGridSpec:
        if self.grid_origin is None:
            return TileGridSpec.anchored_at(self.bbox, self.tile_px, self.resolution)
        return TileGridSpec(self.grid_origin[0], self.grid_origin[1], self.tile_px, self.resolution)

    def tiles(self) -> list[Tile]:
        return make_tile_grid(self.bbox, self.grid_spec)


def _load_document(data: bytes) -> dict:
    text = data.decode("utf-8-sig") if isinstance(data, bytes) else data
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except ValueError as e:
            raise ConfigError("", f"invalid JSON: {e}") from None
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("", f"invalid TOML: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a table/object")
    return doc


def _req(doc: Mapping, key: str, where: str = "") -> Any:
    if key not in doc:
        raise ConfigError(where + key, "is required")
    return doc[key]


def _number(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"must be a number, got {v!r}")
    return float(v)


def _bool(v: Any, path: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(path, f"must be true or false, got {v!r}")
    return v


def _path(v: Any, path: str, base: Path, must_exist: bool) -> Path:
    if not isinstance(v, str) or not v:
        raise ConfigError(path, "must be a non-empty path string")
    p = Path(v)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(path, f"file not found: {p}")
    return p


def _endpoint(d: Any, i: int) -> EndpointConfig:
    where = f"endpoints[{i}]."
    if not isinstance(d, dict):
        raise ConfigError(f"endpoints[{i}]", "must be a table")
    unknown = set(d) - _ENDPOINT_KEYS
    if unknown:
        raise ConfigError(where + sorted(unknown)[0], "unknown key")
    name = _req(d, "name", where)
    if not isinstance(name, str) or not name:
        raise ConfigError(where + "name", "must be a non-empty string")
    url = _req(d, "base_url", where)
    u = urllib.parse.urlsplit(url if isinstance(url, str) else "")
    if u.scheme not in ("http", "https") or not u.netloc:
        raise ConfigError(where + "base_url", f"must be an absolute http(s) URL, got {url!r}")
    layers = _req(d, "layers", where)
    if not isinstance(layers, dict) or not layers:
        raise ConfigError(where + "layers", "must map a spectrum (rgb, ir) to a layer name")
    for spectrum, layer in layers.items():
        if spectrum not in SPECTRA:
            raise ConfigError(f"{where}layers.{spectrum}", f"spectrum must be one of {SPECTRA}")
        if not isinstance(layer, str) or not layer:
            raise ConfigError(f"{where}layers.{spectrum}", "must be a non-empty layer name")
    years = _req(d, "years", where)
    if not isinstance(years, list) or not years:
        raise ConfigError(where + "years", "must be a non-empty list")
    years_s = tuple(str(y) for y in years)
    if any(not y for y in years_s) or len(set(years_s)) != len(years_s):
        raise ConfigError(where + "years", "entries must be distinct non-empty values")
    budget = d.get("monthly_budget", DEFAULT_MONTHLY_BUDGET)
    if isinstance(budget, bool) or not isinstance(budget, int) or budget <= 0:
        raise ConfigError(where + "monthly_budget", "must be a positive integer")
    axis = d.get("axis_order")
    if axis not in (None, "xy", "yx"):
        raise ConfigError(where + "axis_order", "must be 'xy' or 'yx'")
    fmt = d.get("format", "image/png")
    if fmt not in ("image/png", "image/jpeg"):
        raise ConfigError(where + "format", "must be image/png or image/jpeg")
    return EndpointConfig(name, url, dict(layers), years_s, budget, axis, fmt)


def parse_config(data: bytes | str, base_dir: Optional[Path] = None) -> PipelineConfig:
    """Parse and validate a pipeline config.

    JSON is recognised by a leading ``{``; anything else is read as TOML.
    Relative paths resolve against ``base_dir`` (the config file's directory
    when loaded through :func:`load_config`).
    """
    doc = _load_document(data)
    base = Path(base_dir) if base_dir else Path.cwd()
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")

    crs_id = _req(doc, "crs_id")
    if not isinstance(crs_id, str) or not crs_id:
        raise ConfigError("crs_id", "must be a non-empty string")

    tile_px = _req(doc, "tile_px")
    if isinstance(tile_px, bool) or not isinstance(tile_px, int):
        raise ConfigError("tile_px", "must be an integer")
    if tile_px <= 0:
        raise ConfigError("tile_px", "tile_px must be positive")
    resolution = _number(_req(doc, "resolution"), "resolution")
    if resolution <= 0:
        raise ConfigError("resolution", "resolution must be positive")

    raw_bbox = _req(doc, "bbox")
    if not isinstance(raw_bbox, list) or len(raw_bbox) != 4:
        raise ConfigError("bbox", "must be [min_x, min_y, max_x, max_y]")
    try:
        bbox = BoundingBox(*(_number(v, "bbox") for v in raw_bbox), crs_id=crs_id)
    except GeometryError as e:
        raise ConfigError("bbox", str(e)) from None

    origin = doc.get("grid_origin")
    if origin is not None:
        if not isinstance(origin, list) or len(origin) != 2:
            raise ConfigError("grid_origin", "must be [x, y] of the grid's north-west corner")
        origin = (_number(origin[0], "grid_origin"), _number(origin[1], "grid_origin"))

    raw_eps = _req(doc, "endpoints")
    if not isinstance(raw_eps, list) or not raw_eps:
        raise ConfigError("endpoints", "must be a non-empty list")
    endpoints = tuple(_endpoint(d, i) for i, d in enumerate(raw_eps))
    names = [e.name for e in endpoints]
    if len(set(names)) != len(names):
        raise ConfigError("endpoints", "endpoint names must be unique")
    provided: set[tuple[str, str]] = set()
    for e in endpoints:
        for spectrum in e.layers:
            for y in e.years:
                if (spectrum, y) in provided:
                    raise ConfigError("endpoints", f"{spectrum} {y} is provided by more than one endpoint")
                provided.add((spectrum, y))

    schema_map = doc.get("schema_map", {})
    if not isinstance(schema_map, dict):
        raise ConfigError("schema_map", "must be a table of field -> column")
    for k, v in schema_map.items():
        if k not in PANEL_FIELDS:
            raise ConfigError(f"schema_map.{k}", f"unknown panel field; expected one of {PANEL_FIELDS}")
        if not isinstance(v, str) or not v:
            raise ConfigError(f"schema_map.{k}", "must be a column name")

    workers = doc.get("workers", 4)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers", "must be an integer >= 1")
    fill = doc.get("fill_value", 0)
    if isinstance(fill, bool) or not isinstance(fill, int) or not 0 <= fill <= 255:
        raise ConfigError("fill_value", "must be an integer in 0..255")
    cutoff = doc.get("install_cutoff")
    if cutoff is not None:
        try:
            cutoff = cutoff if isinstance(cutoff, dt.date) else dt.date.fromisoformat(str(cutoff))
        except ValueError:
            raise ConfigError("install_cutoff", "must be an ISO-8601 date") from None
    timeout = _number(doc.get("timeout", 60.0), "timeout")
    if timeout <= 0:
        raise ConfigError("timeout", "must be positive")

    cfg = PipelineConfig(
        crs_id=crs_id,
        bbox=bbox,
        resolution=resolution,
        tile_px=tile_px,
        endpoints=endpoints,
        buildings_path=_path(_req(doc, "buildings_path"), "buildings_path", base, True),
        panels_path=_path(_req(doc, "panels_path"), "panels_path", base, True),
        output_dir=_path(_req(doc, "output_dir"), "output_dir", base, False),
        schema_map=dict(schema_map),
        addresses_path=(
            _path(doc["addresses_path"], "addresses_path", base, True) if doc.get("addresses_path") else None
        ),
        grid_origin=origin,
        workers=workers,
        invert_mask=_bool(doc.get("invert_mask", False), "invert_mask"),
        redact_locations=_bool(doc.get("redact_locations", False), "redact_locations"),
        fill_value=fill,
        install_cutoff=cutoff,
        budget_dir=_path(doc["budget_dir"], "budget_dir", base, False) if doc.get("budget_dir") else None,
        timeout=timeout,
    )
    try:
        cfg.grid_spec
        cfg.tiles()
    except GeometryError as e:
        raise ConfigError("bbox", f"cannot tile bbox: {e}") from None
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as e:
        raise ConfigError("", f"cannot read config {p}: {e}") from None
    return parse_config(data, base_dir=p.parent)
