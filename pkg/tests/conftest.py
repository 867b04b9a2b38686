import json

import pytest

from solaris_tiler.budget import BUDGET_DIR_ENV
from solaris_tiler.stub import StubWms
from solaris_tiler.wms import LayerInfo

# End-to-end fixture: 1 km x 1 km at 0.25 m/px in 500 px tiles -> 8 x 8 tiles of 125 m.
# Tile (col, row) spans x in [125 col, 125 (col+1)], y in [1000 - 125 (row+1), 1000 - 125 row].
FIXTURE_BBOX = [0, 0, 1000, 1000]
FIXTURE_BUILDINGS = {
    "B1": [(10, 10), (40, 10), (40, 40), (10, 40)],  # col 0, row 7
    "B2": [(200, 510), (300, 510), (300, 600), (200, 600)],  # cols 1-2, row 3
    "B3": [(600, 600), (700, 600), (700, 700), (600, 700)],  # cols 4-5, rows 2-3
}
# P1 links to B1 by building object id, P2's location is in open field.
FIXTURE_PANELS = (
    "id,bag_id,postcode,huisnummer,x,y,install_date,kw,type\n"
    "P1,B1,,,,,2016-05-01,4.5,rooftop\n"
    "P2,,,,900,100,2017-02-11,3.0,rooftop\n"
)
FIXTURE_SCHEMA = {
    "record_id": "id",
    "building_object_id": "bag_id",
    "house_number": "huisnummer",
    "capacity_kw": "kw",
    "placement": "type",
}
# Worked by hand from the tile spans above: B1 -> 1 tile with a linked panel,
# B2 -> 2 tiles and B3 -> 4 tiles without, the remaining 57 tiles are empty.
FIXTURE_LABEL_COUNTS = {"positive": 1, "unlabeled": 6, "no_building": 57}


def buildings_geojson(buildings=FIXTURE_BUILDINGS) -> bytes:
    feats = [
        {
            "type": "Feature",
            "id": bid,
            "properties": {"status": "in use", "purpose": "residential", "year_built": 1990},
            "geometry": {"type": "Polygon", "coordinates": [[list(p) for p in ring + [ring[0]]]]},
        }
        for bid, ring in buildings.items()
    ]
    return json.dumps({"type": "FeatureCollection", "features": feats}).encode()


@pytest.fixture(autouse=True)
def budget_dir(tmp_path, monkeypatch):
    d = tmp_path / "budget"
    monkeypatch.setenv(BUDGET_DIR_ENV, str(d))
    return d


@pytest.fixture
def stub():
    with StubWms(layers=[LayerInfo("Actueel_ortho25", "RGB", ("EPSG:28992",))]) as s:
        yield s


@pytest.fixture
def make_project(tmp_path):
    """Write fixture inputs plus a JSON config pointing at ``url``; returns the config path."""

    def make(url, **overrides):
        root = tmp_path / "project"
        root.mkdir(exist_ok=True)
        (root / "buildings.geojson").write_bytes(buildings_geojson())
        (root / "panels.csv").write_text(FIXTURE_PANELS)
        cfg = {
            "crs_id": "EPSG:28992",
            "bbox": FIXTURE_BBOX,
            "resolution": 0.25,
            "tile_px": 500,
            "buildings_path": "buildings.geojson",
            "panels_path": "panels.csv",
            "schema_map": FIXTURE_SCHEMA,
            "output_dir": "out",
            "endpoints": [
                {
                    "name": "stub-rgb",
                    "base_url": url,
                    "layers": {"rgb": "Actueel_ortho25"},
                    "years": ["2017"],
                }
            ],
        }
        cfg.update(overrides)
        path = root / "config.json"
        path.write_text(json.dumps(cfg, indent=2))
        return path

    return make
