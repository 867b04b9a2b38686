"""Run the whole pipeline against the local stub WMS in a scratch directory.

Builds a 1 km square project with three buildings and two register records,
runs it twice (the second run should skip everything) and prints both summaries
plus the export manifest for positive tiles.
"""
from __future__ import annotations

import argparse
import json
import os
import tempfile
from pathlib import Path

from solaris_tiler.budget import BUDGET_DIR_ENV
from solaris_tiler.catalog import Catalog, export_manifest
from solaris_tiler.config import load_config
from solaris_tiler.pipeline import run_pipeline
from solaris_tiler.stub import StubWms
from solaris_tiler.wms import LayerInfo

BUILDINGS = {
    "B1": [(10, 10), (40, 10), (40, 40), (10, 40)],
    "B2": [(200, 510), (300, 510), (300, 600), (200, 600)],
    "B3": [(600, 600), (700, 600), (700, 700), (600, 700)],
}
PANELS = "id,bag_id,x,y,install_date\nP1,B1,,,2016-05-01\nP2,,900,100,2017-02-11\n"


def write_project(root: Path, url: str) -> Path:
    feats = [
        {"type": "Feature", "id": bid, "properties": {},
         "geometry": {"type": "Polygon", "coordinates": [[list(p) for p in ring + [ring[0]]]]}}
        for bid, ring in BUILDINGS.items()
    ]
    (root / "buildings.geojson").write_text(json.dumps({"type": "FeatureCollection", "features": feats}))
    (root / "panels.csv").write_text(PANELS)
    cfg = {
        "crs_id": "EPSG:28992",
        "bbox": [0, 0, 1000, 1000],
        "resolution": 0.25,
        "tile_px": 500,
        "buildings_path": "buildings.geojson",
        "panels_path": "panels.csv",
        "schema_map": {"record_id": "id", "building_object_id": "bag_id"},
        "output_dir": "out",
        "endpoints": [
            {"name": "stub-rgb", "base_url": url, "layers": {"rgb": "Actueel_ortho25"}, "years": ["2017"]}
        ],
    }
    path = root / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--keep", metavar="DIR", help="write the project here instead of a temp dir")
    args = ap.parse_args()

    root = Path(args.keep or tempfile.mkdtemp(prefix="solaris-demo-"))
    root.mkdir(parents=True, exist_ok=True)
    os.environ.setdefault(BUDGET_DIR_ENV, str(root / "budget"))
    with StubWms(layers=[LayerInfo("Actueel_ortho25", "RGB", ("EPSG:28992",))]) as stub:
        cfg = load_config(write_project(root, stub.url))
        first = run_pipeline(cfg)
        second = run_pipeline(cfg)
        print("first run:", json.dumps(first.to_dict(), indent=2))
        print("second run: fetched", second.fetched, "skipped", second.skipped)
        print("stub requests:", len(stub.requests))
    records = Catalog(cfg.output_dir / "catalog.jsonl").load()
    print("positive tiles:")
    print(export_manifest(records, ["positive"]).decode(), end="")
    print("project left in", root)


if __name__ == "__main__":
    main()
