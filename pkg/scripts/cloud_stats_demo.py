"""Screen a small synthetic scene catalog and print cloud-cover statistics.

Scenes are drawn with a seeded RNG, so the output is reproducible. Pass
``--catalog`` to screen a real JSONL scene catalog instead.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import random
from pathlib import Path

from solaris_tiler.geo import BoundingBox, Polygon
from solaris_tiler.screener import ResolutionClass, SceneMetadata, ScreenCriteria, load_catalog, screen_report

CRS = "EPSG:32632"


def synthetic(n: int, seed: int) -> list[SceneMetadata]:
    rng = random.Random(seed)
    out = []
    for i in range(n):
        x, y = rng.uniform(0, 5000), rng.uniform(0, 5000)
        fp = Polygon.from_bbox(BoundingBox(x, y, x + 2000, y + 2000, CRS))
        day = dt.date(2015, 1, 1) + dt.timedelta(days=rng.randrange(4 * 365))
        cloud = round(min(100.0, rng.expovariate(1 / 20)), 1)
        res = rng.choice(list(ResolutionClass))
        out.append(SceneMetadata(f"S{i:04d}", day, cloud, fp, res, "synthetic"))
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--catalog", type=Path, help="JSONL scene catalog")
    ap.add_argument("-n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-cloud", type=float, default=5.0)
    args = ap.parse_args()

    rejects = []
    if args.catalog:
        scenes, rejects = load_catalog(args.catalog.read_bytes())
    else:
        scenes = synthetic(args.n, args.seed)
    aoi = Polygon.from_bbox(BoundingBox(2500, 2500, 3500, 3500, CRS))
    crit = ScreenCriteria(args.max_cloud, dt.date(2016, 1, 1), dt.date(2017, 12, 31), aoi)
    report = screen_report(scenes, crit, thresholds=(5, 15, 30), rejects=rejects)
    print(f"{len(report['kept'])} of {len(scenes)} scenes kept")
    for b in report["stats"]:
        print(f"  {b['bin']:>8}  {b['count']:5d}  {b['fraction_pct']:5.1f} %")
    print(report["caveat"])
    if rejects:
        print(json.dumps(report["rejects"], indent=2))


if __name__ == "__main__":
    main()
