"""Command-line entry point: ``solaris-tiler <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from .catalog import CATALOG_NAME, Catalog, export_manifest
from .config import load_config
from .errors import ConfigError, EmptyInput, Exhausted, LedgerIo, ParseError, SolarisError
from .pipeline import EXIT_CONFIG, EXIT_EXHAUSTED, EXIT_OK, EXIT_PARTIAL, run_pipeline
from .register import Label, load_panels, polygon_from_geojson
from .screener import ScreenCriteria, load_catalog, screen_report
from .wms import fetch_capabilities


def _emit(text: str | bytes, output: str | None) -> None:
    data = text.encode() if isinstance(text, str) else text
    if output:
        Path(output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _floats(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _date(s: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {s!r}") from None


def cmd_capabilities(args) -> int:
    ep = fetch_capabilities(args.url)
    doc = {
        "name": ep.name,
        "base_url": ep.base_url,
        "version": ep.version,
        "formats": list(ep.formats),
        "crs_ids": list(ep.crs_ids),
        "layers": [
            {
                "name": l.layer_name,
                "title": l.title,
                "crs_ids": list(l.crs_ids),
                "bbox": l.bbox.as_tuple() if l.bbox else None,
                "time": list(l.time_dimension) if l.time_dimension else None,
            }
            for l in ep.layers
        ],
    }
    _emit(json.dumps(doc, indent=2) + "\n", None)
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    lines = []
    for t in cfg.tiles():
        lines.append(
            json.dumps(
                {
                    "tile_id": t.tile_id,
                    "col": t.col,
                    "row": t.row,
                    "bbox": t.bbox.as_tuple(),
                    "width_px": t.width_px,
                    "height_px": t.height_px,
                }
            )
        )
    _emit("\n".join(lines) + "\n", args.output)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.invert_mask:
        overrides["invert_mask"] = True
    if args.redact_locations:
        overrides["redact_locations"] = True
    if args.workers:
        overrides["workers"] = args.workers
    cfg = dataclasses.replace(cfg, **overrides)
    summary = run_pipeline(cfg, dry_run=args.dry_run)
    _emit(json.dumps(summary.to_dict(), indent=2) + "\n", None)
    return summary.exit_code


def cmd_export(args) -> int:
    labels = [l.strip() for l in args.labels.split(",") if l.strip()]
    try:
        labels = [Label(l) for l in labels]
    except ValueError:
        raise ConfigError("--labels", f"labels must be among {[l.value for l in Label]}") from None
    panels = None
    redact = args.redact_locations
    if args.config:
        cfg = load_config(args.config)
        catalog_path = Path(args.catalog) if args.catalog else cfg.output_dir / CATALOG_NAME
        redact = redact or cfg.redact_locations
        if not redact:
            panels = load_panels(cfg.panels_path.read_bytes(), cfg.schema_map, cfg.install_cutoff).records
    elif args.catalog:
        catalog_path = Path(args.catalog)
    else:
        raise ConfigError("--config", "export needs --config or --catalog")
    records = Catalog(catalog_path).load()
    _emit(export_manifest(records, labels, panels, redact), args.output)
    return EXIT_OK


def _read_scenes(path: str):
    scenes, rejects = load_catalog(Path(path).read_bytes())
    for r in rejects:
        logging.warning("scene catalog line %d rejected: %s", r.line, r.reason)
    return scenes, rejects


def cmd_screen(args) -> int:
    scenes, rejects = _read_scenes(args.catalog)
    aoi = polygon_from_geojson(json.loads(Path(args.aoi).read_bytes()))
    criteria = ScreenCriteria(args.max_cloud, args.since, args.until, aoi)
    report = screen_report(scenes, criteria, args.thresholds or (), rejects)
    _emit(json.dumps(report, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_stats(args) -> int:
    scenes, rejects = _read_scenes(args.catalog)
    report = screen_report(scenes, None, args.thresholds, rejects)
    _emit(json.dumps(report, indent=2) + "\n", args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="solaris-tiler",
        description="Build masked, labelled aerial tile catalogs from WMS services.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("capabilities", help="summarise a WMS GetCapabilities document")
    s.add_argument("url")
    s.set_defaults(func=cmd_capabilities)

    s = sub.add_parser("grid", help="list the tiles of the configured bbox")
    s.add_argument("--config", required=True)
    s.add_argument("--output")
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("run", help="fetch, mask and catalog all pending tiles")
    s.add_argument("--config", required=True)
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--invert-mask", action="store_true")
    s.add_argument("--redact-locations", action="store_true")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("export", help="write a JSONL training manifest")
    s.add_argument("--labels", default="positive")
    s.add_argument("--config")
    s.add_argument("--catalog")
    s.add_argument("--redact-locations", action="store_true")
    s.add_argument("--output")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("screen", help="filter a satellite scene catalog")
    s.add_argument("--catalog", required=True)
    s.add_argument("--max-cloud", type=float, required=True)
    s.add_argument("--since", type=_date, default=dt.date.min)
    s.add_argument("--until", type=_date, default=dt.date.max)
    s.add_argument("--aoi", required=True)
    s.add_argument("--thresholds", type=_floats)
    s.add_argument("--output")
    s.set_defaults(func=cmd_screen)

    s = sub.add_parser("stats", help="cloud-cover distribution of a scene catalog")
    s.add_argument("--catalog", required=True)
    s.add_argument("--thresholds", type=_floats, default=[5.0, 15.0])
    s.add_argument("--output")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exhausted as e:
        print(f"budget exhausted: {e}", file=sys.stderr)
        return EXIT_EXHAUSTED
    except LedgerIo as e:
        print(f"ledger error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, EmptyInput, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolarisError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
