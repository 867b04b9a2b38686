"""Grid -> fetch -> mask -> annotate -> persist.

Each (tile, year, spectrum) is fetched at most once: jobs already in the
catalog are skipped, so an interrupted or budget-limited run can simply be
started again.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .budget import RateBudget
from .catalog import CATALOG_NAME, Catalog, CatalogRecord
from .config import EndpointConfig, PipelineConfig
from .errors import ConfigError, EmptyInput, Exhausted, LedgerIo, ParseError, SolarisError
from .geo import Tile
from .raster import Mask, RasterImage, apply_mask, encode_image, rasterize_polygons, sidecar_dict, to_8bit
from .register import (
    BuildingPolygon,
    Linkage,
    PanelLoad,
    TileAnnotation,
    label_tiles,
    link_panels,
    load_addresses,
    load_buildings,
    load_panels,
    rejects_jsonl,
)
from .wms import DEFAULT_BACKOFF, GetMapRequest, WmsEndpoint, fetch_capabilities, fetch_tile_outcome

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_EXHAUSTED = 0, 1, 2, 3


@dataclass
class RunSummary:
    fetched: int = 0
    skipped: int = 0
    failed: int = 0
    requests: int = 0  # budget units spent, retries included
    retries: int = 0
    positive: int = 0
    unlabeled: int = 0
    no_building: int = 0
    pending: int = 0
    exhausted: bool = False
    dry_run: bool = False
    panel_rejects: int = 0
    linked_panels: int = 0
    unresolved_panels: int = 0
    budget_remaining: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if self.exhausted:
            return EXIT_EXHAUSTED
        return EXIT_PARTIAL if self.failed else EXIT_OK

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Job:
    tile: Tile
    endpoint: EndpointConfig
    spectrum: str
    year: str

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.tile.tile_id, self.year, self.spectrum)


@dataclass
class Inputs:
    tiles: list[Tile]
    buildings: list[BuildingPolygon]
    panels: PanelLoad
    linkage: Linkage
    annotations: list[TileAnnotation]


def safe_name(tile_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", tile_id)


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path: Path, what: str) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise ConfigError(what, f"cannot read {path}: {e}") from None


def load_inputs(cfg: PipelineConfig) -> Inputs:
    """Grid, buildings, register and labels; ingestion errors surface as ConfigError."""
    tiles = cfg.tiles()
    try:
        buildings = load_buildings(_read(cfg.buildings_path, "buildings_path"))
    except ParseError as e:
        raise ConfigError("buildings_path", str(e)) from None
    try:
        panels = load_panels(_read(cfg.panels_path, "panels_path"), cfg.schema_map, cfg.install_cutoff)
    except (ParseError, EmptyInput) as e:
        raise ConfigError("panels_path", str(e)) from None
    addresses = []
    if cfg.addresses_path is not None:
        try:
            addresses = load_addresses(_read(cfg.addresses_path, "addresses_path"))
        except (ParseError, EmptyInput) as e:
            raise ConfigError("addresses_path", str(e)) from None
    linkage = link_panels(panels.records, buildings, addresses)
    annotations = label_tiles(tiles, buildings, linkage, cfg.crs_id)
    return Inputs(tiles, buildings, panels, linkage, annotations)


def plan_jobs(cfg: PipelineConfig, tiles: Sequence[Tile]) -> list[Job]:
    return [
        Job(t, ep, spectrum, year)
        for t in tiles
        for ep in cfg.endpoints
        for spectrum in sorted(ep.layers)
        for year in ep.years
    ]


def _resolve_layer(job: Job, wms: WmsEndpoint) -> tuple[str, Optional[str]]:
    """Layer name and TIME value for a job.

    A ``{year}`` placeholder selects per-year layers; otherwise the year goes
    into TIME, which requires the layer to advertise a time dimension when
    more than one year is configured.
    """
    template = job.endpoint.layers[job.spectrum]
    if "{year}" in template:
        return template.replace("{year}", job.year), None
    layer = wms.layer(template)
    if layer.time_dimension:
        return template, job.year
    if len(job.endpoint.years) > 1:
        raise ConfigError(
            f"endpoints.{job.endpoint.name}.layers.{job.spectrum}",
            f"layer {template!r} has no TIME dimension; use a {{year}} placeholder",
        )
    return template, None


class _Runner:
    def __init__(self, cfg: PipelineConfig, inputs: Inputs, sleep, today, backoff):
        self.cfg = cfg
        self.inputs = inputs
        self.sleep = sleep
        self.backoff = backoff
        self.catalog = Catalog(cfg.output_dir / CATALOG_NAME)
        kw = {"today": today} if today is not None else {}
        self.budgets = {
            ep.name: RateBudget.for_endpoint(ep.name, ep.monthly_budget, cfg.budget_dir, **kw)
            for ep in cfg.endpoints
        }
        self.exhausted = {ep.name: threading.Event() for ep in cfg.endpoints}
        self.wms: dict[str, WmsEndpoint | Exception] = {}
        self.summary = RunSummary()
        self.lock = threading.Lock()
        self.annotation_of = {a.tile_id: a for a in inputs.annotations}
        self.footprints = {b.building_id: b.footprint for b in inputs.buildings}

    def probe(self, endpoints: Sequence[EndpointConfig]) -> None:
        for ep in endpoints:
            try:
                self.wms[ep.name] = fetch_capabilities(
                    ep.base_url,
                    name=ep.name,
                    base_url=ep.base_url,
                    timeout=self.cfg.timeout,
                    monthly_budget=ep.monthly_budget,
                    axis_order=ep.axis_order,
                )
            except SolarisError as e:
                log.error("capabilities probe of %s failed: %s", ep.name, e)
                self.wms[ep.name] = e

    def _fail(self, job: Job, reason: str) -> None:
        with self.lock:
            self.summary.failed += 1
            self.summary.failures.append(
                {"tile_id": job.tile.tile_id, "year": job.year, "spectrum": job.spectrum, "reason": reason}
            )

    def _count_attempt(self) -> None:
        with self.lock:
            self.summary.requests += 1

    def _mask_for(self, tile: Tile) -> tuple[Mask, str]:
        ann = self.annotation_of[tile.tile_id]
        polys = [self.footprints[b] for b in ann.building_ids]
        mask = rasterize_polygons(polys, tile.geotransform, tile.width_px, tile.height_px)
        if self.cfg.invert_mask:
            mask = mask.inverted()
        rel = f"masks/{safe_name(tile.tile_id)}.png"
        out = self.cfg.output_dir
        _write_atomic(out / rel, mask.to_png())
        meta = sidecar_dict(RasterImage(mask.bits.astype("uint8"), tile.geotransform, tile.bbox.crs_id))
        _write_atomic(out / rel.replace(".png", ".geo.json"), _json_bytes(meta))
        return mask, rel

    def process_tile(self, tile: Tile, jobs: Sequence[Job]) -> None:
        mask = None
        for job in jobs:
            name = job.endpoint.name
            if self.exhausted[name].is_set():
                self._fail(job, "budget exhausted")
                continue
            wms = self.wms.get(name)
            if isinstance(wms, Exception) or wms is None:
                self._fail(job, f"capabilities probe failed: {wms}")
                continue
            try:
                if mask is None:
                    mask, mask_rel = self._mask_for(tile)
                self._run_job(job, wms, mask, mask_rel)
            except Exhausted as e:
                self.exhausted[name].set()
                self._fail(job, f"budget exhausted: {e}")
            except LedgerIo:
                raise
            except (SolarisError, OSError) as e:
                log.warning("job %s failed: %s", job.key, e)
                self._fail(job, f"{type(e).__name__}: {e}")

    def _run_job(self, job: Job, wms: WmsEndpoint, mask: Mask, mask_rel: str) -> None:
        tile = job.tile
        layer, time_value = _resolve_layer(job, wms)
        req = GetMapRequest(
            layer_name=layer,
            crs_id=tile.bbox.crs_id,
            bbox=tile.bbox,
            width_px=tile.width_px,
            height_px=tile.height_px,
            format=job.endpoint.format,
            year=time_value,
        )
        outcome = fetch_tile_outcome(
            wms,
            req,
            self.budgets[job.endpoint.name],
            timeout=self.cfg.timeout,
            backoff=self.backoff,
            sleep=self.sleep,
            on_attempt=self._count_attempt,
        )
        img = replace(to_8bit(outcome.image), gt=tile.geotransform)
        masked = apply_mask(img, mask, self.cfg.fill_value)

        stem = f"tiles/{safe_name(tile.tile_id)}/{job.year}_{job.spectrum}"
        out = self.cfg.output_dir
        png, sidecar = encode_image(img)
        mpng, msidecar = encode_image(masked)
        _write_atomic(out / f"{stem}.png", png)
        _write_atomic(out / f"{stem}.geo.json", sidecar)
        _write_atomic(out / f"{stem}_masked.png", mpng)
        _write_atomic(out / f"{stem}_masked.geo.json", msidecar)

        record = CatalogRecord(
            tile_id=tile.tile_id,
            year=job.year,
            spectrum=job.spectrum,
            image_path=f"{stem}.png",
            mask_path=mask_rel,
            masked_path=f"{stem}_masked.png",
            annotation=self.annotation_of[tile.tile_id],
            request_url=outcome.url,
            content_hash=hashlib.sha256(png).hexdigest(),
            created_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        )
        self.catalog.append(record)
        with self.lock:
            self.summary.fetched += 1
            self.summary.retries += outcome.attempts - 1


def _json_bytes(d: dict) -> bytes:
    return json.dumps(d, indent=2).encode("ascii") + b"\n"


def run_pipeline(
    cfg: PipelineConfig,
    dry_run: bool = False,
    sleep: Callable[[float], None] = time.sleep,
    today: Optional[Callable[[], dt.date]] = None,
    backoff: Sequence[float] = DEFAULT_BACKOFF,
) -> RunSummary:
    """Run (or with ``dry_run``, only plan) every pending tile job.

    Per-job failures are recorded in the summary and never abort the run;
    configuration and ledger errors do.
    """
    inputs = load_inputs(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    runner = _Runner(cfg, inputs, sleep, today, backoff)
    s = runner.summary
    s.dry_run = dry_run
    s.panel_rejects = len(inputs.panels.rejects)
    s.linked_panels = len(inputs.linkage.links)
    s.unresolved_panels = len(inputs.linkage.unresolved)
    for a in inputs.annotations:
        setattr(s, a.label.value, getattr(s, a.label.value) + 1)
    if not dry_run:
        _write_atomic(cfg.output_dir / "rejects.jsonl", rejects_jsonl(inputs.panels.rejects))

    done = runner.catalog.keys()
    jobs = plan_jobs(cfg, inputs.tiles)
    pending = [j for j in jobs if j.key not in done]
    s.skipped = len(jobs) - len(pending)
    s.pending = len(pending)

    if not dry_run and pending:
        runner.probe([ep for ep in cfg.endpoints if any(j.endpoint is ep for j in pending)])
        by_tile: dict[str, list[Job]] = {}
        for j in pending:
            by_tile.setdefault(j.tile.tile_id, []).append(j)
        tiles = {t.tile_id: t for t in inputs.tiles}
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(runner.process_tile, tiles[tid], js) for tid, js in by_tile.items()]
            for f in futures:
                f.result()
        s.failures.sort(key=lambda d: (d["tile_id"], d["year"], d["spectrum"]))

    s.exhausted = any(e.is_set() for e in runner.exhausted.values())
    s.budget_remaining = {name: b.remaining for name, b in runner.budgets.items()}
    return s
