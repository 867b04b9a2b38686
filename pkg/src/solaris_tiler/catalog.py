"""Append-only JSON Lines catalog of produced tiles, plus the training manifest export."""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .register import Label, PanelRecord, TileAnnotation

log = logging.getLogger(__name__)

CATALOG_NAME = "catalog.jsonl"


@dataclass(frozen=True)
class CatalogRecord:
    tile_id: str
    year: str
    spectrum: str
    image_path: str
    mask_path: str
    masked_path: str
    annotation: TileAnnotation
    request_url: str
    content_hash: str
    created_at: str

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.tile_id, self.year, self.spectrum)

    def to_dict(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "year": self.year,
            "spectrum": self.spectrum,
            "image_path": self.image_path,
            "mask_path": self.mask_path,
            "masked_path": self.masked_path,
            "annotation": self.annotation.to_dict(),
            "request_url": self.request_url,
            "content_hash": self.content_hash,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CatalogRecord":
        return cls(
            tile_id=d["tile_id"],
            year=str(d["year"]),
            spectrum=d["spectrum"],
            image_path=d["image_path"],
            mask_path=d["mask_path"],
            masked_path=d["masked_path"],
            annotation=TileAnnotation.from_dict(d["annotation"]),
            request_url=d["request_url"],
            content_hash=d["content_hash"],
            created_at=d["created_at"],
        )


class Catalog:
    """Single-writer JSONL catalog.

    A record is one line written with a single ``write`` + ``fsync``. On load,
    an unterminated or unparsable final line is treated as a torn write and
    dropped; the next append truncates it away first.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._repaired = False

    def load(self) -> list[CatalogRecord]:
        try:
            data = self.path.read_bytes()
        except FileNotFoundError:
            return []
        lines = data.split(b"\n")
        tail = lines.pop()  # b"" when the file ends with a newline
        if tail:
            log.warning("ignoring truncated final catalog line (%d bytes)", len(tail))
        out = []
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                out.append(CatalogRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                log.warning("skipping unreadable catalog line %d: %s", n, e)
        return out

    def keys(self) -> set[tuple[str, str, str]]:
        return {r.key for r in self.load()}

    def _repair_tail(self) -> None:
        if self._repaired or not self.path.exists():
            self._repaired = True
            return
        with open(self.path, "rb+") as f:
            data = f.read()
            if data and not data.endswith(b"\n"):
                f.truncate(data.rfind(b"\n") + 1)
        self._repaired = True

    def append(self, record: CatalogRecord) -> None:
        line = json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":")).encode() + b"\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._repair_tail()
            with open(self.path, "ab") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())


def export_manifest(
    records: Iterable[CatalogRecord],
    labels: Iterable[str | Label],
    panels: Optional[Sequence[PanelRecord]] = None,
    redact_locations: bool = False,
) -> bytes:
    """JSONL training manifest of the records whose label is in ``labels``.

    With ``panels`` given and ``redact_locations`` off, each line also lists the
    raw coordinates of its linked panels.
    """
    wanted = {Label(l).value for l in labels}
    located = {p.record_id: p.location for p in panels or () if p.location is not None}
    out = []
    for r in records:
        if r.annotation.label.value not in wanted:
            continue
        line = {
            "tile_id": r.tile_id,
            "year": r.year,
            "spectrum": r.spectrum,
            "image_path": r.image_path,
            "masked_path": r.masked_path,
            "label": r.annotation.label.value,
            "linked_panel_ids": list(r.annotation.linked_panel_ids),
        }
        if panels is not None and not redact_locations:
            line["panel_locations"] = [
                {"record_id": pid, "x": located[pid][0], "y": located[pid][1]}
                for pid in r.annotation.linked_panel_ids
                if pid in located
            ]
        out.append(json.dumps(line, separators=(",", ":")).encode() + b"\n")
    return b"".join(out)
