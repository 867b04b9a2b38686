"""Satellite scene screening by cloud cover, acquisition date and AOI overlap."""

from __future__ import annotations

import datetime as dt
import enum
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

from .errors import EmptyInput, InvalidGeometry, ParseError, UnsupportedGeometry
from .geo import Polygon, polygons_intersect
from .register import polygon_from_geojson

CAVEAT = (
    "cloud_cover_pct is a scene-level figure for the whole acquisition, "
    "not for the area of interest; treat it as an indication only"
)


class ResolutionClass(str, enum.Enum):
    sub1m = "sub1m"
    m1to2 = "m1to2"
    m5 = "m5"
    m10 = "m10"


@dataclass(frozen=True)
class SceneMetadata:
    scene_id: str
    acquisition_date: dt.date
    cloud_cover_pct: float
    footprint: Polygon
    resolution_class: ResolutionClass
    source: str

    def __post_init__(self):
        if not 0 <= self.cloud_cover_pct <= 100:
            raise ValueError(f"cloud out of range: {self.cloud_cover_pct}")

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "acquisition_date": self.acquisition_date.isoformat(),
            "cloud_cover_pct": self.cloud_cover_pct,
            "footprint": {"type": "Polygon", "coordinates": [[list(p) for p in self.footprint.exterior]]},
            "resolution_class": self.resolution_class.value,
            "source": self.source,
        }


@dataclass(frozen=True)
class ScreenCriteria:
    max_cloud_pct: float
    date_min: dt.date
    date_max: dt.date
    aoi: Polygon

    def __post_init__(self):
        if self.date_min > self.date_max:
            raise ValueError("date_min must not be after date_max")
        if not 0 <= self.max_cloud_pct <= 100:
            raise ValueError("max_cloud_pct must be within 0..100")

    def to_dict(self) -> dict:
        return {
            "max_cloud_pct": self.max_cloud_pct,
            "date_min": self.date_min.isoformat(),
            "date_max": self.date_max.isoformat(),
            "aoi": {"type": "Polygon", "coordinates": [[list(p) for p in self.aoi.exterior]]},
        }


@dataclass(frozen=True)
class SceneReject:
    line: int
    reason: str


@dataclass(frozen=True)
class CloudBin:
    lower: Optional[float]  # None for the open first bin (< upper)
    upper: float
    count: int
    fraction_pct: float

    @property
    def label(self) -> str:
        return f"<{self.upper:g}" if self.lower is None else f"[{self.lower:g},{self.upper:g})"


def _scene_from_obj(obj: dict) -> SceneMetadata:
    try:
        cloud = float(obj["cloud_cover_pct"])
    except (KeyError, TypeError, ValueError):
        raise ValueError("cloud_cover_pct missing or not a number") from None
    if not 0 <= cloud <= 100:
        raise ValueError("cloud out of range")
    try:
        date = dt.date.fromisoformat(str(obj["acquisition_date"])[:10])
    except (KeyError, ValueError):
        raise ValueError("acquisition_date missing or not ISO-8601") from None
    fp = obj.get("footprint")
    if isinstance(fp, list):
        fp = {"type": "Polygon", "coordinates": fp}
    if not isinstance(fp, dict):
        raise ValueError("footprint missing")
    try:
        footprint = polygon_from_geojson(fp)
    except (ParseError, UnsupportedGeometry, InvalidGeometry) as e:
        raise ValueError(f"footprint invalid: {e}") from None
    try:
        rc = ResolutionClass(obj.get("resolution_class"))
    except ValueError:
        raise ValueError(f"resolution_class must be one of {[r.value for r in ResolutionClass]}") from None
    sid = obj.get("scene_id")
    if not sid:
        raise ValueError("scene_id missing")
    return SceneMetadata(str(sid), date, cloud, footprint, rc, str(obj.get("source", "")))


def load_catalog(jsonl_bytes: bytes) -> tuple[list[SceneMetadata], list[SceneReject]]:
    """Parse a JSON Lines scene export; blank lines are skipped, bad lines rejected."""
    scenes: list[SceneMetadata] = []
    rejects: list[SceneReject] = []
    seen_any = False
    for n, line in enumerate(jsonl_bytes.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        seen_any = True
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            scenes.append(_scene_from_obj(obj))
        except json.JSONDecodeError:
            rejects.append(SceneReject(n, "invalid JSON"))
        except ValueError as e:
            rejects.append(SceneReject(n, str(e)))
    if not seen_any:
        raise EmptyInput("scene catalog is empty")
    return scenes, rejects


def filter_scenes(scenes: Sequence[SceneMetadata], c: ScreenCriteria) -> list[SceneMetadata]:
    """Keep scenes with cloud <= max, date within [date_min, date_max], footprint touching the AOI."""
    return [
        s
        for s in scenes
        if s.cloud_cover_pct <= c.max_cloud_pct
        and c.date_min <= s.acquisition_date <= c.date_max
        and polygons_intersect(s.footprint, c.aoi)
    ]


def _pct(count: int, total: int) -> float:
    d = (Decimal(count) * 100 / Decimal(total)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return float(d)


def cloud_stats(scenes: Sequence[SceneMetadata], thresholds: Sequence[float]) -> list[CloudBin]:
    """Share of scenes below the first threshold, then in each half-open [t_i-1, t_i).

    Percentages are rounded half up to 0.1. Scenes at or above the last
    threshold form the implicit remainder and are not reported.
    """
    if not scenes:
        raise EmptyInput("no scenes to summarise")
    if not thresholds:
        raise ValueError("need at least one threshold")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])) or not all(0 <= t <= 100 for t in thresholds):
        raise ValueError(f"thresholds must be strictly ascending within 0..100: {list(thresholds)}")
    n = len(scenes)
    out = []
    lower = None
    for t in thresholds:
        count = sum(
            1 for s in scenes if s.cloud_cover_pct < t and (lower is None or s.cloud_cover_pct >= lower)
        )
        out.append(CloudBin(lower, t, count, _pct(count, n)))
        lower = t
    return out


def screen_report(
    scenes: Sequence[SceneMetadata],
    criteria: Optional[ScreenCriteria],
    thresholds: Sequence[float] = (),
    rejects: Sequence[SceneReject] = (),
) -> dict:
    kept = filter_scenes(scenes, criteria) if criteria is not None else []
    return {
        "caveat": CAVEAT,
        "criteria": criteria.to_dict() if criteria is not None else None,
        "kept": [s.to_dict() for s in kept],
        "stats": [
            {"bin": b.label, "lower": b.lower, "upper": b.upper, "count": b.count, "fraction_pct": b.fraction_pct}
            for b in (cloud_stats(scenes, thresholds) if thresholds else [])
        ],
        "rejects": [{"line": r.line, "reason": r.reason} for r in rejects],
    }
