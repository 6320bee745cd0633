"""Readers and writers for observation CSVs and infrastructure GeoJSON."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import pandas as pd

from .geom import GeoPoint, NodeSet, Polyline

REQUIRED_COLUMNS = ("id", "lon", "lat")
OPTIONAL_COLUMNS = ("covered", "locality", "outcome", "country", "year")

_LINE_TYPES = {"LineString", "MultiLineString"}
_NODE_TYPES = {"Point", "MultiPoint"}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class PointRecord:
    id: str
    point: GeoPoint
    covered: int | None = None
    locality: str | None = None
    outcome: float | None = None
    country: str | None = None
    year: int | None = None


def _parse_optional(name: str, raw: str, lineno: int):
    if raw is None or raw.strip() == "":
        return None
    raw = raw.strip()
    try:
        if name == "covered":
            v = int(raw)
            if v not in (0, 1):
                raise ValueError
            return v
        if name == "year":
            return int(raw)
        if name == "outcome":
            return float(raw)
    except ValueError:
        raise IngestError(f"line {lineno}: bad {name} value {raw!r}") from None
    return raw


def ingest_points(path) -> list[PointRecord]:
    """Read a UTF-8 CSV with at least ``id, lon, lat`` columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise IngestError(f"{path}: missing required column {col!r}")
        present = [c for c in OPTIONAL_COLUMNS if c in header]
        out = []
        for row in reader:
            lineno = reader.line_num
            try:
                lon, lat = float(row["lon"]), float(row["lat"])
            except (TypeError, ValueError):
                raise IngestError(
                    f"line {lineno}: unparseable coordinate ({row['lon']!r}, {row['lat']!r})"
                ) from None
            try:
                pt = GeoPoint(lon, lat)
            except ValueError as exc:
                raise IngestError(f"line {lineno} (id {row['id']!r}): {exc}") from None
            extras = {c: _parse_optional(c, row.get(c), lineno) for c in present}
            out.append(PointRecord(id=row["id"], point=pt, **extras))
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_points(records: Sequence[PointRecord], path, columns: Sequence[str] | None = None) -> None:
    """Write records in canonical form (``repr`` floats, LF line endings)."""
    if columns is None:
        columns = [c for c in OPTIONAL_COLUMNS if any(getattr(r, c) is not None for r in records)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*REQUIRED_COLUMNS, *columns])
        for r in records:
            w.writerow([r.id, repr(r.point.lon), repr(r.point.lat), *(_cell(getattr(r, c)) for c in columns)])


def points_frame(records: Sequence[PointRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "id": [r.id for r in records],
            "lon": [r.point.lon for r in records],
            "lat": [r.point.lat for r in records],
            **{c: [getattr(r, c) for r in records] for c in OPTIONAL_COLUMNS},
        }
    )


def _polyline(coords, where: str) -> Polyline:
    pts = []
    for c in coords:
        if len(c) < 2:
            raise IngestError(f"{where}: coordinate {c!r} has fewer than two values")
        p = GeoPoint(c[0], c[1])
        if not pts or pts[-1] != p:
            pts.append(p)
    if len(pts) < 2:
        raise IngestError(f"{where}: line has fewer than two distinct vertices")
    return Polyline(tuple(pts))


def ingest_infrastructure(path, max_year: int | None = None) -> list[Polyline] | NodeSet:
    """Parse a GeoJSON FeatureCollection of lines or of points.

    Lines become a list of ``Polyline`` (one per LineString part); points
    become a ``NodeSet``. With ``max_year``, features whose ``year`` property
    exceeds it are skipped.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: malformed GeoJSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise IngestError(f"{path}: expected a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise IngestError(f"{path}: FeatureCollection has no feature list")

    lines: list[Polyline] = []
    nodes: list[GeoPoint] = []
    kinds = set()
    for i, feat in enumerate(features):
        geom = (feat or {}).get("geometry") if isinstance(feat, dict) else None
        if not isinstance(geom, dict) or "type" not in geom:
            raise IngestError(f"{path}: feature {i} has no geometry")
        props = feat.get("properties") or {}
        if max_year is not None and props.get("year") is not None and int(props["year"]) > max_year:
            continue
        gtype, coords = geom["type"], geom.get("coordinates")
        where = f"{path}: feature {i}"
        try:
            if gtype == "LineString":
                lines.append(_polyline(coords, where))
            elif gtype == "MultiLineString":
                lines.extend(_polyline(part, f"{where} part {j}") for j, part in enumerate(coords))
            elif gtype == "Point":
                nodes.append(GeoPoint(coords[0], coords[1]))
            elif gtype == "MultiPoint":
                nodes.extend(GeoPoint(c[0], c[1]) for c in coords)
            else:
                raise IngestError(f"{where}: unsupported geometry type {gtype!r}")
        except (TypeError, IndexError, ValueError) as exc:
            if isinstance(exc, IngestError):
                raise
            raise IngestError(f"{where}: bad coordinates: {exc}") from None
        kinds.add("lines" if gtype in _LINE_TYPES else "nodes")
    if len(kinds) > 1:
        raise IngestError(f"{path}: mixes point and line geometries")
    if lines:
        return lines
    if nodes:
        return NodeSet(tuple(nodes), year=max_year)
    raise IngestError(f"{path}: empty feature collection")
