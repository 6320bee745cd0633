"""Nighttime-light grids: validation, block downsampling, intercalibration,
ESRI-ASCII I/O and construction of the cell-year regression panel.

Grids are stored north-up: row 0 is the northern edge, as in ESRI ASCII
files, and ``(xll, yll)`` is the lower-left corner of the raster.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .femodel import asinh_transform
from .geom import GeoPoint
from .zones import (
    GridSpec,
    Infrastructure,
    ZoneSpec,
    cell_label,
    grid_cell,
    infra_distances,
    status_codes,
)

DN_MIN, DN_MAX = 0, 63
NATIVE_RESOLUTION = 1.0 / 120.0


class GridValueError(ValueError):
    pass


@dataclass(frozen=True)
class LightGrid:
    values: np.ndarray
    resolution: float
    xll: float
    yll: float
    year: int = 0
    satellite: str = ""
    nodata: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Longitude and latitude of every cell centre, as 2-D arrays."""
        nrows, ncols = self.values.shape
        lon = self.xll + (np.arange(ncols) + 0.5) * self.resolution
        lat = self.yll + (nrows - np.arange(nrows) - 0.5) * self.resolution
        return np.meshgrid(lon, lat)

    def same_extent(self, other: "LightGrid") -> bool:
        return (
            self.values.shape == other.values.shape
            and np.isclose(self.resolution, other.resolution, rtol=0, atol=1e-12)
            and np.isclose(self.xll, other.xll, rtol=0, atol=1e-9)
            and np.isclose(self.yll, other.yll, rtol=0, atol=1e-9)
        )


@dataclass(frozen=True)
class GridValidation:
    grid: LightGrid
    has_ones: bool


@dataclass(frozen=True)
class CalibrationFit:
    c0: float
    c1: float
    c2: float
    rmse: float
    reference_year: int
    n_cells: int

    def apply(self, dn):
        dn = np.asarray(dn, dtype=float)
        return np.maximum(self.c0 + self.c1 * dn + self.c2 * dn * dn, 0.0)


def validate_grid(grid: LightGrid, recode_zero: bool = False) -> GridValidation:
    """Check raw digital numbers lie in [0, 63].

    Raw stable-lights data code the darkest pixels 0 and never contain 1;
    ``has_ones`` reports whether that holds. With ``recode_zero`` zeros are
    rewritten to ones.
    """
    v = grid.values
    valid = np.ones(v.shape, dtype=bool) if grid.nodata is None else v != grid.nodata
    bad = valid & ((v < DN_MIN) | (v > DN_MAX) | ~np.isfinite(v))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise GridValueError(
            f"cell (row {r}, col {c}) has value {v[r, c]!r} outside [{DN_MIN}, {DN_MAX}]"
            f" ({int(bad.sum())} offending cells)"
        )
    has_ones = bool((valid & (v == 1)).any())
    if recode_zero:
        new = v.copy()
        new[valid & (v == 0)] = 1
        grid = replace(grid, values=new)
    return GridValidation(grid=grid, has_ones=has_ones)


def downsample(grid: LightGrid, factor: int) -> LightGrid:
    """Average non-overlapping ``factor x factor`` blocks."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    nrows, ncols = grid.values.shape
    if nrows % factor or ncols % factor:
        raise ValueError(f"grid {nrows}x{ncols} is not divisible by {factor}")
    if factor == 1:
        return grid
    v = np.asarray(grid.values, dtype=float)
    blocks = v.reshape(nrows // factor, factor, ncols // factor, factor)
    return replace(grid, values=blocks.mean(axis=(1, 3)), resolution=grid.resolution * factor)


def intercalibrate(
    target: LightGrid, reference: LightGrid, region: np.ndarray
) -> tuple[CalibrationFit, LightGrid]:
    """Least-squares quadratic map of ``target`` onto ``reference`` over ``region``.

    The fitted map is applied to every cell of ``target`` and floored at 0.
    """
    if not target.same_extent(reference):
        raise ValueError("target and reference grids differ in extent or resolution")
    region = np.asarray(region, dtype=bool)
    if region.shape != target.values.shape:
        raise ValueError(f"region mask shape {region.shape} != grid shape {target.values.shape}")
    dn = np.asarray(target.values, dtype=float)[region]
    ref = np.asarray(reference.values, dtype=float)[region]
    if np.unique(dn).size < 3:
        raise ValueError("calibration region needs at least 3 distinct target values (rank-deficient fit)")
    design = np.column_stack([np.ones_like(dn), dn, dn * dn])
    coef, *_ = np.linalg.lstsq(design, ref, rcond=None)
    resid = design @ coef - ref
    fit = CalibrationFit(
        c0=float(coef[0]),
        c1=float(coef[1]),
        c2=float(coef[2]),
        rmse=float(np.sqrt(np.mean(resid**2))),
        reference_year=reference.year,
        n_cells=int(dn.size),
    )
    return fit, replace(target, values=fit.apply(target.values))


def region_mask(grid: LightGrid, bbox: Sequence[float]) -> np.ndarray:
    """Cells whose centre lies in ``(min_lon, min_lat, max_lon, max_lat)``."""
    lon, lat = grid.cell_centers()
    x0, y0, x1, y1 = bbox
    return (lon >= x0) & (lon <= x1) & (lat >= y0) & (lat <= y1)


# ---------------------------------------------------------------------------
# ESRI ASCII grid I/O
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _fmt(x, integer: bool) -> str:
    return str(int(x)) if integer else repr(float(x))


def read_ascii_grid(path, year: int = 0, satellite: str = "") -> LightGrid:
    """Read an ESRI-ASCII-style raster.

    Integer-valued files come back as an ``int64`` array so that writing
    them out again reproduces the input byte for byte.
    """
    text = Path(path).read_text()
    tokens = text.split()
    header: dict[str, str] = {}
    pos = 0
    while pos + 1 < len(tokens) and tokens[pos].lower() in _HEADER_KEYS + ("xllcenter", "yllcenter"):
        header[tokens[pos].lower()] = tokens[pos + 1]
        pos += 2
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise ValueError(f"{path}: missing header field {key!r}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    size = float(header["cellsize"])
    if "xllcorner" in header:
        xll = float(header["xllcorner"])
    elif "xllcenter" in header:
        xll = float(header["xllcenter"]) - size / 2
    else:
        raise ValueError(f"{path}: missing xllcorner")
    if "yllcorner" in header:
        yll = float(header["yllcorner"])
    elif "yllcenter" in header:
        yll = float(header["yllcenter"]) - size / 2
    else:
        raise ValueError(f"{path}: missing yllcorner")
    body = tokens[pos:]
    if len(body) != ncols * nrows:
        raise ValueError(f"{path}: expected {ncols * nrows} values, found {len(body)}")
    integer = all(("." not in t and "e" not in t.lower() and "n" not in t.lower()) for t in body)
    values = np.array(body, dtype=np.int64 if integer else float).reshape(nrows, ncols)
    nodata = None
    if "nodata_value" in header:
        nd = header["nodata_value"]
        nodata = int(nd) if integer and "." not in nd else float(nd)
    return LightGrid(values=values, resolution=size, xll=xll, yll=yll, year=year, satellite=satellite, nodata=nodata)


def write_ascii_grid(grid: LightGrid, path) -> None:
    integer = np.issubdtype(grid.values.dtype, np.integer)
    nrows, ncols = grid.values.shape
    lines = [
        f"ncols {ncols}",
        f"nrows {nrows}",
        f"xllcorner {grid.xll!r}",
        f"yllcorner {grid.yll!r}",
        f"cellsize {grid.resolution!r}",
    ]
    if grid.nodata is not None:
        lines.append(f"NODATA_value {_fmt(grid.nodata, isinstance(grid.nodata, (int, np.integer)))}")
    for row in grid.values:
        lines.append(" ".join(_fmt(v, integer) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# panel construction
# ---------------------------------------------------------------------------


def _connection_year(events, country):
    ev = events[country]
    if isinstance(ev, (list, tuple, set, frozenset)):
        if not ev:
            raise ValueError(f"country {country!r} has an empty event list")
        return min(ev)
    return ev


def build_light_panel(
    grids: Sequence[LightGrid],
    infra: Infrastructure,
    zone: ZoneSpec,
    grid_spec: GridSpec,
    country_mask,
    events: Mapping,
) -> pd.DataFrame:
    """One row per (light cell, year) inside a treatment or control zone.

    ``country_mask`` is a 2-D array aligned with the grids holding a country
    label per cell (``None`` or ``""`` marks cells outside the sample).
    ``events`` maps each country to its connection year, or to a collection
    of years when it was connected more than once; ``post`` switches on at
    the first and never exceeds 1.

    Columns: ``country, year, row, col, lon, lat, cell, treated, post,
    treated_post, dn, y, fe_country_year, fe_cell_treated, cluster`` where
    ``y = asinh(dn)``.
    """
    if not grids:
        raise ValueError("no grids")
    first = grids[0]
    for g in grids[1:]:
        if not first.same_extent(g):
            raise ValueError(f"grid for year {g.year} does not match the extent of year {first.year}")
    mask = np.asarray(country_mask, dtype=object)
    if mask.shape != first.values.shape:
        raise ValueError(f"country mask shape {mask.shape} != grid shape {first.values.shape}")

    lon, lat = first.cell_centers()
    inside = np.array([m is not None and m == m and m != "" for m in mask.ravel()]).reshape(mask.shape)
    rows_idx, cols_idx = np.nonzero(inside)
    clon, clat = lon[rows_idx, cols_idx], lat[rows_idx, cols_idx]
    codes = status_codes(infra_distances(clon, clat, infra, zone.metric), zone)
    keep = codes < 2
    rows_idx, cols_idx, clon, clat = rows_idx[keep], cols_idx[keep], clon[keep], clat[keep]
    treated = (codes[keep] == 0).astype(int)
    countries = mask[rows_idx, cols_idx]
    missing = sorted({str(c) for c in countries if c not in events})
    if missing:
        raise ValueError(f"no connection event for countries: {missing}")
    conn = np.array([_connection_year(events, c) for c in countries])
    cells = [cell_label(grid_cell(GeoPoint(x, y), grid_spec)) for x, y in zip(clon, clat)]

    frames = []
    for g in sorted(grids, key=lambda g: g.year):
        dn = np.asarray(g.values, dtype=float)[rows_idx, cols_idx]
        post = (g.year >= conn).astype(int)
        frames.append(
            pd.DataFrame(
                {
                    "country": countries,
                    "year": g.year,
                    "row": rows_idx,
                    "col": cols_idx,
                    "lon": clon,
                    "lat": clat,
                    "cell": cells,
                    "treated": treated,
                    "post": post,
                    "treated_post": treated * post,
                    "dn": dn,
                    "y": asinh_transform(dn),
                }
            )
        )
    panel = pd.concat(frames, ignore_index=True)
    panel["fe_country_year"] = panel["country"].astype(str) + ":" + panel["year"].astype(str)
    panel["fe_cell_treated"] = panel["cell"] + ":" + panel["treated"].astype(str)
    panel["cluster"] = panel["cell"]
    return panel
