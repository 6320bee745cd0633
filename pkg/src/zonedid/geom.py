"""WGS84 point, polyline and node-set geometry.

Distances come in two flavours. ``PLANAR_DEGREES`` treats (lon, lat) as
Cartesian coordinates, which is how zone radii such as 0.005 deg are stated.
``GREAT_CIRCLE_KM`` projects into a local equirectangular frame centred on the
query point and measures kilometres there; at sub-degree scales the error
against a true great-circle distance is negligible.

All distance kernels are vectorised over query points so that classifying
tens of thousands of observations stays a linear scan in numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

KM_PER_DEGREE = 111.32
#: Sphere radius consistent with ``KM_PER_DEGREE`` (one degree of arc).
EARTH_RADIUS_KM = KM_PER_DEGREE * 180.0 / math.pi

# Caps the (points x segments) work matrix in the vectorised kernels.
_CHUNK_CELLS = 4_000_000


class DistanceMetric(str, Enum):
    PLANAR_DEGREES = "planar_degrees"
    GREAT_CIRCLE_KM = "great_circle_km"


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        lon, lat = float(self.lon), float(self.lat)
        if not math.isfinite(lon) or not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {self.lon!r} outside [-180, 180]")
        if not math.isfinite(lat) or not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {self.lat!r} outside [-90, 90]")
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)


@dataclass(frozen=True)
class Polyline:
    vertices: tuple[GeoPoint, ...]

    def __post_init__(self):
        verts = tuple(self.vertices)
        if len(verts) < 2:
            raise ValueError("a polyline needs at least two vertices")
        for i in range(1, len(verts)):
            if verts[i] == verts[i - 1]:
                raise ValueError(f"consecutive vertices {i - 1} and {i} coincide")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_coords(cls, coords: Iterable[Sequence[float]]) -> "Polyline":
        return cls(tuple(GeoPoint(c[0], c[1]) for c in coords))

    def segment_array(self) -> np.ndarray:
        """Return an ``(m, 4)`` array of ``ax, ay, bx, by`` rows."""
        xy = np.array([(v.lon, v.lat) for v in self.vertices], dtype=float)
        return np.hstack([xy[:-1], xy[1:]])


@dataclass(frozen=True)
class NodeSet:
    nodes: tuple[GeoPoint, ...]
    year: int | None = None

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if not nodes:
            raise ValueError("a node set needs at least one node")
        object.__setattr__(self, "nodes", nodes)

    def coord_array(self) -> np.ndarray:
        return np.array([(n.lon, n.lat) for n in self.nodes], dtype=float)


@dataclass(frozen=True)
class JitterSpec:
    """Uniform-angle, uniform-distance displacement of at most ``max_radius_km``."""

    max_radius_km: float
    seed: int = 0

    def __post_init__(self):
        if not self.max_radius_km >= 0:
            raise ValueError("max_radius_km must be nonnegative")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _canonical_order(ax, ay, bx, by):
    # Sorting endpoints makes the result bitwise symmetric in (a, b).
    swap = (bx < ax) | ((bx == ax) & (by < ay))
    return (
        np.where(swap, bx, ax),
        np.where(swap, by, ay),
        np.where(swap, ax, bx),
        np.where(swap, ay, by),
    )


def _planar_segment_distance(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    len2 = dx * dx + dy * dy
    num = (px - ax) * dx + (py - ay) * dy
    # len2 underflows to 0 only for sub-1e-154 segments; treat those as points
    t = np.divide(num, len2, out=np.zeros(np.broadcast(num, len2).shape), where=len2 > 0)
    # endpoints are used verbatim so vertex distances are exact
    cx = np.where(t <= 0, ax, np.where(t >= 1, bx, ax + t * dx))
    cy = np.where(t <= 0, ay, np.where(t >= 1, by, ay + t * dy))
    return np.hypot(px - cx, py - cy)


def _wrap_lon(delta):
    return (delta + 180.0) % 360.0 - 180.0


def _project_km(px, py, qx, qy):
    """Equirectangular km offsets of ``q`` relative to ``p``."""
    kx = KM_PER_DEGREE * np.cos(np.radians(py))
    return _wrap_lon(qx - px) * kx, (qy - py) * KM_PER_DEGREE


def _segment_distances(px, py, seg, metric):
    """Distances between points (column vectors) and segments (row vectors)."""
    ax, ay, bx, by = _canonical_order(seg[:, 0], seg[:, 1], seg[:, 2], seg[:, 3])
    if metric is DistanceMetric.PLANAR_DEGREES:
        return _planar_segment_distance(px, py, ax, ay, bx, by)
    ux, uy = _project_km(px, py, ax, ay)
    vx, vy = _project_km(px, py, bx, by)
    return _planar_segment_distance(0.0, 0.0, ux, uy, vx, vy)


def _point_distances(px, py, q, metric):
    if metric is DistanceMetric.PLANAR_DEGREES:
        return np.hypot(q[:, 0] - px, q[:, 1] - py)
    ux, uy = _project_km(px, py, q[:, 0], q[:, 1])
    return np.hypot(ux, uy)


def _min_over(lons, lats, ref, kernel, metric):
    lons = np.asarray(lons, dtype=float).ravel()
    lats = np.asarray(lats, dtype=float).ravel()
    out = np.empty(lons.shape[0])
    step = max(1, _CHUNK_CELLS // max(1, ref.shape[0]))
    for start in range(0, lons.shape[0], step):
        sl = slice(start, start + step)
        d = kernel(lons[sl, None], lats[sl, None], ref, metric)
        out[sl] = d.min(axis=1)
    return out


def _as_metric(metric) -> DistanceMetric:
    return DistanceMetric(metric)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def dist_point_segment(
    p: GeoPoint,
    a: GeoPoint,
    b: GeoPoint,
    metric: DistanceMetric = DistanceMetric.PLANAR_DEGREES,
) -> float:
    """Minimum distance from ``p`` to the closed segment ``ab``.

    Raises ``ValueError`` when ``a == b``.
    """
    if a == b:
        raise ValueError("degenerate segment: endpoints coincide")
    seg = np.array([[a.lon, a.lat, b.lon, b.lat]])
    return float(_segment_distances(p.lon, p.lat, seg, _as_metric(metric))[0])


def _stack_segments(lines: Sequence[Polyline]) -> np.ndarray:
    if not lines:
        raise ValueError("empty line set")
    return np.vstack([ln.segment_array() for ln in lines])


def distances_to_polylines(lons, lats, lines: Sequence[Polyline], metric=DistanceMetric.PLANAR_DEGREES) -> np.ndarray:
    """Vectorised ``dist_to_polylines`` over arrays of coordinates."""
    seg = _stack_segments(lines)
    return _min_over(lons, lats, seg, _segment_distances, _as_metric(metric))


def distances_to_nodes(lons, lats, nodes: NodeSet, metric=DistanceMetric.PLANAR_DEGREES) -> np.ndarray:
    """Vectorised ``dist_to_nodes`` over arrays of coordinates."""
    return _min_over(lons, lats, nodes.coord_array(), _point_distances, _as_metric(metric))


def dist_to_polylines(p: GeoPoint, lines: Sequence[Polyline], metric=DistanceMetric.PLANAR_DEGREES) -> float:
    return float(distances_to_polylines([p.lon], [p.lat], lines, metric)[0])


def dist_to_nodes(p: GeoPoint, nodes: NodeSet, metric=DistanceMetric.PLANAR_DEGREES) -> float:
    return float(distances_to_nodes([p.lon], [p.lat], nodes, metric)[0])


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance on a sphere of radius ``EARTH_RADIUS_KM``."""
    la1, la2 = math.radians(a.lat), math.radians(b.lat)
    dlat = la2 - la1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(la1) * math.cos(la2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


# ---------------------------------------------------------------------------
# survey-coordinate jitter
# ---------------------------------------------------------------------------


def jitter_offsets(n: int, max_radius_km: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` east/north displacements in km.

    Distance and angle are each uniform, so the mean absolute displacement
    along either axis is ``max_radius_km / pi``.
    """
    rho = rng.uniform(0.0, max_radius_km, n)
    theta = rng.uniform(0.0, 2 * math.pi, n)
    return rho * np.cos(theta), rho * np.sin(theta)


def _displace(lon, lat, dx_km, dy_km):
    new_lat = np.clip(lat + dy_km / KM_PER_DEGREE, -90.0, 90.0)
    coslat = np.maximum(np.cos(np.radians(lat)), 1e-12)
    new_lon = _wrap_lon(lon + dx_km / (KM_PER_DEGREE * coslat))
    return new_lon, new_lat


def jitter(p: GeoPoint, spec: JitterSpec) -> GeoPoint:
    """Displace one point; deterministic given ``spec.seed``."""
    if spec.max_radius_km == 0:
        return p
    rng = np.random.default_rng(spec.seed)
    dx, dy = jitter_offsets(1, spec.max_radius_km, rng)
    lon, lat = _displace(p.lon, p.lat, dx[0], dy[0])
    return GeoPoint(float(lon), float(lat))


def jitter_points(points: Sequence[GeoPoint], spec: JitterSpec) -> list[GeoPoint]:
    """Displace a batch of points from a single generator seeded by ``spec``."""
    if spec.max_radius_km == 0:
        return list(points)
    rng = np.random.default_rng(spec.seed)
    dx, dy = jitter_offsets(len(points), spec.max_radius_km, rng)
    lon = np.array([p.lon for p in points])
    lat = np.array([p.lat for p in points])
    new_lon, new_lat = _displace(lon, lat, dx, dy)
    return [GeoPoint(float(x), float(y)) for x, y in zip(new_lon, new_lat)]
