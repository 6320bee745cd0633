"""Treatment, control and excluded zones around infrastructure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .geom import (
    DistanceMetric,
    GeoPoint,
    NodeSet,
    Polyline,
    distances_to_nodes,
    distances_to_polylines,
)

Infrastructure = Union[Sequence[Polyline], NodeSet]


class Referent(str, Enum):
    LINES = "lines"
    NODES = "nodes"


class Status(str, Enum):
    TREATED = "treated"
    CONTROL = "control"
    EXCLUDED = "excluded"


STATUS_ORDER = (Status.TREATED, Status.CONTROL, Status.EXCLUDED)


@dataclass(frozen=True)
class ZoneSpec:
    """Distance bands: treated below ``treat_radius``, control up to ``control_radius``."""

    treat_radius: float
    control_radius: float
    referent: Referent = Referent.LINES
    metric: DistanceMetric = DistanceMetric.PLANAR_DEGREES
    name: str = ""

    def __post_init__(self):
        if not 0 < self.treat_radius < self.control_radius:
            raise ValueError(
                f"need 0 < treat_radius < control_radius, got {self.treat_radius}, {self.control_radius}"
            )
        object.__setattr__(self, "referent", Referent(self.referent))
        object.__setattr__(self, "metric", DistanceMetric(self.metric))
        if not self.name:
            object.__setattr__(
                self, "name", f"{self.referent.value}_{self.treat_radius:g}_{self.control_radius:g}"
            )

    def status_of(self, distance: float) -> Status:
        if distance < self.treat_radius:
            return Status.TREATED
        if distance < self.control_radius:
            return Status.CONTROL
        return Status.EXCLUDED


@dataclass(frozen=True)
class Assignment:
    status: Status
    distance: float


@dataclass(frozen=True)
class GridSpec:
    cell_size: float

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")


def infra_distances(lons, lats, infra: Infrastructure, metric=DistanceMetric.PLANAR_DEGREES) -> np.ndarray:
    if isinstance(infra, NodeSet):
        return distances_to_nodes(lons, lats, infra, metric)
    if isinstance(infra, Polyline):
        infra = [infra]
    if len(infra) == 0:
        raise ValueError("empty infrastructure")
    return distances_to_polylines(lons, lats, list(infra), metric)


def status_codes(distances: np.ndarray, zone: ZoneSpec) -> np.ndarray:
    """0 = treated, 1 = control, 2 = excluded (indexes ``STATUS_ORDER``)."""
    d = np.asarray(distances, dtype=float)
    return np.where(d < zone.treat_radius, 0, np.where(d < zone.control_radius, 1, 2))


def classify(points: Sequence[GeoPoint], infra: Infrastructure, zone: ZoneSpec) -> list[Assignment]:
    """Assign each point a trichotomous status from its distance to ``infra``.

    The referent declared in ``zone`` must match the infrastructure type.
    """
    is_nodes = isinstance(infra, NodeSet)
    if is_nodes != (zone.referent is Referent.NODES):
        raise ValueError(
            f"zone {zone.name!r} expects {zone.referent.value} but got "
            f"{'nodes' if is_nodes else 'lines'}"
        )
    lons = np.array([p.lon for p in points], dtype=float)
    lats = np.array([p.lat for p in points], dtype=float)
    if lons.size == 0:
        # still validate the infrastructure
        infra_distances([0.0], [0.0], infra, zone.metric)
        return []
    d = infra_distances(lons, lats, infra, zone.metric)
    codes = status_codes(d, zone)
    return [Assignment(STATUS_ORDER[c], float(x)) for c, x in zip(codes, d)]


def grid_cell(p: GeoPoint, grid: GridSpec) -> tuple[int, int]:
    return (math.floor(p.lon / grid.cell_size), math.floor(p.lat / grid.cell_size))


def cell_label(cell: tuple[int, int]) -> str:
    return f"{cell[0]}_{cell[1]}"


@dataclass
class AgreementReport:
    """Cross-tabulation of two aligned classifications.

    ``matrix[i, j]`` counts observations with status ``STATUS_ORDER[i]`` in the
    first classification and ``STATUS_ORDER[j]`` in the second.
    """

    matrix: np.ndarray
    rate: float
    n: int

    def as_rows(self) -> list[dict]:
        return [
            {"status_a": a.value, "status_b": b.value, "count": int(self.matrix[i, j])}
            for i, a in enumerate(STATUS_ORDER)
            for j, b in enumerate(STATUS_ORDER)
        ]


def compare_classifications(a: Sequence[Assignment], b: Sequence[Assignment]) -> AgreementReport:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("nothing to compare")
    index = {s: i for i, s in enumerate(STATUS_ORDER)}
    matrix = np.zeros((3, 3), dtype=np.int64)
    for x, y in zip(a, b):
        matrix[index[x.status], index[y.status]] += 1
    n = len(a)
    return AgreementReport(matrix=matrix, rate=float(np.trace(matrix)) / n, n=n)
