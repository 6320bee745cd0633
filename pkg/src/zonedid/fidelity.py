"""Check a zone definition against a binary broadband-coverage proxy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .femodel import cluster_sandwich
from .geom import GeoPoint
from .zones import Assignment, Status


@dataclass(frozen=True)
class CoverageObservation:
    point: GeoPoint
    covered: int
    locality: Hashable

    def __post_init__(self):
        if self.covered not in (0, 1):
            raise ValueError(f"covered must be 0 or 1, got {self.covered!r}")


@dataclass(frozen=True)
class FidelityResult:
    treated_rate: float
    control_rate: float
    treated_n: int
    control_n: int
    t_stat: float
    coef: float
    se: float


def fidelity_test(obs: Sequence[CoverageObservation], assignments: Sequence[Assignment]) -> FidelityResult:
    """Coverage rates by zone and the clustered t for their difference.

    The t statistic comes from regressing ``covered`` on an intercept and a
    treated dummy with CR1 errors clustered by locality. Excluded
    observations are dropped.
    """
    if len(obs) != len(assignments):
        raise ValueError(f"length mismatch: {len(obs)} observations, {len(assignments)} assignments")
    keep = [i for i, a in enumerate(assignments) if a.status is not Status.EXCLUDED]
    treated = np.array([assignments[i].status is Status.TREATED for i in keep], dtype=float)
    covered = np.array([obs[i].covered for i in keep], dtype=float)
    clusters = np.array([obs[i].locality for i in keep], dtype=object)

    n_t = int(treated.sum())
    n_c = len(keep) - n_t
    if n_t == 0:
        raise ValueError("treated group is empty")
    if n_c == 0:
        raise ValueError("control group is empty")
    if len(set(clusters.tolist())) < 2:
        raise ValueError("single cluster: clustered variance undefined")

    # Closed form for a dummy regression, kept in integer numerators so that
    # recoding covered -> 1 - covered negates the estimate bitwise.
    s_t = int(covered[treated == 1].sum())
    s_c = int(covered[treated == 0].sum())
    coef = (s_t * n_c - s_c * n_t) / (n_t * n_c)
    group_n = np.where(treated == 1, n_t, n_c)
    group_s = np.where(treated == 1, s_t, s_c)
    resid = (covered * group_n - group_s) / group_n
    x = np.column_stack([np.ones_like(treated), treated])
    vcov = cluster_sandwich(x, resid, clusters, dof_k=2)
    se = float(np.sqrt(vcov[1, 1]))
    if se > 0:
        t = coef / se
    else:
        # no residual variation: zero difference is t = 0, anything else is undefined
        t = 0.0 if coef == 0 else float("nan")
    return FidelityResult(
        treated_rate=s_t / n_t,
        control_rate=s_c / n_c,
        treated_n=n_t,
        control_n=n_c,
        t_stat=t,
        coef=coef,
        se=se,
    )
