"""DerSimonian-Laird random-effects pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class StudyEstimate:
    label: str
    estimate: float
    se: float

    def __post_init__(self):
        if not (self.se > 0 and math.isfinite(self.se)):
            raise ValueError(f"study {self.label!r}: standard error must be positive, got {self.se!r}")


@dataclass(frozen=True)
class MetaResult:
    pooled: float
    pooled_se: float
    tau_sq: float
    q: float
    fixed: float
    fixed_se: float
    weights: tuple[float, ...]

    @property
    def i_sq(self) -> float:
        df = len(self.weights) - 1
        return max(0.0, (self.q - df) / self.q) if self.q > 0 else 0.0


def dersimonian_laird(studies: Sequence[StudyEstimate]) -> MetaResult:
    """Pool study estimates with a moment estimate of between-study variance.

    ``weights`` are the random-effects weights ``1 / (se**2 + tau_sq)``.
    """
    if len(studies) < 2:
        raise ValueError("need at least two studies")
    theta = [s.estimate for s in studies]
    w = [1.0 / s.se**2 for s in studies]
    sw = math.fsum(w)
    fixed = math.fsum(wi * ti for wi, ti in zip(w, theta)) / sw
    q = math.fsum(wi * (ti - fixed) ** 2 for wi, ti in zip(w, theta))
    c = sw - math.fsum(wi * wi for wi in w) / sw
    k = len(studies)
    tau_sq = max(0.0, (q - (k - 1)) / c) if c > 0 else 0.0

    ws = [1.0 / (s.se**2 + tau_sq) for s in studies]
    sws = math.fsum(ws)
    pooled = math.fsum(wi * ti for wi, ti in zip(ws, theta)) / sws
    return MetaResult(
        pooled=pooled,
        pooled_se=1.0 / math.sqrt(sws),
        tau_sq=tau_sq,
        q=q,
        fixed=fixed,
        fixed_se=1.0 / math.sqrt(sw),
        weights=tuple(ws),
    )
