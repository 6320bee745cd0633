"""Linear regression with absorbed fixed effects and cluster-robust errors.

Fixed effects are swept out by cyclic group demeaning (alternating
projections), so any number of crossed or nested dimensions can be absorbed
without building dummy matrices. The variance estimator is the CR1 cluster
sandwich.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

COLLINEAR_RTOL = 1e-10


class ConvergenceError(RuntimeError):
    pass


class IdentificationError(ValueError):
    pass


@dataclass
class RegressionSpec:
    outcome: str
    regressors: list[str]
    fe: list[str] = field(default_factory=list)
    cluster: str | None = None
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        self.regressors = list(self.regressors)
        self.fe = list(self.fe)
        if not self.regressors:
            raise ValueError("at least one regressor is required")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def columns(self) -> list[str]:
        cols = [self.outcome, *self.regressors, *self.fe]
        if self.cluster is not None:
            cols.append(self.cluster)
        return list(dict.fromkeys(cols))


@dataclass
class FitResult:
    coef: dict[str, float]
    se: dict[str, float]
    collinear: dict[str, bool]
    n_obs: int
    n_singletons: int
    n_missing: int
    n_clusters: int
    iterations: int
    dof_k: int
    vcov: np.ndarray | None = None

    def tstat(self, name: str) -> float:
        return self.coef[name] / self.se[name]

    def to_frame(self) -> pd.DataFrame:
        names = list(self.coef)
        return pd.DataFrame(
            {
                "term": names,
                "coef": [self.coef[k] for k in names],
                "se": [self.se[k] for k in names],
                "t": [self.coef[k] / self.se[k] if self.se[k] > 0 else np.nan for k in names],
                "collinear": [self.collinear[k] for k in names],
            }
        )


def _check_columns(frame: pd.DataFrame, names: Sequence[str]):
    missing = [c for c in names if c not in frame.columns]
    if missing:
        raise KeyError(f"columns not in frame: {missing}")


def drop_singletons(frame: pd.DataFrame, fe_dims: Sequence[str]) -> tuple[pd.DataFrame, int]:
    """Repeatedly remove rows that are alone in some fixed-effect group.

    Returns the reduced frame and the number of rows removed.
    """
    _check_columns(frame, fe_dims)
    if not fe_dims:
        return frame, 0
    codes = [pd.factorize(frame[d])[0] for d in fe_dims]
    keep = np.ones(len(frame), dtype=bool)
    while True:
        changed = False
        for c in codes:
            counts = np.bincount(c[keep], minlength=c.max() + 1 if c.size else 0)
            lone = keep & (counts[c] == 1)
            if lone.any():
                keep &= ~lone
                changed = True
        if not changed:
            break
    if not keep.any():
        raise IdentificationError("every row is a fixed-effect singleton")
    dropped = int((~keep).sum())
    return frame.loc[keep], dropped


def _fe_codes(frame: pd.DataFrame, fe_dims: Sequence[str]) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for d in fe_dims:
        c, uniq = pd.factorize(frame[d])
        out.append((c, np.bincount(c, minlength=len(uniq)).astype(float)))
    return out


def _demean_once(x: np.ndarray, codes: np.ndarray, counts: np.ndarray) -> np.ndarray:
    g = counts.shape[0]
    means = np.empty((g, x.shape[1]))
    for j in range(x.shape[1]):
        means[:, j] = np.bincount(codes, weights=x[:, j], minlength=g)
    means /= counts[:, None]
    return x - means[codes]


def absorb_array(
    x: np.ndarray,
    fe_codes: list[tuple[np.ndarray, np.ndarray]],
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, int]:
    """Residualise the columns of ``x`` on every fixed-effect dimension.

    Returns the demeaned array and the number of full passes used.
    """
    x = np.array(x, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[:, None]
    if not fe_codes:
        return x, 0
    if len(fe_codes) == 1:
        c, n = fe_codes[0]
        return _demean_once(x, c, n), 1
    def sweep(v):
        for c, n in fe_codes:
            v = _demean_once(v, c, n)
        return v

    delta = np.inf
    it = 0
    while it < max_iter:
        x1 = sweep(x)
        it += 1
        delta_a = float(np.max(np.abs(x1 - x))) if x.size else 0.0
        if delta_a == 0.0:
            return x1, it
        x2 = sweep(x1)
        it += 1
        d1 = x2 - x1
        delta = float(np.max(np.abs(d1)))
        # Stop on a per-pass change below tol, provided the geometric tail
        # still to come (delta * rho / (1 - rho)) is below tol as well.
        rho = delta / delta_a
        if delta < tol and (delta == 0.0 or (rho < 1 and delta * rho / (1 - rho) < tol)):
            return x2, it
        # Irons-Tuck extrapolation, column by column. Every step stays inside
        # x + span(fixed-effect dummies), so the fixed point is unchanged.
        d2 = d1 - (x1 - x)
        num = np.einsum("ij,ij->j", d1, d2)
        den = np.einsum("ij,ij->j", d2, d2)
        coef = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        x = x2 - coef * d1
    raise ConvergenceError(f"demeaning did not converge in {max_iter} passes (last change {delta:.3e})")


def absorb(
    frame: pd.DataFrame,
    fe_dims: Sequence[str],
    columns: Sequence[str],
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> tuple[pd.DataFrame, int]:
    """Demean ``columns`` of ``frame`` within all ``fe_dims`` groups."""
    _check_columns(frame, [*fe_dims, *columns])
    x = frame[list(columns)].to_numpy(dtype=float)
    out, iters = absorb_array(x, _fe_codes(frame, fe_dims), tol, max_iter)
    return pd.DataFrame(out, columns=list(columns), index=frame.index), iters


def cluster_sandwich(
    x: np.ndarray, resid: np.ndarray, clusters: np.ndarray, dof_k: int
) -> np.ndarray:
    """CR1 variance: ``M/(M-1) * (N-1)/(N-K)`` times the cluster sandwich."""
    n = x.shape[0]
    codes, uniq = pd.factorize(clusters)
    m = len(uniq)
    if m < 2:
        raise IdentificationError("need at least two clusters for a clustered variance")
    if n - dof_k <= 0:
        raise IdentificationError(f"no residual degrees of freedom (N={n}, K={dof_k})")
    scores = np.zeros((m, x.shape[1]))
    np.add.at(scores, codes, x * resid[:, None])
    bread = np.linalg.inv(x.T @ x)
    meat = scores.T @ scores
    factor = m / (m - 1) * (n - 1) / (n - dof_k)
    return factor * bread @ meat @ bread


def _flag_collinear(xt: np.ndarray, raw_scale: np.ndarray) -> np.ndarray:
    """Mark regressors whose demeaned column, net of earlier kept ones, has no variation."""
    flags = np.zeros(xt.shape[1], dtype=bool)
    kept: list[int] = []
    for j in range(xt.shape[1]):
        col = xt[:, j]
        if kept:
            basis = xt[:, kept]
            beta = np.linalg.lstsq(basis, col, rcond=None)[0]
            col = col - basis @ beta
        if col @ col <= COLLINEAR_RTOL * raw_scale[j]:
            flags[j] = True
        else:
            kept.append(j)
    return flags


def fit(frame: pd.DataFrame, spec: RegressionSpec) -> FitResult:
    """OLS of ``spec.outcome`` on ``spec.regressors`` net of fixed effects.

    Rows with missing values in any used column are dropped first, then
    fixed-effect singletons. With no fixed effects no intercept is added;
    include a constant column among the regressors if one is wanted.
    """
    _check_columns(frame, spec.columns())
    used = frame[spec.columns()]
    complete = used.notna().all(axis=1).to_numpy()
    n_missing = int((~complete).sum())
    data = used.loc[complete]
    if data.empty:
        raise IdentificationError("no complete rows")
    data, n_single = drop_singletons(data, spec.fe)

    fe_codes = _fe_codes(data, spec.fe)
    cols = [spec.outcome, *spec.regressors]
    raw = data[cols].to_numpy(dtype=float)
    demeaned, iters = absorb_array(raw, fe_codes, spec.tol, spec.max_iter)
    y, xt = demeaned[:, 0], demeaned[:, 1:]

    xr = raw[:, 1:]
    if spec.fe:
        raw_scale = ((xr - xr.mean(axis=0)) ** 2).sum(axis=0)
    else:
        raw_scale = (xr**2).sum(axis=0)
    flags = _flag_collinear(xt, raw_scale)
    if flags.all():
        raise IdentificationError("no identifying variation: every regressor is collinear with the fixed effects")
    for name, f in zip(spec.regressors, flags):
        if f:
            log.warning("regressor %r is collinear with the fixed effects and was dropped", name)

    xk = xt[:, ~flags]
    beta = np.linalg.solve(xk.T @ xk, xk.T @ y)
    resid = y - xk @ beta

    fe_dof = sum(len(n) for _, n in fe_codes) - len(fe_codes)
    dof_k = xk.shape[1] + fe_dof
    clusters = data[spec.cluster].to_numpy() if spec.cluster is not None else np.arange(len(data))
    vcov = cluster_sandwich(xk, resid, clusters, dof_k)
    # rounding can leave a tiny negative diagonal when residuals are ~0
    se_kept = np.sqrt(np.maximum(np.diag(vcov), 0.0))

    coef, se, coll = {}, {}, {}
    it = iter(zip(beta, se_kept))
    for name, f in zip(spec.regressors, flags):
        coll[name] = bool(f)
        if f:
            coef[name], se[name] = np.nan, np.nan
        else:
            b, s = next(it)
            coef[name], se[name] = float(b), float(s)
    return FitResult(
        coef=coef,
        se=se,
        collinear=coll,
        n_obs=len(data),
        n_singletons=n_single,
        n_missing=n_missing,
        n_clusters=len(pd.unique(clusters)),
        iterations=iters,
        dof_k=dof_k,
        vcov=vcov,
    )


def event_time_effects(
    frame: pd.DataFrame,
    spec: RegressionSpec,
    time_dim: str,
    reference_time,
    treated: str = "treated",
    controls: Sequence[str] = (),
) -> pd.DataFrame:
    """Treated-by-period effects relative to ``reference_time``.

    The regressors of ``spec`` are replaced by ``treated * 1{time == tau}``
    for every period except the reference, plus any ``controls``. Returns one
    row per period, ordered by time, with the reference pinned at zero.
    """
    _check_columns(frame, [time_dim, treated])
    times = sorted(pd.unique(frame[time_dim]))
    if reference_time not in times:
        raise ValueError(f"reference time {reference_time!r} not present in {time_dim!r}")
    work = frame.copy()
    dummies = []
    tr = work[treated].to_numpy(dtype=float)
    tv = work[time_dim].to_numpy()
    for tau in times:
        if tau == reference_time:
            continue
        name = f"_evt_{tau}"
        work[name] = tr * (tv == tau)
        dummies.append((tau, name))
    es = RegressionSpec(
        outcome=spec.outcome,
        regressors=[n for _, n in dummies] + list(controls),
        fe=spec.fe,
        cluster=spec.cluster,
        tol=spec.tol,
        max_iter=spec.max_iter,
    )
    res = fit(work, es)
    rows = []
    lookup = dict(dummies)
    for tau in times:
        if tau == reference_time:
            rows.append((tau, 0.0, 0.0, False))
        else:
            n = lookup[tau]
            rows.append((tau, res.coef[n], res.se[n], res.collinear[n]))
    return pd.DataFrame(rows, columns=["time", "coef", "se", "collinear"])


def asinh_transform(x):
    """Inverse hyperbolic sine, ``ln(x + sqrt(x**2 + 1))``."""
    return np.arcsinh(x)
