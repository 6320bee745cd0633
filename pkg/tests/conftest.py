import numpy as np
import pandas as pd
import pytest


def random_fe_frame(seed: int, max_rows: int = 200, max_dims: int = 3, max_clusters: int = 10) -> tuple[pd.DataFrame, list[str]]:
    """Random frame with up to ``max_dims`` crossed fixed effects and two regressors."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(40, max_rows + 1))
    nd = int(rng.integers(1, max_dims + 1))
    fe = [f"f{j}" for j in range(nd)]
    df = pd.DataFrame({d: rng.integers(0, rng.integers(3, 12), n) for d in fe})
    df["x1"] = rng.normal(size=n)
    df["x2"] = rng.normal(size=n) + 0.3 * df["f0"]
    df["cl"] = rng.integers(0, rng.integers(2, max_clusters + 1), n)
    df["y"] = 1.5 * df["x1"] - 0.7 * df["x2"] + 0.2 * df["f0"] + rng.normal(size=n)
    return df, fe


def dummy_ols(df: pd.DataFrame, outcome: str, regressors: list[str], fe: list[str], cluster: str):
    """Explicit dummy-variable OLS with a hand-assembled CR1 sandwich.

    Assumes singletons are already gone. K counts the regressors plus
    (levels - 1) per fixed-effect dimension.
    """
    cols = [df[r].to_numpy(float) for r in regressors] + [np.ones(len(df))]
    for d in fe:
        dm = pd.get_dummies(df[d], drop_first=True).to_numpy(float)
        cols.extend(dm.T)
    x = np.column_stack(cols)
    y = df[outcome].to_numpy(float)
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    u = y - x @ beta
    bread = np.linalg.pinv(x.T @ x)
    codes, uniq = pd.factorize(df[cluster])
    m = len(uniq)
    scores = np.zeros((m, x.shape[1]))
    for g in range(m):
        sel = codes == g
        scores[g] = x[sel].T @ u[sel]
    n = len(df)
    k = len(regressors) + sum(df[d].nunique() - 1 for d in fe)
    v = m / (m - 1) * (n - 1) / (n - k) * bread @ scores.T @ scores @ bread
    p = len(regressors)
    return beta[:p], np.sqrt(np.diag(v))[:p]


def brute_segment_distance(p, a, b):
    """Planar point-segment distance via dense parameter sampling refined by ternary search."""
    px, py = p
    ax, ay = a
    bx, by = b

    def d(t):
        return np.hypot(px - (ax + t * (bx - ax)), py - (ay + t * (by - ay)))

    lo, hi = 0.0, 1.0
    for _ in range(200):
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if d(m1) < d(m2):
            hi = m2
        else:
            lo = m1
    return float(min(d(0.0), d(1.0), d((lo + hi) / 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
