"""Two-way fixed-effects helpers shared by the forest and the regression estimators."""

from typing import Tuple

import numpy as np
from scipy import stats


def encode(values) -> Tuple[np.ndarray, int]:
    """Map arbitrary labels to dense 0..n-1 codes."""
    uniq, codes = np.unique(np.asarray(values), return_inverse=True)
    return codes.astype(np.intp).ravel(), len(uniq)


def demean_one_way(a: np.ndarray, codes: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    flat = a.ndim == 1
    a2 = a.reshape(len(a), -1)
    codes, n = encode(codes)
    cnt = np.bincount(codes, minlength=n).astype(float)
    out = np.empty_like(a2)
    for j in range(a2.shape[1]):
        out[:, j] = a2[:, j] - (np.bincount(codes, weights=a2[:, j], minlength=n) / cnt)[codes]
    return out[:, 0] if flat else out


def demean_two_way(a: np.ndarray, entity: np.ndarray, time: np.ndarray) -> np.ndarray:
    """
    Exact residuals of ``a`` on entity and time indicators. ``a`` is (n,) or
    (n, m); columns are handled together.

    Entity effects are eliminated in closed form and the time effects come from
    the (n_time x n_time) Schur complement, solved by least squares so an
    unbalanced or disconnected design still yields a valid projection.
    """
    a = np.asarray(a, dtype=float)
    flat = a.ndim == 1
    a2 = a.reshape(len(a), -1)
    g, ng = encode(entity)
    t, nt = encode(time)
    cnt_g = np.bincount(g, minlength=ng).astype(float)
    cnt_t = np.bincount(t, minlength=nt).astype(float)
    cross = np.bincount(g * nt + t, minlength=ng * nt).reshape(ng, nt).astype(float)

    sum_g = np.column_stack([np.bincount(g, weights=a2[:, j], minlength=ng) for j in range(a2.shape[1])])
    sum_t = np.column_stack([np.bincount(t, weights=a2[:, j], minlength=nt) for j in range(a2.shape[1])])

    weighted = cross / cnt_g[:, None]
    schur = np.diag(cnt_t) - cross.T @ weighted
    rhs = sum_t - weighted.T @ sum_g
    gamma = np.linalg.lstsq(schur, rhs, rcond=None)[0]
    alpha = (sum_g - cross @ gamma) / cnt_g[:, None]

    resid = a2 - alpha[g] - gamma[t]
    return resid[:, 0] if flat else resid


def cluster_vcov(x: np.ndarray, resid: np.ndarray, clusters: np.ndarray, n_absorbed: int = 0) -> Tuple[np.ndarray, int]:
    """
    Cluster-robust sandwich (X'X)^-1 (sum_g X_g'u_g u_g'X_g) (X'X)^-1 with the
    small-cluster correction G/(G-1) * (n-1)/(n-K), K = slope columns + n_absorbed.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    codes, n_groups = encode(clusters)
    bread = np.linalg.inv(x.T @ x)
    scores = x * np.asarray(resid, dtype=float)[:, None]
    sums = np.zeros((n_groups, p))
    np.add.at(sums, codes, scores)
    meat = sums.T @ sums
    k = p + n_absorbed
    correction = (n_groups / (n_groups - 1)) * ((n - 1) / (n - k)) if n_groups > 1 and n > k else 1.0
    return correction * (bread @ meat @ bread), n_groups


def t_interval(est: float, se: float, df: int, level: float = 0.95) -> Tuple[float, float]:
    crit = stats.t.ppf(0.5 + level / 2.0, df)
    return est - crit * se, est + crit * se


def t_pvalue(est: float, se: float, df: int) -> float:
    if se <= 0:
        return 0.0 if est != 0 else 1.0
    return float(2.0 * stats.t.sf(abs(est / se), df))
