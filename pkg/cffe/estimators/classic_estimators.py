"""
Comparison estimators on the shared panel model: TWFE event study,
Sun-Abraham interaction-weighted, Callaway-Sant'Anna group-time ATT
(outcome-regression form) and Bai-style interactive fixed effects.

Fixed effects are absorbed by the exact within transformation, so no
country or year indicator columns are ever built.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import orjson
import pandas as pd
import scipy.linalg
from scipy import stats

from cffe import settings
from cffe.errors import InvalidSpec, NoNeverTreated, NonConvergence, NoPrePeriod, RankDeficient, TooFewClusters, WindowTooSparse
from cffe.estimators.fixed_effects import cluster_vcov, demean_two_way, t_interval, t_pvalue
from cffe.panel.panel_core import PanelDataset

log = logging.getLogger(__name__)

DEFAULT_K_RANGE = (settings.K_MIN, settings.K_MAX)
REFERENCE_K = -1
RANK_TOL = 1e-10


@dataclass(frozen=True)
class EffectRow:
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    n_treated_obs: int


@dataclass
class EventStudyResult:
    by_k: Dict[int, EffectRow]
    estimator_name: str
    reference_k: int = REFERENCE_K
    vcov: Optional[np.ndarray] = None
    vcov_ks: Tuple[int, ...] = ()
    n_clusters: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def df(self) -> int:
        return max(1, self.n_clusters - 1)

    def to_rows(self) -> List[dict]:
        return [
            {
                "k": k,
                "estimate": r.estimate,
                "se": r.std_error,
                "ci_low": r.ci_low,
                "ci_high": r.ci_high,
                "n": r.n_treated_obs,
            }
            for k, r in sorted(self.by_k.items())
        ]

    def to_json(self) -> bytes:
        doc = {
            "estimator": self.estimator_name,
            "reference_k": self.reference_k,
            "n_clusters": self.n_clusters,
            "by_k": self.to_rows(),
            "vcov_ks": list(self.vcov_ks),
            "vcov": None if self.vcov is None else self.vcov.tolist(),
        }
        return orjson.dumps(doc, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)


@dataclass(frozen=True)
class StaticAtt:
    att: float
    std_error: float
    ci_low: float
    ci_high: float
    p_value: float
    n_clusters: int
    n_treated_obs: int


@dataclass
class IfeResult:
    tau_hat: float
    factors: np.ndarray
    loadings: np.ndarray
    n_factors: int
    iterations: int
    converged: bool
    std_error: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    countries: Tuple[str, ...] = ()
    years: Tuple[int, ...] = ()
    warnings: List[str] = field(default_factory=list)


@dataclass
class CsResult:
    group_time: List[dict]
    event_study: EventStudyResult


# --- shared plumbing ---

def _check_clusters(dataset: PanelDataset, min_treated: int = 2, min_control: int = 2) -> None:
    n_t = len(dataset.treated_countries)
    n_c = len(dataset.control_countries)
    if len(dataset.countries) < 2:
        raise TooFewClusters(f"need >= 2 country clusters, got {len(dataset.countries)}")
    if n_t < min_treated or n_c < min_control:
        raise TooFewClusters(f"need >= {min_treated} treated and >= {min_control} control countries, got {n_t} and {n_c}")


def _window_mask(dataset: PanelDataset, k_range: Tuple[int, int]) -> np.ndarray:
    """Never-treated rows plus treated-country rows whose event time lies in k_range."""
    k = dataset.k
    lo, hi = k_range
    return ~dataset.ever_treated | ((k >= lo) & (k <= hi))


def _within_ols(y: np.ndarray, x: np.ndarray, country: np.ndarray, year: np.ndarray, names: Sequence[str]):
    """OLS of y on x after absorbing country and year effects; returns (beta, resid, x_within)."""
    yt = demean_two_way(y, country, year)
    xt = demean_two_way(x, country, year)
    if xt.ndim == 1:
        xt = xt[:, None]
    _, r, piv = scipy.linalg.qr(xt, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    scale = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int((diag > RANK_TOL * scale).sum())
    if rank < xt.shape[1]:
        bad = [names[i] for i in sorted(piv[rank:])]
        raise RankDeficient(f"collinear design columns: {', '.join(bad)}", columns=bad)
    beta = np.linalg.lstsq(xt, yt, rcond=None)[0]
    return beta, yt - xt @ beta, xt


def _effect_rows(beta, vcov, ks, counts, df) -> Dict[int, EffectRow]:
    out = {}
    for i, k in enumerate(ks):
        se = float(np.sqrt(max(vcov[i, i], 0.0)))
        lo, hi = t_interval(float(beta[i]), se, df)
        out[int(k)] = EffectRow(float(beta[i]), se, float(lo), float(hi), int(counts[i]))
    return out


# --- TWFE ---

def twfe_event_study(
    dataset: PanelDataset, k_range: Tuple[int, int] = DEFAULT_K_RANGE, reference_k: int = REFERENCE_K
) -> EventStudyResult:
    """Event-time dummies over k_range with ``reference_k`` omitted."""
    _check_clusters(dataset)
    mask = _window_mask(dataset, k_range)
    k = dataset.k[mask]
    country = dataset.country_codes[mask]
    year = dataset.year_codes[mask]
    y = dataset.y[mask]

    lo, hi = k_range
    ks = [kk for kk in range(lo, hi + 1) if kk != reference_k and np.any(k == kk)]
    if not ks:
        raise RankDeficient("no event-time dummies with support in k_range")
    x = np.column_stack([(k == kk).astype(float) for kk in ks])
    names = [f"k={kk}" for kk in ks]
    beta, resid, xt = _within_ols(y, x, country, year, names)

    n_years = np.unique(year).size
    vcov, g = cluster_vcov(xt, resid, country, n_absorbed=n_years - 1)
    counts = x.sum(axis=0).astype(int)
    result = EventStudyResult(
        by_k=_effect_rows(beta, vcov, ks, counts, g - 1),
        estimator_name="twfe",
        reference_k=reference_k,
        vcov=vcov,
        vcov_ks=tuple(ks),
        n_clusters=g,
    )
    log.info(f"twfe event study: {len(ks)} event-time coefficients, G={g}, n={y.size}")
    return result


def twfe_static_att(dataset: PanelDataset) -> StaticAtt:
    """Single post-adoption dummy with two-way effects and country-clustered SE."""
    _check_clusters(dataset, min_treated=1, min_control=1)
    beta, resid, xt = _within_ols(dataset.y, dataset.d, dataset.country_codes, dataset.year_codes, ["treated"])
    n_years = np.unique(dataset.year_codes).size
    vcov, g = cluster_vcov(xt, resid, dataset.country_codes, n_absorbed=n_years - 1)
    att = float(beta[0])
    se = float(np.sqrt(max(vcov[0, 0], 0.0)))
    lo, hi = t_interval(att, se, g - 1)
    return StaticAtt(att, se, float(lo), float(hi), t_pvalue(att, se, g - 1), g, int(dataset.d.sum()))


# --- Sun-Abraham ---

def sun_abraham(dataset: PanelDataset, k_range: Tuple[int, int] = DEFAULT_K_RANGE) -> EventStudyResult:
    if not dataset.control_countries:
        raise NoNeverTreated("Sun-Abraham needs a never-treated control pool")
    _check_clusters(dataset, min_treated=1)
    mask = _window_mask(dataset, k_range)
    k = dataset.k[mask]
    country = dataset.country_codes[mask]
    year = dataset.year_codes[mask]
    y = dataset.y[mask]
    cohort = dataset.frame["adoption_year"].to_numpy(dtype=float, na_value=np.nan)[mask]

    lo, hi = k_range
    cells = []
    for g_year in sorted(np.unique(cohort[~np.isnan(cohort)])):
        in_g = cohort == g_year
        for kk in range(lo, hi + 1):
            if kk != REFERENCE_K and np.any(in_g & (k == kk)):
                cells.append((int(g_year), kk))
    if not cells:
        raise RankDeficient("no cohort x event-time cells with support")
    x = np.column_stack([((cohort == g_year) & (k == kk)).astype(float) for g_year, kk in cells])
    names = [f"g={g_year},k={kk}" for g_year, kk in cells]
    delta, resid, xt = _within_ols(y, x, country, year, names)
    n_years = np.unique(year).size
    v_cells, n_clusters = cluster_vcov(xt, resid, country, n_absorbed=n_years - 1)

    cell_n = x.sum(axis=0)
    ks = sorted({kk for _, kk in cells})
    weights = np.zeros((len(ks), len(cells)))
    for i, kk in enumerate(ks):
        idx = [j for j, (_, ck) in enumerate(cells) if ck == kk]
        weights[i, idx] = cell_n[idx] / cell_n[idx].sum()
    beta = weights @ delta
    vcov = weights @ v_cells @ weights.T
    counts = [int(sum(cell_n[j] for j, (_, ck) in enumerate(cells) if ck == kk)) for kk in ks]
    log.info(f"sun-abraham: {len(cells)} cohort cells aggregated to {len(ks)} event times")
    return EventStudyResult(
        by_k=_effect_rows(beta, vcov, ks, counts, n_clusters - 1),
        estimator_name="sa",
        vcov=vcov,
        vcov_ks=tuple(ks),
        n_clusters=n_clusters,
    )


# --- Callaway-Sant'Anna ---

def _wide(dataset: PanelDataset) -> pd.DataFrame:
    return dataset.frame.pivot(index="country", columns="year", values="outcome")


def group_time_att(dataset: PanelDataset, covariates: bool = False) -> List[dict]:
    """ATT(g, t) against the never-treated pool with base period g - 1."""
    controls = list(dataset.control_countries)
    if not controls:
        raise NoNeverTreated("no never-treated countries to compare against")
    wide = _wide(dataset)
    feats = dataset.country_features()[list(dataset.feature_names)] if covariates else None
    year_lo, _ = dataset.year_range
    adoption = dataset.adoption_by_country

    cohorts: Dict[int, List[str]] = {}
    for c, g_year in adoption.items():
        if g_year is not None:
            cohorts.setdefault(g_year, []).append(c)

    rows = []
    for g_year, members in sorted(cohorts.items()):
        base = g_year - 1
        if base < year_lo or base not in wide.columns:
            raise NoPrePeriod(f"cohort {g_year} has no pre-period {base} in the panel", cohort=g_year)
        for t in wide.columns:
            if t == base:
                continue
            dy = wide[t] - wide[base]
            dy_g = dy.reindex(members).dropna()
            dy_c = dy.reindex(controls).dropna()
            if dy_g.empty or dy_c.empty:
                continue
            if covariates and feats is not None and feats.shape[1] and len(dy_c) > feats.shape[1] + 1:
                xc = np.column_stack([np.ones(len(dy_c)), feats.loc[dy_c.index].to_numpy()])
                coef = np.linalg.lstsq(xc, dy_c.to_numpy(), rcond=None)[0]
                xg = np.column_stack([np.ones(len(dy_g)), feats.loc[dy_g.index].to_numpy()])
                att = float(np.mean(dy_g.to_numpy() - xg @ coef))
            else:
                att = float(dy_g.mean() - dy_c.mean())
            rows.append(
                {
                    "cohort": int(g_year),
                    "year": int(t),
                    "k": int(t - g_year),
                    "att": att,
                    "n_treated": int(len(dy_g)),
                    "n_control": int(len(dy_c)),
                }
            )
    return rows


def aggregate_group_time(rows: List[dict], k_range: Tuple[int, int] = DEFAULT_K_RANGE) -> Dict[int, Tuple[float, int]]:
    """Event-time aggregation weighted by cohort size: k -> (att, treated units)."""
    lo, hi = k_range
    out: Dict[int, Tuple[float, int]] = {}
    for kk in range(lo, hi + 1):
        cell = [r for r in rows if r["k"] == kk]
        if not cell:
            continue
        n = sum(r["n_treated"] for r in cell)
        out[kk] = (sum(r["att"] * r["n_treated"] for r in cell) / n, n)
    return out


def callaway_santanna(
    dataset: PanelDataset,
    k_range: Tuple[int, int] = DEFAULT_K_RANGE,
    covariates: bool = False,
    bootstrap_reps: int = settings.BOOTSTRAP_REPS,
    seed: int = settings.SEED,
    n_jobs: int = 1,
) -> CsResult:
    rows = group_time_att(dataset, covariates=covariates)
    agg = aggregate_group_time(rows, k_range)
    ks = tuple(sorted(agg))
    est = np.array([agg[kk][0] for kk in ks])

    se = np.full(len(ks), np.nan)
    vcov = None
    n_clusters = len(dataset.countries)
    if bootstrap_reps > 0:
        # imported here: inference_suite depends on this module
        from cffe.analysis.inference_suite import run_block_bootstrap

        def _replicate(ds):
            sub = aggregate_group_time(group_time_att(ds, covariates=covariates), k_range)
            return {kk: v[0] for kk, v in sub.items()}

        boot = run_block_bootstrap(dataset, _replicate, bootstrap_reps, seed, n_jobs=n_jobs, label="cs")
        cols = [boot.keys.index(kk) if kk in boot.keys else None for kk in ks]
        reps = np.column_stack([boot.estimates[:, j] if j is not None else np.full(boot.estimates.shape[0], np.nan) for j in cols])
        complete = reps[~np.isnan(reps).any(axis=1)]
        if complete.shape[0] >= 2:
            vcov = np.atleast_2d(np.cov(complete, rowvar=False, ddof=1))
        se = np.sqrt(np.nanvar(reps, axis=0, ddof=1))

    z = stats.norm.ppf(0.975)
    by_k = {}
    for i, kk in enumerate(ks):
        s = float(se[i])
        by_k[kk] = EffectRow(float(est[i]), s, float(est[i] - z * s), float(est[i] + z * s), int(agg[kk][1]))
    result = EventStudyResult(
        by_k=by_k,
        estimator_name="cs",
        reference_k=REFERENCE_K,
        vcov=vcov,
        vcov_ks=ks if vcov is not None else (),
        n_clusters=n_clusters,
    )
    return CsResult(group_time=rows, event_study=result)


# --- interactive fixed effects ---

def _rectangularize(dataset: PanelDataset, window: Optional[Tuple[int, int]]):
    lo, hi = window or dataset.year_range
    frame = dataset.frame.loc[dataset.frame["year"].between(lo, hi)]
    years = np.arange(lo, hi + 1)
    counts = frame.groupby("country")["year"].nunique()
    full = sorted(counts.index[counts == len(years)])
    dropped = sorted(set(dataset.countries) - set(full))
    warnings = []
    if dropped:
        msg = f"excluded {len(dropped)} countries with gaps in {lo}-{hi}: {', '.join(dropped)}"
        warnings.append(msg)
        log.warning(msg)
    sub = frame.loc[frame["country"].isin(full)]
    y = sub.pivot(index="country", columns="year", values="outcome").reindex(index=full, columns=years)
    d = sub.pivot(index="country", columns="year", values="treated").reindex(index=full, columns=years)
    return y.to_numpy(dtype=float), d.to_numpy(dtype=float), tuple(full), tuple(int(t) for t in years), warnings


def _within_tau(y: np.ndarray, d: np.ndarray) -> float:
    n, t = y.shape
    g = np.repeat(np.arange(n), t)
    yr = np.tile(np.arange(t), n)
    yt = demean_two_way(y.ravel(), g, yr)
    dt = demean_two_way(d.ravel(), g, yr)
    return float(dt @ yt / (dt @ dt))


def _double_demean(w: np.ndarray) -> np.ndarray:
    return w - w.mean(axis=1, keepdims=True) - w.mean(axis=0, keepdims=True) + w.mean()


def interactive_fe(
    dataset: PanelDataset,
    n_factors: int = 2,
    max_iter: int = 500,
    tol: float = 1e-8,
    window: Optional[Tuple[int, int]] = None,
    strict: bool = False,
) -> IfeResult:
    """
    Y = alpha_i + gamma_t + tau D + lambda_i' f_t + e, estimated by alternating
    (a) tau given factors by within OLS and (b) factors as the leading principal
    components of the double-demeaned residual Y - tau D, normalized F'F / T = I.
    """
    if n_factors < 1:
        raise InvalidSpec("interactive fixed effects need n_factors >= 1")
    y, d, countries, years, warnings = _rectangularize(dataset, window)
    n, t = y.shape
    if n < 2 or t <= n_factors + 1:
        raise WindowTooSparse(f"rectangular window has {n} countries x {t} years", countries=n, years=t)
    if d.sum() == 0 or (d.sum(axis=1) == 0).sum() == 0:
        raise WindowTooSparse("window has no treated rows or no untreated countries")
    if float(_double_demean(d).ravel() @ _double_demean(d).ravel()) <= 0:
        raise WindowTooSparse("treatment has no within variation in the window")

    tau = _within_tau(y, d)
    factors = np.zeros((t, n_factors))
    loadings = np.zeros((n, n_factors))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = _double_demean(y - tau * d)
        evals, evecs = np.linalg.eigh(w.T @ w)
        top = evecs[:, np.argsort(evals)[::-1][:n_factors]]
        factors = np.sqrt(t) * top
        loadings = w @ factors / t
        new_tau = _within_tau(y - loadings @ factors.T, d)
        step = abs(new_tau - tau)
        tau = new_tau
        if step < tol:
            converged = True
            break

    if not converged:
        msg = f"interactive FE did not converge in {max_iter} iterations"
        if strict:
            raise NonConvergence(msg, tau=tau)
        warnings.append(msg)
        log.warning(msg)

    # clustered SE of the final within regression, factor uncertainty ignored
    g = np.repeat(np.arange(n), t)
    yr = np.tile(np.arange(t), n)
    ys = demean_two_way((y - loadings @ factors.T).ravel(), g, yr)
    ds = demean_two_way(d.ravel(), g, yr)
    resid = ys - tau * ds
    vcov, n_clusters = cluster_vcov(ds, resid, g, n_absorbed=(t - 1) + n_factors * (n + t))
    se = float(np.sqrt(max(vcov[0, 0], 0.0)))
    lo, hi = t_interval(tau, se, max(1, n_clusters - 1))
    return IfeResult(
        tau_hat=tau,
        factors=factors,
        loadings=loadings,
        n_factors=n_factors,
        iterations=it,
        converged=converged,
        std_error=se,
        ci_low=float(lo),
        ci_high=float(hi),
        countries=countries,
        years=years,
        warnings=warnings,
    )
