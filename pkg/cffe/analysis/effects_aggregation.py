"""
Aggregation of forest CATE predictions into dynamic ATT curves, group curves,
cumulative effects, country trajectories and counterfactual paths.

Effects are in percentage points of annual growth throughout; only the
compounded cumulative effect is expressed in percent of the level.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from cffe import settings
from cffe.analysis.inference_suite import BootstrapResult, cluster_robust_var
from cffe.errors import CffeError, EmptyGroup, EmptyHorizon, GapInSupport, SchemaMismatch, SingleCluster
from cffe.estimators.cffe_forest import ForestModel, check_variance, pair_variance, predict_rows, tree_predictions
from cffe.panel.panel_core import PanelDataset

log = logging.getLogger(__name__)

POST_K_RANGE = (0, settings.K_MAX)
CUMULATIVE_HORIZONS = (5, 10, 15, 20)
Z95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class CurvePoint:
    att: float
    se: float
    n: int

    @property
    def ci(self) -> Tuple[float, float]:
        return self.att - Z95 * self.se, self.att + Z95 * self.se


@dataclass
class AttCurve:
    by_k: Dict[int, CurvePoint]
    k_range: Tuple[int, int]
    label: str = "all"
    extrapolative: Dict[int, bool] = field(default_factory=dict)

    def to_rows(self) -> List[dict]:
        rows = []
        for k, p in sorted(self.by_k.items()):
            lo, hi = p.ci
            row = {"label": self.label, "k": k, "att": p.att, "se": p.se, "ci_low": lo, "ci_high": hi, "n": p.n}
            if self.extrapolative:
                row["extrapolative"] = self.extrapolative.get(k, False)
            rows.append(row)
        return rows


@dataclass(frozen=True)
class OverallAtt:
    att: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    n_obs: int
    n_countries: int


@dataclass(frozen=True)
class CumulativeRow:
    horizon: int
    simple_sum: float
    simple_ci_low: float
    simple_ci_high: float
    compounded: float
    ci_low: float
    ci_high: float


@dataclass
class CumulativeEffects:
    by_horizon: Dict[int, CumulativeRow]
    method: str = "delta"

    def to_rows(self) -> List[dict]:
        return [dict(method=self.method, **r.__dict__) for _, r in sorted(self.by_horizon.items())]


@dataclass
class CountryTrajectory:
    country: str
    curve: AttCurve
    post_average: float


# --- curves ---

def _treated_rows(dataset: PanelDataset, k_range: Tuple[int, int], countries: Optional[Sequence[str]] = None) -> np.ndarray:
    k = dataset.k
    lo, hi = k_range
    mask = dataset.ever_treated & (k >= lo) & (k <= hi)
    if countries is not None:
        mask &= dataset.frame["country"].isin(list(countries)).to_numpy()
    return np.flatnonzero(mask)


def cluster_se(preds: np.ndarray, countries: np.ndarray) -> float:
    try:
        return float(np.sqrt(cluster_robust_var(preds, countries)))
    except SingleCluster:
        return float("nan")


def _curve(model: ForestModel, dataset: PanelDataset, rows: np.ndarray, k_range, label: str) -> AttCurve:
    k = dataset.k[rows]
    preds = predict_rows(model, k, dataset.x[rows])
    countries = dataset.country_codes[rows]
    by_k = {}
    for kk in np.unique(k):
        m = k == kk
        by_k[int(kk)] = CurvePoint(float(preds[m].mean()), cluster_se(preds[m], countries[m]), int(m.sum()))
    return AttCurve(by_k=by_k, k_range=tuple(k_range), label=label)


def dynamic_att(model: ForestModel, dataset: PanelDataset, k_range: Tuple[int, int] = POST_K_RANGE) -> AttCurve:
    """tau(k) = mean forest prediction over treated rows at k; horizons without rows are omitted."""
    rows = _treated_rows(dataset, k_range)
    if rows.size == 0:
        raise EmptyHorizon(f"no treated rows with event time in {k_range}")
    curve = _curve(model, dataset, rows, k_range, "all")
    log.info(f"dynamic ATT over {len(curve.by_k)} horizons, {rows.size} treated rows")
    return curve


def overall_att(model: ForestModel, dataset: PanelDataset) -> OverallAtt:
    rows = np.flatnonzero(dataset.d > 0)
    if rows.size == 0:
        raise EmptyHorizon("no post-adoption rows")
    preds = predict_rows(model, dataset.k[rows], dataset.x[rows])
    countries = dataset.country_codes[rows]
    att = float(preds.mean())
    se = cluster_se(preds, countries)
    p = float(2 * stats.norm.sf(abs(att / se))) if se > 0 else (1.0 if att == 0 else 0.0)
    return OverallAtt(att, se, att - Z95 * se, att + Z95 * se, p, int(rows.size), int(np.unique(countries).size))


# --- groups ---

def _pre_treatment_profile(dataset: PanelDataset) -> pd.DataFrame:
    return dataset.country_features()


def group_att(
    model: ForestModel,
    dataset: PanelDataset,
    grouping: Callable[[pd.Series], Hashable],
    k_range: Tuple[int, int] = POST_K_RANGE,
) -> Dict[str, AttCurve]:
    """
    One curve per group of treated countries. ``grouping`` sees only the country's
    time-invariant profile (adoption year and pre-treatment features), never outcomes.
    """
    profile = _pre_treatment_profile(dataset)
    members: Dict[str, List[str]] = {}
    for c in dataset.treated_countries:
        members.setdefault(str(grouping(profile.loc[c].copy())), []).append(c)
    curves = {}
    for label, countries in sorted(members.items()):
        rows = _treated_rows(dataset, k_range, countries)
        if rows.size == 0:
            raise EmptyGroup(f"group {label} has no treated rows in {k_range}", group=label)
        curves[label] = _curve(model, dataset, rows, k_range, label)
    if not curves:
        raise EmptyGroup("no treated countries to group")
    return curves


def median_split(dataset: PanelDataset, feature: str) -> Callable[[pd.Series], str]:
    """Above / below the median of a pre-treatment feature across treated countries."""
    if feature not in dataset.feature_names:
        raise SchemaMismatch(f"unknown feature {feature!r}")
    treated = _pre_treatment_profile(dataset).loc[list(dataset.treated_countries), feature]
    median = float(treated.median())

    def _label(profile: pd.Series) -> str:
        return "above" if profile[feature] > median else "below"

    return _label


def cohort_split(dataset: PanelDataset) -> Callable[[pd.Series], str]:
    """Early (first adoption cohort) vs late adopters."""
    cohorts = sorted({a for a in dataset.adoption_by_country.values() if a is not None})
    if len(cohorts) < 2:
        raise EmptyGroup("cohort split needs at least two adoption cohorts")
    first = cohorts[0]

    def _label(profile: pd.Series) -> str:
        return "early" if int(profile["adoption_year"]) == first else "late"

    return _label


# --- cumulative effects ---

def _check_support(keys, horizon: int) -> None:
    missing = [k for k in range(horizon + 1) if k not in keys]
    if missing:
        raise GapInSupport(f"curve lacks k={missing[0]} needed for horizon {horizon}", horizon=horizon)


def compound(path: Sequence[float]) -> float:
    """(prod(1 + tau/100) - 1) * 100, tau in pp per year."""
    return float((np.prod(1.0 + np.asarray(path, dtype=float) / 100.0) - 1.0) * 100.0)


def cumulative_effects(curve: AttCurve, horizons: Sequence[int] = CUMULATIVE_HORIZONS) -> CumulativeEffects:
    out = {}
    for h in horizons:
        _check_support(curve.by_k, h)
        tau = np.array([curve.by_k[k].att for k in range(h + 1)])
        se = np.array([curve.by_k[k].se for k in range(h + 1)])
        simple = float(tau.sum())
        comp = compound(tau)
        growth = 1.0 + tau / 100.0
        # d compounded / d tau_k = prod_{j != k} (1 + tau_j / 100)
        grad = np.array([np.prod(np.delete(growth, i)) for i in range(tau.size)])
        se_simple = float(np.sqrt(np.sum(se**2)))
        se_comp = float(np.sqrt(np.sum((grad * se) ** 2)))
        out[h] = CumulativeRow(
            horizon=h,
            simple_sum=simple,
            simple_ci_low=simple - Z95 * se_simple,
            simple_ci_high=simple + Z95 * se_simple,
            compounded=comp,
            ci_low=comp - Z95 * se_comp,
            ci_high=comp + Z95 * se_comp,
        )
    return CumulativeEffects(by_horizon=out, method="delta")


def cumulative_effects_bootstrap(
    curve: AttCurve, boot: BootstrapResult, horizons: Sequence[int] = CUMULATIVE_HORIZONS
) -> CumulativeEffects:
    """Point values from ``curve``; percentile CIs from the same measures computed per replicate."""
    out = {}
    for h in horizons:
        _check_support(curve.by_k, h)
        _check_support(boot.keys, h)
        cols = [boot.keys.index(k) for k in range(h + 1)]
        reps = boot.estimates[:, cols]
        reps = reps[~np.isnan(reps).any(axis=1)]
        tau = [curve.by_k[k].att for k in range(h + 1)]
        sims = reps.sum(axis=1)
        comps = np.array([compound(r) for r in reps])
        s_lo, s_hi = np.percentile(sims, [2.5, 97.5])
        c_lo, c_hi = np.percentile(comps, [2.5, 97.5])
        out[h] = CumulativeRow(h, float(np.sum(tau)), float(s_lo), float(s_hi), compound(tau), float(c_lo), float(c_hi))
    return CumulativeEffects(by_horizon=out, method="bootstrap")


# --- trajectories and counterfactuals ---

def _pointwise_se(model: ForestModel, per_tree: np.ndarray) -> np.ndarray:
    try:
        check_variance(model)
    except CffeError:
        return np.full(per_tree.shape[1], np.nan)
    return np.sqrt(pair_variance(per_tree))


def country_trajectories(model: ForestModel, dataset: PanelDataset, k_range: Tuple[int, int] = POST_K_RANGE) -> List[CountryTrajectory]:
    out = []
    for c in dataset.treated_countries:
        rows = _treated_rows(dataset, k_range, [c])
        if rows.size == 0:
            continue
        k = dataset.k[rows]
        per_tree = tree_predictions(model, k, dataset.x[rows])
        preds = per_tree.mean(axis=0)
        se = _pointwise_se(model, per_tree)
        by_k = {int(kk): CurvePoint(float(p), float(s), 1) for kk, p, s in zip(k, preds, se)}
        out.append(CountryTrajectory(c, AttCurve(by_k=by_k, k_range=tuple(k_range), label=c), float(preds.mean())))
    return out


def counterfactual_predict(model: ForestModel, x_profile: Sequence[float], k_range: Tuple[int, int] = POST_K_RANGE) -> AttCurve:
    """Effect path of a hypothetical adopter; every point outside the training support is flagged."""
    lo, hi = k_range
    ks = np.arange(lo, hi + 1)
    x = np.asarray(x_profile, dtype=float)
    per_tree = tree_predictions(model, ks, np.tile(x, (ks.size, 1)))
    preds = per_tree.mean(axis=0)
    se = _pointwise_se(model, per_tree)

    s_lo, s_hi = model.event_time_support
    outside_x = any(not (r[0] <= v <= r[1]) for v, r in zip(x, model.feature_ranges))
    flags = {int(k): bool(outside_x or k < s_lo or k > s_hi) for k in ks}
    if any(flags.values()):
        log.warning(f"counterfactual profile extrapolates at {sum(flags.values())} of {ks.size} horizons")
    by_k = {int(k): CurvePoint(float(p), float(s), 1) for k, p, s in zip(ks, preds, se)}
    return AttCurve(by_k=by_k, k_range=(lo, hi), label="counterfactual", extrapolative=flags)
