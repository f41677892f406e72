"""
Inference and identification diagnostics: cluster-robust CATE variance,
country-block bootstrap, fake-date and non-treated placebos, leave-one-out
and the joint pre-trends test.
"""

import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, cpu_count, delayed
from scipy import stats

from cffe import settings
from cffe.errors import (
    AssignedCountryIsTreated,
    CffeError,
    EmptyGroup,
    FakeDateTooLate,
    InvalidSpec,
    NoPrePeriods,
    SingleCluster,
    TooFewTreated,
    TooFewValidReplicates,
)
from cffe.estimators import classic_estimators as ce
from cffe.estimators.cffe_forest import ForestConfig, fit_forest, forest_variance, predict_rows
from cffe.estimators.fixed_effects import t_interval, t_pvalue
from cffe.panel.panel_core import PanelDataset, build_dataset, redate, restrict

log = logging.getLogger(__name__)

MIN_REPLICATES = 50
MIN_VALID_SHARE = 0.8
ATT_KEY = "att"
ESTIMATORS = ("cffe", "twfe", "sa", "cs", "ife")
Z95 = float(stats.norm.ppf(0.975))

# numerical failures on a degenerate resample count as discarded replicates
REPLICATE_FAILURES = (CffeError, np.linalg.LinAlgError, FloatingPointError)


def cluster_robust_var(cates, countries) -> float:
    """(1/N^2) * sum over countries of (sum of that country's deviations from the mean)^2."""
    cates = np.asarray(cates, dtype=float)
    countries = np.asarray(countries)
    codes, inverse = np.unique(countries, return_inverse=True)
    if codes.size < 2:
        raise SingleCluster(f"only {codes.size} country contributes")
    dev = cates - cates.mean()
    inner = np.bincount(inverse.ravel(), weights=dev, minlength=codes.size)
    return float(np.sum(inner**2) / cates.size**2)


# --- block bootstrap ---

@dataclass
class BootstrapResult:
    estimator: str
    keys: List
    estimates: np.ndarray  # (valid replicates, len(keys)), NaN where a replicate lacks a key
    point: Dict
    ci_by_key: Dict
    n_replicates: int
    n_failed: int
    seed: int

    def to_rows(self) -> List[dict]:
        rows = []
        for j, key in enumerate(self.keys):
            col = self.estimates[:, j]
            lo, hi = self.ci_by_key[key]
            rows.append(
                {
                    "estimator": self.estimator,
                    "k": key,
                    "estimate": self.point.get(key, float("nan")),
                    "boot_se": float(np.nanstd(col, ddof=1)),
                    "ci_low": lo,
                    "ci_high": hi,
                    "n_valid": int(np.sum(~np.isnan(col))),
                }
            )
        return rows


def resample_countries(dataset: PanelDataset, rng: np.random.Generator) -> Optional[PanelDataset]:
    """Draw countries with replacement; each draw gets a fresh id. None when a side is empty."""
    countries = dataset.countries
    drawn = rng.integers(0, len(countries), len(countries))
    adoption = dataset.adoption_by_country
    n_treated = sum(adoption[countries[i]] is not None for i in drawn)
    if n_treated == 0 or n_treated == len(drawn):
        return None
    index = dataset.country_index
    parts = [index[countries[i]] for i in drawn]
    frame = dataset.frame.iloc[np.concatenate(parts)].copy()
    frame["country"] = np.repeat([f"{countries[i]}#{j}" for j, i in enumerate(drawn)], [p.size for p in parts])
    return build_dataset(frame, dataset.feature_names, dataset.extra_outcome_names)


def _replicate_batch(dataset, fn, indices, seed):
    out = []
    for b in indices:
        sample = resample_countries(dataset, np.random.default_rng([seed, int(b)]))
        if sample is None:
            out.append(None)
            continue
        try:
            out.append(fn(sample))
        except REPLICATE_FAILURES as e:
            log.debug(f"replicate {int(b)} failed: {type(e).__name__}: {e}")
            out.append(None)
    return out


def run_block_bootstrap(
    dataset: PanelDataset,
    fn: Callable[[PanelDataset], Dict],
    n_reps: int,
    seed: int,
    n_jobs: Optional[int] = None,
    label: str = "custom",
) -> BootstrapResult:
    """Country-block bootstrap of any estimator returning a key -> estimate mapping."""
    if n_reps < MIN_REPLICATES:
        raise InvalidSpec(f"bootstrap needs B >= {MIN_REPLICATES}, got {n_reps}")
    n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
    workers = cpu_count() if n_jobs < 0 else max(1, n_jobs)
    batches = [b for b in np.array_split(np.arange(n_reps), min(workers, n_reps)) if b.size]
    results = Parallel(n_jobs=n_jobs)(delayed(_replicate_batch)(dataset, fn, b, seed) for b in batches)
    flat = [r for batch in results for r in batch]
    valid = [r for r in flat if r]
    n_failed = n_reps - len(valid)
    if len(valid) < MIN_VALID_SHARE * n_reps:
        raise TooFewValidReplicates(f"{len(valid)} of {n_reps} replicates succeeded", valid=len(valid), requested=n_reps)

    keys = sorted({key for r in valid for key in r})
    est = np.array([[r.get(key, np.nan) for key in keys] for r in valid], dtype=float)
    ci = {}
    for j, key in enumerate(keys):
        lo, hi = np.nanpercentile(est[:, j], [2.5, 97.5])
        ci[key] = (float(lo), float(hi))
    point = fn(dataset)
    log.info(f"bootstrap {label}: B={n_reps}, failed={n_failed}, keys={len(keys)}")
    return BootstrapResult(label, keys, est, point, ci, n_reps, n_failed, seed)


def _cffe_curve(ds: PanelDataset, config: ForestConfig, k_range) -> Dict:
    # imported here: effects_aggregation depends on this module
    from cffe.analysis.effects_aggregation import dynamic_att

    post = (max(0, k_range[0]), k_range[1])
    model = fit_forest(ds, config, n_jobs=1)
    return {k: p.att for k, p in dynamic_att(model, ds, post).by_k.items()}


def _event_study_curve(ds: PanelDataset, fn, k_range) -> Dict:
    return {k: r.estimate for k, r in fn(ds, k_range).by_k.items()}


def _cs_curve(ds: PanelDataset, k_range) -> Dict:
    return {k: r.estimate for k, r in ce.callaway_santanna(ds, k_range, bootstrap_reps=0).event_study.by_k.items()}


def _ife_att(ds: PanelDataset) -> Dict:
    return {ATT_KEY: ce.interactive_fe(ds).tau_hat}


def estimator_fn(estimator: str, forest_config: Optional[ForestConfig] = None, k_range=ce.DEFAULT_K_RANGE):
    if estimator == "cffe":
        return partial(_cffe_curve, config=forest_config or ForestConfig(), k_range=k_range)
    if estimator == "twfe":
        return partial(_event_study_curve, fn=ce.twfe_event_study, k_range=k_range)
    if estimator == "sa":
        return partial(_event_study_curve, fn=ce.sun_abraham, k_range=k_range)
    if estimator == "cs":
        return partial(_cs_curve, k_range=k_range)
    if estimator == "ife":
        return _ife_att
    raise InvalidSpec(f"unknown estimator {estimator!r}; expected one of {', '.join(ESTIMATORS)}")


def block_bootstrap(
    dataset: PanelDataset,
    estimator: str = "cffe",
    n_reps: int = settings.BOOTSTRAP_REPS,
    seed: int = settings.SEED,
    n_jobs: Optional[int] = None,
    forest_config: Optional[ForestConfig] = None,
    k_range: Tuple[int, int] = ce.DEFAULT_K_RANGE,
) -> BootstrapResult:
    fn = estimator_fn(estimator, forest_config, k_range)
    return run_block_bootstrap(dataset, fn, n_reps, seed, n_jobs=n_jobs, label=estimator)


# --- scalar effects used by placebos and leave-one-out ---

@dataclass(frozen=True)
class ScalarEffect:
    att: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float


def post_average(result: ce.EventStudyResult) -> ScalarEffect:
    """Treated-observation weighted mean of post-period coefficients with a delta-method SE."""
    ks = [k for k in result.vcov_ks if k >= 0] if result.vcov is not None else [k for k in result.by_k if k >= 0]
    if not ks:
        raise NoPrePeriods("no post-period coefficients to average")
    n = np.array([result.by_k[k].n_treated_obs for k in ks], dtype=float)
    w = n / n.sum()
    att = float(w @ np.array([result.by_k[k].estimate for k in ks]))
    if result.vcov is not None:
        idx = [result.vcov_ks.index(k) for k in ks]
        se = float(np.sqrt(max(w @ result.vcov[np.ix_(idx, idx)] @ w, 0.0)))
    else:
        se = float("nan")
    lo, hi = t_interval(att, se, result.df)
    return ScalarEffect(att, se, float(lo), float(hi), t_pvalue(att, se, result.df))


def scalar_effect(dataset: PanelDataset, estimator: str, forest_config: Optional[ForestConfig] = None, n_jobs: int = 1) -> ScalarEffect:
    if estimator == "twfe":
        r = ce.twfe_static_att(dataset)
        return ScalarEffect(r.att, r.std_error, r.ci_low, r.ci_high, r.p_value)
    if estimator == "sa":
        return post_average(ce.sun_abraham(dataset))
    if estimator == "ife":
        r = ce.interactive_fe(dataset)
        return ScalarEffect(r.tau_hat, r.std_error, r.ci_low, r.ci_high, t_pvalue(r.tau_hat, r.std_error, max(1, len(r.countries) - 1)))
    if estimator == "cffe":
        from cffe.analysis.effects_aggregation import overall_att

        r = overall_att(fit_forest(dataset, forest_config or ForestConfig(), n_jobs=n_jobs), dataset)
        return ScalarEffect(r.att, r.se, r.ci_low, r.ci_high, r.p_value)
    raise InvalidSpec(f"estimator {estimator!r} has no scalar effect; use cffe, twfe, sa or ife")


# --- placebos ---

@dataclass
class FakeDatePlacebo:
    fake_year: int
    estimator: str
    effect: ScalarEffect
    n_post_obs: int
    event_study: Optional[ce.EventStudyResult] = None

    def to_row(self) -> dict:
        return {
            "design": "fake_date",
            "fake_year": self.fake_year,
            "estimator": self.estimator,
            "att": self.effect.att,
            "se": self.effect.se,
            "ci_low": self.effect.ci_low,
            "ci_high": self.effect.ci_high,
            "p_value": self.effect.p_value,
            "n_post": self.n_post_obs,
        }


def placebo_fake_dates(
    dataset: PanelDataset,
    fake_adoption_year: int,
    estimator: str = "twfe",
    forest_config: Optional[ForestConfig] = None,
) -> FakeDatePlacebo:
    """
    Re-date every treated country to ``fake_adoption_year`` and drop its rows from
    the true adoption onward, so only the fake-to-actual window counts as post.
    """
    adoption = {c: a for c, a in dataset.adoption_by_country.items() if a is not None}
    if not adoption:
        raise EmptyGroup("no treated countries to re-date")
    late = [c for c, a in adoption.items() if fake_adoption_year >= a]
    if late:
        raise FakeDateTooLate(f"fake year {fake_adoption_year} is not before adoption of {', '.join(late)}", countries=late)
    frame = dataset.frame
    actual = frame["country"].map(adoption)
    keep = actual.isna() | (frame["year"] < actual)
    trimmed = build_dataset(frame.loc[keep], dataset.feature_names, dataset.extra_outcome_names)
    placebo = redate(trimmed, {c: fake_adoption_year for c in adoption})

    effect = scalar_effect(placebo, estimator, forest_config)
    event_study = None
    if estimator == "twfe":
        gap = max(adoption.values()) - fake_adoption_year
        event_study = ce.twfe_event_study(placebo, (settings.K_MIN, gap - 1))
    log.info(f"fake-date placebo {fake_adoption_year}: att={effect.att:.4f} p={effect.p_value:.3f}")
    return FakeDatePlacebo(fake_adoption_year, estimator, effect, int(placebo.d.sum()), event_study)


@dataclass
class NontreatedPlacebo:
    rows: List[dict]
    joint_stat: float
    joint_df: int
    joint_p: float
    diagonal_covariance: bool = True

    def to_rows(self) -> List[dict]:
        joint = {
            "country": "joint",
            "pseudo_adoption": None,
            "att": None,
            "se": None,
            "p_value": self.joint_p,
            "chi2": self.joint_stat,
            "df": self.joint_df,
            "diagonal_covariance": self.diagonal_covariance,
        }
        return [*self.rows, joint]


def placebo_nontreated(
    dataset: PanelDataset,
    assignment: Dict[str, int],
    forest_config: Optional[ForestConfig] = None,
    n_jobs: Optional[int] = None,
) -> NontreatedPlacebo:
    """
    Pseudo-treat never-treated countries on a sample without the real adopters,
    re-fit the forest and test the per-country effects jointly (diagonal covariance).
    """
    if not assignment:
        raise InvalidSpec("placebo assignment is empty")
    adoption = dataset.adoption_by_country
    for c in assignment:
        if c not in adoption:
            raise EmptyGroup(f"country {c} is not in the panel", country=c)
        if adoption[c] is not None:
            raise AssignedCountryIsTreated(f"{c} adopts in {adoption[c]}", country=c)
    controls_only = restrict(dataset, drop_countries=list(dataset.treated_countries))
    placebo = redate(controls_only, dict(assignment))
    model = fit_forest(placebo, forest_config or ForestConfig(), n_jobs=n_jobs)

    rows = []
    stat = 0.0
    frame = placebo.frame
    for c, year in sorted(assignment.items()):
        m = ((frame["country"] == c) & frame["treated"]).to_numpy()
        if not m.any():
            raise EmptyGroup(f"{c} has no rows on or after {year}", country=c)
        k, x = placebo.k[m], placebo.x[m]
        att = float(predict_rows(model, k, x).mean())
        se = float(np.sqrt(forest_variance(model, k, x)))
        z = att / se if se > 0 else 0.0
        stat += z * z
        rows.append(
            {
                "country": c,
                "pseudo_adoption": int(year),
                "att": att,
                "se": se,
                "p_value": float(2 * stats.norm.sf(abs(z))),
                "chi2": None,
                "df": None,
                "diagonal_covariance": None,
            }
        )
    df = len(rows)
    return NontreatedPlacebo(rows, float(stat), df, float(stats.chi2.sf(stat, df)))


# --- leave-one-out ---

def _loo_one(dataset, country, estimator, forest_config):
    return scalar_effect(restrict(dataset, drop_countries=[country]), estimator, forest_config)


def leave_one_out(
    dataset: PanelDataset,
    estimator: str = "twfe",
    forest_config: Optional[ForestConfig] = None,
    n_jobs: Optional[int] = None,
) -> List[dict]:
    treated = dataset.treated_countries
    if len(treated) < 3:
        raise TooFewTreated(f"leave-one-out needs >= 3 treated countries, got {len(treated)}")
    full = scalar_effect(dataset, estimator, forest_config)
    n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
    effects = Parallel(n_jobs=n_jobs)(delayed(_loo_one)(dataset, c, estimator, forest_config) for c in treated)
    rows = []
    for c, e in zip(treated, effects):
        rows.append(
            {
                "dropped": c,
                "att": e.att,
                "se": e.se,
                "ci_low": e.ci_low,
                "ci_high": e.ci_high,
                "within_full_ci": bool(full.ci_low <= e.att <= full.ci_high),
            }
        )
    log.info(f"leave-one-out ({estimator}): {sum(r['within_full_ci'] for r in rows)}/{len(rows)} within full CI")
    return rows


# --- pre-trends ---

@dataclass(frozen=True)
class PretrendsTest:
    wald_stat: float
    f_stat: float
    p_value: float
    df_num: int
    df_den: int
    avg_pre_effect: float
    avg_pre_se: float
    used_pinv: bool = False

    def to_row(self) -> dict:
        return dict(self.__dict__)


def pretrends_test(result: ce.EventStudyResult) -> PretrendsTest:
    if result.vcov is None:
        raise NoPrePeriods(f"{result.estimator_name} result carries no covariance matrix")
    pre = [k for k in result.vcov_ks if k < 0]
    if not pre:
        raise NoPrePeriods("no pre-period coefficients")
    idx = [result.vcov_ks.index(k) for k in pre]
    beta = np.array([result.by_k[k].estimate for k in pre])
    v = np.asarray(result.vcov)[np.ix_(idx, idx)]
    used_pinv = False
    try:
        if np.linalg.cond(v) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
        v_inv = np.linalg.inv(v)
    except np.linalg.LinAlgError:
        v_inv = np.linalg.pinv(v)
        used_pinv = True
        log.warning("pre-period covariance is singular; using pseudo-inverse")
    q = len(pre)
    wald = float(beta @ v_inv @ beta)
    f_stat = wald / q
    df_den = result.df
    ones = np.ones(q) / q
    return PretrendsTest(
        wald_stat=wald,
        f_stat=f_stat,
        p_value=float(min(1.0, max(0.0, stats.f.sf(f_stat, q, df_den)))),
        df_num=q,
        df_den=df_den,
        avg_pre_effect=float(beta.mean()),
        avg_pre_se=float(np.sqrt(max(ones @ v @ ones, 0.0))),
        used_pinv=used_pinv,
    )


# --- comparison tables ---

def compare_inference(curve, boot: BootstrapResult, ks: Sequence[int] = (5, 10, 15, 20)) -> List[dict]:
    """Forest-based vs bootstrap CI widths per horizon."""
    rows = []
    for k in ks:
        if k not in curve.by_k or k not in boot.ci_by_key:
            continue
        p = curve.by_k[k]
        f_lo, f_hi = p.ci
        b_lo, b_hi = boot.ci_by_key[k]
        f_w, b_w = f_hi - f_lo, b_hi - b_lo
        rows.append(
            {
                "k": k,
                "att": p.att,
                "forest_ci_low": f_lo,
                "forest_ci_high": f_hi,
                "forest_width": f_w,
                "boot_ci_low": b_lo,
                "boot_ci_high": b_hi,
                "boot_width": b_w,
                "ratio": b_w / f_w if f_w > 0 else float("inf"),
            }
        )
    return rows


def estimator_comparison(
    dataset: PanelDataset,
    k: int = 10,
    forest_config: Optional[ForestConfig] = None,
    cs_bootstrap_reps: int = settings.BOOTSTRAP_REPS,
    seed: int = settings.SEED,
    n_jobs: Optional[int] = None,
) -> List[dict]:
    """Point estimate and CI at event time k for all five estimators; IFE reports its static effect."""
    from cffe.analysis.effects_aggregation import dynamic_att

    def _cffe():
        model = fit_forest(dataset, forest_config or ForestConfig(), n_jobs=n_jobs)
        p = dynamic_att(model, dataset, (k, k)).by_k[k]
        return (p.att, p.se, *p.ci)

    def _event(fn):
        def run():
            r = fn().by_k[k]
            return r.estimate, r.std_error, r.ci_low, r.ci_high

        return run

    def _ife():
        r = ce.interactive_fe(dataset)
        return r.tau_hat, r.std_error, r.ci_low, r.ci_high

    runners = {
        "cffe": _cffe,
        "twfe": _event(lambda: ce.twfe_event_study(dataset)),
        "sa": _event(lambda: ce.sun_abraham(dataset)),
        "cs": _event(lambda: ce.callaway_santanna(dataset, bootstrap_reps=cs_bootstrap_reps, seed=seed, n_jobs=n_jobs or 1).event_study),
        "ife": _ife,
    }
    rows = []
    for name in ESTIMATORS:
        row = {"estimator": name, "k": ATT_KEY if name == "ife" else k, "error": ""}
        try:
            est, se, lo, hi = runners[name]()
        except (CffeError, KeyError) as e:
            code = e.code if isinstance(e, CffeError) else "EmptyHorizon"
            log.warning(f"{name} failed at k={k}: {code}")
            est = se = lo = hi = float("nan")
            row["error"] = code
        row.update(estimate=est, se=se, ci_low=lo, ci_high=hi, ci_width=hi - lo)
        rows.append(row)
    return rows
