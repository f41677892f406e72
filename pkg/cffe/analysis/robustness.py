"""
Robustness battery. Every procedure re-estimates on a modified sample or
configuration and returns plain dict rows ready for CSV export.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cffe.analysis.effects_aggregation import Z95, cluster_se, dynamic_att, overall_att
from cffe.analysis.inference_suite import scalar_effect
from cffe.errors import EmptyGroup
from cffe.estimators.cffe_forest import ForestConfig, fit_forest, predict_rows
from cffe.panel.panel_core import PanelDataset, redate, restrict
from cffe.panel.synth_dgp import EU_OPT_OUTS, FOUNDERS

log = logging.getLogger(__name__)

EU15 = ("AUT", "BEL", "DEU", "DNK", "ESP", "FIN", "FRA", "GBR", "GRC", "IRL", "ITA", "LUX", "NLD", "PRT", "SWE")
CRISIS_COUNTRIES = ("GRC", "IRL", "PRT", "ESP", "CYP")
CORE = ("AUT", "BEL", "DEU", "FRA", "NLD")

# label, n_trees, max_depth, min_leaf
DEFAULT_GRID = (
    ("baseline", 200, 5, 30),
    ("trees=100", 100, 5, 30),
    ("trees=500", 500, 5, 30),
    ("depth=3", 200, 3, 30),
    ("depth=7", 200, 7, 30),
    ("leaf=20", 200, 5, 20),
    ("leaf=50", 200, 5, 50),
)


def _row(label: str, dataset: PanelDataset, estimator: str, config: Optional[ForestConfig], n_jobs: int) -> dict:
    e = scalar_effect(dataset, estimator, config, n_jobs=n_jobs)
    return {
        "label": label,
        "att": e.att,
        "se": e.se,
        "ci_low": e.ci_low,
        "ci_high": e.ci_high,
        "n_treated": len(dataset.treated_countries),
    }


def _keep_treated(dataset: PanelDataset, treated: Sequence[str]) -> PanelDataset:
    keep = [c for c in dataset.treated_countries if c in set(treated)]
    if not keep:
        raise EmptyGroup("restriction leaves no treated country")
    if not dataset.control_countries:
        raise EmptyGroup("restriction leaves no control country")
    return restrict(dataset, countries=[*keep, *dataset.control_countries])


def time_stability(
    dataset: PanelDataset,
    end_years: Sequence[int] = (2010, 2015, 2018, 2020, 2023),
    config: Optional[ForestConfig] = None,
    estimator: str = "cffe",
    n_jobs: int = 1,
) -> List[dict]:
    rows = []
    _, last = dataset.year_range
    for end in end_years:
        if end > last:
            log.info(f"skipping end year {end}: panel ends in {last}")
            continue
        sub = restrict(dataset, year_max=end)
        if not sub.treated_countries or not sub.control_countries:
            raise EmptyGroup(f"sample through {end} lacks treated or control countries", year=end)
        rows.append({**_row(f"through {end}", sub, estimator, config, n_jobs), "end_year": end})
    return rows


def control_group_sensitivity(
    dataset: PanelDataset,
    eu_controls: Sequence[str] = EU_OPT_OUTS,
    ks: Sequence[int] = (0, 5, 10, 15, 20),
    config: Optional[ForestConfig] = None,
    n_jobs: int = 1,
) -> List[dict]:
    """Baseline control pool vs EU opt-outs only, per horizon."""
    present = [c for c in eu_controls if c in dataset.control_countries]
    if not present:
        raise EmptyGroup(f"none of {', '.join(eu_controls)} is a control country")
    cfg = config or ForestConfig()
    lo, hi = min(ks), max(ks)
    base = dynamic_att(fit_forest(dataset, cfg, n_jobs=n_jobs), dataset, (lo, hi))
    eu_ds = restrict(dataset, countries=[*dataset.treated_countries, *present])
    eu = dynamic_att(fit_forest(eu_ds, cfg, n_jobs=n_jobs), eu_ds, (lo, hi))
    rows = []
    for k in ks:
        if k not in base.by_k or k not in eu.by_k:
            continue
        b, e = base.by_k[k], eu.by_k[k]
        rows.append(
            {
                "label": "eu_controls",
                "k": k,
                "att": e.att,
                "se": e.se,
                "ci_low": e.ci[0],
                "ci_high": e.ci[1],
                "baseline_att": b.att,
                "difference": e.att - b.att,
                "n_treated": len(eu_ds.treated_countries),
            }
        )
    return rows


def _subset_row(label, model, dataset: PanelDataset, mask: np.ndarray) -> dict:
    if not mask.any():
        raise EmptyGroup(f"{label}: no treated rows")
    preds = predict_rows(model, dataset.k[mask], dataset.x[mask])
    att = float(preds.mean())
    se = cluster_se(preds, dataset.country_codes[mask])
    return {
        "label": label,
        "att": att,
        "se": se,
        "ci_low": att - Z95 * se,
        "ci_high": att + Z95 * se,
        "n_treated": int(np.unique(dataset.country_codes[mask]).size),
    }


def crisis_split(
    dataset: PanelDataset,
    crisis_years: Tuple[int, int] = (2008, 2015),
    split_k: int = 9,
    config: Optional[ForestConfig] = None,
    n_jobs: int = 1,
) -> List[dict]:
    cfg = config or ForestConfig()
    model = fit_forest(dataset, cfg, n_jobs=n_jobs)
    full = overall_att(model, dataset)
    rows = [
        {
            "label": "full",
            "att": full.att,
            "se": full.se,
            "ci_low": full.ci_low,
            "ci_high": full.ci_high,
            "n_treated": len(dataset.treated_countries),
        }
    ]
    rows.append(_row(f"excluding {crisis_years[0]}-{crisis_years[1]}", restrict(dataset, exclude_years=crisis_years), "cffe", cfg, n_jobs))
    post = dataset.d > 0
    rows.append(_subset_row(f"k<{split_k}", model, dataset, post & (dataset.k < split_k)))
    rows.append(_subset_row(f"k>={split_k}", model, dataset, post & (dataset.k >= split_k)))
    return rows


def hyperparameter_grid(
    dataset: PanelDataset,
    grid: Sequence[Tuple[str, int, int, int]] = DEFAULT_GRID,
    seed: int = 0,
    n_jobs: int = 1,
) -> List[dict]:
    rows = []
    for label, n_trees, depth, leaf in grid:
        cfg = ForestConfig(n_trees=n_trees, max_depth=depth, min_leaf=leaf, seed=seed)
        rows.append({**_row(label, dataset, "cffe", cfg, n_jobs), "n_trees": n_trees, "max_depth": depth, "min_leaf": leaf})
    return rows


def anticipation_timing(
    dataset: PanelDataset,
    founders_dates: Sequence[int] = (1999, 1997, 1995),
    founders: Optional[Sequence[str]] = None,
    config: Optional[ForestConfig] = None,
    n_jobs: int = 1,
) -> List[dict]:
    """Re-date the founding cohort (earliest adopters unless given) to each candidate year."""
    adoption = {c: a for c, a in dataset.adoption_by_country.items() if a is not None}
    if not adoption:
        raise EmptyGroup("no treated countries")
    if founders is None:
        first = min(adoption.values())
        founders = [c for c, a in adoption.items() if a == first]
    rows = []
    for year in founders_dates:
        sub = redate(dataset, {c: year for c in founders if c in adoption})
        rows.append({**_row(f"founders at {year}", sub, "cffe", config, n_jobs), "adoption_year": year})
    return rows


def sample_restrictions(
    dataset: PanelDataset,
    restrictions: Optional[Dict[str, Sequence[str]]] = None,
    config: Optional[ForestConfig] = None,
    n_jobs: int = 1,
) -> List[dict]:
    """Each restriction names the treated countries kept; the control pool is unchanged."""
    if restrictions is None:
        treated = dataset.treated_countries
        restrictions = {
            "founders only": FOUNDERS,
            "EU15": EU15,
            "excluding crisis countries": [c for c in treated if c not in CRISIS_COUNTRIES],
            "core only": CORE,
        }
    rows = []
    for label, keep in restrictions.items():
        rows.append(_row(label, _keep_treated(dataset, keep), "cffe", config, n_jobs))
    return rows


def adopter_timing(dataset: PanelDataset, config: Optional[ForestConfig] = None, n_jobs: int = 1) -> List[dict]:
    adoption = {c: a for c, a in dataset.adoption_by_country.items() if a is not None}
    cohorts = sorted(set(adoption.values()))
    if len(cohorts) < 2:
        raise EmptyGroup("adopter timing needs at least two cohorts")
    early = [c for c, a in adoption.items() if a == cohorts[0]]
    late = [c for c, a in adoption.items() if a != cohorts[0]]
    return [
        _row("early adopters", _keep_treated(dataset, early), "cffe", config, n_jobs),
        _row("late adopters", _keep_treated(dataset, late), "cffe", config, n_jobs),
    ]
