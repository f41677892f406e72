"""Size, power and recovery checks over many simulated panels. Run with ``-m slow``."""

import numpy as np
import pytest

from cffe.analysis import effects_aggregation as agg
from cffe.analysis import inference_suite as inf
from cffe.estimators import classic_estimators as ce
from cffe.estimators.cffe_forest import ForestConfig, feature_importance, fit_forest, predict_cate
from cffe.panel.synth_dgp import DgpSpec, FactorConfounding, TwoGroupCate, generate_panel

from .conftest import TAU0

pytestmark = pytest.mark.slow

SEEDS = range(101, 121)
GDP = "gdp_per_capita"


def test_forest_recovers_constant_effect():
    estimates = []
    for seed in SEEDS:
        ds, _ = generate_panel(DgpSpec(seed=seed))
        model = fit_forest(ds, ForestConfig(seed=seed), n_jobs=-1)
        estimates.append(agg.overall_att(model, ds).att)
    assert abs(np.mean(estimates) - TAU0) <= 0.10


def _group_centroids(ds, truth, thr):
    j = ds.feature_names.index(GDP)
    treated = np.array([truth.features[c] for c in ds.treated_countries])
    high = treated[treated[:, j] >= thr].mean(axis=0)
    low = treated[treated[:, j] < thr].mean(axis=0)
    return high, low


def test_forest_separates_two_groups():
    cfg = ForestConfig(n_trees=100, max_depth=2)
    gap_hits = rank_hits = sign_hits = 0
    for seed in SEEDS:
        ds, truth = generate_panel(DgpSpec(cate=TwoGroupCate(), sigma_eps=0.1, seed=seed))
        model = fit_forest(ds, cfg.model_copy(update={"seed": seed}), n_jobs=-1)

        ranked = sorted(feature_importance(model), key=lambda r: -r["importance"])
        rank_hits += ranked[0]["feature"] == GDP

        thr = truth.cate_description["threshold"]
        curves = agg.group_att(model, ds, lambda p: "high" if p[GDP] >= thr else "low")
        gap_hits += curves["high"].by_k[10].att - curves["low"].by_k[10].att >= 0.10

        high, low = _group_centroids(ds, truth, thr)
        sign_hits += predict_cate(model, 10, high) - predict_cate(model, 10, low) > 0
    assert gap_hits >= 18
    assert rank_hits >= 18
    assert sign_hits >= 19


def test_first_split_lands_on_group_feature():
    cfg = ForestConfig(n_trees=100)
    roots = []
    for seed in range(131, 136):
        spec = DgpSpec(n_treated=30, n_control=30, cate=TwoGroupCate(tau_low=-2.0, tau_high=0.0), sigma_eps=0.5, seed=seed)
        ds, _ = generate_panel(spec)
        model = fit_forest(ds, cfg.model_copy(update={"seed": seed}), n_jobs=-1)
        roots.extend(t.split_feature for t in model.trees)
    gdp_column = 1 + ds.feature_names.index(GDP)
    assert np.mean([r == gdp_column for r in roots]) >= 0.90


def test_interactive_fe_removes_factor_bias():
    wins = 0
    for seed in range(200, 250):
        spec = DgpSpec(factor_confounding=FactorConfounding(n_factors=1, corr=0.8), sigma_eps=1.0, seed=seed)
        ds, _ = generate_panel(spec)
        twfe_bias = abs(ce.twfe_static_att(ds).att - TAU0)
        ife_bias = abs(ce.interactive_fe(ds, n_factors=1).tau_hat - TAU0)
        wins += ife_bias < twfe_bias
    assert wins >= 40


def test_placebo_and_pretrends_size_and_power():
    reps = range(300, 500)
    pretrend_rejections = placebo_rejections = power_rejections = 0
    for seed in reps:
        null, _ = generate_panel(DgpSpec(n_treated=30, n_control=30, seed=seed))
        pretrend_rejections += inf.pretrends_test(ce.twfe_event_study(null, (-5, 20))).p_value < 0.05
        placebo_rejections += inf.placebo_fake_dates(null, 1994, "twfe").effect.p_value < 0.05

        trending, _ = generate_panel(DgpSpec(n_treated=30, n_control=30, pretrend_slope=0.5, seed=seed))
        power_rejections += inf.pretrends_test(ce.twfe_event_study(trending, (-5, 20))).p_value < 0.05
    n = len(reps)
    assert 0.02 <= pretrend_rejections / n <= 0.08
    assert 0.02 <= placebo_rejections / n <= 0.08
    assert power_rejections / n >= 0.95


def test_bootstrap_is_wider_than_forest_band():
    ds, _ = generate_panel(DgpSpec(seed=7))
    cfg = ForestConfig(n_trees=100, seed=3)
    curve = agg.dynamic_att(fit_forest(ds, cfg, n_jobs=-1), ds)
    boot = inf.block_bootstrap(ds, "cffe", n_reps=50, seed=11, n_jobs=-1, forest_config=cfg, k_range=(0, 20))
    rows = inf.compare_inference(curve, boot)
    assert [r["k"] for r in rows] == [5, 10, 15, 20]
    for r in rows:
        assert r["ratio"] > 1.0
