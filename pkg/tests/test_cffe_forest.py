import numpy as np
import pytest
from numpy.testing import assert_allclose

from cffe.errors import DimensionMismatch, InsufficientData, TooFewTrees
from cffe.estimators.cffe_forest import (
    ForestConfig,
    _grow_tree,
    fit_forest,
    forest_data,
    forest_variance,
    honest_halves,
    load_model,
    pair_variance,
    predict_cate,
    predict_rows,
    residualize_node,
    save_model,
    tree_predictions,
)
from cffe.panel.panel_core import restrict

from .conftest import TAU0


def test_noiseless_constant_effect_recovered(noiseless_ds, small_forest):
    model = fit_forest(noiseless_ds, small_forest, n_jobs=1)
    post = noiseless_ds.d > 0
    per_tree = tree_predictions(model, noiseless_ds.k[post], noiseless_ds.x[post])
    assert_allclose(per_tree, TAU0, atol=1e-6)


def test_residualize_node_recovers_effect(noiseless_ds):
    ds = noiseless_ds
    res = residualize_node(ds.y, ds.d, ds.country_codes, ds.year_codes)
    assert not res.degenerate
    assert res.d @ res.y / (res.d @ res.d) == pytest.approx(TAU0, abs=1e-10)


def test_single_country_node_is_degenerate():
    y = np.array([1.0, 2.0, 3.0])
    d = np.array([0.0, 1.0, 1.0])
    res = residualize_node(y, d, np.zeros(3, dtype=int), np.arange(3))
    assert res.degenerate


def test_same_seed_same_forest_across_workers(noisy_ds, small_forest):
    a = fit_forest(noisy_ds, small_forest, n_jobs=1)
    b = fit_forest(noisy_ds, small_forest, n_jobs=2)
    assert a.to_json() == b.to_json()


def test_different_seed_changes_forest(noisy_ds, small_forest):
    a = fit_forest(noisy_ds, small_forest, n_jobs=1)
    b = fit_forest(noisy_ds, small_forest.model_copy(update={"seed": 4}), n_jobs=1)
    assert a.to_json() != b.to_json()


def test_model_file_reproduces_predictions(noisy_ds, small_forest, tmp_path):
    model = fit_forest(noisy_ds, small_forest, n_jobs=1)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    rows = noisy_ds.d > 0
    assert_allclose(predict_rows(loaded, noisy_ds.k[rows], noisy_ds.x[rows]), predict_rows(model, noisy_ds.k[rows], noisy_ds.x[rows]))
    assert loaded.event_time_support == model.event_time_support


def test_predict_checks_feature_count(noisy_ds, small_forest):
    model = fit_forest(noisy_ds, small_forest, n_jobs=1)
    with pytest.raises(DimensionMismatch):
        predict_cate(model, 3, [0.0])


def test_variance_needs_enough_honest_trees(noisy_ds):
    few = fit_forest(noisy_ds, ForestConfig(n_trees=10, min_leaf=10, max_depth=2, seed=1), n_jobs=1)
    with pytest.raises(TooFewTrees):
        forest_variance(few, 3, noisy_ds.x[0])
    dishonest = fit_forest(noisy_ds, ForestConfig(n_trees=60, min_leaf=10, max_depth=2, honesty=False, seed=1), n_jobs=1)
    with pytest.raises(TooFewTrees):
        forest_variance(dishonest, 3, noisy_ds.x[0])


def test_forest_variance_non_negative(noisy_ds, small_forest):
    model = fit_forest(noisy_ds, small_forest, n_jobs=1)
    assert forest_variance(model, 5, noisy_ds.x[0]) >= 0.0


def test_pair_variance_formula():
    per_tree = np.array([1.0, 3.0, 2.0, 2.0, 5.0, 7.0])
    # pair means 2, 2, 6: var(ddof=1) = 16/3, over 3 pairs
    assert pair_variance(per_tree) == pytest.approx(16.0 / 9.0)


def test_needs_both_treated_and_control(noiseless_ds, small_forest):
    treated_only = restrict(noiseless_ds, countries=list(noiseless_ds.treated_countries))
    with pytest.raises(InsufficientData):
        fit_forest(treated_only, small_forest.model_copy(update={"n_trees": 1}))


def _topology(node):
    if node.is_leaf:
        return None
    return (node.split_feature, node.split_threshold, _topology(node.children[0]), _topology(node.children[1]))


def test_estimation_rows_do_not_move_splits(noisy_ds, small_forest):
    data = forest_data(noisy_ds)
    n = data.y.size
    rng = np.random.default_rng(0)
    split_any = False
    for i in range(6):
        split_rows, est_rows = honest_halves(n, i, small_forest)
        assert np.intersect1d(split_rows, est_rows).size == 0
        y = data.y.copy()
        y[est_rows] = rng.permutation(y[est_rows])
        base, _ = _grow_tree(data, i, small_forest, 0.0)
        shuffled, _ = _grow_tree(data._replace(y=y), i, small_forest, 0.0)
        assert _topology(shuffled) == _topology(base)
        split_any |= not base.is_leaf
    assert split_any


def test_without_honesty_both_halves_are_the_subsample(small_forest):
    cfg = small_forest.model_copy(update={"honesty": False})
    split_rows, est_rows = honest_halves(200, 0, cfg)
    assert split_rows.size == 100
    np.testing.assert_array_equal(split_rows, est_rows)
