import numpy as np
import pytest
from numpy.testing import assert_allclose

from cffe.analysis import effects_aggregation as agg
from cffe.analysis.inference_suite import BootstrapResult
from cffe.errors import EmptyGroup, EmptyHorizon, GapInSupport
from cffe.estimators.cffe_forest import ForestConfig, fit_forest

from .conftest import TAU0


def _flat_curve(value, k_max=20, se=0.1, skip=()):
    by_k = {k: agg.CurvePoint(value, se, 10) for k in range(k_max + 1) if k not in skip}
    return agg.AttCurve(by_k=by_k, k_range=(0, k_max))


@pytest.fixture(scope="module")
def noiseless_model(noiseless_ds):
    cfg = ForestConfig(n_trees=60, min_leaf=10, max_depth=3, seed=3, min_treated_per_leaf=3, min_control_per_leaf=3)
    return fit_forest(noiseless_ds, cfg, n_jobs=1)


@pytest.fixture(scope="module")
def noisy_model(noisy_ds):
    cfg = ForestConfig(n_trees=60, min_leaf=10, max_depth=3, seed=3, min_treated_per_leaf=3, min_control_per_leaf=3)
    return fit_forest(noisy_ds, cfg, n_jobs=1)


class TestCumulative:
    def test_constant_curve_matches_product_loop(self):
        cum = agg.cumulative_effects(_flat_curve(-0.35), horizons=(20,))
        row = cum.by_horizon[20]
        level = 1.0
        for _ in range(21):
            level *= 1.0 + -0.35 / 100.0
        assert row.simple_sum == pytest.approx(-7.35, abs=1e-12)
        assert abs(row.compounded - (level - 1.0) * 100.0) <= 1e-12
        assert row.compounded == pytest.approx(-7.10, abs=0.01)
        assert abs(row.compounded) < abs(row.simple_sum)

    def test_zero_curve(self):
        cum = agg.cumulative_effects(_flat_curve(0.0))
        for row in cum.by_horizon.values():
            assert row.simple_sum == 0.0
            assert row.compounded == 0.0

    def test_gap_in_support(self):
        with pytest.raises(GapInSupport):
            agg.cumulative_effects(_flat_curve(-0.35, skip=(3,)), horizons=(5,))

    def test_delta_method_band_contains_point(self):
        row = agg.cumulative_effects(_flat_curve(-0.35, se=0.2), horizons=(10,)).by_horizon[10]
        assert row.ci_low < row.compounded < row.ci_high
        assert row.simple_ci_high - row.simple_ci_low == pytest.approx(2 * agg.Z95 * 0.2 * np.sqrt(11))

    def test_bootstrap_percentiles(self):
        rng = np.random.default_rng(0)
        keys = list(range(6))
        est = -0.35 + 0.05 * rng.standard_normal((200, 6))
        boot = BootstrapResult("cffe", keys, est, {}, {}, 200, 0, 0)
        row = agg.cumulative_effects_bootstrap(_flat_curve(-0.35, k_max=5), boot, horizons=(5,)).by_horizon[5]
        assert row.simple_sum == pytest.approx(-2.1)
        assert row.simple_ci_low < -2.1 < row.simple_ci_high
        assert row.ci_low < row.compounded < row.ci_high


class TestCurves:
    def test_noiseless_curve_is_flat(self, noiseless_model, noiseless_ds):
        curve = agg.dynamic_att(noiseless_model, noiseless_ds, (0, 40))
        assert max(curve.by_k) == 11
        for p in curve.by_k.values():
            assert p.att == pytest.approx(TAU0, abs=1e-6)
            assert p.n == 6

    def test_empty_horizon(self, noiseless_model, noiseless_ds):
        with pytest.raises(EmptyHorizon):
            agg.dynamic_att(noiseless_model, noiseless_ds, (30, 40))

    def test_overall_att(self, noiseless_model, noiseless_ds):
        r = agg.overall_att(noiseless_model, noiseless_ds)
        assert r.att == pytest.approx(TAU0, abs=1e-6)
        assert r.n_countries == 6

    def test_groups_decompose_the_curve(self, noisy_model, noisy_ds):
        curve = agg.dynamic_att(noisy_model, noisy_ds)
        groups = agg.group_att(noisy_model, noisy_ds, agg.median_split(noisy_ds, "gdp_per_capita"))
        assert set(groups) <= {"above", "below"}
        for k, p in curve.by_k.items():
            parts = [g.by_k[k] for g in groups.values() if k in g.by_k]
            weighted = sum(q.att * q.n for q in parts) / sum(q.n for q in parts)
            assert weighted == pytest.approx(p.att, abs=1e-12)

    def test_single_cohort_cannot_split(self, noisy_ds):
        with pytest.raises(EmptyGroup):
            agg.cohort_split(noisy_ds)

    def test_trajectories(self, noiseless_model, noiseless_ds):
        paths = agg.country_trajectories(noiseless_model, noiseless_ds)
        assert [t.country for t in paths] == list(noiseless_ds.treated_countries)
        for t in paths:
            assert t.post_average == pytest.approx(TAU0, abs=1e-6)
            assert_allclose([p.se for p in t.curve.by_k.values()], 0.0, atol=1e-6)

    def test_counterfactual_flags_extrapolation(self, noiseless_model, noiseless_ds):
        inside = noiseless_ds.x[noiseless_ds.ever_treated][0]
        curve = agg.counterfactual_predict(noiseless_model, inside, (0, 15))
        assert [curve.extrapolative[k] for k in range(12)] == [False] * 12
        assert all(curve.extrapolative[k] for k in range(12, 16))
        outside = agg.counterfactual_predict(noiseless_model, inside + 100.0, (0, 3))
        assert all(outside.extrapolative.values())
