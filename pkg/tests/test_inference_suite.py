import numpy as np
import pytest
from scipy import stats

from cffe.analysis import inference_suite as inf
from cffe.errors import (
    AssignedCountryIsTreated,
    FakeDateTooLate,
    InvalidSpec,
    NoPrePeriods,
    SingleCluster,
    TooFewTreated,
)
from cffe.estimators import classic_estimators as ce
from cffe.panel.panel_core import restrict

from .conftest import TAU0


def _result(ks, estimates, vcov, n=10):
    by_k = {k: ce.EffectRow(e, 1.0, e - 2.0, e + 2.0, n) for k, e in zip(ks, estimates)}
    return ce.EventStudyResult(by_k=by_k, estimator_name="twfe", vcov=np.asarray(vcov, dtype=float), vcov_ks=tuple(ks), n_clusters=10)


class TestClusterRobustVar:
    def test_two_countries(self):
        assert inf.cluster_robust_var([-0.2, -0.4], ["A", "B"]) == pytest.approx(0.005)

    def test_duplicating_every_row_leaves_it_unchanged(self):
        rng = np.random.default_rng(0)
        cates = rng.standard_normal(12)
        countries = np.repeat(["A", "B", "C"], 4)
        once = inf.cluster_robust_var(cates, countries)
        twice = inf.cluster_robust_var(np.r_[cates, cates], np.r_[countries, countries])
        assert twice == pytest.approx(once)

    def test_single_country(self):
        with pytest.raises(SingleCluster):
            inf.cluster_robust_var([1.0, 2.0], ["A", "A"])


class TestPretrends:
    def test_zero_coefficients(self):
        t = inf.pretrends_test(_result((-3, -2, 0), (0.0, 0.0, 0.5), np.eye(3)))
        assert t.f_stat == 0.0
        assert t.p_value == 1.0
        assert t.df_num == 2
        assert t.df_den == 9

    def test_known_statistic(self):
        t = inf.pretrends_test(_result((-3, -2, 0), (1.0, 2.0, 0.0), np.eye(3)))
        assert t.wald_stat == pytest.approx(5.0)
        assert t.p_value == pytest.approx(stats.f.sf(2.5, 2, 9))
        assert t.avg_pre_effect == pytest.approx(1.5)
        assert t.avg_pre_se == pytest.approx(np.sqrt(0.5))
        assert not t.used_pinv

    def test_singular_covariance_falls_back(self):
        t = inf.pretrends_test(_result((-3, -2, 0), (1.0, 1.0, 0.0), [[1, 1, 0], [1, 1, 0], [0, 0, 1]]))
        assert t.used_pinv

    def test_no_pre_periods(self):
        with pytest.raises(NoPrePeriods):
            inf.pretrends_test(_result((0, 1), (0.1, 0.2), np.eye(2)))


def test_post_average_weights_by_treated_count():
    r = _result((-2, 0, 1), (5.0, 1.0, 3.0), np.eye(3))
    e = inf.post_average(r)
    assert e.att == pytest.approx(2.0)
    assert e.se == pytest.approx(np.sqrt(0.5))


class TestBootstrap:
    def test_resample_gives_fresh_ids(self, noiseless_ds):
        sample = inf.resample_countries(noiseless_ds, np.random.default_rng(1))
        assert sample is not None
        assert len(sample.countries) == len(noiseless_ds.countries)
        assert all("#" in c for c in sample.countries)

    def test_static_effect_is_exact_on_noiseless_panel(self, noiseless_ds):
        def fn(ds):
            return {inf.ATT_KEY: ce.twfe_static_att(ds).att}

        a = inf.run_block_bootstrap(noiseless_ds, fn, 50, seed=7, n_jobs=1)
        b = inf.run_block_bootstrap(noiseless_ds, fn, 50, seed=7, n_jobs=1)
        np.testing.assert_array_equal(a.estimates, b.estimates)
        lo, hi = a.ci_by_key[inf.ATT_KEY]
        assert lo == pytest.approx(TAU0, abs=1e-8)
        assert hi == pytest.approx(TAU0, abs=1e-8)
        assert a.n_replicates == 50

    def test_numerical_failure_counts_as_failed_replicate(self, noiseless_ds):
        calls = []

        def fn(ds):
            calls.append(len(ds))
            if len(calls) == 3:
                raise np.linalg.LinAlgError("Singular matrix")
            return {inf.ATT_KEY: 1.0}

        res = inf.run_block_bootstrap(noiseless_ds, fn, 50, seed=11, n_jobs=1)
        valid = res.estimates.shape[0]
        # one replicate raised and the last call is the full-sample point estimate
        assert valid == len(calls) - 2
        assert res.n_failed == 50 - valid
        assert res.n_failed >= 1
        assert res.point == {inf.ATT_KEY: 1.0}

    def test_too_few_replicates(self, noiseless_ds):
        with pytest.raises(InvalidSpec):
            inf.block_bootstrap(noiseless_ds, "twfe", n_reps=49, seed=1)

    def test_unknown_estimator(self, noiseless_ds):
        with pytest.raises(InvalidSpec):
            inf.block_bootstrap(noiseless_ds, "ols", n_reps=50, seed=1)


class TestPlacebos:
    def test_fake_date_on_clean_panel_is_null(self, noiseless_ds):
        p = inf.placebo_fake_dates(noiseless_ds, 1995, "twfe")
        assert p.effect.att == pytest.approx(0.0, abs=1e-8)
        assert p.n_post_obs == 6 * 4
        assert max(p.event_study.by_k) == 3

    def test_fake_date_must_precede_adoption(self, noiseless_ds):
        with pytest.raises(FakeDateTooLate):
            inf.placebo_fake_dates(noiseless_ds, 1999)

    def test_assignment_checks(self, noiseless_ds):
        with pytest.raises(InvalidSpec):
            inf.placebo_nontreated(noiseless_ds, {})
        with pytest.raises(AssignedCountryIsTreated):
            inf.placebo_nontreated(noiseless_ds, {"AUT": 1999})

    def test_nontreated_joint_row(self, noisy_ds, small_forest):
        p = inf.placebo_nontreated(noisy_ds, {"DNK": 1999, "SWE": 1999}, small_forest, n_jobs=1)
        rows = p.to_rows()
        assert [r["country"] for r in rows] == ["DNK", "SWE", "joint"]
        assert p.joint_df == 2
        assert 0.0 <= p.joint_p <= 1.0
        assert p.joint_stat == pytest.approx(sum((r["att"] / r["se"]) ** 2 for r in rows[:2]))


class TestLeaveOneOut:
    def test_one_row_per_treated_country(self, noiseless_ds):
        rows = inf.leave_one_out(noiseless_ds, "twfe", n_jobs=1)
        assert [r["dropped"] for r in rows] == list(noiseless_ds.treated_countries)
        for r in rows:
            assert r["att"] == pytest.approx(TAU0, abs=1e-8)

    def test_needs_three_treated(self, noiseless_ds):
        two = restrict(noiseless_ds, countries=["AUT", "BEL", *noiseless_ds.control_countries])
        with pytest.raises(TooFewTreated):
            inf.leave_one_out(two, "twfe", n_jobs=1)


@pytest.mark.slow
def test_estimator_comparison_covers_all_estimators(noisy_ds, small_forest):
    rows = inf.estimator_comparison(noisy_ds, k=5, forest_config=small_forest, cs_bootstrap_reps=50, seed=3, n_jobs=1)
    assert [r["estimator"] for r in rows] == list(inf.ESTIMATORS)
    for r in rows:
        assert r["error"] == ""
        assert r["ci_low"] <= r["estimate"] <= r["ci_high"]
