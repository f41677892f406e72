import numpy as np
import pytest

from cffe.errors import InvalidSpec, NoNeverTreated, NoPrePeriod, RankDeficient, TooFewClusters
from cffe.estimators import classic_estimators as ce
from cffe.panel.panel_core import build_dataset, redate, restrict

from .conftest import TAU0

WINDOW = (-10, 11)


def _estimates(result):
    return {k: r.estimate for k, r in result.by_k.items()}


def test_twfe_noiseless_event_study(noiseless_ds):
    result = ce.twfe_event_study(noiseless_ds, WINDOW)
    assert -1 not in result.by_k
    for k, est in _estimates(result).items():
        assert est == pytest.approx(TAU0 if k >= 0 else 0.0, abs=1e-8)
    assert result.n_clusters == 14
    assert result.vcov.shape == (len(result.vcov_ks), len(result.vcov_ks))


def test_twfe_static_noiseless(noiseless_ds):
    r = ce.twfe_static_att(noiseless_ds)
    assert r.att == pytest.approx(TAU0, abs=1e-8)
    assert r.n_clusters == 14


def test_sun_abraham_single_cohort_equals_twfe(noisy_ds):
    twfe = ce.twfe_event_study(noisy_ds, WINDOW)
    sa = ce.sun_abraham(noisy_ds, WINDOW)
    assert sorted(sa.by_k) == sorted(twfe.by_k)
    for k in twfe.by_k:
        assert sa.by_k[k].estimate == pytest.approx(twfe.by_k[k].estimate, abs=1e-8)
        assert sa.by_k[k].std_error == pytest.approx(twfe.by_k[k].std_error, rel=1e-8)


def test_sun_abraham_staggered_noiseless(staggered_ds):
    sa = ce.sun_abraham(staggered_ds, WINDOW)
    for k, est in _estimates(sa).items():
        assert est == pytest.approx(TAU0 if k >= 0 else 0.0, abs=1e-8)


def test_callaway_santanna_noiseless(staggered_ds):
    result = ce.callaway_santanna(staggered_ds, WINDOW, bootstrap_reps=0)
    es = result.event_study
    assert -1 not in es.by_k
    for k, est in _estimates(es).items():
        assert est == pytest.approx(TAU0 if k >= 0 else 0.0, abs=1e-10)
    assert all(np.isnan(r.std_error) for r in es.by_k.values())
    cohorts = {r["cohort"] for r in result.group_time}
    assert cohorts == {1995, 1999, 2003}


def test_aggregate_group_time_weights_by_cohort_size():
    rows = [
        {"cohort": 2000, "year": 2001, "k": 1, "att": 1.0, "n_treated": 1, "n_control": 5},
        {"cohort": 2002, "year": 2003, "k": 1, "att": 4.0, "n_treated": 3, "n_control": 5},
    ]
    assert ce.aggregate_group_time(rows, (0, 2)) == {1: (pytest.approx(3.25), 4)}


def test_interactive_fe_noiseless_matches_twfe(noiseless_ds):
    ife = ce.interactive_fe(noiseless_ds, n_factors=1)
    assert ife.converged
    assert ife.tau_hat == pytest.approx(ce.twfe_static_att(noiseless_ds).att, abs=1e-8)
    assert ife.factors.shape == (26, 1)
    assert ife.loadings.shape == (14, 1)


def test_interactive_fe_drops_countries_with_gaps(noiseless_ds):
    frame = noiseless_ds.frame
    gap = frame.index[(frame["country"] == "DNK") & (frame["year"] == 2000)]
    ds = build_dataset(frame.drop(gap), noiseless_ds.feature_names)
    ife = ce.interactive_fe(ds, n_factors=1)
    assert "DNK" not in ife.countries
    assert any("DNK" in w for w in ife.warnings)


def test_interactive_fe_needs_a_factor(noiseless_ds):
    with pytest.raises(InvalidSpec):
        ce.interactive_fe(noiseless_ds, n_factors=0)


def test_sun_abraham_needs_never_treated(noiseless_ds):
    treated_only = restrict(noiseless_ds, countries=list(noiseless_ds.treated_countries))
    with pytest.raises(NoNeverTreated):
        ce.sun_abraham(treated_only, WINDOW)
    with pytest.raises(NoNeverTreated):
        ce.group_time_att(treated_only)


def test_twfe_needs_two_control_clusters(noiseless_ds):
    one_control = restrict(noiseless_ds, countries=[*noiseless_ds.treated_countries, "DNK"])
    with pytest.raises(TooFewClusters):
        ce.twfe_event_study(one_control, WINDOW)


def test_cohort_without_pre_period(noiseless_ds):
    early = redate(noiseless_ds, {"AUT": 1985})
    with pytest.raises(NoPrePeriod):
        ce.group_time_att(early)


def test_collinear_columns_are_named():
    rng = np.random.default_rng(0)
    country = np.repeat(np.arange(4), 5)
    year = np.tile(np.arange(5), 4)
    col = rng.standard_normal(20)
    with pytest.raises(RankDeficient) as e:
        ce._within_ols(rng.standard_normal(20), np.column_stack([col, col]), country, year, ["a", "b"])
    assert len(e.value.columns) == 1


def test_event_study_ignores_constant_outcome_shift(noisy_ds):
    frame = noisy_ds.frame.copy()
    frame["outcome"] = frame["outcome"] + 5.0
    shifted = build_dataset(frame, noisy_ds.feature_names, noisy_ds.extra_outcome_names)
    base = ce.twfe_event_study(noisy_ds, WINDOW)
    moved = ce.twfe_event_study(shifted, WINDOW)
    assert moved.by_k.keys() == base.by_k.keys()
    for k, est in _estimates(base).items():
        assert moved.by_k[k].estimate == pytest.approx(est, abs=1e-9)
        assert moved.by_k[k].std_error == pytest.approx(base.by_k[k].std_error, rel=1e-6)


def test_event_study_other_reference_period_shifts_every_coefficient(noisy_ds):
    base = _estimates(ce.twfe_event_study(noisy_ds, WINDOW))
    moved = ce.twfe_event_study(noisy_ds, WINDOW, reference_k=-2)
    assert moved.reference_k == -2
    assert -2 not in moved.by_k
    shift = base[-2]
    assert moved.by_k[-1].estimate == pytest.approx(-shift, abs=1e-8)
    for k, est in base.items():
        if k != -2:
            assert moved.by_k[k].estimate == pytest.approx(est - shift, abs=1e-8)
