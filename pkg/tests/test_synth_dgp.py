import numpy as np
import pandas as pd
import pytest

from cffe.errors import InvalidSpec, NoObservationsAtK
from cffe.panel.synth_dgp import DgpSpec, RampCate, TwoGroupCate, generate_panel, true_att


def test_same_seed_same_panel():
    spec = DgpSpec(n_treated=4, n_control=5, year_range=(1990, 2005), seed=9)
    a, _ = generate_panel(spec)
    b, _ = generate_panel(spec)
    pd.testing.assert_frame_equal(a.frame, b.frame)


def test_default_spec_shape():
    ds, truth = generate_panel(DgpSpec(seed=1))
    assert len(ds.treated_countries) == 11
    assert len(ds.control_countries) == 24
    assert ds.year_range == (1970, 2023)
    assert len(ds) == 35 * 54
    assert set(a for a in ds.adoption_by_country.values() if a is not None) == {1999}
    assert truth.true_att_by_k[0] == pytest.approx(-0.35)


def test_noiseless_outcome_decomposes(noiseless):
    ds, truth = noiseless
    f = ds.frame
    expected = f["country"].map(truth.alpha) + f["year"].map(truth.gamma) + np.where(f["treated"], -0.35, 0.0)
    np.testing.assert_allclose(f["outcome"].to_numpy(), expected.to_numpy(), atol=1e-12)


def test_two_group_cate_uses_treated_median():
    spec = DgpSpec(n_treated=6, n_control=4, year_range=(1990, 2005), cate=TwoGroupCate(), sigma_eps=0.0, seed=4)
    ds, truth = generate_panel(spec)
    thr = truth.cate_description["threshold"]
    treated = [truth.features[c][0] for c in ds.treated_countries]
    assert thr == pytest.approx(np.median(treated))
    for c in ds.treated_countries:
        x = np.asarray(truth.features[c])
        assert truth.cate(0, x) == (-0.53 if x[0] < thr else -0.31)


def test_ramp_cate_reaches_level():
    spec = DgpSpec(n_treated=3, n_control=3, year_range=(1990, 2010), cate=RampCate(level=-0.4, ramp_years=4), seed=2)
    _, truth = generate_panel(spec)
    assert true_att(truth, 0) == pytest.approx(-0.08)
    assert true_att(truth, 4) == pytest.approx(-0.4)
    assert true_att(truth, 8) == pytest.approx(-0.4)


def test_true_att_outside_support(noiseless):
    _, truth = noiseless
    with pytest.raises(NoObservationsAtK):
        true_att(truth, 99)


def test_from_mapping():
    spec = DgpSpec.from_mapping({"N_TREATED": "5", "SIGMA_EPS": "0.5", "CATE_KIND": "ramp", "RAMP_YEARS": "3"})
    assert spec.n_treated == 5
    assert spec.sigma_eps == 0.5
    assert isinstance(spec.cate, RampCate)
    assert spec.cate.ramp_years == 3


@pytest.mark.parametrize(
    "values",
    [
        {"year_start": "2000", "year_end": "1990"},
        {"sigma_eps": "-1"},
        {"no_such_key": "1"},
        {"adoption_schedule": "AUT:1800"},
    ],
)
def test_invalid_spec(values):
    with pytest.raises(InvalidSpec):
        DgpSpec.from_mapping(values)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"sigma_eps": -1.0},
        {"n_treated": 0},
        {"year_range": (2000, 1990)},
        {"adoption_schedule": {"ZZZ": 1999}},
    ],
)
def test_direct_construction_raises_invalid_spec(kwargs):
    with pytest.raises(InvalidSpec):
        DgpSpec(**kwargs)
