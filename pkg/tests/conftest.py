import pytest

from cffe.estimators.cffe_forest import ForestConfig
from cffe.panel.synth_dgp import ConstantCate, DgpSpec, generate_panel

TAU0 = -0.35


@pytest.fixture(scope="session")
def noiseless_spec():
    return DgpSpec(
        n_treated=6,
        n_control=8,
        year_range=(1985, 2010),
        default_adoption_year=1999,
        cate=ConstantCate(tau0=TAU0),
        sigma_eps=0.0,
        seed=11,
    )


@pytest.fixture(scope="session")
def noiseless(noiseless_spec):
    return generate_panel(noiseless_spec)


@pytest.fixture(scope="session")
def noiseless_ds(noiseless):
    return noiseless[0]


@pytest.fixture(scope="session")
def staggered_ds():
    spec = DgpSpec(
        n_treated=6,
        n_control=8,
        year_range=(1985, 2010),
        adoption_schedule={"AUT": 1995, "BEL": 1995, "FIN": 1999, "FRA": 1999, "DEU": 2003, "IRL": 2003},
        cate=ConstantCate(tau0=TAU0),
        sigma_eps=0.0,
        seed=12,
    )
    return generate_panel(spec)[0]


@pytest.fixture(scope="session")
def noisy_ds():
    spec = DgpSpec(n_treated=8, n_control=10, year_range=(1985, 2015), sigma_eps=1.0, seed=5)
    return generate_panel(spec)[0]


@pytest.fixture
def small_forest():
    return ForestConfig(n_trees=60, min_leaf=10, max_depth=3, seed=3, min_treated_per_leaf=3, min_control_per_leaf=3)
