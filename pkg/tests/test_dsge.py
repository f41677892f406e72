import numpy as np
import pytest
from numpy.testing import assert_allclose

from cffe.dsge import dsge_lab as dsge
from cffe.errors import HorizonTooShort, InvalidCalibration, InvalidSpec, WindowExceedsHorizon

H = 300
BASE = dsge.DsgeCalibration()
G_F = dsge.ShockSpec(variable="g_F", size=-0.01)


@pytest.fixture(scope="module")
def union_irf():
    return dsge.solve_irf(dsge.build_system(BASE, dsge.UNION), G_F, H)


@pytest.fixture(scope="module")
def float_irf():
    return dsge.solve_irf(dsge.build_system(BASE, dsge.FLOAT), G_F, H)


def test_variable_counts():
    assert len(dsge.build_system(BASE, dsge.UNION).variables) == 12
    assert len(dsge.build_system(BASE, dsge.FLOAT).variables) == 14
    for regime in dsge.REGIMES:
        system = dsge.build_system(BASE, regime)
        assert len(system.equations) == len(system.variables)


def test_zero_shock_gives_zero_paths():
    irf = dsge.solve_irf(dsge.build_system(BASE, dsge.FLOAT), dsge.ShockSpec(size=0.0), H)
    for path in irf.paths.values():
        assert_allclose(path, 0.0, atol=0.0)


def test_equations_hold(union_irf, float_irf):
    assert union_irf.residual_norm <= 1e-8
    assert float_irf.residual_norm <= 1e-8


def test_linear_in_shock_size(union_irf):
    doubled = dsge.solve_irf(dsge.build_system(BASE, dsge.UNION), G_F.model_copy(update={"size": -0.02}), H)
    for v, path in union_irf.paths.items():
        assert_allclose(doubled.paths[v], 2.0 * path, rtol=1e-10, atol=1e-14)


def test_union_constraints(union_irf):
    assert np.all(union_irf.paths["e"] == 0.0)
    assert np.array_equal(union_irf.paths["i_H"], union_irf.paths["i_F"])


def test_float_without_spillover_decouples_home():
    cal = BASE.model_copy(update={"nu": 0.0})
    irf = dsge.solve_irf(dsge.build_system(cal, dsge.FLOAT), G_F, H)
    for v in ("x_H", "pi_H", "a_H", "i_H"):
        assert_allclose(irf.paths[v], 0.0, atol=1e-10)
    assert np.abs(irf.paths["x_F"]).max() > 1e-4


def test_no_scarring_leaves_productivity_flat():
    cal = BASE.model_copy(update={"chi": 0.0})
    irf = dsge.solve_irf(dsge.build_system(cal, dsge.UNION), G_F, H)
    assert_allclose(irf.paths["a_F"], 0.0, atol=1e-14)


def test_symmetric_shock_paths_coincide():
    cal = BASE.model_copy(update={"omega": 0.5})
    both = [dsge.ShockSpec(variable="g_H", size=-0.01), dsge.ShockSpec(variable="g_F", size=-0.01)]
    union = dsge.solve_irf(dsge.build_system(cal, dsge.UNION), both, H)
    flt = dsge.solve_irf(dsge.build_system(cal, dsge.FLOAT), both, H)
    assert_allclose(union.paths["x_H"], union.paths["x_F"], atol=1e-12)
    assert_allclose(union.paths["x_F"], flt.paths["x_F"], atol=1e-12)


def test_union_loss_exceeds_float(union_irf, float_irf):
    assert abs(dsge.cumulative_loss(union_irf, "F")) > abs(dsge.cumulative_loss(float_irf, "F"))


def test_compare_regimes_reports_ratio():
    comp = dsge.compare_regimes(BASE, G_F, H)
    assert comp.ratio == pytest.approx(comp.loss_union / comp.loss_float)
    assert comp.ratio > 1.0
    assert {r["metric"] for r in comp.to_rows()} >= {"cumulative_loss_F", "loss_ratio", "reference_ratio"}


def test_policy_mismatch_without_scarring_or_spillover():
    cal = BASE.model_copy(update={"chi": 0.0, "nu": 0.0})
    comp = dsge.compare_regimes(cal, G_F, H)
    assert comp.ratio != pytest.approx(1.0, abs=1e-6)


def test_scarring_raises_persistence_and_loss():
    runs = dsge.scarring_sensitivity(BASE, (0.01, 0.03, 0.06), G_F, dsge.UNION, H)
    persistence = [r.persistence for r in runs]
    losses = [abs(r.cumulative_loss) for r in runs]
    assert persistence == sorted(persistence)
    assert persistence[0] < persistence[-1]
    assert losses[0] < losses[1] < losses[2]


def test_cumulative_loss_on_hand_built_path(union_irf):
    path = np.zeros(H)
    path[:2] = (-1.0, -0.5)
    irf = dsge.IrfResult(H, {"x_F": path, "x_H": np.zeros(H)}, dsge.UNION, (G_F,), 0.0)
    assert dsge.cumulative_loss(irf, "F", 20) == -1.5
    assert dsge.cumulative_loss(irf, "H", 20) == 0.0
    with pytest.raises(WindowExceedsHorizon):
        dsge.cumulative_loss(irf, "F", H + 1)


def test_persistence_quarters():
    assert dsge.persistence_quarters(np.array([-0.2, -1.0, -0.5, -0.15, -0.05, 0.0])) == 4
    assert dsge.persistence_quarters(np.zeros(5)) == 0


class TestValidation:
    @pytest.mark.parametrize("update", [{"beta": 1.0}, {"phi_pi": 0.9}, {"rho_a": 1.0}, {"chi": -0.1}])
    def test_invalid_calibration(self, update):
        with pytest.raises(InvalidCalibration):
            dsge.build_system(BASE.model_copy(update=update), dsge.UNION)

    def test_unknown_calibration_key(self):
        with pytest.raises(InvalidCalibration):
            dsge.DsgeCalibration.from_mapping({"gamma": "0.5"})

    def test_calibration_file(self, tmp_path):
        path = tmp_path / "cal.env"
        path.write_text("CHI=0.06\nNU=0.1\n")
        cal = dsge.DsgeCalibration.from_config_file(path)
        assert (cal.chi, cal.nu) == (0.06, 0.1)

    def test_short_horizon(self):
        with pytest.raises(HorizonTooShort):
            dsge.solve_irf(dsge.build_system(BASE, dsge.UNION), G_F, 50)

    def test_unknown_shock(self):
        with pytest.raises(InvalidSpec):
            dsge.solve_irf(dsge.build_system(BASE, dsge.UNION), dsge.ShockSpec(variable="oil"), H)

    def test_unknown_regime(self):
        with pytest.raises(InvalidSpec):
            dsge.build_system(BASE, "peg")


def test_float_exchange_rate_absorbs_price_level_gap(float_irf):
    paths = float_irf.paths
    gap = paths["p_H"][-1] - paths["p_F"][-1]
    assert abs(gap) > 1e-5
    assert abs(paths["q"][-1]) <= 1e-3 * abs(gap)
    assert paths["e"][-1] == pytest.approx(gap, rel=1e-3)
    # rer identity holds along the whole path
    assert_allclose(paths["q"], paths["e"] + paths["p_F"] - paths["p_H"], atol=1e-10)
