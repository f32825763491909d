import numpy as np
import pytest

from effdid.bounds import PAIRS, delta_closed_form, identification_mc
from effdid.dgp import (
    DgpSpec,
    check_propensity_bounds,
    generate,
    generate_cross_section,
    generate_panel,
    misspecify,
    oracle_for,
)
from effdid.errors import InfeasibleSpec, UnknownTarget

SETTINGS = ["cs1", "cs2", "cs3", "cs4", "cs5", "pa1", "pa2"]


@pytest.mark.parametrize("setting", SETTINGS)
def test_identified_expression_recovers_theta(setting):
    oracle = oracle_for(DgpSpec.for_setting(setting, theta=1.7))
    rep = identification_mc(oracle, n_mc=200_000, seed=3)
    assert rep.theta_true == 1.7
    assert rep.agrees(3.0), rep


def test_null_effect_centers_at_zero():
    same = (1.0, (0.5, 0.0, 0.0))
    spec = DgpSpec.for_setting("cs4", theta=0.0, gamma=(0.0,), m00=same, m01=same, m10=same, n=20000)
    data, oracle = generate(spec)
    x = np.random.default_rng(0).standard_normal((1000, 3))
    np.testing.assert_allclose(oracle.m_y(x), 0.0, atol=1e-12)
    from effdid.scores import estimate

    res = estimate(data, oracle.evaluate(data), "cs4", "efficient")
    assert abs(res.theta_hat) < 4 * res.std_error


def test_constant_effect_makes_deltas_vanish():
    oracle = oracle_for(DgpSpec.for_setting("cs5", gamma=(0.0,)))
    for pair in ("cs1-cs2", "cs1-cs3", "cs1-cs4", "cs1-cs5"):
        rep = delta_closed_form(pair, oracle, n_mc=20_000)
        assert abs(rep.delta_closed_form) < 1e-12, pair
    assert set(PAIRS) >= {"cs1-cs2", "pa1-pa2"}


def test_cs4_draws_d_independent_of_t():
    n = 1_000_000
    data, _ = generate(DgpSpec.for_setting("cs4", n=n, seed=1))
    r = np.corrcoef(np.asarray(data.d, float), np.asarray(data.t, float))[0, 1]
    assert abs(r) < 4 / np.sqrt(n)


def test_cs5_indicators_independent_of_covariates():
    n = 200_000
    data, _ = generate(DgpSpec.for_setting("cs5", n=n, seed=2))
    for ind in (data.d, data.t):
        for j in range(data.p):
            r = np.corrcoef(np.asarray(ind, float), data.x[:, j])[0, 1]
            assert abs(r) < 4 / np.sqrt(n)


def test_cs1_law_does_depend_on_covariates():
    data, _ = generate(DgpSpec.for_setting("cs1", n=50_000, seed=2))
    r = np.corrcoef(np.asarray(data.t, float), data.x[:, 0])[0, 1]
    assert abs(r) > 0.05


def test_panel_perfect_correlation_kills_noise():
    data, oracle = generate(DgpSpec.for_setting("pa1", rho=1.0, n=500, seed=3))
    expected = np.where(np.asarray(data.d) == 1, oracle("mdy_1", data.x), oracle("mdy_0", data.x))
    np.testing.assert_allclose(data.dy, expected, atol=1e-12)


def test_panel_zero_correlation_variance():
    data, oracle = generate(DgpSpec.for_setting("pa2", rho=0.0, sigma=1.5, n=200_000, seed=4))
    expected = np.where(np.asarray(data.d) == 1, oracle("mdy_1", data.x), oracle("mdy_0", data.x))
    v = np.var(data.dy - expected)
    assert v == pytest.approx(2 * 1.5**2, rel=0.02)
    assert oracle.diff_variance(1, data.x[:2]).tolist() == [2 * 1.5**2] * 2


def test_oracle_regressions_are_calibrated():
    data, oracle = generate(DgpSpec.for_setting("cs1", n=100_000, seed=5))
    y, d, t = np.asarray(data.y), np.asarray(data.d), np.asarray(data.t)
    for a in (0, 1):
        for b in (0, 1):
            rows = (d == a) & (t == b)
            m = oracle(f"m_{a}{b}", data.x[rows])
            slope = np.polyfit(m, y[rows], 1)[0]
            assert abs(slope - 1.0) < 0.02


def test_generation_is_deterministic():
    a, _ = generate(DgpSpec.for_setting("cs2", n=300, seed=11))
    b, _ = generate(DgpSpec.for_setting("cs2", n=300, seed=11))
    c, _ = generate(DgpSpec.for_setting("cs2", n=300, seed=12))
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)


def test_spec_round_trip():
    spec = DgpSpec.for_setting("pa1", rho=-0.4, gamma=(1.0, 0.5, 0.0), seed=9)
    assert DgpSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(InfeasibleSpec):
        DgpSpec.from_dict({"setting": "cs1", "bogus": 1})


def test_restrictions_are_validated():
    with pytest.raises(InfeasibleSpec):
        oracle_for(DgpSpec.for_setting("cs4", t_coef=(0.5, 0.0, 0.0)))
    with pytest.raises(InfeasibleSpec):
        oracle_for(DgpSpec.for_setting("pa1", rho=1.5))
    with pytest.raises(InfeasibleSpec):
        generate_panel(DgpSpec.for_setting("cs1"))
    with pytest.raises(InfeasibleSpec):
        generate_cross_section(DgpSpec.for_setting("pa2"))


def test_extreme_propensities_rejected():
    with pytest.raises(InfeasibleSpec):
        check_propensity_bounds(DgpSpec.for_setting("cs4", d_coef=(4.0, 0.0, 0.0)))
    assert check_propensity_bounds(DgpSpec.for_setting("cs4")) <= 0.001


def test_misspecify_examples():
    oracle = oracle_for(DgpSpec.for_setting("cs4"))
    x = np.random.default_rng(0).standard_normal((50, 3))
    flat = misspecify(oracle, "p_d", "constant")
    np.testing.assert_allclose(flat("p_d", x), oracle.scalars["P_D"])
    np.testing.assert_array_equal(flat("m_00", x), oracle("m_00", x))
    dropped = misspecify(oracle, "m_00", "omit_covariate")
    x0 = x.copy()
    x0[:, 0] = 0.0
    np.testing.assert_allclose(dropped("m_00", x), oracle("m_00", x0))
    probit = misspecify(oracle, "p_d", "wrong_link")
    assert not np.allclose(probit("p_d", x), oracle("p_d", x))
    assert np.all((probit("p_d", x) > 0) & (probit("p_d", x) < 1))
    assert flat.modified == ("p_d:constant",)
    with pytest.raises(UnknownTarget):
        misspecify(oracle, "m_99", "constant")
    with pytest.raises(UnknownTarget):
        misspecify(oracle, "p_d", "sideways")


def test_both_blocks_misspecified_biases_estimator():
    from effdid.dgp import draw_cross_section
    from effdid.data import CrossSectionDataset
    from effdid.scores import estimate

    oracle = oracle_for(DgpSpec.for_setting("cs4"))
    wrong = oracle
    for f in ("p_d", "m_00", "m_01", "m_10", "m_11"):
        wrong = misspecify(wrong, f, "constant")
    errs = []
    for r in range(20):
        ds = CrossSectionDataset.from_arrays(*draw_cross_section(oracle, 50_000, np.random.default_rng([6, r])))
        errs.append(estimate(ds, wrong.evaluate(ds), "cs4", "efficient").theta_hat - oracle.theta)
    errs = np.array(errs)
    assert abs(errs.mean()) > 5 * errs.std(ddof=1) / np.sqrt(errs.size)
