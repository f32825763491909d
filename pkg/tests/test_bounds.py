import numpy as np
import pytest

from effdid.bounds import (
    PAIR_NAMES,
    bound_ordering,
    delta_closed_form,
    efficiency_bound_mc,
    satisfies,
)
from effdid.dgp import DgpSpec, oracle_for
from effdid.errors import UnsupportedPair
from scipy.special import expit

N_MC = 200_000


def test_cs5_homogeneous_bound_is_sixteen_sigma_sq():
    sigma = 1.3
    oracle = oracle_for(DgpSpec.for_setting("cs5", d0=0.0, t0=0.0, gamma=(0.0,), sigma=sigma))
    rep = efficiency_bound_mc("cs5", oracle, n_mc=N_MC, seed=1)
    expected = 16 * sigma**2
    assert abs(rep.bound_estimate - expected) < 3 * rep.mc_std_error
    assert rep.mc_std_error > 0 and rep.n_mc == N_MC


def test_pa2_homogeneous_bound():
    spec = DgpSpec.for_setting("pa2", d0=-0.4, gamma=(0.0,), sigma=1.0, rho=0.3)
    oracle = oracle_for(spec)
    rep = efficiency_bound_mc("pa2", oracle, n_mc=N_MC, seed=2)
    p = expit(-0.4)
    v = 2 * (1 - 0.3)
    assert abs(rep.bound_estimate - (v / p + v / (1 - p))) < 3 * rep.mc_std_error


def test_noiseless_homogeneous_bound_vanishes():
    oracle = oracle_for(DgpSpec.for_setting("cs4", gamma=(0.0,), sigma=0.0))
    rep = efficiency_bound_mc("cs4", oracle, n_mc=20_000)
    assert rep.bound_estimate < 1e-20


def test_homogeneous_panel_delta_vanishes():
    oracle = oracle_for(DgpSpec.for_setting("pa2", gamma=(0.0,)))
    rep = delta_closed_form("pa1-pa2", oracle, n_mc=20_000)
    assert abs(rep.delta_closed_form) < 1e-12


def test_cs1_cs4_gap_matches_closed_form():
    oracle = oracle_for(DgpSpec.for_setting("cs4", gamma=(1.0, 0.5, 0.0)))
    rep = delta_closed_form("cs1-cs4", oracle, n_mc=N_MC, seed=3)
    assert rep.delta_closed_form > 0
    assert rep.agrees(3.0), (rep.delta_closed_form, rep.delta_from_bounds, rep.combined_se)
    rec = rep.to_record()
    assert rec["kind"] == "delta" and rec["pair"] == "cs1-cs4"


def test_cross_section_ordering_and_gaps():
    oracle = oracle_for(DgpSpec.for_setting("cs5", gamma=(1.0, 0.5, 0.0)))
    rep = bound_ordering(oracle, n_mc=N_MC, seed=4)
    assert rep.strictly_decreasing(), rep.bounds
    assert rep.all_agree(3.0)


def test_panel_ordering():
    oracle = oracle_for(DgpSpec.for_setting("pa2", gamma=(1.0, 0.5, 0.0)))
    rep = bound_ordering(oracle, settings=("pa1", "pa2"), n_mc=N_MC, seed=5)
    assert rep.strictly_decreasing() and rep.all_agree(3.0)


@pytest.mark.parametrize("setting,rho,gamma", [
    ("pa1", 0.5, (0.5, 0.0, 0.0)),
    ("pa1", -0.9, (2.0, 1.0, 0.0)),
    ("pa2", 0.0, (1.0, 0.0, 0.0)),
])
def test_panel_structure_always_helps(setting, rho, gamma):
    oracle = oracle_for(DgpSpec.for_setting(setting, rho=rho, gamma=gamma))
    rep = delta_closed_form("cs1-pa1", oracle, n_mc=N_MC, seed=6)
    assert rep.delta_closed_form > 0 and rep.agrees(3.0)


def test_cs5_versus_panel_changes_sign_with_rho():
    signs = []
    for rho in (-0.9, 0.9):
        oracle = oracle_for(DgpSpec.for_setting("pa2", rho=rho, gamma=(2.0, 1.0, 0.0)))
        rep = delta_closed_form("cs5-pa1", oracle, n_mc=N_MC, seed=7)
        assert rep.agrees(3.0)
        assert abs(rep.delta_closed_form) > 3 * rep.closed_form_se
        signs.append(np.sign(rep.delta_closed_form))
    assert signs == [-1.0, 1.0]


@pytest.mark.parametrize("pair,setting", [("prime_cs2", "cs2"), ("prime_cs4", "cs4")])
def test_prime_score_losses(pair, setting):
    oracle = oracle_for(DgpSpec.for_setting(setting, gamma=(1.0, 0.5, 0.0)))
    rep = delta_closed_form(pair, oracle, n_mc=N_MC, seed=8)
    assert rep.delta_closed_form > 0 and rep.agrees(3.0)


def test_unsupported_pairs():
    cs1 = oracle_for(DgpSpec.for_setting("cs1"))
    with pytest.raises(UnsupportedPair):
        delta_closed_form("cs1-cs9", cs1, n_mc=1000)
    with pytest.raises(UnsupportedPair):
        delta_closed_form("cs1-cs4", cs1, n_mc=1000)
    with pytest.raises(UnsupportedPair):
        delta_closed_form("pa1-pa2", cs1, n_mc=1000)
    with pytest.raises(UnsupportedPair):
        efficiency_bound_mc("pa1", cs1, n_mc=1000)
    assert "cs5-pa1" in PAIR_NAMES


def test_satisfies_hierarchy():
    assert satisfies("cs5", "cs2") and satisfies("cs4", "cs3")
    assert not satisfies("cs2", "cs3") and not satisfies("cs1", "cs2")
    assert satisfies("pa2", "cs5") and satisfies("pa1", "cs1") and not satisfies("pa1", "cs5")


def test_batches_are_worker_independent():
    oracle = oracle_for(DgpSpec.for_setting("cs2"))
    a = efficiency_bound_mc("cs2", oracle, n_mc=50_000, seed=9, batch=10_000)
    b = efficiency_bound_mc("cs2", oracle, n_mc=50_000, seed=9, batch=10_000, workers=3)
    assert a.bound_estimate == b.bound_estimate and a.mc_std_error == b.mc_std_error


def test_custom_covariate_law():
    oracle = oracle_for(DgpSpec.for_setting("cs5", d0=0.0, t0=0.0, gamma=(0.0,)))

    def uniform(n, rng):
        return rng.uniform(-1, 1, size=(n, 3))

    rep = efficiency_bound_mc("cs5", oracle, n_mc=50_000, seed=1, x_sampler=uniform)
    assert abs(rep.bound_estimate - 16.0) < 3 * rep.mc_std_error
