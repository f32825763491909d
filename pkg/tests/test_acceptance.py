"""Acceptance checks, one per criterion, each printing a single pass/fail line.

Run all of them with ``python tests/test_acceptance.py`` (or pick some:
``python tests/test_acceptance.py 3 8``); under pytest every criterion is one
test and the lines are repeated in the terminal summary.  The coverage
criterion fits 1000 Lasso cross-fits and takes on the order of 15 minutes.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from effdid.bounds import bound_ordering, delta_closed_form, identification_mc
from effdid.crossfit import crossfit
from effdid.data import CrossSectionDataset, PanelDataset, valid_pairs, write_cross_section_csv
from effdid.dgp import DgpSpec, draw_cross_section, draw_panel, generate, oracle_for
from effdid.harness import (
    EstimatorSpec,
    ExperimentSpec,
    double_robustness_spec,
    paired_variance_gap,
    run_experiment,
)
from effdid.nuisance.ensemble import fit_ensemble_weights
from effdid.nuisance.lasso import fit_lasso
from effdid.nuisance.learners import fit, preset
from effdid.nuisance.logistic import fit_logistic
from effdid.scores import evaluate_scores

# pinned tolerances
MC_SE_K = 3.0                  # criteria 1, 5, 6: agreement in MC standard errors
IDENT_N_MC = 1_000_000
MEAN_ZERO_K = 4.0              # |mean psi| <= 4 sd / sqrt(N)
MEAN_ZERO_N = 100_000
MEAN_ZERO_RUNS = 100
MEAN_ZERO_MIN_HITS = 95
REDUNDANCY_TOL = 1e-12
COVERAGE_BAND = (0.93, 0.97)
COVERAGE_N, COVERAGE_R = 2000, 1000
BOUNDS_N_MC = 1_000_000
LOSS_N, LOSS_R = 2000, 1000
DR_SIZES, DR_R = (2000, 8000, 32000), 200
DR_SMALL_K, DR_LARGE_K = 3.0, 5.0
LASSO_ZERO_TOL = 1e-6
ENSEMBLE_SLACK = 1e-12
LEAKAGE_N = 100

SETTINGS = ("cs1", "cs2", "cs3", "cs4", "cs5", "pa1", "pa2")
HETEROGENEOUS = (1.0, 0.5, 0.0)

RESULTS: dict[int, str] = {}


def _report(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    return ok


# -- 1 ------------------------------------------------------------------------------


def criterion_1() -> bool:
    worst = 0.0
    parts = []
    for s in SETTINGS:
        rep = identification_mc(oracle_for(DgpSpec.for_setting(s)), n_mc=IDENT_N_MC, seed=1)
        z = abs(rep.estimate - rep.theta_true) / rep.mc_std_error
        worst = max(worst, z)
        parts.append(f"{s} {z:.2f}")
    return _report(1, "identification", worst <= MC_SE_K,
                   f"max |est - theta|/se = {worst:.2f} <= {MC_SE_K} ({', '.join(parts)})")


# -- 2 ------------------------------------------------------------------------------


def criterion_2() -> bool:
    pairs = [(s.value, v.value) for s, v in valid_pairs()]
    hits = {p: 0 for p in pairs}
    for s in SETTINGS:
        oracle = oracle_for(DgpSpec.for_setting(s))
        variants = [v for (ss, v) in pairs if ss == s]
        for r in range(MEAN_ZERO_RUNS):
            rng = np.random.default_rng([2, SETTINGS.index(s), r])
            if oracle.spec.setting.is_panel:
                data = PanelDataset.from_arrays(*draw_panel(oracle, MEAN_ZERO_N, rng))
            else:
                data = CrossSectionDataset.from_arrays(*draw_cross_section(oracle, MEAN_ZERO_N, rng))
            nu = oracle.evaluate(data)
            for v in variants:
                psi = evaluate_scores(data, nu, s, v).psi(oracle.theta)
                hits[(s, v)] += abs(psi.mean()) <= MEAN_ZERO_K * psi.std() / math.sqrt(psi.size)
    worst = min(hits, key=hits.get)
    ok = hits[worst] >= MEAN_ZERO_MIN_HITS
    return _report(2, "mean-zero scores", ok,
                   f"{len(pairs)} setting/variant pairs, fewest hits {hits[worst]}/{MEAN_ZERO_RUNS} "
                   f"({'/'.join(worst)}), need >= {MEAN_ZERO_MIN_HITS}")


# -- 3 ------------------------------------------------------------------------------


def criterion_3() -> bool:
    cases = [("cs1", "efficient", ("m_11",)), ("cs1", "star2", ("m_11",)),
             ("cs1", "star3", ("m_11",)), ("cs2", "prime_cs2", ("m_11",)),
             ("pa1", "efficient", ("mdy_1",)), ("cs4", "prime_cs4", ("m_11", "m_10"))]
    worst = 0.0
    rng = np.random.default_rng(3)
    for s, v, names in cases:
        data, oracle = generate(DgpSpec.for_setting(s, n=10_000, seed=3))
        nu = oracle.evaluate(data)
        moved = nu.replace(**{k: nu.function(k) + rng.normal(0, 5, data.n) for k in names})
        a, b = evaluate_scores(data, nu, s, v), evaluate_scores(data, moved, s, v)
        worst = max(worst, float(np.max(np.abs(a.psi_num - b.psi_num))),
                    float(np.max(np.abs(a.psi_b - b.psi_b))))
    return _report(3, "redundancy cancellation", worst <= REDUNDANCY_TOL,
                   f"max per-row change {worst:.2e} <= {REDUNDANCY_TOL:.0e} over {len(cases)} cases")


# -- 4 ------------------------------------------------------------------------------


def _coverage(setting, learner):
    spec = ExperimentSpec(DgpSpec.for_setting(setting),
                          (EstimatorSpec(setting, learners=learner, folds=2),),
                          COVERAGE_R, (COVERAGE_N,), seed=4)
    return run_experiment(spec).summaries[0]


def criterion_4() -> bool:
    lo, hi = COVERAGE_BAND
    cs4 = _coverage("cs4", "parametric")
    pa1 = _coverage("pa1", "lasso")
    ok = lo <= cs4.coverage <= hi and lo <= pa1.coverage <= hi
    return _report(4, "coverage", ok,
                   f"CS-4 logit+linear {cs4.coverage:.3f}, PA-1 Lasso {pa1.coverage:.3f} "
                   f"in [{lo}, {hi}] (n={COVERAGE_N}, R={COVERAGE_R}, K=2)")


# -- 5 ------------------------------------------------------------------------------


def criterion_5() -> bool:
    notes = []
    cs5 = oracle_for(DgpSpec.for_setting("cs5", gamma=HETEROGENEOUS))
    order = bound_ordering(cs5, n_mc=BOUNDS_N_MC, seed=5)
    ok = order.strictly_decreasing() and order.all_agree(MC_SE_K)
    notes.append("bounds " + " > ".join(f"{b:.3f}" for b in order.bounds)
                 + f", gaps match closed forms {order.all_agree(MC_SE_K)}")

    pa = delta_closed_form("pa1-pa2", oracle_for(DgpSpec.for_setting("pa2", gamma=HETEROGENEOUS)),
                           n_mc=BOUNDS_N_MC, seed=5)
    ok &= pa.delta_closed_form > 0 and pa.agrees(MC_SE_K)
    notes.append(f"PA gap {pa.delta_closed_form:.3f} vs {pa.delta_from_bounds:.3f}")

    for s, rho in (("pa1", 0.5), ("pa2", -0.5)):
        d = delta_closed_form("cs1-pa1", oracle_for(DgpSpec.for_setting(s, rho=rho, gamma=HETEROGENEOUS)),
                              n_mc=BOUNDS_N_MC, seed=5)
        ok &= d.delta_closed_form > 0 and d.agrees(MC_SE_K)
        notes.append(f"CS1-PA1 on {s} {d.delta_closed_form:.3f}")

    signs = []
    for rho in (-0.9, 0.9):
        d = delta_closed_form("cs5-pa1", oracle_for(DgpSpec.for_setting("pa2", rho=rho, gamma=(2.0, 1.0, 0.0))),
                              n_mc=BOUNDS_N_MC, seed=5)
        ok &= d.agrees(MC_SE_K) and abs(d.delta_closed_form) > MC_SE_K * d.closed_form_se
        signs.append(d.delta_closed_form)
    ok &= signs[0] < 0 < signs[1]
    notes.append(f"CS5-PA1 {signs[0]:.3f} (rho=-0.9), {signs[1]:.3f} (rho=0.9)")
    return _report(5, "efficiency ordering and deltas", bool(ok), "; ".join(notes))


# -- 6 ------------------------------------------------------------------------------


def criterion_6() -> bool:
    ok = True
    notes = []
    for setting, prime in (("cs2", "prime_cs2"), ("cs4", "prime_cs4")):
        dgp = DgpSpec.for_setting(setting, gamma=HETEROGENEOUS)
        ests = (EstimatorSpec(setting, prime, label="prime"), EstimatorSpec(setting, label="efficient"))
        rep = run_experiment(ExperimentSpec(dgp, ests, LOSS_R, (LOSS_N,), seed=6))
        gap = paired_variance_gap(rep, "prime", "efficient")
        loss = delta_closed_form(prime, oracle_for(dgp), n_mc=BOUNDS_N_MC, seed=6)
        comb = math.hypot(gap.mc_se, loss.closed_form_se)
        z = (gap.gap - loss.delta_closed_form) / comb
        ok &= abs(z) <= MC_SE_K
        notes.append(f"{prime}: paired gap {gap.gap:.3f} vs formula {loss.delta_closed_form:.3f} ({z:+.2f} se)")
    return _report(6, "efficiency losses", bool(ok), "; ".join(notes))


# -- 7 ------------------------------------------------------------------------------


def criterion_7() -> bool:
    dgp = DgpSpec.for_setting("cs4", gamma=HETEROGENEOUS)
    rep = run_experiment(double_robustness_spec(dgp, DR_SIZES, DR_R, seed=7))
    n = np.array(DR_SIZES, dtype=float)
    ok = True
    notes = []
    for label in ("propensity_misspecified", "outcomes_misspecified"):
        cells = [rep.summary(label, m) for m in DR_SIZES]
        bias = np.abs([c.bias for c in cells])
        slope = float(np.polyfit(n, bias, 1)[0])
        last = cells[-1]
        z = abs(last.bias) / last.bias_mc_se
        ok &= slope < 0 and z < DR_SMALL_K
        notes.append(f"{label}: |bias| {', '.join(f'{b:.4f}' for b in bias)} slope {slope:.2e}, "
                     f"{z:.2f} se at {DR_SIZES[-1]}")
    both = rep.summary("both_misspecified", DR_SIZES[-1])
    zb = abs(both.bias) / both.bias_mc_se
    ok &= zb > DR_LARGE_K
    notes.append(f"both: |bias| {abs(both.bias):.4f} = {zb:.1f} se")
    return _report(7, "double robustness", bool(ok), "; ".join(notes))


# -- 8 ------------------------------------------------------------------------------


def criterion_8() -> bool:
    rng = np.random.default_rng(8)
    n, q = 500, 6
    z = rng.standard_normal((n, q))
    z -= z.mean(axis=0)
    x = np.linalg.qr(z)[0] * math.sqrt(n)
    y = 1.5 + x @ rng.standard_normal(q) + rng.standard_normal(n)
    m = fit_lasso(x, y, lam=0.0)
    X1 = np.column_stack([np.ones(n), x])
    beta = np.linalg.solve(X1.T @ X1, X1.T @ y)
    lasso_err = max(float(np.max(np.abs(m.coef - beta[1:]))), abs(m.intercept - beta[0]))

    labels = (rng.random(n) < 0.3).astype(float)
    logit = fit_logistic(np.ones((n, 1)), labels)
    exact = bool(np.all(logit.predict(np.ones((7, 1))) == labels.mean()))

    data, _ = generate(DgpSpec.for_setting("cs1", n=600, seed=8))
    ens = fit(preset("ensemble").outcome, data.x, data.y, seed=8)
    margin = ens.weights.holdout_mse - min(ens.member_holdout_mse)
    for k in (2, 3, 5):
        P = data.y[:, None] + rng.normal(0, 1, (data.n, k)) * rng.uniform(0.5, 2, k)
        w = fit_ensemble_weights(P, data.y)
        best = min(float(np.mean((P[:, j] - data.y) ** 2)) for j in range(k))
        margin = max(margin, w.holdout_mse - best)
    ok = lasso_err <= LASSO_ZERO_TOL and exact and margin <= ENSEMBLE_SLACK
    return _report(8, "learner oracles", ok,
                   f"lasso(0) vs normal equations {lasso_err:.1e} <= {LASSO_ZERO_TOL:.0e}; "
                   f"intercept-only logit == mean: {exact}; ensemble - best member {margin:.2e} "
                   f"<= {ENSEMBLE_SLACK:.0e}")


# -- 9 ------------------------------------------------------------------------------


def _cli(*argv, cwd):
    env = dict(os.environ, EFFDID_THREADS="1")
    out = subprocess.run([sys.executable, "-m", "effdid", *argv], cwd=cwd, env=env,
                         capture_output=True, timeout=900)
    return out.returncode, out.stdout


def criterion_9() -> bool:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data, _ = generate(DgpSpec.for_setting("cs1", n=400, seed=9, theta=0.0))
        lines = ["y,d,period,x1,x2,x3"]
        for i in range(data.n):
            xs = ",".join(repr(float(v)) for v in data.x[i])
            lines.append(f"{float(data.y[i])!r},{data.d[i]},{1989 if data.t[i] else 1988},{xs}")
        (tmp / "pre.csv").write_text("\n".join(lines) + "\n")
        cfg = {"experiment": {"dgp": {"setting": "cs4", "gamma": list(HETEROGENEOUS)},
                              "estimators": [{"setting": "cs4"}, {"setting": "cs1"},
                                             {"setting": "cs4", "learners": "parametric"}],
                              "replications": 20, "sample_sizes": [500], "seed": 9},
               "compare": [["cs4/efficient/oracle", "cs1/efficient/oracle"]]}
        (tmp / "exp.json").write_text(json.dumps(cfg))
        commands = {
            "generate": ("generate", "--dgp-setting", "cs4", "--n", "400", "--seed", "9",
                         "--output", "cs.csv", "--quiet"),
            "estimate": ("estimate", "--data", "cs.csv", "--setting", "cs4", "--variant", "efficient",
                         "--learner", "ensemble", "--folds", "2", "--seed", "7", "--quiet"),
            "simulate": ("simulate", "--config", "exp.json", "--quiet"),
            "bounds/setting": ("bounds", "--setting", "cs4", "--dgp-setting", "cs4", "--n-mc", "100000",
                               "--quiet"),
            "bounds/pair": ("bounds", "--pair", "cs5-pa1", "--dgp-setting", "pa2", "--rho", "0.3",
                            "--n-mc", "100000", "--quiet"),
            "bounds/ordering": ("bounds", "--ordering", "cs1,cs2,cs4,cs5", "--dgp-setting", "cs5",
                                "--n-mc", "100000", "--quiet"),
            "placebo": ("placebo", "--data", "pre.csv", "--later", "1989", "--learner", "parametric",
                        "--quiet"),
        }
        same = []
        for name, argv in commands.items():
            runs = []
            for _ in range(2):
                code, out = _cli(*argv, cwd=tmp)
                extra = (tmp / "cs.csv").read_bytes() if name == "generate" else b""
                runs.append((code, out + extra))
            same.append((name, runs[0][0] == 0 and runs[0] == runs[1]))
    bad = [n for n, s in same if not s]
    return _report(9, "CLI determinism", not bad,
                   f"{len(same) - len(bad)}/{len(same)} commands byte-identical across reruns"
                   + (f"; differing: {', '.join(bad)}" if bad else ""))


# -- 10 -----------------------------------------------------------------------------


def criterion_10() -> bool:
    cs, _ = generate(DgpSpec.for_setting("cs1", n=LEAKAGE_N, seed=10))
    pa, _ = generate(DgpSpec.for_setting("pa1", n=LEAKAGE_N, seed=10))
    checked = 0
    leaks = []
    for learner in ("parametric", "lasso", "forest", "ensemble"):
        for data, setting in ((cs, "cs1"), (pa, "pa1")):
            base = crossfit(data, setting, "efficient", learner, k=2, seed=0, fit_redundant=True)
            for i in (0, 41, LEAKAGE_N - 1):
                if setting == "cs1":
                    y = np.array(data.y)
                    y[i] += 25.0
                    moved_data = data.with_outcome(y)
                else:
                    y1 = np.array(data.y1)
                    y1[i] += 25.0
                    moved_data = PanelDataset.from_arrays(data.y0, y1, data.d, data.x)
                moved = crossfit(moved_data, setting, "efficient", learner, k=2, seed=0,
                                 fit_redundant=True)
                for name in base.values:
                    checked += 1
                    if moved.function(name)[i] != base.function(name)[i]:
                        leaks.append(f"{learner}/{setting}/{name}/{i}")
    return _report(10, "no leakage", not leaks,
                   f"{checked} own-row predictions exactly unchanged on {LEAKAGE_N} rows"
                   + (f"; leaks: {', '.join(leaks[:5])}" if leaks else ""))


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 11)}


@pytest.mark.parametrize("number", list(CRITERIA))
def test_criterion(number):
    assert CRITERIA[number](), RESULTS.get(number)


if __name__ == "__main__":
    chosen = [int(a) for a in sys.argv[1:]] or list(CRITERIA)
    failed = 0
    for k in chosen:
        start = time.perf_counter()
        failed += not CRITERIA[k]()
        print(f"    ({time.perf_counter() - start:.1f} s)", flush=True)
    sys.exit(1 if failed else 0)
