import numpy as np
import pytest

from effdid.dgp import DgpSpec, generate
from effdid.errors import ConfigError, ReplicationFailed, SinglePeriod
from effdid.harness import (
    EstimatorSpec,
    ExperimentSpec,
    double_robustness_spec,
    paired_variance_gap,
    pseudo_period_dataset,
    replication_seed,
    run_experiment,
    run_placebo,
    variance_sign_test,
)

CS4 = DgpSpec.for_setting("cs4", gamma=(1.0, 0.5, 0.0))


def _spec(**kw):
    base = dict(dgp=CS4, estimators=(EstimatorSpec("cs4"), EstimatorSpec("cs1")),
                replications=30, sample_sizes=(500,), seed=3)
    base.update(kw)
    return ExperimentSpec(**base)


def test_reports_are_reproducible():
    a = run_experiment(_spec())
    b = run_experiment(_spec())
    c = run_experiment(_spec(seed=4))
    np.testing.assert_array_equal(a.estimates[500], b.estimates[500])
    assert a.records() == b.records()
    assert not np.array_equal(a.estimates[500], c.estimates[500])


def test_threads_do_not_change_results():
    spec = _spec(estimators=(EstimatorSpec("cs4", learners="parametric"),), replications=6)
    a = run_experiment(spec)
    b = run_experiment(spec, workers=3)
    np.testing.assert_array_equal(a.estimates[500], b.estimates[500])
    np.testing.assert_array_equal(a.std_errors[500], b.std_errors[500])


def test_replication_seeds():
    assert replication_seed(1, 0, 5) == replication_seed(1, 0, 5)
    assert len({replication_seed(1, s, r) for s in range(3) for r in range(100)}) == 300


def test_noiseless_single_replication():
    dgp = DgpSpec.for_setting("cs5", gamma=(0.0,), sigma=0.0)
    rep = run_experiment(ExperimentSpec(dgp, (EstimatorSpec("cs5"),), 1, (200,)))
    s = rep.summaries[0]
    assert s.bias == 0.0 and s.sd == 0.0
    assert s.degenerate_coverage


def test_estimators_share_data():
    ests = (EstimatorSpec("cs4", label="first"), EstimatorSpec("cs4", label="second"))
    rep = run_experiment(_spec(estimators=ests))
    m = rep.estimates[500]
    np.testing.assert_array_equal(m[:, 0], m[:, 1])
    gap = paired_variance_gap(rep, "first", "second")
    assert gap.gap == 0.0


def test_summary_fields():
    rep = run_experiment(_spec(replications=300, sample_sizes=(2000,)))
    for s in rep.summaries:
        assert 0.0 <= s.coverage <= 1.0 and s.sd >= 0.0
        # oracle standard errors are calibrated
        assert 0.9 <= s.se_ratio <= 1.1, s
        rec = s.to_record()
        assert rec["kind"] == "summary" and rec["n"] == 2000
    assert "cs4/efficient/oracle" in rep.table()
    assert len(rep.timing_records()) == 2


def test_variance_ordering_on_cs4_law():
    rep = run_experiment(_spec(replications=500, sample_sizes=(2000,), seed=1))
    test = variance_sign_test(rep, "cs4/efficient/oracle", "cs1/efficient/oracle")
    assert test.p_value < 0.01
    assert paired_variance_gap(rep, "cs4/efficient/oracle", "cs1/efficient/oracle").gap < 0


def test_failures_carry_replication_index():
    spec = ExperimentSpec(DgpSpec.for_setting("cs1"), (EstimatorSpec("cs1", learners="parametric"),),
                          200, (8,))
    with pytest.raises(ReplicationFailed) as info:
        run_experiment(spec)
    assert isinstance(info.value.index, int) and info.value.context["replication"] == info.value.index


def test_spec_validation_and_round_trip():
    spec = double_robustness_spec(CS4, sample_sizes=(500, 1000), replications=5)
    assert ExperimentSpec.from_dict(spec.to_dict()) == spec
    assert [e.label for e in spec.estimators] == [
        "propensity_misspecified", "outcomes_misspecified", "both_misspecified"]
    with pytest.raises(ConfigError):
        _spec(replications=0)
    with pytest.raises(ConfigError):
        _spec(estimators=(EstimatorSpec("cs4"), EstimatorSpec("cs4")))
    with pytest.raises(ConfigError):
        EstimatorSpec("cs4", learners="parametric", misspecify=(("p_d", "constant"),))
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"dgp": CS4.to_dict(), "estimators": [], "bogus": 1})


def test_double_robustness_grid_small():
    rep = run_experiment(double_robustness_spec(CS4, sample_sizes=(4000,), replications=60, seed=2))
    both = rep.summary("both_misspecified")
    single = rep.summary("propensity_misspecified")
    assert abs(both.bias) > 5 * both.bias_mc_se
    assert abs(single.bias) < 4 * single.bias_mc_se


def _pre_period(n, seed, shift=0.0):
    data, _ = generate(DgpSpec.for_setting("cs1", n=n, seed=seed, theta=0.0, gamma=(0.0,)))
    period = np.where(np.asarray(data.t) == 1, 1989, 1988)
    y = np.asarray(data.y) + shift * ((np.asarray(data.d) == 1) & (period == 1989))
    return y, np.asarray(data.d), period, data.x


def test_placebo_under_the_null():
    flagged = 0
    for r in range(40):
        res = run_placebo(*_pre_period(800, r), later=[1989], learners="parametric")
        flagged += res.significant
    assert flagged <= 6


def test_placebo_detects_group_trend():
    c = 1.5
    res = run_placebo(*_pre_period(4000, 1, shift=c), later=[1989], learners="parametric")
    assert abs(res.result.theta_hat - c) < 4 * res.result.std_error
    assert res.significant
    rec = res.to_record()
    assert rec["kind"] == "placebo" and rec["earlier"] == "1988" and rec["later"] == "1989"


def test_placebo_input_errors():
    y, d, period, x = _pre_period(200, 0)
    with pytest.raises(SinglePeriod):
        run_placebo(y, d, np.full(200, 1988), x, later=[1988])
    with pytest.raises(ConfigError):
        pseudo_period_dataset(y, d, period, x, later=[1990])
    with pytest.raises(ConfigError):
        pseudo_period_dataset(y, d, period, x, later=[1988, 1989])
    ds = pseudo_period_dataset(y, d, period, x, later=[1989])
    np.testing.assert_array_equal(ds.t, (period == 1989).astype(int))
