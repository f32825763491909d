"""Monte Carlo replication engine and the placebo workflow.

Every estimator in an experiment sees the same simulated sample in a given
replication, so variance comparisons between estimators are paired.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .crossfit import crossfit
from .data import CrossSectionDataset, PanelDataset, ScoreVariant, Setting, check_pair
from .dgp import (DgpSpec, OracleNuisances, check_propensity_bounds, draw_cross_section, draw_panel,
                  misspecify, oracle_for)
from .errors import ConfigError, EffDidError, ReplicationFailed, SinglePeriod
from .nuisance.learners import DEFAULT_EPS, LearnerPair
from .scores import EstimateResult, estimate

ORACLE = "oracle"
SE_ROUNDING = 1e-12


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator of an experiment.

    ``learners`` is ``"oracle"`` (true nuisances) or anything
    ``LearnerPair.from_config`` accepts.  ``misspecify`` lists
    ``(oracle function, mode)`` replacements and only applies to oracle runs.
    """

    setting: Setting
    variant: ScoreVariant = ScoreVariant.EFFICIENT
    learners: object = ORACLE
    folds: int = 2
    eps: float = DEFAULT_EPS
    misspecify: tuple = ()
    label: str = ""

    def __post_init__(self):
        s, v = check_pair(self.setting, self.variant)
        object.__setattr__(self, "setting", s)
        object.__setattr__(self, "variant", v)
        if self.learners != ORACLE:
            object.__setattr__(self, "learners", LearnerPair.from_config(self.learners))
        object.__setattr__(self, "misspecify", tuple(tuple(m) for m in self.misspecify))
        if self.folds < 2:
            raise ConfigError(f"folds must be at least 2, got {self.folds}")
        if self.misspecify and self.learners != ORACLE:
            raise ConfigError("misspecify only applies to oracle nuisances")
        if not self.label:
            tag = "oracle" if self.learners == ORACLE else "fitted"
            if self.misspecify:
                tag += "+" + "+".join(f"{t}:{m}" for t, m in self.misspecify)
            object.__setattr__(self, "label", f"{s.value}/{v.value}/{tag}")

    @property
    def uses_oracle(self) -> bool:
        return self.learners == ORACLE

    def to_dict(self) -> dict:
        return {"setting": self.setting.value, "variant": self.variant.value,
                "learners": ORACLE if self.uses_oracle else self.learners.to_dict(),
                "folds": self.folds, "eps": self.eps,
                "misspecify": [list(m) for m in self.misspecify], "label": self.label}

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EstimatorSpec":
        raw = dict(raw)
        unknown = set(raw) - {"setting", "variant", "learners", "folds", "eps", "misspecify", "label"}
        if unknown:
            raise ConfigError(f"unknown estimator keys: {sorted(unknown)}")
        if "setting" not in raw:
            raise ConfigError("estimator needs a setting")
        raw["misspecify"] = tuple(tuple(m) for m in raw.get("misspecify", ()))
        return cls(**raw)


@dataclass(frozen=True)
class ExperimentSpec:
    dgp: DgpSpec
    estimators: tuple
    replications: int = 100
    sample_sizes: tuple = ()
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError(f"replications must be at least 1, got {self.replications}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"confidence level must lie in (0, 1), got {self.level}")
        ests = tuple(e if isinstance(e, EstimatorSpec) else EstimatorSpec.from_dict(e)
                     for e in self.estimators)
        if not ests:
            raise ConfigError("an experiment needs at least one estimator")
        labels = [e.label for e in ests]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"estimator labels must be unique: {labels}")
        object.__setattr__(self, "estimators", ests)
        sizes = tuple(int(n) for n in (self.sample_sizes or (self.dgp.n,)))
        if any(n < 8 for n in sizes):
            raise ConfigError(f"sample sizes must be at least 8: {sizes}")
        object.__setattr__(self, "sample_sizes", sizes)

    def to_dict(self) -> dict:
        return {"dgp": self.dgp.to_dict(), "estimators": [e.to_dict() for e in self.estimators],
                "replications": self.replications, "sample_sizes": list(self.sample_sizes),
                "level": self.level, "seed": self.seed}

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentSpec":
        raw = dict(raw)
        unknown = set(raw) - {"dgp", "estimators", "replications", "sample_sizes", "level", "seed"}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        if "dgp" not in raw or "estimators" not in raw:
            raise ConfigError("experiment needs 'dgp' and 'estimators'")
        dgp = raw.pop("dgp")
        raw["dgp"] = dgp if isinstance(dgp, DgpSpec) else DgpSpec.from_dict(dgp)
        raw["estimators"] = tuple(raw["estimators"])
        raw["sample_sizes"] = tuple(raw.get("sample_sizes", ()))
        return cls(**raw)


@dataclass(frozen=True)
class CellSummary:
    """Aggregates of one estimator at one sample size."""

    label: str
    n: int
    replications: int
    theta_true: float
    mean_estimate: float
    bias: float
    sd: float
    mean_se: float
    coverage: float
    mean_runtime: float
    degenerate_coverage: bool

    @property
    def bias_mc_se(self) -> float:
        return self.sd / math.sqrt(self.replications)

    @property
    def se_ratio(self) -> float:
        return self.mean_se / self.sd if self.sd > 0 else float("nan")

    def to_record(self) -> dict:
        return {"kind": "summary", "estimator": self.label, "n": self.n, "R": self.replications,
                "theta_true": self.theta_true, "mean_estimate": self.mean_estimate,
                "bias": self.bias, "bias_mc_se": self.bias_mc_se, "sd": self.sd,
                "mean_se": self.mean_se, "coverage": self.coverage,
                "degenerate_coverage": self.degenerate_coverage}


@dataclass(frozen=True)
class ExperimentReport:
    """Per-replication draws and per (estimator, n) summaries.

    ``estimates[n]`` and ``std_errors[n]`` are ``R x E`` arrays in estimator
    order; runtimes are kept apart since they are not reproducible.
    """

    spec: ExperimentSpec
    theta_true: float
    estimates: Mapping[int, np.ndarray]
    std_errors: Mapping[int, np.ndarray]
    covers: Mapping[int, np.ndarray]
    runtimes: Mapping[int, np.ndarray] = field(compare=False)
    summaries: tuple = ()

    def labels(self) -> list[str]:
        return [e.label for e in self.spec.estimators]

    def column(self, label: str) -> int:
        try:
            return self.labels().index(label)
        except ValueError:
            raise ConfigError(f"no estimator labelled {label!r}") from None

    def summary(self, label: str, n: int | None = None) -> CellSummary:
        n = self.spec.sample_sizes[0] if n is None else n
        for s in self.summaries:
            if s.label == label and s.n == n:
                return s
        raise ConfigError(f"no summary for {label!r} at n={n}")

    def records(self) -> list[dict]:
        return [s.to_record() for s in self.summaries]

    def timing_records(self) -> list[dict]:
        out = []
        for n in self.spec.sample_sizes:
            for j, label in enumerate(self.labels()):
                out.append({"kind": "timing", "estimator": label, "n": n,
                            "mean_runtime": float(np.mean(self.runtimes[n][:, j]))})
        return out

    def table(self) -> str:
        head = f"{'estimator':<40} {'n':>7} {'bias':>10} {'sd':>9} {'mean se':>9} {'cover':>6}"
        rows = [head, "-" * len(head)]
        for s in self.summaries:
            flag = "*" if s.degenerate_coverage else ""
            rows.append(f"{s.label:<40} {s.n:>7d} {s.bias:>10.4f} {s.sd:>9.4f} {s.mean_se:>9.4f} "
                        f"{s.coverage:>6.3f}{flag}")
        if any(s.degenerate_coverage for s in self.summaries):
            rows.append("* coverage degenerate: one replication or standard errors at zero")
        return "\n".join(rows)


def replication_seed(master: int, size_index: int, rep: int) -> int:
    """Seed of one replication, a pure function of its coordinates."""
    return int(np.random.SeedSequence([int(master), int(size_index), int(rep)]).generate_state(1)[0])


def _draw(oracle: OracleNuisances, n: int, seed: int):
    rng = np.random.default_rng(seed)
    if oracle.spec.setting.is_panel:
        return PanelDataset.from_arrays(*draw_panel(oracle, n, rng))
    return CrossSectionDataset.from_arrays(*draw_cross_section(oracle, n, rng))


def _estimator_oracle(oracle: OracleNuisances, est: EstimatorSpec) -> OracleNuisances:
    o = oracle
    for target, mode in est.misspecify:
        o = misspecify(o, target, mode)
    return o


def _one_replication(oracle, oracles, spec: ExperimentSpec, n: int, seed: int, z: float):
    data = _draw(oracle, n, seed)
    theta = oracle.theta
    out = []
    for j, est in enumerate(spec.estimators):
        start = time.perf_counter()
        if est.uses_oracle:
            nu = oracles[j].evaluate(data)
        else:
            nu = crossfit(data, est.setting, est.variant, est.learners, k=est.folds,
                          seed=seed, eps=est.eps)
        res = estimate(data, nu, est.setting, est.variant)
        elapsed = time.perf_counter() - start
        out.append((res.theta_hat, res.std_error, abs(res.theta_hat - theta) <= z * res.std_error,
                    elapsed))
    return out


def _degenerate(estimates, ses) -> bool:
    # one replication, or a standard error that is zero up to rounding
    tiny = SE_ROUNDING * (1.0 + np.abs(estimates))
    return bool(estimates.size < 2 or np.any(ses <= tiny))


def run_experiment(spec: ExperimentSpec, workers: int = 1, progress=None) -> ExperimentReport:
    """Run every replication of ``spec``; deterministic given ``spec.seed``.

    ``workers > 1`` runs replications on a thread pool; results are gathered
    in replication order, so the report does not depend on scheduling.
    ``progress(done, total)`` is called after each sample size if given.
    """
    check_propensity_bounds(spec.dgp)
    oracle = oracle_for(spec.dgp)
    oracles = [_estimator_oracle(oracle, e) if e.uses_oracle else None for e in spec.estimators]
    z = float(stats.norm.ppf(0.5 + spec.level / 2))
    R, E = spec.replications, len(spec.estimators)
    est, ses, cov, rt = {}, {}, {}, {}
    summaries = []
    for si, n in enumerate(spec.sample_sizes):
        seeds = [replication_seed(spec.seed, si, r) for r in range(R)]

        def job(r):
            try:
                return _one_replication(oracle, oracles, spec, n, seeds[r], z)
            except EffDidError as err:
                raise ReplicationFailed(r, err) from err
            except (ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
                raise ReplicationFailed(r, err) from err

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(job, range(R)))
        else:
            rows = [job(r) for r in range(R)]
        arr = np.array([[c[0] for c in row] for row in rows], dtype=float).reshape(R, E)
        se = np.array([[c[1] for c in row] for row in rows], dtype=float).reshape(R, E)
        cv = np.array([[c[2] for c in row] for row in rows], dtype=bool).reshape(R, E)
        tm = np.array([[c[3] for c in row] for row in rows], dtype=float).reshape(R, E)
        est[n], ses[n], cov[n], rt[n] = arr, se, cv, tm
        for j, e in enumerate(spec.estimators):
            col = arr[:, j]
            summaries.append(CellSummary(
                e.label, n, R, oracle.theta, float(col.mean()), float(col.mean() - oracle.theta),
                float(col.std(ddof=1)) if R > 1 else 0.0, float(se[:, j].mean()),
                float(cv[:, j].mean()), float(tm[:, j].mean()),
                _degenerate(col, se[:, j])))
        if progress is not None:
            progress(si + 1, len(spec.sample_sizes))
    return ExperimentReport(spec, oracle.theta, est, ses, cov, rt, tuple(summaries))


# -- paired comparisons ----------------------------------------------------------


@dataclass(frozen=True)
class PairedGap:
    """``n * (MSE_a - MSE_b)`` from paired replications, with its MC SE."""

    a: str
    b: str
    n: int
    gap: float
    mc_se: float
    replications: int

    def to_record(self) -> dict:
        return {"kind": "paired_gap", "a": self.a, "b": self.b, "n": self.n, "gap": self.gap,
                "mc_se": self.mc_se, "R": self.replications}


def paired_variance_gap(report: ExperimentReport, a: str, b: str, n: int | None = None) -> PairedGap:
    """Scaled variance gap of estimator ``a`` over ``b``.

    Errors are taken around the true ATET, so the gap estimates
    ``n (Var a - Var b)`` when both are (near) unbiased; per-replication
    differences give a paired standard error.
    """
    n = report.spec.sample_sizes[0] if n is None else n
    m = report.estimates[n]
    ea = m[:, report.column(a)] - report.theta_true
    eb = m[:, report.column(b)] - report.theta_true
    diff = n * (ea**2 - eb**2)
    R = diff.size
    se = float(diff.std(ddof=1) / math.sqrt(R)) if R > 1 else float("inf")
    return PairedGap(a, b, n, float(diff.mean()), se, R)


@dataclass(frozen=True)
class SignTest:
    a: str
    b: str
    n: int
    wins: int
    replications: int
    p_value: float

    def to_record(self) -> dict:
        return {"kind": "sign_test", "a": self.a, "b": self.b, "n": self.n, "wins": self.wins,
                "R": self.replications, "p_value": self.p_value}


def variance_sign_test(report: ExperimentReport, a: str, b: str, n: int | None = None) -> SignTest:
    """One-sided sign test that ``a`` has the smaller squared error.

    ``wins`` counts replications where ``a`` lands closer to the true ATET;
    under the null of no ordering each replication is a fair coin.
    """
    n = report.spec.sample_sizes[0] if n is None else n
    m = report.estimates[n]
    ea = np.abs(m[:, report.column(a)] - report.theta_true)
    eb = np.abs(m[:, report.column(b)] - report.theta_true)
    keep = ea != eb
    wins = int(np.sum(ea[keep] < eb[keep]))
    total = int(keep.sum())
    p = float(stats.binomtest(wins, total, 0.5, alternative="greater").pvalue) if total else 1.0
    return SignTest(a, b, n, wins, total, p)


def double_robustness_spec(dgp: DgpSpec, sample_sizes=(2000, 8000, 32000), replications: int = 200,
                           seed: int = 0, propensity=("p_d",), outcomes=("m_00", "m_01", "m_10", "m_11"),
                           mode: str = "constant", variant=ScoreVariant.EFFICIENT) -> ExperimentSpec:
    """Experiment with the propensity block, the outcome block, or both misspecified."""
    setting = dgp.setting
    pm = tuple((f, mode) for f in propensity)
    om = tuple((f, mode) for f in outcomes)
    ests = (
        EstimatorSpec(setting, variant, misspecify=pm, label="propensity_misspecified"),
        EstimatorSpec(setting, variant, misspecify=om, label="outcomes_misspecified"),
        EstimatorSpec(setting, variant, misspecify=pm + om, label="both_misspecified"),
    )
    return ExperimentSpec(dgp, ests, replications, tuple(sample_sizes), seed=seed)


# -- placebo ----------------------------------------------------------------------


@dataclass(frozen=True)
class PlaceboResult:
    result: EstimateResult
    earlier: tuple
    later: tuple
    level: float

    @property
    def significant(self) -> bool:
        return self.result.p_value(0.0) < 1.0 - self.level

    def to_record(self) -> dict:
        rec = self.result.to_record()
        rec.update({"kind": "placebo", "earlier": ",".join(map(str, self.earlier)),
                    "later": ",".join(map(str, self.later)), "significant": self.significant})
        return rec


def pseudo_period_dataset(y, d, period, x, later: Sequence[int]) -> CrossSectionDataset:
    """Relabel pre-period rows: labels in ``later`` become T=1, the rest T=0."""
    period = np.asarray(period)
    labels = sorted(set(period.tolist()))
    if len(labels) < 2:
        raise SinglePeriod(f"placebo needs at least two period labels, found {labels}", labels=labels)
    later = sorted(set(int(p) for p in later))
    if not later:
        raise ConfigError("placebo needs at least one later pseudo-period label")
    missing = [p for p in later if p not in labels]
    if missing:
        raise ConfigError(f"pseudo-period labels {missing} do not occur in the data", labels=labels)
    if len(later) == len(labels):
        raise ConfigError("every period label is marked later; nothing is left for T=0")
    t = np.isin(period, later).astype(np.int8)
    return CrossSectionDataset.from_arrays(y, d, t, x)


def run_placebo(y, d, period, x, later: Sequence[int], setting=Setting.CS1,
                variant=ScoreVariant.EFFICIENT, learners=None, k: int = 2, seed: int = 0,
                eps: float = DEFAULT_EPS, level: float = 0.95) -> PlaceboResult:
    """Placebo DiD on pre-treatment data split into two pseudo-periods.

    No treatment happens between the slices, so a significant estimate
    points to a violated common trend.
    """
    setting, variant = check_pair(setting, variant)
    if setting.is_panel:
        raise ConfigError("placebo runs use a cross-section setting")
    ds = pseudo_period_dataset(y, d, period, x, later)
    nu = crossfit(ds, setting, variant, learners, k=k, seed=seed, eps=eps)
    res = estimate(ds, nu, setting, variant)
    labels = sorted(set(np.asarray(period).tolist()))
    lat = tuple(sorted(set(int(p) for p in later)))
    return PlaceboResult(res, tuple(p for p in labels if p not in lat), lat, level)
