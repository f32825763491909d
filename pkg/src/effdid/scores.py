"""Score functions and the cross-fitted ratio estimator.

Every score is linear in the target, ``psi(W; theta) = psi_num - psi_b * theta``,
so the estimator solves the empirical moment in closed form:
``theta_hat = mean(psi_num) / mean(psi_b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from .crossfit import (
    NuisanceEstimates,
    check_dataset_kind,
    crossfit,
    required_nuisances,
)
from .data import CrossSectionDataset, PanelDataset, ScoreVariant, Setting, check_pair
from .errors import DegenerateDenominator, MissingNuisance

V = ScoreVariant
DENOMINATOR_FLOOR = 1e-10
_SIGN = {"11": 1.0, "10": -1.0, "01": -1.0, "00": 1.0}


@dataclass(frozen=True, eq=False)
class ScoreEvaluation:
    """Per-observation ``(psi_num, psi_b)``; ``psi(theta) = psi_num - psi_b*theta``."""

    psi_num: np.ndarray
    psi_b: np.ndarray

    def psi(self, theta: float) -> np.ndarray:
        return self.psi_num - self.psi_b * theta

    @property
    def n(self) -> int:
        return self.psi_num.shape[0]


@dataclass(frozen=True)
class EstimateResult:
    theta_hat: float
    std_error: float
    n: int
    setting: str
    variant: str
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def conf_int(self, level: float = 0.95) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + level / 2.0)
        return self.theta_hat - z * self.std_error, self.theta_hat + z * self.std_error

    def covers(self, theta: float, level: float = 0.95) -> bool:
        lo, hi = self.conf_int(level)
        return lo <= theta <= hi

    def t_stat(self, null: float = 0.0) -> float:
        return (self.theta_hat - null) / self.std_error if self.std_error > 0 else np.inf

    def p_value(self, null: float = 0.0) -> float:
        if self.std_error <= 0:
            return 0.0 if self.theta_hat != null else 1.0
        return float(2.0 * stats.norm.sf(abs(self.t_stat(null))))

    def to_record(self) -> dict:
        out = {
            "theta": self.theta_hat,
            "se": self.std_error,
            "n": self.n,
            "setting": self.setting,
            "variant": self.variant,
        }
        for k, v in sorted(self.diagnostics.items()):
            out[f"diag_{k}"] = v
        return out


class _Inputs:
    """Column access for score formulas, with optional regressions set to 0."""

    def __init__(self, nuis, optional):
        self.nuis = nuis
        self.optional = optional

    def f(self, name):
        if name in self.optional and not self.nuis.has(name):
            return 0.0
        v = self.nuis.values.get(name) if hasattr(self.nuis, "values") else None
        if v is None:
            raise MissingNuisance(f"nuisance function {name!r} is required", name=name)
        return v

    def s(self, name):
        v = self.nuis.scalars.get(name)
        if v is None:
            raise MissingNuisance(f"scalar {name!r} is required", name=name)
        return v


def _cell_arrays(d, t):
    return {c: ((d == int(c[0])) & (t == int(c[1]))).astype(float) for c in _SIGN}


def _cs_core(y, g, q, m, prefactor, psi_b):
    psi_a = 0.0
    for c, sign in _SIGN.items():
        psi_a = psi_a + sign * g[c] / q[c] * (y - m[c])
    m_y = m["11"] - m["10"] - m["01"] + m["00"]
    return prefactor * psi_a + psi_b * m_y, psi_b


def _evaluate_cs(setting, variant, y, d, t, inp):
    g = _cell_arrays(d, t)
    D = d.astype(float)
    T = t.astype(float)
    one = np.ones_like(y)

    if variant is V.DIFF_MEANS:
        num = 0.0
        for c, sign in _SIGN.items():
            num = num + sign * g[c] * y / inp.s(f"P_CELL_{c}")
        return num * one, one

    if variant is V.IPW:
        pd = inp.f("p_d")
        P_D, P_T = inp.s("P_D"), inp.s("P_T")
        num = y * (D - pd) * (T - P_T) / (P_D * P_T * (1.0 - P_T) * (1.0 - pd))
        return num, one

    m = {c: inp.f(f"m_{c}") * one for c in _SIGN}

    if setting is Setting.CS1:
        P_DT = inp.s("P_DT")
        psi_b = D * T / P_DT
        if variant is V.EFFICIENT:
            q = {c: inp.f(f"p_cell_{c}") for c in _SIGN}
            pref = q["11"] / P_DT
        elif variant is V.STAR2:
            pdt = {0: inp.f("p_d_t0"), 1: inp.f("p_d_t1")}
            pt = inp.f("p_t")
            q = {c: (pdt[int(c[1])] if c[0] == "1" else 1.0 - pdt[int(c[1])])
                 * (pt if c[1] == "1" else 1.0 - pt) for c in _SIGN}
            pref = pdt[1] * pt / P_DT
        else:
            ptd = {0: inp.f("p_t_d0"), 1: inp.f("p_t_d1")}
            pd = inp.f("p_d")
            q = {c: (ptd[int(c[0])] if c[1] == "1" else 1.0 - ptd[int(c[0])])
                 * (pd if c[0] == "1" else 1.0 - pd) for c in _SIGN}
            pref = ptd[1] * pd / P_DT
        return _cs_core(y, g, q, m, pref, psi_b)

    if setting is Setting.CS2:
        P_DT = inp.s("P_DT")
        pd, pt = inp.f("p_d"), inp.f("p_t")
        q = {c: (pd if c[0] == "1" else 1.0 - pd) * (pt if c[1] == "1" else 1.0 - pt) for c in _SIGN}
        pref = pd * pt / P_DT
        if variant is V.PRIME_CS2:
            psi_b = D * T / P_DT
        else:
            psi_b = (D * pt + pd * T - pd * pt) / P_DT
        return _cs_core(y, g, q, m, pref, psi_b)

    if setting is Setting.CS3:
        P_T, P_D1 = inp.s("P_T"), inp.s("P_D_T1")
        pdt = {0: inp.f("p_d_t0"), 1: inp.f("p_d_t1")}
        q = {c: (pdt[int(c[1])] if c[0] == "1" else 1.0 - pdt[int(c[1])])
             * (P_T if c[1] == "1" else 1.0 - P_T) for c in _SIGN}
        pref = pdt[1] / P_D1
        psi_b = (T * (D - pdt[1]) + pdt[1] * P_T) / (P_D1 * P_T)
        return _cs_core(y, g, q, m, pref, psi_b)

    if setting is Setting.CS4:
        P_D, P_T = inp.s("P_D"), inp.s("P_T")
        pd = inp.f("p_d")
        q = {c: (pd if c[0] == "1" else 1.0 - pd) * (P_T if c[1] == "1" else 1.0 - P_T) for c in _SIGN}
        psi_b = D / P_D
        num, psi_b = _cs_core(y, g, q, m, pd / P_D, psi_b)
        if variant is V.PRIME_CS4:
            num = (num + psi_b * (T / P_T - 1.0) * m["11"]
                   - psi_b * ((1.0 - T) / (1.0 - P_T) - 1.0) * m["10"])
        return num, psi_b

    # CS5
    P_D, P_T = inp.s("P_D"), inp.s("P_T")
    q = {c: (P_D if c[0] == "1" else 1.0 - P_D) * (P_T if c[1] == "1" else 1.0 - P_T) for c in _SIGN}
    return _cs_core(y, g, q, m, one, one)


def _evaluate_pa(setting, variant, dy, d, inp):
    D = d.astype(float)
    one = np.ones_like(dy)
    P_D = inp.s("P_D")
    if variant is V.DIFF_MEANS:
        return D * dy / P_D - (1.0 - D) * dy / (1.0 - P_D), one
    m0 = inp.f("mdy_0") * one
    m1 = inp.f("mdy_1") * one
    if setting is Setting.PA1:
        q1 = inp.f("p_d")
        psi_b = D / P_D
    else:
        q1 = P_D * one
        psi_b = one
    psi_a = D / q1 * (dy - m1) - (1.0 - D) / (1.0 - q1) * (dy - m0)
    return q1 / P_D * psi_a + psi_b * (m1 - m0), psi_b


def evaluate_scores(dataset, nuisances: NuisanceEstimates, setting, variant) -> ScoreEvaluation:
    """Per-observation score terms for a whole dataset."""
    setting, variant = check_pair(setting, variant)
    check_dataset_kind(dataset, setting)
    req = required_nuisances(setting, variant)
    inp = _Inputs(nuisances, req.optional)
    if setting.is_panel:
        num, b = _evaluate_pa(setting, variant, dataset.dy, dataset.d, inp)
    else:
        num, b = _evaluate_cs(setting, variant, dataset.y, dataset.d, dataset.t, inp)
    num = np.asarray(num, dtype=float)
    b = np.broadcast_to(np.asarray(b, dtype=float), num.shape).copy()
    return ScoreEvaluation(num, b)


class _RowNuisance:
    def __init__(self, values):
        self.values = {k: np.array([v], dtype=float) for k, v in values.items()
                       if not k.startswith("P_")}
        self.scalars = {k: float(v) for k, v in values.items() if k.startswith("P_")}

    def has(self, name):
        return name in self.values or name in self.scalars


def score_terms(setting, variant, row, values: Mapping[str, float]) -> tuple[float, float]:
    """``(psi_num, psi_b)`` for one observation.

    ``row`` is a CrossSectionRow / PanelRow (or a tuple in the same order) and
    ``values`` maps nuisance names (``"p_d"``, ``"m_11"``, ``"P_DT"`` ...) to
    numbers at that row.
    """
    setting, variant = check_pair(setting, variant)
    req = required_nuisances(setting, variant)
    inp = _Inputs(_RowNuisance(values), req.optional)
    if setting.is_panel:
        y0, y1, d = float(row[0]), float(row[1]), int(row[2])
        num, b = _evaluate_pa(setting, variant, np.array([y1 - y0]), np.array([d]), inp)
    else:
        y, d, t = float(row[0]), int(row[1]), int(row[2])
        num, b = _evaluate_cs(setting, variant, np.array([y]), np.array([d]), np.array([t]), inp)
    return float(np.asarray(num).ravel()[0]), float(np.broadcast_to(b, (1,))[0])


def solve(scores: ScoreEvaluation) -> tuple[float, float]:
    """Ratio estimator and influence-function standard error."""
    mean_b = float(np.mean(scores.psi_b))
    if not abs(mean_b) >= DENOMINATOR_FLOOR:
        raise DegenerateDenominator(f"mean of psi_b is {mean_b:.3g}", mean_psi_b=mean_b)
    theta = float(np.mean(scores.psi_num)) / mean_b
    resid = scores.psi(theta)
    se = float(np.sqrt(np.mean(resid**2) / scores.n))
    return theta, se


def estimate(dataset, nuisances: NuisanceEstimates, setting, variant) -> EstimateResult:
    """Estimate the ATET from cross-fitted (or oracle) nuisances."""
    setting, variant = check_pair(setting, variant)
    sc = evaluate_scores(dataset, nuisances, setting, variant)
    theta, se = solve(sc)
    diag = {"mean_psi_b": float(np.mean(sc.psi_b)), "source": nuisances.source,
            "eps": nuisances.eps}
    rng = nuisances.propensity_range()
    if rng is not None:
        diag["min_propensity"], diag["max_propensity"] = rng
    if nuisances.partition is not None:
        diag["folds"] = nuisances.partition.k
    if nuisances.seed is not None:
        diag["seed"] = nuisances.seed
    if isinstance(dataset, CrossSectionDataset):
        for c, v in dataset.cell_shares().items():
            diag[f"share_{c}"] = v
    elif isinstance(dataset, PanelDataset):
        diag["share_d1"] = float(np.mean(dataset.d))
    return EstimateResult(theta, se, dataset.n, setting.value, variant.value, diag)


def ipw_estimate(dataset, nuisances: NuisanceEstimates) -> EstimateResult:
    """IPW difference-in-differences benchmark on CS-4 nuisances."""
    return estimate(dataset, nuisances, Setting.CS4, V.IPW)


def fit_estimate(dataset, setting, variant, learners=None, k: int = 2, seed: int = 0,
                 eps: float = 0.01, fit_redundant: bool = False) -> EstimateResult:
    """Cross-fit the first stage and estimate in one call."""
    nuis = crossfit(dataset, setting, variant, learners, k=k, seed=seed, eps=eps,
                    fit_redundant=fit_redundant)
    return estimate(dataset, nuis, setting, variant)
