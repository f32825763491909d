"""Monte Carlo efficiency bounds and closed-form bound differences.

Bounds are second moments of efficient scores at oracle nuisances.  Every
quantity a report needs is computed from one shared stream of simulated
batches, so differences of bounds get paired standard errors.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .crossfit import _frozen
from .data import CrossSectionDataset, PanelDataset, ScoreVariant, Setting, check_pair
from .dgp import OracleNuisances, draw_cross_section, draw_panel
from .errors import UnsupportedPair
from .scores import evaluate_scores

V = ScoreVariant
DEFAULT_N_MC = 1_000_000
BATCH = 200_000


@dataclass(frozen=True)
class BoundReport:
    setting: str
    variant: str
    bound_estimate: float
    mc_std_error: float
    n_mc: int
    seed: int

    def to_record(self) -> dict:
        return {"kind": "bound", "setting": self.setting, "variant": self.variant,
                "bound": self.bound_estimate, "mc_se": self.mc_std_error,
                "n_mc": self.n_mc, "seed": self.seed}


@dataclass(frozen=True)
class DeltaReport:
    pair: str
    delta_closed_form: float
    closed_form_se: float
    delta_from_bounds: float
    bounds_se: float
    bound_a: float
    bound_b: float
    n_mc: int
    seed: int

    @property
    def combined_se(self) -> float:
        return math.hypot(self.closed_form_se, self.bounds_se)

    @property
    def discrepancy(self) -> float:
        return self.delta_from_bounds - self.delta_closed_form

    def agrees(self, k: float = 3.0) -> bool:
        return abs(self.discrepancy) <= k * self.combined_se

    def to_record(self) -> dict:
        return {"kind": "delta", "pair": self.pair, "closed_form": self.delta_closed_form,
                "closed_form_se": self.closed_form_se, "from_bounds": self.delta_from_bounds,
                "from_bounds_se": self.bounds_se, "bound_a": self.bound_a, "bound_b": self.bound_b,
                "n_mc": self.n_mc, "seed": self.seed}


# -- panel observed as a repeated cross-section --------------------------------


class _Half:
    def __call__(self, x):
        return np.full(np.shape(x)[0], 0.5)


class _Scaled:
    def __init__(self, f, a, b):
        self.f, self.a, self.b = f, a, b

    def __call__(self, x):
        return self.a + self.b * self.f(x)


def panel_as_cross_section(oracle: OracleNuisances) -> OracleNuisances:
    """Oracle of the cross-section obtained by observing each unit's outcome
    in one period drawn as ``T ~ Bern(1/2)`` independently of everything else.

    Then ``p_{D=d,T=t}(x) = p_{D=d}(x)/2`` and ``m_Y(d,t,x) = E[Y(t)|D=d,X=x]``.
    """
    if not oracle.spec.setting.is_panel:
        raise UnsupportedPair("panel_as_cross_section needs a panel oracle")
    f = oracle.functions
    pd = f["p_d"]
    fns = {
        "p_cell_11": _Scaled(pd, 0.0, 0.5), "p_cell_01": _Scaled(pd, 0.5, -0.5),
        "p_cell_10": _Scaled(pd, 0.0, 0.5), "p_cell_00": _Scaled(pd, 0.5, -0.5),
        "p_d": pd, "p_t": _Half(), "p_d_t0": pd, "p_d_t1": pd,
        "p_t_d0": _Half(), "p_t_d1": _Half(),
        "m_00": f["m_00"], "m_01": f["m_01"], "m_10": f["m_10"], "m_11": f["m_11"],
    }
    P_D = oracle.scalars["P_D"]
    scal = {"P_D": P_D, "P_T": 0.5, "P_DT": P_D / 2, "P_D_T1": P_D, "P_D_T0": P_D,
            "P_T_D1": 0.5, "P_T_D0": 0.5, "P_CELL_11": P_D / 2, "P_CELL_10": P_D / 2,
            "P_CELL_01": (1 - P_D) / 2, "P_CELL_00": (1 - P_D) / 2}
    return dataclasses.replace(oracle, functions=fns, scalars=scal,
                               modified=oracle.modified + ("cross_section_view",))


# -- shared Monte Carlo accumulation -------------------------------------------


class _Moments:
    """Running sums for the mean vector and covariance of several columns."""

    def __init__(self, k):
        self.n = 0
        self.s = np.zeros(k)
        self.ss = np.zeros((k, k))

    def add(self, cols: np.ndarray):
        self.n += cols.shape[0]
        self.s += cols.sum(axis=0)
        self.ss += cols.T @ cols

    def mean(self):
        return self.s / self.n

    def se(self, weights):
        w = np.asarray(weights, dtype=float)
        m = self.mean()
        cov = self.ss / self.n - np.outer(m, m)
        var = float(w @ cov @ w) * self.n / max(self.n - 1, 1)
        return math.sqrt(max(var, 0.0) / self.n)


def _batches(n_mc, seed, batch):
    b = 0
    left = int(n_mc)
    while left > 0:
        m = min(batch, left)
        yield b, m, np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        left -= m
        b += 1


def _run(oracle, n_mc, seed, columns: Callable, k: int, batch: int, x_sampler=None,
         cs_view: OracleNuisances | None = None, workers: int = 1) -> _Moments:
    panel = oracle.spec.setting.is_panel

    def one(job):
        _, m, rng = job
        x = x_sampler(m, rng) if x_sampler is not None else None
        if panel:
            y0, y1, d, x = draw_panel(oracle, m, rng, x)
            pa = PanelDataset.from_arrays(y0, y1, d, x)
            cs = None
            if cs_view is not None:
                t = (rng.random(m) < 0.5).astype(np.int8)
                cs = CrossSectionDataset.from_arrays(np.where(t == 1, y1, y0), d, t, x)
            return columns(x, pa, cs)
        y, d, t, x = draw_cross_section(oracle, m, rng, x)
        return columns(x, None, CrossSectionDataset.from_arrays(y, d, t, x))

    mom = _Moments(k)
    jobs = _batches(n_mc, seed, batch)
    if workers > 1:
        # map preserves batch order, so the sums do not depend on scheduling
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for cols in pool.map(one, jobs):
                mom.add(cols)
    else:
        for job in jobs:
            mom.add(one(job))
    return mom


# settings whose restrictions a DGP labelled with the key satisfies
_SATISFIES = {
    Setting.CS1: {Setting.CS1},
    Setting.CS2: {Setting.CS1, Setting.CS2},
    Setting.CS3: {Setting.CS1, Setting.CS3},
    Setting.CS4: {Setting.CS1, Setting.CS2, Setting.CS3, Setting.CS4},
    Setting.CS5: {Setting.CS1, Setting.CS2, Setting.CS3, Setting.CS4, Setting.CS5},
    Setting.PA1: {Setting.PA1, Setting.CS1},
    Setting.PA2: {Setting.PA1, Setting.PA2, Setting.CS1, Setting.CS5},
}


def satisfies(dgp_setting, setting) -> bool:
    """Whether a DGP built for ``dgp_setting`` meets the restrictions of ``setting``.

    A panel DGP satisfies CS-1 through its cross-section view; a PA-2 DGP
    (D independent of X) also satisfies CS-5 there.
    """
    return Setting.parse(setting) in _SATISFIES[Setting.parse(dgp_setting)]


def _squared_score(oracle, dataset, setting, variant):
    nu = oracle.evaluate(dataset)
    sc = evaluate_scores(dataset, nu, setting, variant)
    return sc.psi(oracle.theta) ** 2


def efficiency_bound_mc(setting, oracle: OracleNuisances, n_mc: int = DEFAULT_N_MC, seed: int = 0,
                        variant=V.EFFICIENT, x_sampler=None, batch: int = BATCH,
                        workers: int = 1) -> BoundReport:
    """``E[psi^2]`` of the ``(setting, variant)`` score under the oracle's law.

    ``x_sampler(n, rng)`` replaces the Gaussian covariate law if given; the
    oracle's population shares are not recomputed for it.
    """
    setting, variant = check_pair(setting, variant)
    view = None
    if oracle.spec.setting.is_panel and not setting.is_panel:
        view = panel_as_cross_section(oracle)
    elif not oracle.spec.setting.is_panel and setting.is_panel:
        raise UnsupportedPair("a cross-section oracle has no panel bound")

    def cols(x, pa, cs):
        if setting.is_panel:
            return _squared_score(oracle, pa, setting, variant)[:, None]
        return _squared_score(view or oracle, cs, setting, variant)[:, None]

    mom = _run(oracle, n_mc, seed, cols, 1, batch, x_sampler, view, workers)
    return BoundReport(setting.value, variant.value, float(mom.mean()[0]), mom.se([1.0]),
                       int(n_mc), int(seed))


@dataclass(frozen=True)
class IdentificationReport:
    setting: str
    estimate: float
    mc_std_error: float
    theta_true: float
    n_mc: int
    seed: int

    def agrees(self, k: float = 3.0) -> bool:
        return abs(self.estimate - self.theta_true) <= k * self.mc_std_error

    def to_record(self) -> dict:
        return {"kind": "identification", "setting": self.setting, "estimate": self.estimate,
                "mc_se": self.mc_std_error, "theta_true": self.theta_true,
                "n_mc": self.n_mc, "seed": self.seed}


def _treated_weight(o, setting, x):
    """``q(x)/q`` for the (1,1) cell (cross-section) or ``D=1`` (panel) under ``setting``."""
    s = o.scalars
    if setting is Setting.CS1:
        return o("p_cell_11", x) / s["P_DT"]
    if setting is Setting.CS2:
        return o("p_d", x) * o("p_t", x) / s["P_DT"]
    if setting is Setting.CS3:
        return o("p_d_t1", x) / s["P_D_T1"]
    if setting is Setting.CS4 or setting is Setting.PA1:
        return o("p_d", x) / s["P_D"]
    return np.ones(np.shape(x)[0])


def identification_mc(oracle: OracleNuisances, n_mc: int = DEFAULT_N_MC, seed: int = 0,
                      setting=None, batch: int = BATCH) -> IdentificationReport:
    """Monte Carlo value of ``E[m_Y(X) q(X)/q]`` over the covariate law.

    ``setting`` picks the form of ``q`` and defaults to the DGP's own; it must
    be one the DGP satisfies.
    """
    setting = oracle.spec.setting if setting is None else Setting.parse(setting)
    if setting.is_panel != oracle.spec.setting.is_panel or not satisfies(oracle.spec.setting, setting):
        raise UnsupportedPair(f"a {oracle.spec.setting.value} DGP does not identify "
                              f"through the {setting.value} formula")
    mom = _Moments(1)
    for _, m, rng in _batches(n_mc, seed, batch):
        x = oracle.sample_x(m, rng)
        mom.add((oracle.m_y(x) * _treated_weight(oracle, setting, x))[:, None])
    return IdentificationReport(setting.value, float(mom.mean()[0]), mom.se([1.0]),
                                float(oracle.theta), int(n_mc), int(seed))


# -- closed forms ----------------------------------------------------------------


def _m_minus_theta_sq(o, x):
    return (o.m_y(x) - o.theta) ** 2


def _delta_cs12(o, x):
    pd, pt = o("p_d", x), o("p_t", x)
    return (pd * pt / o.scalars["P_DT"]) ** 2 * _m_minus_theta_sq(o, x) * (
        1 / (pd * pt) - 1 / pd - 1 / pt + 1)


def _delta_cs13(o, x):
    return (o("p_d_t1", x) / o.scalars["P_D_T1"]) ** 2 * _m_minus_theta_sq(o, x) * (
        1 / o.scalars["P_T"] - 1)


def _delta_cs14(o, x):
    pd = o("p_d", x)
    return pd**2 / o.scalars["P_D"] ** 2 * _m_minus_theta_sq(o, x) / pd * (1 / o.scalars["P_T"] - 1)


def _delta_cs15(o, x):
    return _m_minus_theta_sq(o, x) * (1 / (o.scalars["P_D"] * o.scalars["P_T"]) - 1)


def _delta_pa12(o, x):
    return _m_minus_theta_sq(o, x) * (1 / o.scalars["P_D"] - 1)


def _delta_cs1_pa1(o, x):
    pd = o("p_d", x)
    var = o.sum_variance(1, x) / pd + o.sum_variance(0, x) / (1 - pd)
    return pd**2 / o.scalars["P_D"] ** 2 * (var + _m_minus_theta_sq(o, x) / pd)


def _delta_cs5_pa1(o, x):
    P_D = o.scalars["P_D"]
    var = o.sum_variance(1, x) / P_D + o.sum_variance(0, x) / (1 - P_D)
    return var + _m_minus_theta_sq(o, x) * (1 - 1 / P_D)


def _loss_prime_cs4(o, x):
    pd = o("p_d", x)
    P_D, P_T = o.scalars["P_D"], o.scalars["P_T"]
    inner = math.sqrt((1 - P_T) / P_T) * o("m_11", x) + math.sqrt(P_T / (1 - P_T)) * o("m_10", x)
    return pd**2 / P_D**2 * inner**2 / pd


@dataclass(frozen=True)
class _Pair:
    a: tuple
    b: tuple
    closed: Callable
    panel: bool = False


PAIRS = {
    "cs1-cs2": _Pair((Setting.CS1, V.EFFICIENT), (Setting.CS2, V.EFFICIENT), _delta_cs12),
    "cs1-cs3": _Pair((Setting.CS1, V.EFFICIENT), (Setting.CS3, V.EFFICIENT), _delta_cs13),
    "cs1-cs4": _Pair((Setting.CS1, V.EFFICIENT), (Setting.CS4, V.EFFICIENT), _delta_cs14),
    "cs1-cs5": _Pair((Setting.CS1, V.EFFICIENT), (Setting.CS5, V.EFFICIENT), _delta_cs15),
    "pa1-pa2": _Pair((Setting.PA1, V.EFFICIENT), (Setting.PA2, V.EFFICIENT), _delta_pa12, True),
    "cs1-pa1": _Pair((Setting.CS1, V.EFFICIENT), (Setting.PA1, V.EFFICIENT), _delta_cs1_pa1, True),
    "cs5-pa1": _Pair((Setting.CS5, V.EFFICIENT), (Setting.PA1, V.EFFICIENT), _delta_cs5_pa1, True),
    "prime_cs2": _Pair((Setting.CS2, V.PRIME_CS2), (Setting.CS2, V.EFFICIENT), _delta_cs12),
    "prime_cs4": _Pair((Setting.CS4, V.PRIME_CS4), (Setting.CS4, V.EFFICIENT), _loss_prime_cs4),
}
# names used on the command line and in reports
PAIR_NAMES = tuple(PAIRS)


def closed_form_integrand(pair: str, oracle: OracleNuisances, x) -> np.ndarray:
    """Integrand of the closed-form difference at covariate rows ``x``."""
    try:
        spec = PAIRS[pair]
    except KeyError:
        raise UnsupportedPair(f"unknown pair {pair!r}; expected one of {', '.join(PAIRS)}") from None
    return spec.closed(oracle, np.asarray(x, dtype=float))


def delta_closed_form(pair: str, oracle: OracleNuisances, n_mc: int = DEFAULT_N_MC, seed: int = 0,
                      x_sampler=None, batch: int = BATCH, workers: int = 1) -> DeltaReport:
    """Closed-form bound difference next to the difference of MC bounds.

    Pairs: ``cs1-cs2``, ``cs1-cs3``, ``cs1-cs4``, ``cs1-cs5`` (value of a
    cross-section restriction), ``pa1-pa2``, ``cs1-pa1`` and ``cs5-pa1``
    (value of the panel), ``prime_cs2`` and ``prime_cs4`` (loss from the
    reduced scores).  Both estimates use the same simulated draws.
    """
    try:
        spec = PAIRS[pair]
    except KeyError:
        raise UnsupportedPair(f"unknown pair {pair!r}; expected one of {', '.join(PAIRS)}") from None
    if spec.panel != oracle.spec.setting.is_panel:
        kind = "panel" if spec.panel else "cross-section"
        raise UnsupportedPair(f"pair {pair} needs a {kind} oracle")
    dgp = oracle.spec.setting
    for s in (spec.a[0], spec.b[0]):
        if not satisfies(dgp, s):
            raise UnsupportedPair(f"pair {pair} needs a DGP satisfying {s.value}; got a {dgp.value} DGP")
    view = panel_as_cross_section(oracle) if spec.panel else None

    def score(setting, variant, pa, cs):
        if setting.is_panel:
            return _squared_score(oracle, pa, setting, variant)
        return _squared_score(view or oracle, cs, setting, variant)

    def cols(x, pa, cs):
        return np.column_stack([score(*spec.a, pa, cs), score(*spec.b, pa, cs),
                                spec.closed(oracle, x)])

    mom = _run(oracle, n_mc, seed, cols, 3, batch, x_sampler, view, workers)
    mean = mom.mean()
    return DeltaReport(pair, float(mean[2]), mom.se([0, 0, 1]), float(mean[0] - mean[1]),
                       mom.se([1, -1, 0]), float(mean[0]), float(mean[1]), int(n_mc), int(seed))


@dataclass(frozen=True)
class OrderingReport:
    """Bounds of several settings from one shared sample, with paired gaps.

    ``deltas`` compares ``bound(first) - bound(s)`` with its closed form for
    each later setting ``s``; ``gaps`` does the same for consecutive settings.
    """

    settings: tuple
    bounds: tuple
    ses: tuple
    deltas: tuple
    gaps: tuple

    def strictly_decreasing(self) -> bool:
        return all(a > b for a, b in zip(self.bounds, self.bounds[1:]))

    def all_agree(self, k: float = 3.0) -> bool:
        return all(r.agrees(k) for r in self.deltas + self.gaps)


# closed form of bound(CS-1) - bound(s), and bound(PA-1) - bound(s)
_FROM_CS1 = {Setting.CS1: None, Setting.CS2: _delta_cs12, Setting.CS3: _delta_cs13,
             Setting.CS4: _delta_cs14, Setting.CS5: _delta_cs15}
_FROM_PA1 = {Setting.PA1: None, Setting.PA2: _delta_pa12}


def bound_ordering(oracle: OracleNuisances, settings=(Setting.CS1, Setting.CS2, Setting.CS4, Setting.CS5),
                   n_mc: int = DEFAULT_N_MC, seed: int = 0, batch: int = BATCH,
                   workers: int = 1) -> OrderingReport:
    """Efficient bounds of a chain of settings on one DGP, with closed forms.

    The chain starts at CS-1 (cross-section) or PA-1 (panel) and the DGP
    must satisfy every setting in it.
    """
    settings = tuple(Setting.parse(s) for s in settings)
    table = _FROM_PA1 if settings[0] is Setting.PA1 else _FROM_CS1
    if settings[0] not in (Setting.CS1, Setting.PA1) or any(s not in table for s in settings):
        raise UnsupportedPair("bound_ordering needs a chain starting at cs1 (cross-section) or pa1 (panel)")
    dgp = oracle.spec.setting
    if dgp.is_panel != settings[0].is_panel:
        raise UnsupportedPair(f"a {dgp.value} DGP cannot order {settings[0].value} bounds")
    for s in settings:
        if not satisfies(dgp, s):
            raise UnsupportedPair(f"a {dgp.value} DGP does not satisfy {s.value}")
    k = len(settings)

    def cols(x, pa, cs):
        data = pa if settings[0].is_panel else cs
        sq = [_squared_score(oracle, data, s, V.EFFICIENT) for s in settings]
        cf = [np.zeros(x.shape[0]) if table[s] is None else table[s](oracle, x) for s in settings]
        return np.column_stack(sq + cf)

    mom = _run(oracle, n_mc, seed, cols, 2 * k, batch, workers=workers)
    mean = mom.mean()

    def w(*entries):
        v = np.zeros(2 * k)
        for j, a in entries:
            v[j] += a
        return v

    def report(i, j):
        # bound(i) - bound(j) against closed(j) - closed(i)
        bw, cw = w((i, 1.0), (j, -1.0)), w((k + j, 1.0), (k + i, -1.0))
        return DeltaReport(f"{settings[i].value}-{settings[j].value}", float(cw @ mean), mom.se(cw),
                           float(bw @ mean), mom.se(bw), float(mean[i]), float(mean[j]),
                           int(n_mc), int(seed))

    bounds = tuple(float(mean[j]) for j in range(k))
    ses = tuple(mom.se(w((j, 1.0))) for j in range(k))
    deltas = tuple(report(0, j) for j in range(1, k))
    gaps = tuple(report(j, j + 1) for j in range(k - 1))
    return OrderingReport(tuple(s.value for s in settings), bounds, ses, deltas, gaps)
