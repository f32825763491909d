"""Synthetic repeated cross-sections and panels with known ATET.

Covariates are iid standard Gaussian.  Group and period propensities are
logits of linear indices, and cell outcome means are linear in ``x``.  The
treated-post mean is built from the other three cells plus a heterogeneous
effect ``theta + gamma'x - c``, where ``c`` centres the effect on the treated
so that the ATET is exactly ``theta``.  Population shares and ``c`` are
computed by Gauss-Hermite quadrature over the linear indices, not by
simulation.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import expit, ndtr

from .crossfit import FUNCTIONS, NuisanceEstimates, _frozen
from .data import CrossSectionDataset, PanelDataset, Setting
from .errors import InfeasibleSpec, UnknownTarget

PROPENSITY_BOUNDS = (0.05, 0.95)
PRESAMPLE = 100_000
PRESAMPLE_TOLERANCE = 0.001
_PRESAMPLE_SEED = 20240601


def _vec(v, p, name):
    arr = np.zeros(p)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size > p:
        raise InfeasibleSpec(f"{name} has {v.size} entries but covariate_dim={p}")
    arr[: v.size] = v
    return arr


@dataclass(frozen=True)
class DgpSpec:
    """Law of a synthetic dataset.

    Cross-sections draw ``T ~ Bern(expit(t0 + t_coef'x))`` and then
    ``D ~ Bern(expit(d0 + d_coef'x + T*(d_shift + d_t_coef'x)))``.  Panels draw
    ``D ~ Bern(expit(d0 + d_coef'x))`` and ignore the period block.
    ``m00``, ``m01``, ``m10`` are ``(intercept, coefficients)`` of the cell
    means; ``m11`` follows from the common-trend construction.  Panels use
    ``m_d0`` and ``m_d1`` as the means of ``Y(0)`` and ``Y(1)`` in group ``d``,
    with noise correlation ``rho``.
    """

    setting: Setting
    n: int = 2000
    seed: int = 0
    covariate_dim: int = 3
    t0: float = 0.0
    t_coef: tuple = (0.4, -0.3, 0.0)
    d0: float = -0.3
    d_coef: tuple = (0.5, 0.25, -0.25)
    d_shift: float = 0.3
    d_t_coef: tuple = (0.3, 0.0, 0.0)
    m00: tuple = (1.0, (1.0, 0.5, 0.0))
    m01: tuple = (1.5, (1.3, 0.5, 0.2))
    m10: tuple = (2.0, (0.8, 0.5, 0.3))
    theta: float = 1.0
    gamma: tuple = (0.5, 0.0, 0.0)
    sigma: float = 1.0
    rho: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "setting", Setting.parse(self.setting))

    def replace(self, **changes) -> "DgpSpec":
        return dataclasses.replace(self, **changes)

    @classmethod
    def for_setting(cls, setting, **overrides) -> "DgpSpec":
        """Default law with the blocks the setting rules out set to zero.

        Explicit ``overrides`` are applied afterwards and are validated, not
        silently corrected.
        """
        setting = Setting.parse(setting)
        base = {}
        zero = (0.0,)
        if setting in (Setting.CS3, Setting.CS4, Setting.CS5):
            base["t_coef"] = zero
        if setting in (Setting.CS2, Setting.CS4, Setting.CS5):
            base["d_shift"] = 0.0
            base["d_t_coef"] = zero
        if setting in (Setting.CS5, Setting.PA2):
            base["d_coef"] = zero
        base.update(overrides)
        return cls(setting, **base)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Setting):
                v = v.value
            elif isinstance(v, tuple):
                v = _listify(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DgpSpec":
        raw = dict(raw)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise InfeasibleSpec(f"unknown DGP fields {sorted(unknown)}")
        if "setting" not in raw:
            raise InfeasibleSpec("DGP spec needs a setting")
        for key in ("m00", "m01", "m10"):
            if key in raw:
                a, b = raw[key]
                raw[key] = (float(a), tuple(b))
        for key in ("t_coef", "d_coef", "d_t_coef", "gamma"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls.for_setting(raw.pop("setting"), **raw)


def _listify(v):
    if isinstance(v, tuple):
        return [_listify(u) for u in v]
    return v


@dataclass(frozen=True)
class LinearFunction:
    """``a + b'x``, optionally passed through a transform."""

    intercept: float
    coef: np.ndarray

    def __call__(self, x):
        return self.intercept + np.asarray(x, dtype=float) @ self.coef


@dataclass(frozen=True)
class _Params:
    p: int
    t0: float
    t: np.ndarray
    d0: float
    d: np.ndarray
    ds: float
    dt: np.ndarray
    m: dict
    theta: float
    gamma: np.ndarray
    sigma: float
    rho: float


def _params(spec: DgpSpec) -> _Params:
    p = int(spec.covariate_dim)
    if p < 1:
        raise InfeasibleSpec("covariate_dim must be at least 1")
    m = {}
    for key in ("m00", "m01", "m10"):
        a, b = getattr(spec, key)
        m[key[1:]] = LinearFunction(float(a), _vec(b, p, key))
    return _Params(p, float(spec.t0), _vec(spec.t_coef, p, "t_coef"), float(spec.d0),
                   _vec(spec.d_coef, p, "d_coef"), float(spec.d_shift),
                   _vec(spec.d_t_coef, p, "d_t_coef"), m, float(spec.theta),
                   _vec(spec.gamma, p, "gamma"), float(spec.sigma), float(spec.rho))


def check_restrictions(spec: DgpSpec) -> None:
    """Raise InfeasibleSpec if the law breaks the setting's independence claim."""
    pr = _params(spec)
    s = spec.setting
    bad = []
    if s in (Setting.CS3, Setting.CS4, Setting.CS5) and np.any(pr.t != 0):
        bad.append("T must not depend on X (t_coef = 0)")
    if s in (Setting.CS2, Setting.CS4, Setting.CS5) and (pr.ds != 0 or np.any(pr.dt != 0)):
        bad.append("D must not depend on T (d_shift = 0, d_t_coef = 0)")
    if s in (Setting.CS5, Setting.PA2) and np.any(pr.d != 0):
        bad.append("D must not depend on X (d_coef = 0)")
    if spec.sigma < 0:
        bad.append("sigma must be non-negative")
    if not -1.0 <= spec.rho <= 1.0:
        bad.append("rho must lie in [-1, 1]")
    if spec.n < 1:
        bad.append("n must be positive")
    if bad:
        raise InfeasibleSpec(f"{s.value}: " + "; ".join(bad), setting=s.value)


# -- quadrature ----------------------------------------------------------------


def gaussian_expectation(A: np.ndarray, fn: Callable[[np.ndarray], dict], nodes: int | None = None) -> dict:
    """``E[fn(A x)]`` for ``x ~ N(0, I)`` by tensor Gauss-Hermite quadrature.

    ``fn`` maps an ``(N, k)`` array of index values to a dict of length-N
    arrays; the result holds the weighted sums.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    k = A.shape[0]
    S = A @ A.T
    w, V = np.linalg.eigh(S)
    keep = w > 1e-12 * max(float(w.max()), 1.0)
    L = V[:, keep] * np.sqrt(w[keep])
    r = int(keep.sum())
    if r == 0:
        U = np.zeros((1, k))
        W = np.ones(1)
    else:
        if nodes is None:
            nodes = {1: 80, 2: 60, 3: 40}.get(r, 20)
        z, wt = hermegauss(nodes)
        wt = wt / np.sqrt(2.0 * np.pi)
        Z = np.array(list(itertools.product(z, repeat=r)))
        W = np.prod(np.array(list(itertools.product(wt, repeat=r))), axis=1)
        U = Z @ L.T
    vals = fn(U)
    return {key: float(W @ v) for key, v in vals.items()}


def _population(pr: _Params, panel: bool) -> dict:
    A = np.vstack([pr.t, pr.d, pr.dt, pr.gamma])

    def cs(U):
        ut, ud, udt, ug = U.T
        pt = expit(pr.t0 + ut)
        pd1 = expit(pr.d0 + ud + pr.ds + udt)
        pd0 = expit(pr.d0 + ud)
        c11 = pt * pd1
        c10 = (1 - pt) * pd0
        c01 = pt * (1 - pd1)
        c00 = (1 - pt) * (1 - pd0)
        return {"P_T": pt, "P_D": c11 + c10, "P_DT": c11, "P_CELL_11": c11, "P_CELL_10": c10,
                "P_CELL_01": c01, "P_CELL_00": c00, "g11": ug * c11}

    def pa(U):
        ud, ug = U[:, 1], U[:, 3]
        pd = expit(pr.d0 + ud)
        return {"P_D": pd, "g1": ug * pd}

    out = gaussian_expectation(A, pa if panel else cs)
    if panel:
        out["c"] = out.pop("g1") / out["P_D"]
        return out
    out["c"] = out.pop("g11") / out["P_DT"]
    out["P_D_T1"] = out["P_DT"] / out["P_T"]
    out["P_D_T0"] = out["P_CELL_10"] / (1 - out["P_T"])
    out["P_T_D1"] = out["P_DT"] / out["P_D"]
    out["P_T_D0"] = out["P_CELL_01"] / (1 - out["P_D"])
    return out


# -- oracle functions ----------------------------------------------------------


def _cs_functions(pr: _Params, c: float, link=expit) -> dict[str, Callable]:
    def pt(x):
        return link(pr.t0 + x @ pr.t)

    def pdt(tt, x):
        return link(pr.d0 + x @ pr.d + tt * (pr.ds + x @ pr.dt))

    def cell(dd, tt):
        def f(x):
            a = pt(x) if tt else 1 - pt(x)
            b = pdt(tt, x) if dd else 1 - pdt(tt, x)
            return a * b
        return f

    def p_d(x):
        q = pt(x)
        return q * pdt(1, x) + (1 - q) * pdt(0, x)

    fns = {f"p_cell_{dd}{tt}": cell(dd, tt) for dd in (0, 1) for tt in (0, 1)}
    fns["p_d"] = p_d
    fns["p_t"] = pt
    fns["p_d_t0"] = lambda x: pdt(0, x)
    fns["p_d_t1"] = lambda x: pdt(1, x)
    fns["p_t_d1"] = lambda x: cell(1, 1)(x) / p_d(x)
    fns["p_t_d0"] = lambda x: cell(0, 1)(x) / (1 - p_d(x))
    fns.update(_mean_functions(pr, c))
    return fns


def _mean_functions(pr: _Params, c: float) -> dict[str, LinearFunction]:
    m = pr.m
    m11 = LinearFunction(m["10"].intercept + m["01"].intercept - m["00"].intercept + pr.theta - c,
                         m["10"].coef + m["01"].coef - m["00"].coef + pr.gamma)
    return {"m_00": m["00"], "m_01": m["01"], "m_10": m["10"], "m_11": m11}


def _pa_functions(pr: _Params, c: float, link=expit) -> dict[str, Callable]:
    fns = {"p_d": lambda x: link(pr.d0 + x @ pr.d)}
    means = _mean_functions(pr, c)
    fns.update(means)
    fns["mdy_0"] = LinearFunction(means["m_01"].intercept - means["m_00"].intercept,
                                  means["m_01"].coef - means["m_00"].coef)
    fns["mdy_1"] = LinearFunction(means["m_11"].intercept - means["m_10"].intercept,
                                  means["m_11"].coef - means["m_10"].coef)
    return fns


def _probit_link(index):
    return ndtr(index)


@dataclass(frozen=True, eq=False)
class OracleNuisances:
    """True nuisance functions, population shares and the ATET of a DGP."""

    spec: DgpSpec
    functions: Mapping[str, Callable]
    scalars: Mapping[str, float]
    theta: float
    c: float
    modified: tuple = ()

    @property
    def setting(self) -> Setting:
        return self.spec.setting

    @property
    def sigma(self) -> float:
        return self.spec.sigma

    @property
    def rho(self) -> float:
        return self.spec.rho

    def cell_variance(self, d: int, t: int, x) -> np.ndarray:
        """``Var(Y | D=d, T=t, X)`` (or ``Var(Y(t) | D=d, X)`` for panels)."""
        return np.full(np.shape(x)[0], self.spec.sigma**2)

    def sum_variance(self, d: int, x) -> np.ndarray:
        """``Var(Y(1) + Y(0) | D=d, X)`` for panels."""
        return np.full(np.shape(x)[0], 2.0 * self.spec.sigma**2 * (1.0 + self.spec.rho))

    def diff_variance(self, d: int, x) -> np.ndarray:
        """``Var(Y(1) - Y(0) | D=d, X)`` for panels."""
        return np.full(np.shape(x)[0], 2.0 * self.spec.sigma**2 * (1.0 - self.spec.rho))

    def __call__(self, name: str, x) -> np.ndarray:
        try:
            f = self.functions[name]
        except KeyError:
            raise UnknownTarget(f"oracle has no function {name!r}", target=name) from None
        return np.asarray(f(np.asarray(x, dtype=float)), dtype=float)

    def m_y(self, x) -> np.ndarray:
        """``m_Y(x)`` (cross-section) or ``m_dY(1,x) - m_dY(0,x)`` (panel)."""
        if self.spec.setting.is_panel:
            return self("mdy_1", x) - self("mdy_0", x)
        return self("m_11", x) - self("m_10", x) - self("m_01", x) + self("m_00", x)

    def sample_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.spec.covariate_dim))

    def evaluate(self, dataset, names=None, eps: float | None = None) -> NuisanceEstimates:
        """Oracle NuisanceEstimates on ``dataset`` with population scalars."""
        x = dataset.x
        names = [f for f in FUNCTIONS if f in self.functions] if names is None else list(names)
        values = {f: _frozen(self(f, x)) for f in names}
        scal = {k: v for k, v in self.scalars.items() if k.startswith("P_")}
        return NuisanceEstimates(values, scal, 0.0 if eps is None else eps,
                                 None, None, None, "oracle",
                                 {"modified": ",".join(self.modified)})


def oracle_for(spec: DgpSpec) -> OracleNuisances:
    """Build the oracle of ``spec`` without drawing data."""
    check_restrictions(spec)
    pr = _params(spec)
    panel = spec.setting.is_panel
    pop = _population(pr, panel)
    c = pop.pop("c")
    fns = _pa_functions(pr, c) if panel else _cs_functions(pr, c)
    return OracleNuisances(spec, fns, pop, pr.theta, c)


def check_propensity_bounds(spec: DgpSpec, bounds=PROPENSITY_BOUNDS) -> float:
    """Share of a fixed presample with a primitive propensity outside ``bounds``.

    Raises InfeasibleSpec when the share exceeds 0.1%.
    """
    oracle = oracle_for(spec)
    x = np.random.default_rng(_PRESAMPLE_SEED).standard_normal((PRESAMPLE, spec.covariate_dim))
    names = ["p_d"] if spec.setting.is_panel else ["p_t", "p_d_t0", "p_d_t1"]
    lo, hi = bounds
    outside = np.zeros(PRESAMPLE, dtype=bool)
    for f in names:
        v = oracle(f, x)
        outside |= (v < lo) | (v > hi)
    share = float(outside.mean())
    if share > PRESAMPLE_TOLERANCE:
        raise InfeasibleSpec(
            f"{share:.2%} of the presample has a propensity outside [{lo}, {hi}]",
            share=share,
        )
    return share


def draw_cross_section(oracle: OracleNuisances, n: int, rng: np.random.Generator, x=None):
    """Raw ``(y, d, t, x)`` arrays from a cross-section oracle."""
    if x is None:
        x = oracle.sample_x(n, rng)
    pt = oracle("p_t", x)
    t = (rng.random(n) < pt).astype(np.int8)
    pd = np.where(t == 1, oracle("p_d_t1", x), oracle("p_d_t0", x))
    d = (rng.random(n) < pd).astype(np.int8)
    mean = np.select(
        [(d == 1) & (t == 1), (d == 1) & (t == 0), (d == 0) & (t == 1)],
        [oracle("m_11", x), oracle("m_10", x), oracle("m_01", x)],
        oracle("m_00", x),
    )
    y = mean + oracle.sigma * rng.standard_normal(n)
    return y, d, t, x


def draw_panel(oracle: OracleNuisances, n: int, rng: np.random.Generator, x=None):
    """Raw ``(y0, y1, d, x)`` arrays from a panel oracle."""
    if x is None:
        x = oracle.sample_x(n, rng)
    d = (rng.random(n) < oracle("p_d", x)).astype(np.int8)
    mu0 = np.where(d == 1, oracle("m_10", x), oracle("m_00", x))
    mu1 = np.where(d == 1, oracle("m_11", x), oracle("m_01", x))
    e0 = rng.standard_normal(n)
    e1 = rng.standard_normal(n)
    rho = oracle.rho
    s = oracle.sigma
    y0 = mu0 + s * e0
    y1 = mu1 + s * (rho * e0 + np.sqrt(max(1.0 - rho * rho, 0.0)) * e1)
    return y0, y1, d, x


def generate_cross_section(spec: DgpSpec):
    """Draw ``spec.n`` observations; returns ``(CrossSectionDataset, OracleNuisances)``."""
    if spec.setting.is_panel:
        raise InfeasibleSpec(f"{spec.setting.value} is a panel setting")
    check_propensity_bounds(spec)
    oracle = oracle_for(spec)
    rng = np.random.default_rng(spec.seed)
    y, d, t, x = draw_cross_section(oracle, spec.n, rng)
    return CrossSectionDataset.from_arrays(y, d, t, x), oracle


def generate_panel(spec: DgpSpec):
    """Draw ``spec.n`` panel units; returns ``(PanelDataset, OracleNuisances)``."""
    if not spec.setting.is_panel:
        raise InfeasibleSpec(f"{spec.setting.value} is a cross-section setting")
    check_propensity_bounds(spec)
    oracle = oracle_for(spec)
    rng = np.random.default_rng(spec.seed)
    y0, y1, d, x = draw_panel(oracle, spec.n, rng)
    return PanelDataset.from_arrays(y0, y1, d, x), oracle


def generate(spec: DgpSpec):
    if spec.setting.is_panel:
        return generate_panel(spec)
    return generate_cross_section(spec)


# -- misspecification ----------------------------------------------------------

MODES = ("constant", "wrong_link", "omit_covariate")

_MARGINAL = {
    "p_d": "P_D", "p_t": "P_T", "p_d_t1": "P_D_T1", "p_d_t0": "P_D_T0",
    "p_t_d1": "P_T_D1", "p_t_d0": "P_T_D0",
    "p_cell_00": "P_CELL_00", "p_cell_01": "P_CELL_01",
    "p_cell_10": "P_CELL_10", "p_cell_11": "P_CELL_11",
}


def misspecify(oracle: OracleNuisances, target: str, mode: str) -> OracleNuisances:
    """Replace one oracle function by a fixed wrong one.

    ``constant``: a propensity becomes its marginal share, a regression its
    mean over the covariate law.  ``wrong_link``: a propensity uses the probit
    of its logit index, a regression is passed through ``tanh``.
    ``omit_covariate``: the function is evaluated with ``x1`` set to 0.
    """
    if target not in oracle.functions:
        raise UnknownTarget(f"oracle has no function {target!r}", target=target)
    if mode not in MODES:
        raise UnknownTarget(f"unknown misspecification mode {mode!r}", mode=mode)
    original = oracle.functions[target]
    is_prop = target.startswith("p_")
    if mode == "constant":
        if is_prop:
            value = oracle.scalars[_MARGINAL[target]]
        elif isinstance(original, LinearFunction):
            value = float(original.intercept)
        else:
            x = np.random.default_rng(_PRESAMPLE_SEED).standard_normal((10 * PRESAMPLE, oracle.spec.covariate_dim))
            value = float(np.mean(original(x)))
        new = _Constant(value)
    elif mode == "wrong_link":
        if is_prop:
            pr = _params(oracle.spec)
            build = _pa_functions if oracle.spec.setting.is_panel else _cs_functions
            new = build(pr, oracle.c, link=_probit_link)[target]
        else:
            new = _Tanh(original)
    else:
        new = _DropFirst(original)
    fns = dict(oracle.functions)
    fns[target] = new
    return dataclasses.replace(oracle, functions=fns, modified=oracle.modified + (f"{target}:{mode}",))


@dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, x):
        return np.full(np.shape(x)[0], self.value)


@dataclass(frozen=True)
class _Tanh:
    inner: Callable

    def __call__(self, x):
        return np.tanh(self.inner(x))


@dataclass(frozen=True)
class _DropFirst:
    inner: Callable

    def __call__(self, x):
        z = np.array(x, dtype=float, copy=True)
        z[:, 0] = 0.0
        return self.inner(z)
