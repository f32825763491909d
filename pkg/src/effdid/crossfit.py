"""Cross-fitted nuisance estimation.

Each fold's nuisances are fit on the complement of the fold and predicted on
the fold itself, so no observation's own outcome or group enters its own
first-stage predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import (
    CrossSectionDataset,
    FoldPartition,
    PanelDataset,
    ScoreVariant,
    Setting,
    check_pair,
    partition_folds,
)
from .errors import ConfigError, EmptyTrainingCell, IncompatiblePair, MissingNuisance
from .nuisance.learners import DEFAULT_EPS, LearnerPair, clip_probability, fit

V = ScoreVariant
CELLS = ("00", "01", "10", "11")

# fixed order; a function's position seeds its learner
FUNCTIONS = (
    "p_cell_00", "p_cell_01", "p_cell_10", "p_cell_11",
    "p_d", "p_t", "p_d_t0", "p_d_t1", "p_t_d0", "p_t_d1",
    "m_00", "m_01", "m_10", "m_11", "mdy_0", "mdy_1",
)
SCALARS = ("P_D", "P_T", "P_DT", "P_D_T1", "P_CELL_00", "P_CELL_01", "P_CELL_10", "P_CELL_11")

PROPENSITIES = frozenset(FUNCTIONS[:10])
_CELL_P = frozenset(f"p_cell_{c}" for c in CELLS)
_ALL_M = frozenset(f"m_{c}" for c in CELLS)
_THREE_M = frozenset({"m_00", "m_01", "m_10"})


@dataclass(frozen=True)
class NuisanceRequirement:
    """Functions and scalars a (setting, variant) score depends on.

    ``optional`` lists regressions that cancel out of the score; they are fit
    only on request.
    """

    propensities: frozenset = frozenset()
    regressions: frozenset = frozenset()
    scalars: frozenset = frozenset()
    optional: frozenset = frozenset()

    @property
    def functions(self) -> frozenset:
        return self.propensities | self.regressions

    def to_dict(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("propensities", "regressions", "scalars", "optional")}


def _req(p=(), m=(), s=(), opt=()):
    return NuisanceRequirement(frozenset(p), frozenset(m), frozenset(s), frozenset(opt))


_TABLE = {
    (Setting.CS1, V.EFFICIENT): _req(_CELL_P, _THREE_M, {"P_DT"}, {"m_11"}),
    (Setting.CS1, V.STAR2): _req({"p_d_t0", "p_d_t1", "p_t"}, _THREE_M, {"P_DT"}, {"m_11"}),
    (Setting.CS1, V.STAR3): _req({"p_t_d0", "p_t_d1", "p_d"}, _THREE_M, {"P_DT"}, {"m_11"}),
    (Setting.CS2, V.EFFICIENT): _req({"p_d", "p_t"}, _ALL_M, {"P_DT"}),
    (Setting.CS2, V.PRIME_CS2): _req({"p_d", "p_t"}, _THREE_M, {"P_DT"}, {"m_11"}),
    (Setting.CS3, V.EFFICIENT): _req({"p_d_t0", "p_d_t1"}, _ALL_M, {"P_T", "P_D_T1"}),
    (Setting.CS4, V.EFFICIENT): _req({"p_d"}, _ALL_M, {"P_D", "P_T"}),
    (Setting.CS4, V.PRIME_CS4): _req({"p_d"}, {"m_00", "m_01"}, {"P_D", "P_T"}, {"m_10", "m_11"}),
    (Setting.CS4, V.IPW): _req({"p_d"}, (), {"P_D", "P_T"}),
    (Setting.CS5, V.EFFICIENT): _req((), _ALL_M, {"P_D", "P_T"}),
    (Setting.CS5, V.DIFF_MEANS): _req((), (), {f"P_CELL_{c}" for c in CELLS}),
    (Setting.PA1, V.EFFICIENT): _req({"p_d"}, {"mdy_0"}, {"P_D"}, {"mdy_1"}),
    (Setting.PA2, V.EFFICIENT): _req((), {"mdy_0", "mdy_1"}, {"P_D"}),
    (Setting.PA2, V.DIFF_MEANS): _req((), (), {"P_D"}),
}


def supported_pairs() -> list[tuple[Setting, ScoreVariant]]:
    return list(_TABLE)


def required_nuisances(setting, variant) -> NuisanceRequirement:
    """Exact set of nuisances used by the ``(setting, variant)`` score."""
    setting, variant = check_pair(setting, variant)
    req = _TABLE.get((setting, variant))
    if req is None:
        raise IncompatiblePair(
            f"variant {variant.value!r} is not defined for setting {setting.value!r}",
            setting=setting.value, variant=variant.value,
        )
    return req


def check_dataset_kind(dataset, setting: Setting) -> None:
    if setting.is_panel and not isinstance(dataset, PanelDataset):
        raise IncompatiblePair(f"setting {setting.value} needs a panel dataset")
    if not setting.is_panel and not isinstance(dataset, CrossSectionDataset):
        raise IncompatiblePair(f"setting {setting.value} needs a repeated cross-section dataset")


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    """Per-observation nuisance predictions and full-sample scalar shares."""

    values: Mapping[str, np.ndarray]
    scalars: Mapping[str, float]
    eps: float
    partition: FoldPartition | None = None
    learners: LearnerPair | None = None
    seed: int | None = None
    source: str = "crossfit"
    info: Mapping[str, object] = field(default_factory=dict)

    def function(self, name: str) -> np.ndarray:
        try:
            return self.values[name]
        except KeyError:
            raise MissingNuisance(f"nuisance function {name!r} was not estimated", name=name) from None

    def scalar(self, name: str) -> float:
        try:
            return self.scalars[name]
        except KeyError:
            raise MissingNuisance(f"scalar {name!r} was not estimated", name=name) from None

    def has(self, name: str) -> bool:
        return name in self.values or name in self.scalars

    def replace(self, **values) -> "NuisanceEstimates":
        """Copy with some functions or scalars replaced."""
        funcs = dict(self.values)
        scal = dict(self.scalars)
        for k, v in values.items():
            if k in SCALARS:
                scal[k] = float(v)
            else:
                funcs[k] = _frozen(np.asarray(v, dtype=float))
        return NuisanceEstimates(funcs, scal, self.eps, self.partition, self.learners,
                                 self.seed, self.source, self.info)

    def at(self, i: int) -> dict:
        out = {k: float(v[i]) for k, v in self.values.items()}
        out.update(self.scalars)
        return out

    def propensity_range(self) -> tuple[float, float] | None:
        arrs = [v for k, v in self.values.items() if k in PROPENSITIES]
        if not arrs:
            return None
        return float(min(a.min() for a in arrs)), float(max(a.max() for a in arrs))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def normalize_cells(p: np.ndarray, eps: float) -> np.ndarray:
    """Rescale rows to sum to 1 with every entry at least ``eps``.

    Entries pushed below ``eps`` are fixed at ``eps`` and the remaining mass
    is shared proportionally among the others.
    """
    if not 0.0 <= eps <= 0.25:
        raise ValueError(f"cell floor eps must lie in [0, 0.25], got {eps}")
    p = np.maximum(np.asarray(p, dtype=float), 1e-300)
    p = p / p.sum(axis=1, keepdims=True)
    fixed = np.zeros_like(p, dtype=bool)
    for _ in range(p.shape[1]):
        low = (p < eps) & ~fixed
        if not low.any():
            break
        fixed |= low
        free_mass = 1.0 - eps * fixed.sum(axis=1, keepdims=True)
        free = np.where(fixed, 0.0, p)
        p = np.where(fixed, eps, free * free_mass / free.sum(axis=1, keepdims=True))
    return p


def full_sample_scalars(dataset) -> dict[str, float]:
    if isinstance(dataset, PanelDataset):
        return {"P_D": float(np.mean(dataset.d))}
    d = dataset.d.astype(float)
    t = dataset.t.astype(float)
    out = {
        "P_D": float(d.mean()),
        "P_T": float(t.mean()),
        "P_DT": float(np.mean(d * t)),
        "P_D_T1": float(d[t == 1].mean()),
    }
    for c in CELLS:
        out[f"P_CELL_{c}"] = float(np.mean((d == int(c[0])) & (t == int(c[1]))))
    return out


def _subsample_and_target(name, dataset, rows):
    """Training rows and target for function ``name`` restricted to ``rows``."""
    panel = isinstance(dataset, PanelDataset)
    d = dataset.d[rows]
    if name.startswith("mdy_"):
        g = int(name[-1])
        keep = rows[d == g]
        return keep, dataset.dy[keep]
    if name == "p_d":
        return rows, d.astype(float)
    if panel:
        raise IncompatiblePair(f"{name} is not defined for panel data")
    t = dataset.t[rows]
    if name.startswith("m_"):
        dd, tt = int(name[2]), int(name[3])
        keep = rows[(d == dd) & (t == tt)]
        return keep, dataset.y[keep]
    if name.startswith("p_cell_"):
        dd, tt = int(name[7]), int(name[8])
        return rows, ((d == dd) & (t == tt)).astype(float)
    if name == "p_t":
        return rows, t.astype(float)
    if name.startswith("p_d_t"):
        mask = t == int(name[-1])
        return rows[mask], d[mask].astype(float)
    if name.startswith("p_t_d"):
        mask = d == int(name[-1])
        return rows[mask], t[mask].astype(float)
    raise MissingNuisance(f"unknown nuisance function {name!r}")


def crossfit(dataset, setting, variant, learners=None, k: int = 2, seed: int = 0,
             eps: float = DEFAULT_EPS, fit_redundant: bool = False,
             partition: FoldPartition | None = None) -> NuisanceEstimates:
    """Cross-fit every nuisance the ``(setting, variant)`` score requires.

    Parameters
    ----------
    learners
        LearnerPair, preset name, or config mapping; default ``"ensemble"``.
    k, seed
        Fold count and seed of the fold partition (and of learner seeds).
    eps
        Propensity clipping floor.
    fit_redundant
        Also fit regressions that cancel out of the score.
    partition
        Use this partition instead of drawing one from ``(k, seed)``.
    """
    setting, variant = check_pair(setting, variant)
    check_dataset_kind(dataset, setting)
    if not 0.0 < eps < 0.5:
        raise ConfigError(f"clipping eps must lie in (0, 0.5), got {eps}", eps=eps)
    learners = LearnerPair.from_config("ensemble" if learners is None else learners)
    req = required_nuisances(setting, variant)
    names = set(req.functions)
    if fit_redundant:
        names |= req.optional
    todo = [f for f in FUNCTIONS if f in names]
    if eps > 0.25 and any(f.startswith("p_cell") for f in todo):
        raise ConfigError(f"four-cell propensities need eps <= 0.25, got {eps}", eps=eps)
    n = dataset.n
    if partition is None:
        partition = partition_folds(n, k, seed)
    elif partition.n != n:
        raise IncompatiblePair("fold partition does not match the dataset size")
    out = {f: np.empty(n) for f in todo}
    base_seed = 0 if seed is None else int(seed)

    for fold in partition.labels:
        test = partition.indices(fold)
        train = partition.complement(fold)
        xt = dataset.x[test]
        for f in todo:
            rows, target = _subsample_and_target(f, dataset, train)
            if rows.size == 0:
                raise EmptyTrainingCell(f"fold {fold}: no training rows for {f}", fold=fold, function=f)
            is_prop = f in PROPENSITIES
            if is_prop and np.all(target == target[0]):
                raise EmptyTrainingCell(f"fold {fold}: training labels for {f} have one class",
                                        fold=fold, function=f)
            spec = learners.propensity if is_prop else learners.outcome
            fseed = int(np.random.SeedSequence([base_seed, fold, FUNCTIONS.index(f)]).generate_state(1)[0])
            model = fit(spec, dataset.x[rows], target, seed=fseed)
            out[f][test] = model.predict(xt)

    cells = [f"p_cell_{c}" for c in CELLS]
    if all(c in out for c in cells):
        joint = normalize_cells(np.column_stack([out[c] for c in cells]), eps)
        for j, c in enumerate(cells):
            out[c] = joint[:, j]
    for f in todo:
        if f in PROPENSITIES and f not in cells:
            out[f] = clip_probability(out[f], eps)
    scalars = full_sample_scalars(dataset)
    return NuisanceEstimates(
        {f: _frozen(v) for f, v in out.items()},
        {s: scalars[s] for s in sorted(scalars)},
        eps, partition, learners, seed, "crossfit",
        {"setting": setting.value, "variant": variant.value, "folds": partition.k},
    )
