"""Learner specifications and a uniform fit / predict interface."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..errors import InvalidLearnerSpec
from .ensemble import EnsembleWeights, fit_ensemble_weights
from .features import DEFAULT_MAX_COLUMNS, expand_features
from .forest import fit_forest
from .lasso import fit_lasso
from .logistic import fit_linear, fit_logistic

DEFAULT_EPS = 0.01

PROBABILITY_FAMILIES = ("logistic", "lasso_logistic", "forest_classification")
REGRESSION_FAMILIES = ("linear", "lasso_linear", "forest_regression")
FAMILIES = PROBABILITY_FAMILIES + REGRESSION_FAMILIES + ("ensemble",)

_ALLOWED_PARAMS = {
    "logistic": {"ridge", "max_iter"},
    "linear": set(),
    "lasso_linear": {"lam", "cv_folds", "n_lambda", "ratio"},
    "lasso_logistic": {"lam", "cv_folds", "n_lambda", "ratio"},
    "forest_regression": {"n_trees", "mtry", "min_node_size", "bootstrap"},
    "forest_classification": {"n_trees", "mtry", "min_node_size", "bootstrap"},
    "ensemble": {"members", "folds"},
}


def clip_probability(p, eps: float = DEFAULT_EPS):
    """Clip probabilities to ``[eps, 1 - eps]``."""
    if not 0.0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps}")
    out = np.minimum(np.maximum(p, eps), 1.0 - eps)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Expansion:
    max_degree: int = 1
    interactions: bool = False
    max_columns: int = DEFAULT_MAX_COLUMNS


@dataclass(frozen=True)
class LearnerSpec:
    """One first-stage learner.

    ``params`` holds family-specific hyperparameters; for ``"ensemble"`` it
    holds ``members`` (a tuple of LearnerSpec) and the inner ``folds`` count.
    """

    family: str
    params: Mapping[str, Any] = field(default_factory=dict)
    expansion: Expansion | None = None

    def __post_init__(self):
        validate_spec(self)

    @property
    def is_probability(self) -> bool:
        if self.family == "ensemble":
            return all(m.is_probability for m in self.params["members"])
        return self.family in PROBABILITY_FAMILIES

    def to_dict(self) -> dict:
        out: dict = {"family": self.family}
        params = dict(self.params)
        if "members" in params:
            params["members"] = [m.to_dict() for m in params["members"]]
        if params:
            out["params"] = params
        if self.expansion is not None:
            out["expand"] = {"max_degree": self.expansion.max_degree,
                             "interactions": self.expansion.interactions,
                             "max_columns": self.expansion.max_columns}
        return out

    @classmethod
    def from_dict(cls, raw) -> "LearnerSpec":
        if isinstance(raw, str):
            return cls(raw)
        if not isinstance(raw, Mapping) or "family" not in raw:
            raise InvalidLearnerSpec(f"learner spec must be a mapping with a family, got {raw!r}")
        unknown = set(raw) - {"family", "params", "expand"}
        if unknown:
            raise InvalidLearnerSpec(f"unknown learner keys {sorted(unknown)}")
        params = dict(raw.get("params") or {})
        if "members" in params:
            params["members"] = tuple(cls.from_dict(m) for m in params["members"])
        expansion = None
        if raw.get("expand"):
            e = raw["expand"]
            if not isinstance(e, Mapping):
                raise InvalidLearnerSpec("expand must be a mapping")
            try:
                expansion = Expansion(**e)
            except TypeError as exc:
                raise InvalidLearnerSpec(f"bad expand block: {exc}") from None
        return cls(str(raw["family"]), params, expansion)


def _check_int(params, key, lo):
    if key in params:
        v = params[key]
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < lo:
            raise InvalidLearnerSpec(f"{key} must be an integer >= {lo}, got {v!r}")


def validate_spec(spec: LearnerSpec) -> None:
    if spec.family not in FAMILIES:
        raise InvalidLearnerSpec(f"unknown learner family {spec.family!r}; expected one of {', '.join(FAMILIES)}")
    extra = set(spec.params) - _ALLOWED_PARAMS[spec.family]
    if extra:
        raise InvalidLearnerSpec(f"{spec.family} does not accept {sorted(extra)}")
    p = spec.params
    _check_int(p, "n_trees", 1)
    _check_int(p, "mtry", 1)
    _check_int(p, "min_node_size", 1)
    _check_int(p, "cv_folds", 2)
    _check_int(p, "n_lambda", 1)
    _check_int(p, "max_iter", 1)
    _check_int(p, "folds", 2)
    if "lam" in p and p["lam"] is not None and p["lam"] != "max":
        if not isinstance(p["lam"], (int, float)) or p["lam"] < 0:
            raise InvalidLearnerSpec(f"lam must be >= 0, 'max' or null, got {p['lam']!r}")
    if "ratio" in p and not 0 < p["ratio"] < 1:
        raise InvalidLearnerSpec("ratio must lie in (0, 1)")
    if "ridge" in p and not p["ridge"] >= 0:
        raise InvalidLearnerSpec("ridge must be >= 0")
    if spec.expansion is not None:
        if not spec.family.startswith("lasso"):
            raise InvalidLearnerSpec("feature expansion applies to Lasso learners only")
        e = spec.expansion
        if not isinstance(e.max_degree, int) or e.max_degree < 1:
            raise InvalidLearnerSpec("max_degree must be an integer >= 1")
    if spec.family == "ensemble":
        members = p.get("members")
        if not members:
            raise InvalidLearnerSpec("ensemble needs at least one member")
        if not all(isinstance(m, LearnerSpec) for m in members):
            raise InvalidLearnerSpec("ensemble members must be LearnerSpec instances")
        kinds = {m.is_probability for m in members}
        if len(kinds) != 1:
            raise InvalidLearnerSpec("ensemble members must all be probability or all be regression learners")


@dataclass(frozen=True)
class LearnerPair:
    """Learners for the propensity and the outcome-regression nuisances."""

    propensity: LearnerSpec
    outcome: LearnerSpec

    def __post_init__(self):
        if not self.propensity.is_probability:
            raise InvalidLearnerSpec(f"{self.propensity.family} cannot fit a propensity")
        if self.outcome.is_probability:
            raise InvalidLearnerSpec(f"{self.outcome.family} cannot fit an outcome regression")

    def to_dict(self) -> dict:
        return {"propensity": self.propensity.to_dict(), "outcome": self.outcome.to_dict()}

    @classmethod
    def from_config(cls, raw) -> "LearnerPair":
        """Accept a preset name or ``{"propensity": ..., "outcome": ...}``."""
        if isinstance(raw, LearnerPair):
            return raw
        if isinstance(raw, str):
            return preset(raw)
        if isinstance(raw, Mapping) and set(raw) == {"propensity", "outcome"}:
            return cls(LearnerSpec.from_dict(raw["propensity"]), LearnerSpec.from_dict(raw["outcome"]))
        raise InvalidLearnerSpec(f"cannot read a learner pair from {raw!r}")


DEFAULT_EXPANSION = Expansion(max_degree=4, interactions=True)


def preset(name: str) -> LearnerPair:
    """Named learner pairs: parametric, lasso, forest, ensemble."""
    lasso_p = LearnerSpec("lasso_logistic", {}, DEFAULT_EXPANSION)
    lasso_m = LearnerSpec("lasso_linear", {}, DEFAULT_EXPANSION)
    forest_p = LearnerSpec("forest_classification")
    forest_m = LearnerSpec("forest_regression")
    if name == "parametric":
        return LearnerPair(LearnerSpec("logistic"), LearnerSpec("linear"))
    if name == "lasso":
        return LearnerPair(lasso_p, lasso_m)
    if name == "forest":
        return LearnerPair(forest_p, forest_m)
    if name == "ensemble":
        return LearnerPair(LearnerSpec("ensemble", {"members": (lasso_p, forest_p)}),
                           LearnerSpec("ensemble", {"members": (lasso_m, forest_m)}))
    raise InvalidLearnerSpec(f"unknown learner preset {name!r}; expected parametric, lasso, forest or ensemble")


PRESETS = ("ensemble", "lasso", "forest", "parametric")


@dataclass(frozen=True, eq=False)
class FittedLearner:
    spec: LearnerSpec
    model: Any
    seed: int
    n_train: int

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.spec.expansion is not None:
            e = self.spec.expansion
            x = expand_features(x, e.max_degree, e.interactions, e.max_columns).values
        return self.model.predict(x)


@dataclass(frozen=True, eq=False)
class FittedEnsemble:
    spec: LearnerSpec
    members: tuple
    weights: EnsembleWeights
    seed: int
    n_train: int
    member_holdout_mse: tuple = ()

    def predict(self, x) -> np.ndarray:
        preds = np.column_stack([m.predict(x) for m in self.members])
        return self.weights.combine(preds)


def _child_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def fit(spec: LearnerSpec, x, y, seed: int = 0):
    """Fit ``spec`` on ``(x, y)`` and return an object with ``predict(x)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    p = spec.params
    if spec.family == "ensemble":
        return _fit_ensemble(spec, x, y, seed)
    z = x
    if spec.expansion is not None:
        e = spec.expansion
        z = expand_features(x, e.max_degree, e.interactions, e.max_columns).values
    fam = spec.family
    if fam == "logistic":
        model = fit_logistic(z, y, ridge=p.get("ridge", 1e-8), max_iter=p.get("max_iter", 100))
    elif fam == "linear":
        model = fit_linear(z, y)
    elif fam in ("lasso_linear", "lasso_logistic"):
        kw = {k: p[k] for k in ("lam", "cv_folds", "n_lambda", "ratio") if k in p}
        model = fit_lasso(z, y, family=fam.split("_")[1], seed=seed, **kw)
    else:
        kw = {k: p[k] for k in ("n_trees", "mtry", "min_node_size", "bootstrap") if k in p}
        model = fit_forest(z, y, family=fam.split("_")[1], seed=seed, **kw)
    return FittedLearner(spec, model, seed, y.size)


def _fit_ensemble(spec, x, y, seed):
    from ..data import partition_folds

    members = spec.params["members"]
    k = spec.params.get("folds", 5)
    n = y.size
    folds = partition_folds(n, k, _child_seed(seed, 0))
    oof = np.empty((n, len(members)))
    for f, (hold, train) in enumerate(folds):
        for j, m in enumerate(members):
            fitted = fit(m, x[train], y[train], _child_seed(seed, 1, f, j))
            oof[hold, j] = fitted.predict(x[hold])
    weights = fit_ensemble_weights(oof, y)
    member_mse = tuple(float(np.mean((oof[:, j] - y) ** 2)) for j in range(len(members)))
    full = tuple(fit(m, x, y, _child_seed(seed, 2, j)) for j, m in enumerate(members))
    return FittedEnsemble(spec, full, weights, seed, n, member_mse)
