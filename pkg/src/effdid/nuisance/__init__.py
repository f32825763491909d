"""First-stage learners for propensities and outcome regressions."""

from .ensemble import EnsembleWeights, fit_ensemble_weights, project_simplex
from .features import FeatureMatrix, expand_features
from .forest import ForestModel, fit_forest
from .lasso import LassoModel, fit_lasso, lambda_max
from .learners import (
    DEFAULT_EPS,
    Expansion,
    LearnerPair,
    LearnerSpec,
    PRESETS,
    clip_probability,
    fit,
    preset,
)
from .logistic import LinearModel, LogisticModel, fit_linear, fit_logistic

__all__ = [
    "DEFAULT_EPS", "EnsembleWeights", "Expansion", "FeatureMatrix", "ForestModel",
    "LassoModel", "LearnerPair", "LearnerSpec", "LinearModel", "LogisticModel", "PRESETS",
    "clip_probability", "expand_features", "fit", "fit_ensemble_weights", "fit_forest",
    "fit_lasso", "fit_linear", "fit_logistic", "lambda_max", "preset", "project_simplex",
]
