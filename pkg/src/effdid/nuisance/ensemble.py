"""Simplex-constrained stacking weights chosen by holdout MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnsembleWeights:
    weights: np.ndarray
    holdout_mse: float

    def combine(self, predictions) -> np.ndarray:
        return np.asarray(predictions, dtype=float) @ self.weights


def _mse(pred, y, w):
    r = pred @ w - y
    return float(r @ r) / y.size


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def fit_ensemble_weights(holdout_predictions, holdout_targets, max_iter: int = 5000,
                         tol: float = 1e-14) -> EnsembleWeights:
    """Minimize holdout MSE of a convex combination of base predictions.

    Two learners are solved in closed form on [0, 1]; identical columns tie-break
    to equal weights.  More learners use projected gradient, and the result is
    compared against every simplex vertex so the ensemble is never worse than
    the best single learner.
    """
    P = np.asarray(holdout_predictions, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    y = np.asarray(holdout_targets, dtype=float).ravel()
    n, m = P.shape
    if m < 1 or n < 1:
        raise ValueError("need at least one learner and one holdout row")
    if m == 1:
        w = np.ones(1)
        return EnsembleWeights(w, _mse(P, y, w))
    if m == 2:
        u = P[:, 0] - P[:, 1]
        r = y - P[:, 1]
        uu = float(u @ u)
        a = 0.5 if uu == 0.0 else min(max(float(u @ r) / uu, 0.0), 1.0)
        w = np.array([a, 1.0 - a])
    else:
        H = P.T @ P / n
        g0 = P.T @ y / n
        step = 1.0 / max(np.linalg.eigvalsh(H)[-1], 1e-300)
        w = np.full(m, 1.0 / m)
        for _ in range(max_iter):
            nw = project_simplex(w - step * (H @ w - g0))
            if np.max(np.abs(nw - w)) < tol:
                w = nw
                break
            w = nw
    best = _mse(P, y, w)
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        v = _mse(P, y, e)
        if v < best:
            w, best = e, v
    return EnsembleWeights(w, best)
