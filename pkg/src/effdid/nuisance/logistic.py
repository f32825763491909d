"""Maximum-likelihood logit and ordinary least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import NoConvergence, SingleClass

# predictions are kept strictly inside (0, 1)
PROB_MARGIN = 1e-15


def _design(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _mean_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(y * eta - np.logaddexp(0.0, eta)))


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coef: np.ndarray
    iterations: int
    n_train: int
    # closed-form MLE of an intercept-only design, predicted exactly
    rate: float | None = None

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.intercept + x @ self.coef

    def predict(self, x) -> np.ndarray:
        if self.rate is not None:
            return np.full(np.asarray(x).shape[0], min(max(self.rate, PROB_MARGIN), 1.0 - PROB_MARGIN))
        return np.clip(expit(self.decision_function(x)), PROB_MARGIN, 1.0 - PROB_MARGIN)


def fit_logistic(x, labels, ridge: float = 1e-8, max_iter: int = 100,
                 grad_tol: float = 1e-11, loglik_tol: float = 1e-15) -> LogisticModel:
    """Fit a logit by damped Newton iterations.

    ``ridge`` is a penalty ``ridge/2 * |slopes|^2`` on the mean
    log-likelihood scale.  It moves a regular MLE by O(ridge) and keeps the
    optimum finite under separation.  The intercept is not penalized, so an
    intercept-only fit reproduces the sample frequency.

    Raises
    ------
    SingleClass
        If ``labels`` contains one class only.
    NoConvergence
        After ``max_iter`` iterations.
    """
    y = np.asarray(labels, dtype=float).ravel()
    if y.size == 0 or np.all(y == y[0]):
        raise SingleClass("logistic regression needs both label classes")
    z = _design(x)
    n, k = z.shape
    beta = np.zeros(k)
    ybar = y.mean()
    beta[0] = np.log(ybar / (1.0 - ybar))
    if k == 1 or np.all(np.ptp(z[:, 1:], axis=0) == 0):
        # no varying column: the MLE probability is the sample frequency
        return LogisticModel(float(beta[0]), beta[1:].copy(), 0, n, rate=float(ybar))
    pen = np.full(k, ridge)
    pen[0] = 0.0
    eta = z @ beta
    ll = _mean_loglik(eta, y) - 0.5 * float(pen @ beta**2)
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        p = expit(eta)
        grad = z.T @ (y - p) / n - pen * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < grad_tol:
            return LogisticModel(float(beta[0]), beta[1:].copy(), it - 1, n)
        w = p * (1.0 - p)
        hess = (z * w[:, None]).T @ z / n + np.diag(pen)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            eta_c = z @ cand
            ll_c = _mean_loglik(eta_c, y) - 0.5 * float(pen @ cand**2)
            if ll_c >= ll - 1e-15:
                break
            t *= 0.5
        change = ll_c - ll
        beta, eta, ll = cand, eta_c, ll_c
        if abs(change) <= loglik_tol:
            return LogisticModel(float(beta[0]), beta[1:].copy(), it, n)
    raise NoConvergence(f"logit did not converge in {max_iter} iterations", last_norm=grad_norm)


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray
    n_train: int

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.intercept + x @ self.coef


def fit_linear(x, y) -> LinearModel:
    """OLS with intercept (minimum-norm solution if rank deficient)."""
    y = np.asarray(y, dtype=float).ravel()
    z = _design(x)
    beta, *_ = np.linalg.lstsq(z, y, rcond=None)
    return LinearModel(float(beta[0]), beta[1:].copy(), y.size)
