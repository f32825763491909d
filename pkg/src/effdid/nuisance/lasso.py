"""Coordinate-descent Lasso, linear and logistic, with a cross-validated path.

Features are standardized internally (ddof=0); constant columns are kept in
place with a zero coefficient.  The intercept is never penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import expit

from ..errors import DegeneratePath, SingleClass
from .logistic import PROB_MARGIN

N_LAMBDA = 100
LAMBDA_RATIO = 1e-3
CV_FOLDS = 10
MONOTONE_SLACK = 1e-12
# path termination, as in glmnet: stop once the fit nearly saturates or stalls
DEV_RATIO_MAX = 0.999
DEV_RATIO_STALL = 1e-5
MIN_PATH = 5


@numba.njit(cache=True)
def _soft(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


@numba.njit(cache=True)
def _gram_objective(c, yy, b, gb, lam):
    fit = 0.0
    pen = 0.0
    for j in range(b.shape[0]):
        fit += -2.0 * c[j] * b[j] + b[j] * gb[j]
        pen += abs(b[j])
    return 0.5 * (yy + fit) + lam * pen


@numba.njit(cache=True)
def cd_gram(G, c, yy, lam, b, tol, max_sweeps, trace):
    """Covariance-update coordinate descent for the standardized linear Lasso.

    Minimizes ``0.5*(yy - 2 c'b + b'Gb) + lam*|b|_1`` in place on ``b``.
    ``trace[s]`` receives the objective after sweep ``s``.  A sweep converges
    when ``max_j G_jj * db_j**2 < tol * yy``.  Returns
    ``(sweeps, monotonicity violations)``.
    """
    q = b.shape[0]
    limit = tol * yy if yy > 0.0 else tol
    gb = G @ b
    prev = _gram_objective(c, yy, b, gb, lam)
    bad = 0
    sweeps = 0
    for s in range(max_sweeps):
        delta = 0.0
        for j in range(q):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            bj = b[j]
            z = c[j] - gb[j] + gjj * bj
            nb = _soft(z, lam) / gjj
            d = nb - bj
            if d != 0.0:
                for k in range(q):
                    gb[k] += G[k, j] * d
                b[j] = nb
                ad = gjj * d * d
                if ad > delta:
                    delta = ad
        obj = _gram_objective(c, yy, b, gb, lam)
        if obj > prev + MONOTONE_SLACK * (1.0 + abs(prev)):
            bad += 1
        prev = obj
        if s < trace.shape[0]:
            trace[s] = obj
        sweeps = s + 1
        if delta < limit:
            break
    return sweeps, bad


@numba.njit(cache=True)
def _logit_objective(eta, y, b, lam):
    n = y.shape[0]
    acc = 0.0
    for i in range(n):
        e = eta[i]
        if e > 0:
            acc += e + np.log1p(np.exp(-e)) - y[i] * e
        else:
            acc += np.log1p(np.exp(e)) - y[i] * e
    pen = 0.0
    for j in range(b.shape[0]):
        pen += abs(b[j])
    return acc / n + lam * pen


@numba.njit(cache=True)
def cd_logistic(Z, y, lam, b0, b, tol, max_outer, max_inner, trace):
    """Proximal Newton for the standardized logistic Lasso.

    Each outer step solves the weighted least-squares Lasso approximation by
    coordinate descent, then step-halves on the true penalized objective.
    ``b0`` is a length-1 array holding the intercept.  Returns
    ``(outer iterations, monotonicity violations, converged flag)``.
    """
    n, q = Z.shape
    eta = np.empty(n)
    for i in range(n):
        eta[i] = b0[0]
        for j in range(q):
            eta[i] += Z[i, j] * b[j]
    prev = _logit_objective(eta, y, b, lam)
    w = np.empty(n)
    r = np.empty(n)
    u = np.empty(n)
    nb = np.empty(q)
    eta_c = np.empty(n)
    inS = np.zeros(q, np.bool_)
    bad = 0
    ybar = y.sum() / n
    # squared-change thresholds relative to the Bernoulli variance of y
    inner_limit = 0.1 * tol * max(ybar * (1.0 - ybar), 1e-12)
    for it in range(max_outer):
        for i in range(n):
            p = 1.0 / (1.0 + np.exp(-eta[i]))
            wi = p * (1.0 - p)
            if wi < 1e-5:
                wi = 1e-5
            w[i] = wi
            r[i] = y[i] - p
        sw = w.sum() / n
        for j in range(q):
            nb[j] = b[j]
        nb0 = b0[0]
        # active set: nonzero coefficients plus KKT violators at the start
        grad = Z.T @ r / n
        for j in range(q):
            inS[j] = b[j] != 0.0 or abs(grad[j]) > lam
        while True:
            S = np.flatnonzero(inS)
            m = S.shape[0]
            ZS = np.empty((n, m))
            for k in range(m):
                ZS[:, k] = Z[:, S[k]]
            ZwS = ZS * w.reshape(n, 1)
            Gs = ZwS.T @ ZS / n
            zws = np.empty(m)
            for k in range(m):
                zws[k] = ZwS[:, k].sum() / n
            # gradient of the quadratic model at the current step
            d0 = nb0 - b0[0]
            for i in range(n):
                acc = d0
                for k in range(m):
                    acc += ZS[i, k] * (nb[S[k]] - b[S[k]])
                u[i] = r[i] - w[i] * acc
            A = ZS.T @ u / n
            R0 = u.sum() / n
            for _ in range(max_inner):
                delta = 0.0
                step0 = R0 / sw
                if step0 != 0.0:
                    nb0 += step0
                    for k in range(m):
                        A[k] -= zws[k] * step0
                    R0 = 0.0
                    delta = step0 * step0 * sw
                for k in range(m):
                    gkk = Gs[k, k]
                    if gkk <= 0.0:
                        continue
                    j = S[k]
                    z = A[k] + gkk * nb[j]
                    new = _soft(z, lam) / gkk
                    d = new - nb[j]
                    if d != 0.0:
                        for l in range(m):
                            A[l] -= Gs[l, k] * d
                        R0 -= zws[k] * d
                        nb[j] = new
                        ad = gkk * d * d
                        if ad > delta:
                            delta = ad
                if delta < inner_limit:
                    break
            # KKT check for excluded coordinates
            d0 = nb0 - b0[0]
            for i in range(n):
                acc = d0
                for k in range(m):
                    acc += ZS[i, k] * (nb[S[k]] - b[S[k]])
                u[i] = r[i] - w[i] * acc
            full = Z.T @ u / n
            grew = False
            for j in range(q):
                if not inS[j] and abs(full[j]) > lam * (1.0 + 1e-9) + 1e-15:
                    inS[j] = True
                    grew = True
            if not grew:
                break
        # step-halving on the penalized objective
        t = 1.0
        cand_b0 = nb0
        obj = prev
        step = 0.0
        accepted = False
        for _ in range(40):
            cand_b0 = b0[0] + t * (nb0 - b0[0])
            for i in range(n):
                e = cand_b0
                for j in range(q):
                    e += Z[i, j] * (b[j] + t * (nb[j] - b[j]))
                eta_c[i] = e
            cb = b + t * (nb - b)
            obj = _logit_objective(eta_c, y, cb, lam)
            if obj <= prev + MONOTONE_SLACK * (1.0 + abs(prev)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            bad += 1
        step = abs(cand_b0 - b0[0])
        for j in range(q):
            d = t * (nb[j] - b[j])
            if abs(d) > step:
                step = abs(d)
            b[j] = b[j] + d
        b0[0] = cand_b0
        for i in range(n):
            eta[i] = eta_c[i]
        if it < trace.shape[0]:
            trace[it] = obj
        change = prev - obj
        prev = obj
        if step * step < tol or abs(change) < 1e-3 * tol * abs(prev):
            return it + 1, bad, True
    return max_outer, bad, False


class NonMonotoneDescent(AssertionError):
    """Raised when a coordinate-descent sweep increases the penalized loss."""


@dataclass(frozen=True)
class _Standardizer:
    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def fit(cls, x):
        return cls(x.mean(axis=0), x.std(axis=0))

    @property
    def active(self):
        return self.scales > 0

    def transform(self, x):
        safe = np.where(self.active, self.scales, 1.0)
        z = (x - self.means) / safe
        z[:, ~self.active] = 0.0
        return z

    def to_original(self, b0, b):
        safe = np.where(self.active, self.scales, 1.0)
        coef = np.where(self.active, b / safe, 0.0)
        return float(b0 - coef @ self.means), coef


@dataclass(frozen=True)
class LassoModel:
    """Fitted Lasso on the original feature scale."""

    family: str
    intercept: float
    coef: np.ndarray
    lam: float
    lambdas: np.ndarray | None
    cv_loss: np.ndarray | None
    n_train: int

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.intercept + x @ self.coef

    def predict(self, x) -> np.ndarray:
        eta = self.decision_function(x)
        if self.family == "logistic":
            return np.clip(expit(eta), PROB_MARGIN, 1.0 - PROB_MARGIN)
        return eta

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coef != 0.0)


def _check(bad: int, what: str):
    if bad:
        raise NonMonotoneDescent(f"{what}: penalized loss increased in {bad} sweep(s)")


def _saturated(i, ratio, prev):
    if i + 1 < MIN_PATH:
        return False
    return ratio >= DEV_RATIO_MAX or ratio - prev < DEV_RATIO_STALL * ratio


def _linear_path(z, y, lambdas, tol, max_sweeps, early_stop=False):
    n, q = z.shape
    yc = y - y.mean()
    G = z.T @ z / n
    c = z.T @ yc / n
    yy = float(yc @ yc / n)
    b = np.zeros(q)
    out = np.empty((len(lambdas), q))
    trace = np.empty(0)
    prev = 0.0
    for i, lam in enumerate(lambdas):
        _, bad = cd_gram(G, c, yy, float(lam), b, tol, max_sweeps, trace)
        _check(bad, "linear lasso")
        out[i] = b
        if early_stop and yy > 0.0:
            r = yc - z @ b
            ratio = 1.0 - float(r @ r) / n / yy
            if _saturated(i, ratio, prev):
                return y.mean(), out[: i + 1]
            prev = ratio
    return y.mean(), out


def _bernoulli_deviance(y, eta):
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def _logistic_path(z, y, lambdas, tol, max_outer, max_inner, early_stop=False):
    n, q = z.shape
    ybar = y.mean()
    b0 = np.array([np.log(ybar / (1.0 - ybar))])
    b = np.zeros(q)
    out0 = np.empty(len(lambdas))
    out = np.empty((len(lambdas), q))
    trace = np.empty(0)
    null = _bernoulli_deviance(y, np.full(n, b0[0]))
    prev = 0.0
    for i, lam in enumerate(lambdas):
        _, bad, _ = cd_logistic(z, y, float(lam), b0, b, tol, max_outer, max_inner, trace)
        _check(bad, "logistic lasso")
        out0[i] = b0[0]
        out[i] = b
        if early_stop:
            ratio = 1.0 - _bernoulli_deviance(y, b0[0] + z @ b) / null
            if _saturated(i, ratio, prev):
                return out0[: i + 1], out[: i + 1]
            prev = ratio
    return out0, out


def lambda_max(x, y, family: str = "linear") -> float:
    """Smallest penalty at which every standardized coefficient is zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    z = _Standardizer.fit(x).transform(x)
    return float(np.max(np.abs(z.T @ (y - y.mean())))) / y.size if z.shape[1] else 0.0


def lambda_path(lmax: float, n_lambda: int = N_LAMBDA, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    return lmax * np.geomspace(1.0, ratio, n_lambda)


def _fit_path(z, y, lambdas, family, tol, early_stop=False):
    if family == "logistic":
        return _logistic_path(z, y, lambdas, tol, 100, 1000, early_stop)
    b0, coefs = _linear_path(z, y, lambdas, tol, 100000, early_stop)
    return np.full(len(coefs), b0), coefs


def _pad(b0s, coefs, m):
    """Extend a truncated path to ``m`` penalties by holding its last solution."""
    short = m - len(coefs)
    if short <= 0:
        return b0s, coefs
    return (np.concatenate([b0s, np.repeat(b0s[-1:], short)]),
            np.vstack([coefs, np.repeat(coefs[-1:], short, axis=0)]))


def _loss(family, y, eta):
    if family == "logistic":
        p = np.clip(expit(eta), PROB_MARGIN, 1.0 - PROB_MARGIN)
        return -2.0 * (y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return (y - eta) ** 2


def fit_lasso(x, y, family: str = "linear", lam=None, cv_folds: int = CV_FOLDS,
              n_lambda: int = N_LAMBDA, ratio: float = LAMBDA_RATIO, seed: int = 0,
              tol: float = 1e-7) -> LassoModel:
    """Fit a Lasso, choosing the penalty by K-fold cross-validation.

    Parameters
    ----------
    x, y
        Features (n x q) and response; ``y`` must be 0/1 for ``family="logistic"``.
    family
        ``"linear"`` (squared error) or ``"logistic"`` (deviance).
    lam
        ``None`` selects by cross-validation; a number fixes the penalty on the
        standardized scale; ``"max"`` forces ``lambda_max``.
    seed
        Seed of the cross-validation fold partition.
    tol
        Convergence threshold on the largest squared coordinate change,
        scaled by the response variance (as in glmnet's ``thresh``).
    """
    from ..data import partition_folds

    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if family not in ("linear", "logistic"):
        raise ValueError(f"unknown lasso family {family!r}")
    if family == "logistic" and (n == 0 or np.all(y == y[0])):
        raise SingleClass("logistic lasso needs both label classes")
    std = _Standardizer.fit(x)
    if not np.any(std.active):
        raise DegeneratePath("every feature column is constant")
    z = std.transform(x)
    lmax = float(np.max(np.abs(z.T @ (y - y.mean())))) / n

    if lmax <= 0.0:
        # response orthogonal to every feature (e.g. constant y)
        b0 = y.mean() if family == "linear" else np.log(y.mean() / (1 - y.mean()))
        icpt, coef = std.to_original(b0, np.zeros(x.shape[1]))
        return LassoModel(family, icpt, coef, 0.0, None, None, n)

    if lam is not None:
        value = lmax if lam == "max" else float(lam)
        lambdas = lambda_path(lmax, n_lambda, ratio)
        lambdas = np.concatenate([lambdas[lambdas > value], [value]])
        b0s, coefs = _fit_path(z, y, lambdas, family, tol)
        icpt, coef = std.to_original(b0s[-1], coefs[-1])
        return LassoModel(family, icpt, coef, value, None, None, n)

    # small training cells get fewer folds rather than an error
    k = min(cv_folds, n)
    if k < 2:
        raise ValueError(f"lasso cross-validation needs at least 2 rows, got {n}")
    # the full-data path fixes the penalty sequence; it stops early once saturated
    full0, full = _fit_path(z, y, lambda_path(lmax, n_lambda, ratio), family, tol, True)
    lambdas = lambda_path(lmax, n_lambda, ratio)[: len(full)]
    folds = partition_folds(n, k, seed)
    total = np.zeros(len(lambdas))
    for hold, train in folds:
        ytr = y[train]
        if family == "logistic" and np.all(ytr == ytr[0]):
            raise SingleClass("a cross-validation training fold has one class")
        s = _Standardizer.fit(x[train])
        if not np.any(s.active):
            raise DegeneratePath("every feature column is constant in a training fold")
        b0s, coefs = _pad(*_fit_path(s.transform(x[train]), ytr, lambdas, family, tol, True),
                          len(lambdas))
        zh = s.transform(x[hold])
        eta = b0s[None, :] + zh @ coefs.T
        total += _loss(family, y[hold][:, None], eta).sum(axis=0)
    cv = total / n
    best = int(np.argmin(cv))
    icpt, coef = std.to_original(full0[best], full[best])
    return LassoModel(family, icpt, coef, float(lambdas[best]), lambdas, cv, n)
