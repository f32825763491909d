"""Bagged CART forests for regression and binary class probabilities.

Splits maximize the reduction in within-node sum of squares.  For 0/1
labels this is proportional to the Gini decrease, so one tree builder serves
both families and a probability forest averages terminal class-1 shares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import SingleClass

DEFAULT_TREES = 500
CHUNK = 32


@numba.njit(cache=True)
def _build_tree(X, y, sample, mtry, min_node, unif, feat, thr, left, right, value):
    """Grow one tree on rows ``sample``; returns the node count.

    A node is split only when it holds more than ``min_node`` rows.  Feature
    subsets are drawn by partial Fisher-Yates shuffles driven by ``unif``.
    """
    m = sample.shape[0]
    q = X.shape[1]
    idx = sample.copy()
    feats = np.arange(q)
    st_node = np.empty(2 * m + 1, np.int64)
    st_lo = np.empty(2 * m + 1, np.int64)
    st_hi = np.empty(2 * m + 1, np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    top = 1
    count = 1
    upos = 0
    vals = np.empty(m)
    ys = np.empty(m)
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        nn = hi - lo
        # shifted sum so a constant node reproduces its value exactly
        y0 = y[idx[lo]]
        s = 0.0
        for i in range(lo, hi):
            s += y[idx[i]] - y0
        mean = y0 + s / nn
        value[node] = mean
        feat[node] = -1
        left[node] = -1
        right[node] = -1
        if nn <= min_node:
            continue
        ss = 0.0
        for i in range(lo, hi):
            r = y[idx[i]] - mean
            ss += r * r
        if ss <= 0.0:
            continue
        for k in range(mtry):
            r = k + int(unif[upos] * (q - k))
            upos += 1
            if r >= q:
                r = q - 1
            tmp = feats[k]
            feats[k] = feats[r]
            feats[r] = tmp
        best_gain = 1e-12 * ss
        best_f = -1
        best_thr = 0.0
        for k in range(mtry):
            f = feats[k]
            for i in range(nn):
                vals[i] = X[idx[lo + i], f]
            order = np.argsort(vals[:nn], kind="mergesort")
            for i in range(nn):
                ys[i] = y[idx[lo + order[i]]] - mean
            sl = 0.0
            for i in range(nn - 1):
                sl += ys[i]
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a < b:
                    nl = i + 1
                    nr = nn - nl
                    gain = sl * sl * nn / (nl * nr)
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        t = 0.5 * (a + b)
                        if t >= b or t < a:
                            t = a
                        best_thr = t
        if best_f < 0:
            continue
        # partition idx[lo:hi] so rows with x <= thr come first
        i = lo
        j = hi - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feat[node] = best_f
        thr[node] = best_thr
        lnode = count
        rnode = count + 1
        count += 2
        left[node] = lnode
        right[node] = rnode
        st_node[top] = rnode
        st_lo[top] = i
        st_hi[top] = hi
        top += 1
        st_node[top] = lnode
        st_lo[top] = lo
        st_hi[top] = i
        top += 1
    return count


@numba.njit(cache=True)
def _build_chunk(X, y, samples, mtry, min_node, unif, feat, thr, left, right, value, counts):
    for t in range(samples.shape[0]):
        counts[t] = _build_tree(X, y, samples[t], mtry, min_node, unif[t],
                                feat[t], thr[t], left[t], right[t], value[t])


@numba.njit(cache=True)
def _predict(X, offsets, feat, thr, left, right, value):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        first = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feat[base + node] >= 0:
                if X[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            if t == 0:
                first = value[base + node]
            acc += value[base + node] - first
        out[i] = first + acc / n_trees
    return out


def default_mtry(q: int, family: str) -> int:
    if family == "classification":
        return max(1, math.ceil(math.sqrt(q)))
    return max(1, math.ceil(q / 3))


def default_min_node(family: str) -> int:
    return 1 if family == "classification" else 5


@dataclass(frozen=True, eq=False)
class ForestModel:
    family: str
    offsets: np.ndarray
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_train: int
    seed: int

    @property
    def n_trees(self) -> int:
        return self.offsets.shape[0] - 1

    def predict(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return _predict(x, self.offsets, self.feat, self.thr, self.left, self.right, self.value)


def canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order that depends only on the multiset of (x, y) rows."""
    keys = [y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def fit_forest(x, y, family: str = "regression", n_trees: int = DEFAULT_TREES,
               mtry: int | None = None, min_node_size: int | None = None,
               bootstrap: bool = True, seed: int = 0) -> ForestModel:
    """Fit a random forest.

    Tree ``b`` draws its bootstrap sample and split-feature subsets from
    ``SeedSequence([seed, b])``, and training rows are put in a canonical order
    first, so the fit does not depend on the order of the input rows.
    ``bootstrap=False`` grows every tree on the full sample.
    """
    if family not in ("regression", "classification"):
        raise ValueError(f"unknown forest family {family!r}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, q = x.shape
    if family == "classification" and (n == 0 or np.all(y == y[0])):
        raise SingleClass("probability forest needs both label classes")
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    min_node = default_min_node(family) if min_node_size is None else int(min_node_size)
    if n < 1:
        raise ValueError("forest needs at least one training row")
    if min_node < 1:
        raise ValueError(f"min_node_size must be at least 1, got {min_node}")
    # a sample no larger than min_node_size grows root-only trees
    if q == 0:
        x = np.zeros((n, 1))
        q = 1
    mt = default_mtry(q, family) if mtry is None else int(mtry)
    mt = min(max(mt, 1), q)

    order = canonical_order(x, y)
    xs = np.ascontiguousarray(x[order])
    ys = np.ascontiguousarray(y[order])
    max_nodes = 2 * n + 1

    offsets = [0]
    parts = {k: [] for k in ("feat", "thr", "left", "right", "value")}
    for start in range(0, n_trees, CHUNK):
        stop = min(start + CHUNK, n_trees)
        c = stop - start
        samples = np.empty((c, n), dtype=np.int64)
        unif = np.empty((c, max_nodes * mt))
        for t in range(c):
            rng = np.random.default_rng(np.random.SeedSequence([seed, start + t]))
            samples[t] = np.sort(rng.integers(0, n, n)) if bootstrap else np.arange(n)
            unif[t] = rng.random(max_nodes * mt)
        feat = np.full((c, max_nodes), -1, dtype=np.int64)
        thr = np.zeros((c, max_nodes))
        left = np.full((c, max_nodes), -1, dtype=np.int64)
        right = np.full((c, max_nodes), -1, dtype=np.int64)
        value = np.zeros((c, max_nodes))
        counts = np.zeros(c, dtype=np.int64)
        _build_chunk(xs, ys, samples, mt, min_node, unif, feat, thr, left, right, value, counts)
        for t in range(c):
            k = counts[t]
            parts["feat"].append(feat[t, :k])
            parts["thr"].append(thr[t, :k])
            parts["left"].append(left[t, :k])
            parts["right"].append(right[t, :k])
            parts["value"].append(value[t, :k])
            offsets.append(offsets[-1] + k)
    return ForestModel(
        family,
        np.asarray(offsets, dtype=np.int64),
        *(np.concatenate(parts[k]) for k in ("feat", "thr", "left", "right", "value")),
        n_train=n,
        seed=seed,
    )
