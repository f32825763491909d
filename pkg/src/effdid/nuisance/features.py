"""Covariate matrices and polynomial / interaction expansion."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from ..errors import DimensionOverflow, NonFiniteValue

DEFAULT_MAX_COLUMNS = 5000


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Design matrix with column standardization metadata.

    ``means`` and ``scales`` are population (ddof=0) moments of ``values``;
    a zero scale marks a constant column.  ``names`` records provenance of
    each column, e.g. ``"x1^3"`` or ``"x1*x2"``.
    """

    values: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    names: tuple

    @classmethod
    def from_array(cls, x, names=None) -> "FeatureMatrix":
        values = np.asarray(x, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("feature matrix contains non-finite values")
        q = values.shape[1]
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(q))
        if values.shape[0]:
            means = values.mean(axis=0)
            scales = values.std(axis=0)
        else:
            means = np.zeros(q)
            scales = np.zeros(q)
        return cls(values, means, scales, tuple(names))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def standardized(self) -> np.ndarray:
        """Return ``(values - means) / scales`` with constant columns set to 0."""
        safe = np.where(self.scales > 0, self.scales, 1.0)
        z = (self.values - self.means) / safe
        z[:, self.scales <= 0] = 0.0
        return z


def expanded_width(p: int, max_degree: int, interactions: bool) -> int:
    return p + p * (max_degree - 1) + (comb(p, 2) if interactions else 0)


def expand_features(x, max_degree: int = 1, interactions: bool = False,
                    max_columns: int = DEFAULT_MAX_COLUMNS) -> FeatureMatrix:
    """Append powers and pairwise products of the original columns.

    Column order is: originals, then powers ``x_j^k`` for ``k = 2..max_degree``
    grouped by column, then products ``x_i*x_j`` for ``i < j``.

    Raises
    ------
    DimensionOverflow
        If the expanded width exceeds ``max_columns``.
    """
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    fm = x if isinstance(x, FeatureMatrix) else FeatureMatrix.from_array(x)
    base = fm.values
    p = base.shape[1]
    width = expanded_width(p, max_degree, interactions)
    if width > max_columns:
        raise DimensionOverflow(f"expansion to {width} columns exceeds cap {max_columns}",
                                width=width, cap=max_columns)
    cols = [base]
    names = list(fm.names)
    for j in range(p):
        for k in range(2, max_degree + 1):
            cols.append(base[:, j:j + 1] ** k)
            names.append(f"{fm.names[j]}^{k}")
    if interactions:
        for i in range(p):
            for j in range(i + 1, p):
                cols.append(base[:, i:i + 1] * base[:, j:j + 1])
                names.append(f"{fm.names[i]}*{fm.names[j]}")
    values = np.hstack(cols) if cols else base
    return FeatureMatrix.from_array(values, names)
