"""Observations, datasets, settings and fold partitions.

A repeated cross-section is stored as one merged pseudo-sample with the period
as a column; a panel carries both period outcomes per unit.  Datasets are
column-oriented numpy arrays and are read-only once validated.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    CsvFormatError,
    EmptyCell,
    EmptyGroup,
    IncompatiblePair,
    InconsistentDimension,
    InvalidFoldCount,
    NonBinaryIndicator,
    NonFiniteValue,
    ValidationError,
)


class Setting(str, enum.Enum):
    """Assumption set on the relation between D, T and X (or D and X)."""

    CS1 = "cs1"
    CS2 = "cs2"
    CS3 = "cs3"
    CS4 = "cs4"
    CS5 = "cs5"
    PA1 = "pa1"
    PA2 = "pa2"

    @property
    def is_panel(self) -> bool:
        return self in (Setting.PA1, Setting.PA2)

    @classmethod
    def parse(cls, value: "Setting | str") -> "Setting":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise IncompatiblePair(f"unknown setting {value!r}") from None


class ScoreVariant(str, enum.Enum):
    EFFICIENT = "efficient"
    STAR2 = "star2"
    STAR3 = "star3"
    PRIME_CS2 = "prime_cs2"
    PRIME_CS4 = "prime_cs4"
    IPW = "ipw"
    DIFF_MEANS = "diff_means"

    @classmethod
    def parse(cls, value: "ScoreVariant | str") -> "ScoreVariant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"primecs2": "prime_cs2", "primecs4": "prime_cs4",
                   "ipw_benchmark": "ipw", "ipwbenchmark": "ipw", "diffmeans": "diff_means"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise IncompatiblePair(f"unknown score variant {value!r}") from None


_VARIANT_SETTINGS = {
    ScoreVariant.STAR2: {Setting.CS1},
    ScoreVariant.STAR3: {Setting.CS1},
    ScoreVariant.PRIME_CS2: {Setting.CS2},
    ScoreVariant.PRIME_CS4: {Setting.CS4},
    ScoreVariant.IPW: {Setting.CS4},
    ScoreVariant.DIFF_MEANS: {Setting.CS5, Setting.PA2},
}


def check_pair(setting, variant) -> tuple[Setting, ScoreVariant]:
    """Parse and validate a (setting, variant) combination."""
    setting = Setting.parse(setting)
    variant = ScoreVariant.parse(variant)
    allowed = _VARIANT_SETTINGS.get(variant)
    if allowed is not None and setting not in allowed:
        names = ", ".join(sorted(s.value for s in allowed))
        raise IncompatiblePair(
            f"variant {variant.value!r} is only defined for {names}, not {setting.value!r}",
            setting=setting.value, variant=variant.value,
        )
    return setting, variant


def valid_pairs() -> list[tuple[Setting, ScoreVariant]]:
    out = []
    for s in Setting:
        for v in ScoreVariant:
            allowed = _VARIANT_SETTINGS.get(v)
            if allowed is None or s in allowed:
                out.append((s, v))
    return out


class CrossSectionRow(NamedTuple):
    y: float
    d: int
    t: int
    x: tuple


class PanelRow(NamedTuple):
    y0: float
    y1: float
    d: int
    x: tuple


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _as_indicator(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"{name} contains non-finite values")
        if not np.all(arr == np.round(arr)):
            raise NonBinaryIndicator(f"{name} must be 0 or 1")
    if arr.dtype.kind not in "biuf":
        raise NonBinaryIndicator(f"{name} must be numeric 0/1")
    if not np.all((arr == 0) | (arr == 1)):
        bad = arr[(arr != 0) & (arr != 1)][0]
        raise NonBinaryIndicator(f"{name} must be 0 or 1, found {bad!r}")
    return arr.astype(np.int8)


def _as_real(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite values")
    return arr


def _as_covariates(x, n: int) -> np.ndarray:
    if x is None:
        return np.zeros((n, 0))
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(n, -1) if n else arr.reshape(0, 0)
    if arr.ndim != 2 or arr.shape[0] != n:
        raise InconsistentDimension(f"covariate matrix has shape {arr.shape}, expected ({n}, p)")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("x contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class CrossSectionDataset:
    """Merged repeated cross-section ``W = (Y, D, T, X)``.

    Build through :func:`validate_cross_section` or :meth:`from_arrays`; the
    constructor itself does not validate.
    """

    y: np.ndarray
    d: np.ndarray
    t: np.ndarray
    x: np.ndarray

    @classmethod
    def from_arrays(cls, y, d, t, x=None) -> "CrossSectionDataset":
        y = _as_real(y, "y").ravel()
        n = y.shape[0]
        if n == 0:
            raise ValidationError("dataset is empty")
        d = _as_indicator(d, "d").ravel()
        t = _as_indicator(t, "t").ravel()
        if d.shape[0] != n or t.shape[0] != n:
            raise InconsistentDimension("y, d and t must have equal length")
        x = _as_covariates(x, n)
        for dd in (0, 1):
            for tt in (0, 1):
                if not np.any((d == dd) & (t == tt)):
                    raise EmptyCell(dd, tt)
        return cls(_readonly(y), _readonly(d), _readonly(t), _readonly(x))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def rows(self) -> Iterable[CrossSectionRow]:
        for i in range(self.n):
            yield CrossSectionRow(float(self.y[i]), int(self.d[i]), int(self.t[i]), tuple(self.x[i].tolist()))

    def cell_shares(self) -> dict[str, float]:
        return {f"{dd}{tt}": float(np.mean((self.d == dd) & (self.t == tt))) for dd in (0, 1) for tt in (0, 1)}

    def with_outcome(self, y) -> "CrossSectionDataset":
        return CrossSectionDataset.from_arrays(y, self.d, self.t, self.x)

    def subset(self, index) -> "CrossSectionDataset":
        return CrossSectionDataset.from_arrays(self.y[index], self.d[index], self.t[index], self.x[index])


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Two-period panel ``W = (Y(0), Y(1), D, X)``."""

    y0: np.ndarray
    y1: np.ndarray
    d: np.ndarray
    x: np.ndarray

    @classmethod
    def from_arrays(cls, y0, y1, d, x=None) -> "PanelDataset":
        y0 = _as_real(y0, "y0").ravel()
        y1 = _as_real(y1, "y1").ravel()
        n = y0.shape[0]
        if n == 0:
            raise ValidationError("dataset is empty")
        d = _as_indicator(d, "d").ravel()
        if y1.shape[0] != n or d.shape[0] != n:
            raise InconsistentDimension("y0, y1 and d must have equal length")
        x = _as_covariates(x, n)
        for dd in (0, 1):
            if not np.any(d == dd):
                raise EmptyGroup(dd)
        return cls(_readonly(y0), _readonly(y1), _readonly(d), _readonly(x))

    @property
    def n(self) -> int:
        return self.y0.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def dy(self) -> np.ndarray:
        return self.y1 - self.y0

    def rows(self) -> Iterable[PanelRow]:
        for i in range(self.n):
            yield PanelRow(float(self.y0[i]), float(self.y1[i]), int(self.d[i]), tuple(self.x[i].tolist()))

    def group_shares(self) -> dict[str, float]:
        return {str(dd): float(np.mean(self.d == dd)) for dd in (0, 1)}

    def subset(self, index) -> "PanelDataset":
        return PanelDataset.from_arrays(self.y0[index], self.y1[index], self.d[index], self.x[index])


def _split_rows(rows: Sequence, width: int, what: str):
    rows = list(rows)
    if not rows:
        raise ValidationError(f"{what}: empty row list")
    heads, xs = [], []
    p = None
    for i, row in enumerate(rows):
        if isinstance(row, (CrossSectionRow, PanelRow)):
            head, x = tuple(row[:width]), tuple(row.x)
        else:
            row = tuple(row)
            if len(row) == width + 1 and isinstance(row[width], (list, tuple, np.ndarray)):
                head, x = row[:width], tuple(row[width])
            else:
                head, x = row[:width], row[width:]
        if p is None:
            p = len(x)
        elif len(x) != p:
            raise InconsistentDimension(f"row {i} has {len(x)} covariates, expected {p}")
        heads.append(head)
        xs.append(x)
    return np.array(heads, dtype=float), np.array(xs, dtype=float).reshape(len(rows), p)


def validate_cross_section(rows: Sequence) -> CrossSectionDataset:
    """Validate raw ``(y, d, t, x...)`` rows into a dataset.

    Rows may be :class:`CrossSectionRow` instances, flat tuples
    ``(y, d, t, x1, ..., xp)`` or ``(y, d, t, [x...])``.
    """
    heads, x = _split_rows(rows, 3, "cross-section")
    return CrossSectionDataset.from_arrays(heads[:, 0], heads[:, 1], heads[:, 2], x)


def validate_panel(rows: Sequence) -> PanelDataset:
    heads, x = _split_rows(rows, 3, "panel")
    return PanelDataset.from_arrays(heads[:, 0], heads[:, 1], heads[:, 2], x)


# -- fold partitions -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldPartition:
    """Assignment of ``n`` observations to ``k`` folds labelled ``1..k``."""

    n: int
    k: int
    assignment: np.ndarray
    seed: int | None = None

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> np.ndarray:
        """Fold sizes, entry ``j`` for fold ``j + 1``."""
        return np.bincount(self.assignment, minlength=self.k + 1)[1:]

    @property
    def labels(self) -> range:
        return range(1, self.k + 1)

    def __iter__(self):
        for fold in self.labels:
            yield self.indices(fold), self.complement(fold)


def partition_folds(n: int, k: int, seed: int) -> FoldPartition:
    """Uniformly random partition into ``k`` folds of near-equal size.

    The ``n % k`` leftover observations go one each to the lowest-numbered
    folds.
    """
    n, k = int(n), int(k)
    if k < 2 or k > n:
        raise InvalidFoldCount(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}", k=k, n=n)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    labels = np.repeat(np.arange(1, k + 1), sizes)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = labels
    return FoldPartition(n, k, _readonly(assignment), seed)


# -- CSV -----------------------------------------------------------------------


_CS_HEAD = ("y", "d", "t")
_PA_HEAD = ("y0", "y1", "d")


def _fmt(value: float) -> str:
    return repr(float(value))


def _check_header(header: list[str], head: tuple[str, ...], path) -> int:
    names = [h.strip() for h in header]
    if tuple(names[: len(head)]) != head:
        raise CsvFormatError(f"{path}: header must start with {','.join(head)}, got {','.join(names)}")
    covs = names[len(head):]
    expected = [f"x{j + 1}" for j in range(len(covs))]
    if covs != expected:
        raise CsvFormatError(f"{path}: covariate columns must be named x1..xp, got {','.join(covs)}")
    return len(covs)


def _parse_int(text: str, name: str, line: int, path) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise NonBinaryIndicator(f"{path}:{line}: {name} must be an integer 0/1, got {text!r}") from None


def _parse_float(text: str, name: str, line: int, path) -> float:
    try:
        value = float(text.strip())
    except ValueError:
        raise CsvFormatError(f"{path}:{line}: {name} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise NonFiniteValue(f"{path}:{line}: {name} is not finite")
    return value


def _read_table(source, head: tuple[str, ...], int_cols: set[str]):
    if isinstance(source, (str, Path)):
        path = str(source)
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    else:
        path = "<stream>"
        rows = list(csv.reader(source))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise CsvFormatError(f"{path}: missing header row")
    header = [c.strip() for c in rows[0]]
    p = _check_header(header, head, path)
    cols: list[list[float]] = [[] for _ in header]
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InconsistentDimension(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        for j, (name, text) in enumerate(zip(header, row)):
            if name in int_cols:
                cols[j].append(_parse_int(text, name, line, path))
            else:
                cols[j].append(_parse_float(text, name, line, path))
    arrays = [np.asarray(c, dtype=float) for c in cols]
    n = len(rows) - 1
    x = np.column_stack(arrays[len(head):]) if p else np.zeros((n, 0))
    return arrays[: len(head)], x


def read_cross_section_csv(source) -> CrossSectionDataset:
    (y, d, t), x = _read_table(source, _CS_HEAD, {"d", "t"})
    return CrossSectionDataset.from_arrays(y, d, t, x)


def read_panel_csv(source) -> PanelDataset:
    (y0, y1, d), x = _read_table(source, _PA_HEAD, {"d"})
    return PanelDataset.from_arrays(y0, y1, d, x)


def read_period_csv(source):
    """Read a ``y,d,period,x1..xp`` table used for placebo runs.

    Returns ``(y, d, period, x)`` arrays; periods are integer labels.
    """
    (y, d, period), x = _read_table(source, ("y", "d", "period"), {"d", "period"})
    return y, _as_indicator(d, "d"), period.astype(np.int64), x


def _write(rows, header, target):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = buf.getvalue()
    if target is None:
        return text
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    else:
        target.write(text)
    return text


def write_cross_section_csv(ds: CrossSectionDataset, target=None) -> str:
    header = list(_CS_HEAD) + [f"x{j + 1}" for j in range(ds.p)]
    rows = ([_fmt(ds.y[i]), int(ds.d[i]), int(ds.t[i])] + [_fmt(v) for v in ds.x[i]] for i in range(ds.n))
    return _write(rows, header, target)


def write_panel_csv(ds: PanelDataset, target=None) -> str:
    header = list(_PA_HEAD) + [f"x{j + 1}" for j in range(ds.p)]
    rows = ([_fmt(ds.y0[i]), _fmt(ds.y1[i]), int(ds.d[i])] + [_fmt(v) for v in ds.x[i]] for i in range(ds.n))
    return _write(rows, header, target)
