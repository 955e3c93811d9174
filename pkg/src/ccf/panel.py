"""Panel data model: standardization, lag embedding, windows and splits.

Time indices are 0-based and absolute: row ``t`` of a panel is period ``t``.
Matrices derived from a panel record the absolute index of their first row so
that targets ``y[t + h]`` are aligned by time, never by position.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataQualityError, EmptySampleError

#: minimum number of effective rows a (c, k, h) design must leave for fitting
MIN_EFFECTIVE_ROWS = 10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeriesPanel:
    """T x n block of series, rows are periods and columns are series."""

    values: np.ndarray
    labels: tuple[str, ...] = ()
    t0: str | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DataQualityError(f"panel values must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise DataQualityError(
                f"non-finite entry at row {bad[0]}, column {bad[1]}; "
                "missing values are not imputed"
            )
        if v.shape[0] < 2 or v.shape[1] < 1:
            raise DataQualityError(f"panel needs T >= 2 and n >= 1, got {v.shape}")
        labels = tuple(self.labels) if self.labels else tuple(f"s{i}" for i in range(v.shape[1]))
        if len(labels) != v.shape[1]:
            raise DataQualityError(f"{len(labels)} labels for {v.shape[1]} columns")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "labels", labels)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def columns(self, names: Sequence[str]) -> "TimeSeriesPanel":
        index = {name: i for i, name in enumerate(self.labels)}
        missing = [name for name in names if name not in index]
        if missing:
            raise ConfigError(f"unknown column(s): {', '.join(missing)}")
        cols = [index[name] for name in names]
        return TimeSeriesPanel(self.values[:, cols], tuple(names), self.t0)

    def rows(self, start: int, stop: int) -> "TimeSeriesPanel":
        return TimeSeriesPanel(self.values[start:stop], self.labels, None)


@dataclass(frozen=True)
class StandardizationInfo:
    means: np.ndarray
    scales: np.ndarray
    constant_columns: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "scales", _frozen(self.scales))
        if np.any(self.scales <= 0):
            raise DataQualityError("standardization scales must be positive")

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.means) / self.scales

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.scales + self.means

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "constant_columns": list(self.constant_columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationInfo":
        return cls(np.asarray(d["means"]), np.asarray(d["scales"]),
                   tuple(d.get("constant_columns", ())))


def standardize(panel: TimeSeriesPanel | np.ndarray,
                rows: slice | None = None) -> tuple[TimeSeriesPanel, StandardizationInfo]:
    """Center each column and scale it to unit sample variance (ddof=1).

    ``rows`` restricts the sample used to estimate means and scales; the
    transform is applied to every row. Constant columns are only centered.
    """
    if not isinstance(panel, TimeSeriesPanel):
        panel = TimeSeriesPanel(panel)
    v = panel.values
    sample = v if rows is None else v[rows]
    if sample.shape[0] < 2:
        raise DataQualityError("standardization needs at least 2 rows")
    means = sample.mean(axis=0)
    scales = sample.std(axis=0, ddof=1)
    const = tuple(int(i) for i in np.flatnonzero(scales <= 1e-12 * np.maximum(1.0, np.abs(means))))
    if const:
        warnings.warn(f"constant column(s) {list(const)} are centered but not scaled",
                      RuntimeWarning, stacklevel=2)
        scales = scales.copy()
        scales[list(const)] = 1.0
    info = StandardizationInfo(means, scales, const)
    return TimeSeriesPanel(info.transform(v), panel.labels, panel.t0), info


@dataclass(frozen=True)
class LagDesign:
    """Lag structure of one component: ``x_t`` stacks ``c`` lags of z, the
    forecast equation uses ``k`` lags of the component, horizon ``h``."""

    c: int
    k: int
    h: int
    m: int

    def __post_init__(self):
        if min(self.c, self.k, self.h) < 0 or self.m < 1:
            raise ConfigError(f"invalid lag design {self}")

    @property
    def p(self) -> int:
        return self.m * (self.c + 1)

    def origin_range(self, T: int, first: int = 0) -> tuple[int, int]:
        """Inclusive range of forecast origins usable with ``T`` periods."""
        return max(first, self.c + self.k), T - 1 - self.h

    def n_effective(self, T: int, first: int = 0) -> int:
        lo, hi = self.origin_range(T, first)
        return max(0, hi - lo + 1)


def build_lag_matrix(panel: TimeSeriesPanel | np.ndarray, c: int) -> np.ndarray:
    """Rows ``x_t = (z_t', z_{t-1}', ..., z_{t-c}')`` for ``t = c, ..., T-1``.

    Row ``i`` of the result is period ``c + i``.
    """
    z = panel.values if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    T = z.shape[0]
    if c < 0:
        raise ConfigError("lag count c must be non-negative")
    if c >= T:
        raise EmptySampleError(f"c={c} leaves no rows with T={T}")
    return np.hstack([z[c - j:T - j] for j in range(c + 1)])


def lag_rows(z: np.ndarray, c: int, start: int, stop: int) -> np.ndarray:
    """``x_t`` rows for ``t = start, ..., stop - 1`` (requires ``start >= c``)."""
    if start < c:
        raise EmptySampleError(f"x_t needs t >= c={c}, asked for t={start}")
    return np.hstack([z[start - j:stop - j] for j in range(c + 1)])


def component_window(f: np.ndarray, k: int, t: int) -> np.ndarray:
    """``(f_t, f_{t-1}, ..., f_{t-k})`` for a series indexed by absolute time."""
    f = np.asarray(f, dtype=float)
    if t < k or t >= f.shape[0]:
        raise IndexError(f"window of {k} lags at t={t} outside 0..{f.shape[0] - 1}")
    return f[t - k:t + 1][::-1].copy()


@dataclass(frozen=True)
class SplitSpec:
    alpha: float
    T1: int
    T2: int
    T3: int

    @property
    def T(self) -> int:
        return self.T1 + self.T2 + self.T3


def split_lengths(T: int, alpha: float) -> SplitSpec:
    """Training, first and second validation lengths.

    The training part is ``floor(alpha T)`` and the remainder is halved, the
    first validation part taking the floor.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    T1 = int(math.floor(alpha * T + 1e-9))
    T2 = (T - T1) // 2
    T3 = T - T1 - T2
    if min(T1, T2, T3) <= 0:
        raise ConfigError(f"alpha={alpha} with T={T} gives an empty segment ({T1}, {T2}, {T3})")
    return SplitSpec(alpha, T1, T2, T3)


def split(panel: TimeSeriesPanel, alpha: float) -> tuple[TimeSeriesPanel, TimeSeriesPanel, TimeSeriesPanel]:
    s = split_lengths(panel.T, alpha)
    if min(s.T1, s.T2, s.T3) < 2:
        raise ConfigError(f"segments ({s.T1}, {s.T2}, {s.T3}) are too short to form panels")
    return (panel.rows(0, s.T1), panel.rows(s.T1, s.T1 + s.T2),
            panel.rows(s.T1 + s.T2, s.T))


def read_csv(path: str | Path) -> TimeSeriesPanel:
    """Wide CSV: header of series names, optional leading ``date`` column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataQualityError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    has_date = bool(header) and header[0].lower() == "date"
    names = header[1:] if has_date else header
    if len(set(names)) != len(names):
        raise DataQualityError(f"{path}: duplicate column names")
    data = np.empty((len(rows), len(names)))
    for i, r in enumerate(rows):
        cells = r[1:] if has_date else r
        if len(cells) != len(names):
            raise DataQualityError(f"{path}: row {i + 2} has {len(cells)} fields, expected {len(names)}")
        try:
            data[i] = [float(cell) for cell in cells]
        except ValueError as exc:
            raise DataQualityError(f"{path}: row {i + 2}: {exc}") from None
    t0 = rows[0][0] if has_date and rows else None
    return TimeSeriesPanel(data, tuple(names), t0)


def write_csv(path: str | Path, panel: TimeSeriesPanel, dates: Sequence[str] | None = None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["date"] if dates is not None else []) + list(panel.labels))
        for i, row in enumerate(panel.values):
            w.writerow(([dates[i]] if dates is not None else []) + [repr(float(x)) for x in row])
