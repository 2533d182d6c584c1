"""Balanced panel container, ingestion, validation, and half-panel splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateCell,
    MissingCell,
    NonFiniteValue,
    TooFewPeriods,
)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PanelData:
    """Balanced N x T panel of scalar outcomes and d-dimensional regressors.

    ``y`` has shape (N, T) and ``x`` shape (N, T, d). Unit and period labels
    are whatever identifiers arrived in the input; internally everything is
    indexed by dense 0-based positions. Instances are immutable and safe to
    share across workers.
    """

    y: np.ndarray
    x: np.ndarray
    unit_labels: tuple = ()
    period_labels: tuple = ()

    def __post_init__(self):
        y = _readonly(self.y)
        x = _readonly(self.x)
        if y.ndim != 2:
            raise DimensionMismatch(f"y must be 2-d (N, T), got shape {y.shape}")
        if x.ndim != 3 or x.shape[:2] != y.shape:
            raise DimensionMismatch(
                f"x must have shape (N, T, d) matching y {y.shape}, got {x.shape}"
            )
        n, t, d = x.shape
        if n < 1 or t < 1 or d < 1:
            raise DimensionMismatch(f"need N, T, d >= 1, got N={n}, T={t}, d={d}")
        if not np.all(np.isfinite(y)):
            raise NonFiniteValue("panel outcomes contain non-finite values")
        if not np.all(np.isfinite(x)):
            raise NonFiniteValue("panel regressors contain non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        units = self.unit_labels if self.unit_labels else tuple(range(n))
        periods = self.period_labels if self.period_labels else tuple(range(t))
        if len(units) != n or len(periods) != t:
            raise DimensionMismatch("label lengths do not match panel dimensions")
        object.__setattr__(self, "unit_labels", tuple(units))
        object.__setattr__(self, "period_labels", tuple(periods))

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    def to_records(self) -> Iterator[tuple]:
        """Yield (unit, period, y, x-vector) rows, unit-major then period."""
        for i, u in enumerate(self.unit_labels):
            for t, p in enumerate(self.period_labels):
                yield (u, p, float(self.y[i, t]), tuple(float(v) for v in self.x[i, t]))


def validate_panel(records: Iterable[tuple]) -> PanelData:
    """Assemble a dense balanced panel from (unit, period, y, x-vector) rows.

    Units and periods are ordered by first appearance; the original
    identifiers are retained as labels. Every (unit, period) pair must occur
    exactly once and all values must be finite.
    """
    rows = list(records)
    if not rows:
        raise MissingCell("no records supplied")

    units: dict = {}
    periods: dict = {}
    dim = None
    parsed = []
    for rec in rows:
        unit, period, yval, xvec = rec[0], rec[1], rec[2], rec[3]
        xs = tuple(float(v) for v in np.atleast_1d(xvec))
        if dim is None:
            dim = len(xs)
            if dim < 1:
                raise DimensionMismatch("regressor vectors must have length >= 1")
        elif len(xs) != dim:
            raise DimensionMismatch(
                f"record ({unit!r}, {period!r}) has {len(xs)} regressors, expected {dim}"
            )
        yval = float(yval)
        if not math.isfinite(yval) or not all(math.isfinite(v) for v in xs):
            raise NonFiniteValue(f"non-finite value in record ({unit!r}, {period!r})")
        if unit not in units:
            units[unit] = len(units)
        if period not in periods:
            periods[period] = len(periods)
        parsed.append((units[unit], periods[period], yval, xs))

    n, t = len(units), len(periods)
    y = np.full((n, t), np.nan)
    x = np.full((n, t, dim), np.nan)
    seen = np.zeros((n, t), dtype=bool)
    unit_labels = tuple(units)
    period_labels = tuple(periods)
    for i, j, yval, xs in parsed:
        if seen[i, j]:
            raise DuplicateCell(
                f"duplicate record for ({unit_labels[i]!r}, {period_labels[j]!r})"
            )
        seen[i, j] = True
        y[i, j] = yval
        x[i, j] = xs
    if not seen.all():
        i, j = np.argwhere(~seen)[0]
        raise MissingCell(
            f"missing record for ({unit_labels[i]!r}, {period_labels[j]!r})"
        )
    return PanelData(y=y, x=x, unit_labels=unit_labels, period_labels=period_labels)


def load_panel(path, delimiter: str = ",") -> PanelData:
    """Read a long-format delimited file with header ``id,t,y,x1,...,xd``.

    Numeric fields are parsed as decimal reals; scientific notation is
    accepted. Unit and period identifiers are kept verbatim as strings.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingCell(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        if len(header) < 4 or header[0] != "id" or header[1] != "t" or header[2] != "y":
            raise DimensionMismatch(
                f"{path}: header must be 'id,t,y,x1,...,xd', got {header!r}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DimensionMismatch(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                yval = float(row[2])
                xs = tuple(float(v) for v in row[3:])
            except ValueError as exc:
                raise NonFiniteValue(f"{path}:{lineno}: {exc}") from None
            records.append((row[0].strip(), row[1].strip(), yval, xs))
    return validate_panel(records)


def split_halves(p: PanelData) -> tuple[PanelData, PanelData]:
    """Split the panel into its first ``T // 2`` periods and the remainder.

    Unit order is preserved and concatenating the halves along the period
    axis restores the original panel. Requires T >= 2.
    """
    t = p.n_periods
    if t < 2:
        raise TooFewPeriods(f"need at least 2 periods to split, got {t}")
    t1 = t // 2
    first = PanelData(
        y=p.y[:, :t1],
        x=p.x[:, :t1],
        unit_labels=p.unit_labels,
        period_labels=p.period_labels[:t1],
    )
    second = PanelData(
        y=p.y[:, t1:],
        x=p.x[:, t1:],
        unit_labels=p.unit_labels,
        period_labels=p.period_labels[t1:],
    )
    return first, second


@dataclass(frozen=True)
class EvalSpec:
    """Where and how to evaluate the local fit.

    ``x`` is the evaluation point, ``tau`` the quantile level, ``h`` the
    localization bandwidth, and ``b`` the smoothing bandwidth (only used by
    the smoothed estimator). ``support_lo``/``support_hi`` bound the
    regressor support and drive boundary classification; when they were
    inferred from data rather than supplied, ``support_inferred`` is True.
    """

    x: np.ndarray
    tau: float
    h: float
    b: float | None = None
    support_lo: np.ndarray = field(default=None)  # type: ignore[assignment]
    support_hi: np.ndarray = field(default=None)  # type: ignore[assignment]
    support_inferred: bool = False

    def __post_init__(self):
        x = _readonly(np.atleast_1d(self.x))
        if x.ndim != 1:
            raise DimensionMismatch("evaluation point must be a 1-d vector")
        object.__setattr__(self, "x", x)
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must lie strictly inside (0, 1), got {self.tau}")
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ValueError(f"bandwidth h must be positive, got {self.h}")
        if self.b is not None and not (self.b > 0.0 and math.isfinite(self.b)):
            raise ValueError(f"smoothing bandwidth b must be positive, got {self.b}")
        lo = self.support_lo
        hi = self.support_hi
        if lo is None or hi is None:
            raise ValueError("support bounds are required; use EvalSpec.from_panel")
        lo = _readonly(np.atleast_1d(lo))
        hi = _readonly(np.atleast_1d(hi))
        if lo.shape != x.shape or hi.shape != x.shape:
            raise DimensionMismatch("support bounds must match the dimension of x")
        if not np.all(lo < hi):
            k = int(np.argmin(hi - lo))
            raise ValueError(f"support_lo must be < support_hi (coordinate {k})")
        for k in range(x.size):
            if not (lo[k] <= x[k] <= hi[k]):
                raise ValueError(
                    f"x[{k}]={x[k]} lies outside the declared support "
                    f"[{lo[k]}, {hi[k]}] (coordinate {k})"
                )
        object.__setattr__(self, "support_lo", lo)
        object.__setattr__(self, "support_hi", hi)

    @property
    def dim(self) -> int:
        return self.x.size

    @classmethod
    def from_panel(
        cls,
        panel: PanelData,
        x,
        tau: float,
        h: float,
        b: float | None = None,
        support: tuple | None = None,
    ) -> "EvalSpec":
        """Build a spec, inferring support bounds from the data when absent."""
        if support is not None:
            lo, hi = support
            inferred = False
        else:
            lo = panel.x.min(axis=(0, 1))
            hi = panel.x.max(axis=(0, 1))
            inferred = True
        return cls(
            x=np.atleast_1d(np.asarray(x, dtype=float)),
            tau=float(tau),
            h=float(h),
            b=None if b is None else float(b),
            support_lo=np.asarray(lo, dtype=float),
            support_hi=np.asarray(hi, dtype=float),
            support_inferred=inferred,
        )

    def with_bandwidth(self, h: float) -> "EvalSpec":
        return replace(self, h=float(h))
