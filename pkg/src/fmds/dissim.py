"""Time-varying dissimilarity series and their file formats.

Pairs are stored in upper-triangle, column-by-column order:
(1,2), (1,3), (2,3), (1,4), (2,4), (3,4), ... so the stacked value table is
already the "super" (pairs x time) matrix layout.
"""

from __future__ import annotations

import csv
import datetime
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisSpec
from .coeffs import CoeffSet

logger = logging.getLogger(__name__)


class DegenerateSeriesError(ValueError):
    """A ticker's within-month prices are constant, so correlation is undefined."""


class InsufficientDataError(ValueError):
    """Fewer than two trading days in a month."""


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def pair_indices(n: int) -> np.ndarray:
    """All unordered pairs as 0-based (i, j) rows, i < j, in storage order."""
    out = np.empty((pair_count(n), 2), dtype=np.intp)
    r = 0
    for j in range(1, n):
        for i in range(j):
            out[r] = (i, j)
            r += 1
    return out


def pair_row(i: int, j: int) -> int:
    """Storage row of the 0-based pair i < j."""
    if not 0 <= i < j:
        raise IndexError(f"need 0 <= i < j, got ({i}, {j})")
    return j * (j - 1) // 2 + i


@dataclass(frozen=True)
class DissimilaritySeries:
    """Observed dissimilarities for all unordered pairs over a time grid."""

    n: int
    grid: np.ndarray
    values: np.ndarray  # (n(n-1)/2, len(grid))
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=float, copy=True)
        values = np.array(self.values, dtype=float, copy=True)
        if grid.ndim != 1 or len(grid) < 1:
            raise ValueError("grid must be a nonempty 1-D array")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if values.shape != (pair_count(self.n), len(grid)):
            raise ValueError(
                f"values shape {values.shape} != ({pair_count(self.n)}, {len(grid)}) "
                f"for n={self.n}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("dissimilarities must be finite and nonnegative")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.n:
                raise ValueError(f"{len(labels)} labels for n={self.n}")
            object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return len(self.grid)

    def matrix_at(self, k: int) -> np.ndarray:
        """Full symmetric n x n dissimilarity matrix at grid index k."""
        d = np.zeros((self.n, self.n))
        idx = pair_indices(self.n)
        d[idx[:, 0], idx[:, 1]] = self.values[:, k]
        return d + d.T


@dataclass(frozen=True)
class PricePanel:
    """Daily closing prices grouped by calendar month.

    closes[k] has shape (len(tickers), trading days in month k); the trading
    day count may differ across months. month_keys are "YYYY-MM" strings in
    chronological order.
    """

    tickers: tuple[str, ...]
    month_keys: tuple[str, ...]
    closes: tuple[np.ndarray, ...]
    dropped: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.closes) != len(self.month_keys):
            raise ValueError("one close matrix per month required")
        frozen = []
        for key, block in zip(self.month_keys, self.closes):
            arr = np.array(block, dtype=float, copy=True)
            if arr.ndim != 2 or arr.shape[0] != len(self.tickers):
                raise ValueError(f"month {key}: close matrix shape {arr.shape} invalid")
            if not np.all(arr > 0):
                raise ValueError(f"month {key}: prices must be strictly positive")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "closes", tuple(frozen))

    @property
    def months(self) -> tuple[int, ...]:
        """1-based ordinal month indices."""
        return tuple(range(1, len(self.month_keys) + 1))


def euclidean_series(
    coeff_truth: CoeffSet, spec: BasisSpec, grid: np.ndarray
) -> DissimilaritySeries:
    """Pairwise Euclidean distances between trajectories at each grid point."""
    positions = coeff_truth.evaluate(spec, grid)  # (n, p, m)
    idx = pair_indices(coeff_truth.n)
    diffs = positions[idx[:, 0]] - positions[idx[:, 1]]
    values = np.sqrt(np.einsum("rpm,rpm->rm", diffs, diffs))
    return DissimilaritySeries(
        n=coeff_truth.n, grid=np.asarray(grid, float), values=values, labels=coeff_truth.labels
    )


def correlation_dissim(panel: PricePanel) -> DissimilaritySeries:
    """Correlation dissimilarities (1 - Pearson)/2 of within-month closes.

    The time grid is the 1-based month index, so values always lie in [0, 1].
    """
    n = len(panel.tickers)
    idx = pair_indices(n)
    values = np.empty((pair_count(n), len(panel.month_keys)))
    for k, (key, block) in enumerate(zip(panel.month_keys, panel.closes)):
        r = block.shape[1]
        if r < 2:
            raise InsufficientDataError(f"month {key}: needs at least 2 trading days, has {r}")
        centered = block - block.mean(axis=1, keepdims=True)
        norms = np.sqrt(np.einsum("ir,ir->i", centered, centered))
        flat = np.flatnonzero(norms == 0.0)
        if flat.size:
            raise DegenerateSeriesError(
                f"month {key}: constant prices for {panel.tickers[flat[0]]}"
            )
        z = centered / norms[:, None]
        corr = z @ z.T
        np.clip(corr, -1.0, 1.0, out=corr)  # guard float overshoot past +-1
        values[:, k] = (1.0 - corr[idx[:, 0], idx[:, 1]]) / 2.0
    grid = np.arange(1, len(panel.month_keys) + 1, dtype=float)
    return DissimilaritySeries(n=n, grid=grid, values=values, labels=panel.tickers)


def build_super_matrix(series: DissimilaritySeries) -> np.ndarray:
    """(pairs x time) table; row r holds pair_indices(n)[r] across the grid."""
    return series.values.copy()


def series_from_super(
    matrix: np.ndarray,
    grid: np.ndarray,
    n: int,
    labels: tuple[str, ...] | None = None,
) -> DissimilaritySeries:
    """Inverse of build_super_matrix."""
    return DissimilaritySeries(n=n, grid=np.asarray(grid, float), values=matrix, labels=labels)


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

def read_price_csv(path: str | Path) -> PricePanel:
    """Parse a date,ticker,close CSV into a monthly panel.

    Trading days in a month are the union of dates seen for that month;
    tickers missing any trading day in any month are dropped with a warning.
    """
    path = Path(path)
    by_month: dict[str, dict[str, dict[str, float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["date", "ticker", "close"]:
            raise ValueError(f"{path}: expected header date,ticker,close, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                day = datetime.date.fromisoformat(row["date"])
            except (TypeError, ValueError):
                raise ValueError(f"{path} line {lineno}: bad ISO date {row['date']!r}") from None
            ticker = row["ticker"]
            if not ticker:
                raise ValueError(f"{path} line {lineno}: empty ticker")
            try:
                close = float(row["close"])
            except (TypeError, ValueError):
                raise ValueError(f"{path} line {lineno}: bad close {row['close']!r}") from None
            if not np.isfinite(close) or close <= 0:
                raise ValueError(f"{path} line {lineno}: close must be positive, got {close}")
            month = f"{day.year:04d}-{day.month:02d}"
            slot = by_month.setdefault(month, {}).setdefault(row["date"], {})
            if ticker in slot:
                raise ValueError(f"{path} line {lineno}: duplicate ({row['date']}, {ticker})")
            slot[ticker] = close
    if not by_month:
        raise ValueError(f"{path}: no data rows")

    month_keys = tuple(sorted(by_month))
    month_days = {key: sorted(by_month[key]) for key in month_keys}
    all_tickers = sorted({t for days in by_month.values() for row in days.values() for t in row})
    complete = [
        t
        for t in all_tickers
        if all(t in by_month[key][d] for key in month_keys for d in month_days[key])
    ]
    dropped = tuple(t for t in all_tickers if t not in complete)
    if dropped:
        logger.warning(
            "dropping %d ticker(s) with incomplete months: %s",
            len(dropped),
            ", ".join(dropped),
        )
    if len(complete) < 2:
        raise ValueError(f"{path}: fewer than 2 tickers with complete data")
    closes = tuple(
        np.array([[by_month[key][d][t] for d in month_days[key]] for t in complete])
        for key in month_keys
    )
    return PricePanel(
        tickers=tuple(complete), month_keys=month_keys, closes=closes, dropped=dropped
    )


def write_dissim_csv(path: str | Path, series: DissimilaritySeries) -> None:
    """Long format: i,j,t,d with 1-based object indices, i < j."""
    idx = pair_indices(series.n)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "t", "d"])
        for r in range(len(idx)):
            i, j = int(idx[r, 0]) + 1, int(idx[r, 1]) + 1
            for k, t in enumerate(series.grid):
                writer.writerow([i, j, repr(float(t)), repr(float(series.values[r, k]))])


def read_dissim_csv(path: str | Path) -> DissimilaritySeries:
    """Parse the long i,j,t,d format; every pair must appear at every time."""
    path = Path(path)
    entries: dict[tuple[int, int, float], float] = {}
    n = 0
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["i", "j", "t", "d"]:
            raise ValueError(f"{path}: expected header i,j,t,d, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                i, j = int(row["i"]), int(row["j"])
                t, d = float(row["t"]), float(row["d"])
            except (TypeError, ValueError):
                raise ValueError(f"{path} line {lineno}: malformed row {row}") from None
            if not 1 <= i < j:
                raise ValueError(f"{path} line {lineno}: need 1 <= i < j, got ({i}, {j})")
            if not np.isfinite(d) or d < 0:
                raise ValueError(f"{path} line {lineno}: d must be finite and nonnegative")
            if (i, j, t) in entries:
                raise ValueError(f"{path} line {lineno}: duplicate entry ({i}, {j}, {t})")
            entries[(i, j, t)] = d
            n = max(n, j)
    if n < 2:
        raise ValueError(f"{path}: no pairs found")
    grid = np.array(sorted({t for (_, _, t) in entries}))
    values = np.full((pair_count(n), len(grid)), np.nan)
    pos = {float(t): k for k, t in enumerate(grid)}
    for (i, j, t), d in entries.items():
        values[pair_row(i - 1, j - 1), pos[t]] = d
    if np.isnan(values).any():
        missing = int(np.isnan(values).sum())
        raise ValueError(f"{path}: incomplete table, {missing} (pair, time) cells missing")
    return DissimilaritySeries(n=n, grid=grid, values=values)


def write_super_csv(path: str | Path, series: DissimilaritySeries) -> None:
    """Wide format: i,j then one column per time point."""
    idx = pair_indices(series.n)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j"] + [repr(float(t)) for t in series.grid])
        for r in range(len(idx)):
            writer.writerow(
                [int(idx[r, 0]) + 1, int(idx[r, 1]) + 1]
                + [repr(float(v)) for v in series.values[r]]
            )


def read_super_csv(path: str | Path) -> DissimilaritySeries:
    """Parse the wide super-matrix format back into a series."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["i", "j"]:
            raise ValueError(f"{path}: expected header i,j,<times...>")
        grid = np.array([float(t) for t in header[2:]])
        rows = []
        pairs = []
        for lineno, row in enumerate(reader, start=2):
            try:
                pairs.append((int(row[0]), int(row[1])))
                rows.append([float(v) for v in row[2:]])
            except (IndexError, ValueError):
                raise ValueError(f"{path} line {lineno}: malformed row") from None
    if not pairs:
        raise ValueError(f"{path}: no data rows")
    n = max(j for _, j in pairs)
    expected = [(int(i) + 1, int(j) + 1) for i, j in pair_indices(n)]
    if pairs != expected:
        raise ValueError(f"{path}: pair rows must follow (1,2),(1,3),(2,3),(1,4),... order")
    return DissimilaritySeries(n=n, grid=grid, values=np.array(rows))
