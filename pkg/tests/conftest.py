"""Shared helpers for building small random problem instances."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pytest

from fmds import CoeffSet, DissimilaritySeries, euclidean_series, make_basis


def random_instance(
    rng: np.random.Generator,
    n: int = 4,
    p: int = 2,
    interior_knots: int = 5,
    m: int = 6,
    noise: float = 0.0,
):
    """A basis, a coefficient set, and a series over the integer grid 1..m.

    With noise=0 the series is exactly realizable by the returned truth set.
    """
    spec = make_basis(interior_knots, 1.0, float(m))
    truth = CoeffSet(rng.standard_normal((n, p, spec.q)))
    grid = np.arange(1, m + 1, dtype=float)
    series = euclidean_series(truth, spec, grid)
    if noise > 0.0:
        values = series.values + noise * rng.random(series.values.shape)
        series = DissimilaritySeries(n=n, grid=grid, values=values)
    return spec, truth, series


def random_orthogonal(rng: np.random.Generator, p: int, det_sign: int = 1) -> np.ndarray:
    """Haar-ish random orthogonal matrix with the requested determinant sign."""
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    q = q * np.sign(np.diag(r))
    if np.sign(np.linalg.det(q)) != det_sign:
        q[:, -1] = -q[:, -1]
    return q


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)


def build_stock_fixture(
    out_dir: Path,
    n: int = 10,
    months: int = 12,
    days: int = 21,
    seed: int = 5,
):
    """Price CSV whose correlation dissimilarities are exactly realizable.

    Construction: place n smooth 2-D trajectories close enough together that
    all pairwise distances stay below 1/2, interpret 1 - 2*distance as a
    target correlation matrix per month (verified positive semidefinite),
    factor it, and embed the factors as mean-zero unit-norm daily price
    deviations. Pearson correlation of the written prices then reproduces
    the trajectory distances exactly, up to floating-point error.

    Returns (prices_path, series, truth, spec).
    """
    rng = np.random.default_rng(seed)
    spec = make_basis(6, 1.0, float(months))  # 10 basis functions
    angles = 2 * np.pi * np.arange(n) / n
    drift = 0.35 * np.cumsum(rng.standard_normal((n, spec.q)), axis=1) / np.sqrt(spec.q)
    radius = 0.16 + 0.04 * rng.random((n, spec.q))
    mats = np.stack(
        [
            radius * np.cos(angles[:, None] + drift),
            radius * np.sin(angles[:, None] + drift),
        ],
        axis=1,
    )  # (n, 2, q)
    truth = CoeffSet(mats, labels=tuple(f"S{i+1:02d}" for i in range(n)))
    grid = np.arange(1, months + 1, dtype=float)
    series = euclidean_series(truth, spec, grid)
    if series.values.max() >= 0.5:
        raise AssertionError("fixture construction drifted out of range")

    helmert = np.linalg.qr(
        np.concatenate([np.ones((days, 1)), np.eye(days)[:, : days - 1]], axis=1)
    )[0][:, 1:]  # orthonormal basis of the mean-zero subspace

    prices_path = out_dir / "prices.csv"
    with prices_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "ticker", "close"])
        for k in range(months):
            corr = 1.0 - 2.0 * series.matrix_at(k)
            evals, evecs = np.linalg.eigh(corr)
            if evals.min() < -1e-9:
                raise AssertionError(f"month {k}: correlation target not PSD ({evals.min()})")
            factor = evecs * np.sqrt(np.maximum(evals, 0.0))[None, :]  # (n, n)
            deviations = factor @ helmert[:, :n].T  # (n, days), unit rows, zero mean
            closes = 60.0 + 4.0 * np.arange(n)[:, None] + 10.0 * deviations
            for d in range(days):
                date = f"2018-{k + 1:02d}-{d + 1:02d}"
                for i in range(n):
                    writer.writerow([date, truth.labels[i], repr(float(closes[i, d]))])
    return prices_path, series, truth, spec
