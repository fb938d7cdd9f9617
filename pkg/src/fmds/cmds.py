"""Classical MDS and coefficient initialization for the trajectory fit."""

from __future__ import annotations

from typing import Literal

import numpy as np

from .basis import BasisSpec, basis_matrix
from .coeffs import CoeffSet
from .dissim import DissimilaritySeries

InitStrategy = Literal["mean-matrix", "per-timepoint"]


def classical_mds(dmat: np.ndarray, p: int) -> np.ndarray:
    """Embed a symmetric dissimilarity matrix into p dimensions.

    Double-centers the squared dissimilarities, takes the top-p eigenpairs
    (negative eigenvalues clamped to zero) and scales eigenvectors by the
    square roots of the eigenvalues. Eigenvector signs are fixed so the
    largest-magnitude entry is positive, making the output deterministic;
    rows are re-centered at the origin.
    """
    dmat = np.asarray(dmat, dtype=float)
    if dmat.ndim != 2 or dmat.shape[0] != dmat.shape[1]:
        raise ValueError(f"dissimilarity matrix must be square, got {dmat.shape}")
    n = dmat.shape[0]
    if not np.all(np.isfinite(dmat)):
        raise ValueError("dissimilarity matrix must be finite")
    scale = max(1.0, float(np.abs(dmat).max()))
    if np.abs(dmat - dmat.T).max() > 1e-12 * scale:
        raise ValueError("dissimilarity matrix is not symmetric")
    if not 1 <= p < n:
        raise ValueError(f"embedding dimension must satisfy 1 <= p < n, got p={p}, n={n}")

    centering = np.eye(n) - np.full((n, n), 1.0 / n)
    gram = -0.5 * centering @ (dmat * dmat) @ centering
    evals, evecs = np.linalg.eigh(gram)
    top = np.argsort(evals)[::-1][:p]
    lams = np.maximum(evals[top], 0.0)
    vecs = evecs[:, top]
    for c in range(p):
        k = int(np.argmax(np.abs(vecs[:, c])))
        if vecs[k, c] < 0:
            vecs[:, c] = -vecs[:, c]
    points = vecs * np.sqrt(lams)[None, :]
    return points - points.mean(axis=0)


def _procrustes(moving: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal Q minimizing ||moving @ Q - target||_F (points as rows)."""
    u, _, vt = np.linalg.svd(moving.T @ target)
    return u @ vt


def init_coeffs(
    series: DissimilaritySeries,
    spec: BasisSpec,
    p: int,
    strategy: InitStrategy = "mean-matrix",
) -> CoeffSet:
    """Initial coefficient matrices from classical MDS of the dissimilarities.

    mean-matrix embeds the time-averaged dissimilarity matrix once and uses
    the result as a constant curve (every basis column equal, valid because
    the basis sums to one). per-timepoint embeds each time slice, chains
    successive solutions with orthogonal Procrustes so frames stay
    consistent, then regresses the aligned points on the basis; with fewer
    time points than basis functions the regression falls back to the
    minimum-norm solution.
    """
    if strategy not in ("mean-matrix", "per-timepoint"):
        raise ValueError(f"unknown init strategy {strategy!r}")
    if p < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {p}")
    n, q = series.n, spec.q

    if strategy == "mean-matrix":
        mean_mat = np.zeros((n, n))
        for k in range(series.m):
            mean_mat += series.matrix_at(k)
        mean_mat /= series.m
        points = classical_mds(mean_mat, p)
        mats = np.repeat(points[:, :, None], q, axis=2)
        return CoeffSet(mats, labels=series.labels)

    slices = [classical_mds(series.matrix_at(k), p) for k in range(series.m)]
    aligned = [slices[0]]
    for k in range(1, series.m):
        rot = _procrustes(slices[k], aligned[-1])
        aligned.append(slices[k] @ rot)
    stacked = np.stack(aligned)  # (m, n, p)
    bmat = basis_matrix(spec, series.grid)
    mats = np.empty((n, p, q))
    for i in range(n):
        sol, *_ = np.linalg.lstsq(bmat, stacked[:, i, :], rcond=None)
        mats[i] = sol.T
    return CoeffSet(mats, labels=series.labels)
