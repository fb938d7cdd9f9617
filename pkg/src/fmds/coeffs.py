"""Coefficient sets that parameterize low-dimensional spline trajectories."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .basis import BasisSpec, basis_matrix, make_basis


@dataclass(frozen=True)
class CoeffSet:
    """n coefficient matrices, each p x q, defining trajectories C_i b(t).

    The backing array is copied on construction and marked read-only; treat
    instances as immutable values.
    """

    mats: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        arr = np.array(self.mats, dtype=float, copy=True)
        if arr.ndim != 3:
            raise ValueError(f"mats must have shape (n, p, q), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficient entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "mats", arr)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != arr.shape[0]:
                raise ValueError(f"{len(labels)} labels for {arr.shape[0]} objects")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.mats.shape[0]

    @property
    def p(self) -> int:
        return self.mats.shape[1]

    @property
    def q(self) -> int:
        return self.mats.shape[2]

    def evaluate(self, spec: BasisSpec, grid: np.ndarray) -> np.ndarray:
        """Trajectory positions at the grid points: shape (n, p, len(grid))."""
        if spec.q != self.q:
            raise ValueError(f"basis has q={spec.q} but coefficients have q={self.q}")
        bmat = basis_matrix(spec, grid)
        return np.matmul(self.mats, bmat.T)

    def label_index(self, label: str) -> int:
        """Position of an object by label, or by 1-based index when unlabeled."""
        if self.labels is not None:
            try:
                return self.labels.index(label)
            except ValueError:
                raise KeyError(f"unknown object label {label!r}") from None
        try:
            idx = int(label) - 1
        except ValueError:
            raise KeyError(f"unlabeled coefficient set: expected a 1-based index, got {label!r}")
        if not 0 <= idx < self.n:
            raise KeyError(f"object index {label} out of range 1..{self.n}")
        return idx


def save_coeffs(
    path: str | Path,
    coeffs: CoeffSet,
    spec: BasisSpec,
    meta: Mapping[str, Any] | None = None,
) -> None:
    """Write a coefficient CSV (object,row,col,value) plus a JSON sidecar.

    The sidecar records the basis (interior knot count and domain), shapes,
    labels and any extra metadata, so the set can be reloaded exactly.
    """
    if spec.q != coeffs.q:
        raise ValueError(f"basis has q={spec.q} but coefficients have q={coeffs.q}")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object", "row", "col", "value"])
        for i in range(coeffs.n):
            name = coeffs.labels[i] if coeffs.labels is not None else str(i + 1)
            for r in range(coeffs.p):
                for c in range(coeffs.q):
                    writer.writerow([name, r + 1, c + 1, repr(float(coeffs.mats[i, r, c]))])
    sidecar = {
        "n": coeffs.n,
        "p": coeffs.p,
        "q": coeffs.q,
        "interior_knots": spec.interior_knots,
        "domain": [spec.domain_lo, spec.domain_hi],
        "labels": list(coeffs.labels) if coeffs.labels is not None else None,
    }
    if meta:
        sidecar.update(dict(meta))
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_coeffs(path: str | Path) -> tuple[CoeffSet, BasisSpec, dict[str, Any]]:
    """Load a coefficient CSV written by save_coeffs, with its sidecar."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    n, p, q = meta["n"], meta["p"], meta["q"]
    labels = meta["labels"]
    spec = make_basis(meta["interior_knots"], meta["domain"][0], meta["domain"][1])
    if spec.q != q:
        raise ValueError(f"sidecar q={q} inconsistent with interior_knots={meta['interior_knots']}")
    order = {name: i for i, name in enumerate(labels)} if labels else None
    mats = np.full((n, p, q), np.nan)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["object", "row", "col", "value"]:
            raise ValueError(f"{path}: expected header object,row,col,value")
        for lineno, row in enumerate(reader, start=2):
            try:
                i = order[row["object"]] if order else int(row["object"]) - 1
                r = int(row["row"]) - 1
                c = int(row["col"]) - 1
                mats[i, r, c] = float(row["value"])
            except (KeyError, ValueError, IndexError) as exc:
                raise ValueError(f"{path} line {lineno}: bad coefficient row ({exc})") from None
    if np.isnan(mats).any():
        raise ValueError(f"{path}: incomplete coefficient table")
    coeffs = CoeffSet(mats, labels=tuple(labels) if labels else None)
    return coeffs, spec, meta
