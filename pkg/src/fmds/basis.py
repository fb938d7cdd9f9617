"""Clamped cubic B-spline bases on a closed interval."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

ORDER = 4  # cubic splines throughout


@dataclass(frozen=True)
class BasisSpec:
    """A cubic B-spline family with equally spaced interior knots.

    The knot vector is clamped (boundary knots repeated with multiplicity 4),
    so the q = interior_knots + 4 basis functions are nonnegative and sum to
    one everywhere on [domain_lo, domain_hi].
    """

    domain_lo: float
    domain_hi: float
    interior_knots: int

    def __post_init__(self) -> None:
        if not self.domain_lo < self.domain_hi:
            raise ValueError(
                f"invalid domain: need domain_lo < domain_hi, "
                f"got [{self.domain_lo}, {self.domain_hi}]"
            )
        if self.interior_knots < 1:
            raise ValueError(f"invalid knot count: need at least 1, got {self.interior_knots}")

    @property
    def q(self) -> int:
        return self.interior_knots + ORDER

    @cached_property
    def knots(self) -> np.ndarray:
        """Full clamped knot vector of length q + 4."""
        interior = np.linspace(self.domain_lo, self.domain_hi, self.interior_knots + 2)[1:-1]
        return np.concatenate(
            [np.full(ORDER, float(self.domain_lo)), interior, np.full(ORDER, float(self.domain_hi))]
        )


def make_basis(interior_knots: int, domain_lo: float, domain_hi: float) -> BasisSpec:
    """Build a cubic basis with the given number of equally spaced interior knots."""
    return BasisSpec(float(domain_lo), float(domain_hi), int(interior_knots))


def _nonzero_window(knots: np.ndarray, span: int, t: float) -> np.ndarray:
    # de Boor triangular recurrence for the 4 basis values active on
    # [knots[span], knots[span+1]).
    vals = np.empty(ORDER)
    left = np.empty(ORDER)
    right = np.empty(ORDER)
    vals[0] = 1.0
    for j in range(1, ORDER):
        left[j] = t - knots[span + 1 - j]
        right[j] = knots[span + j] - t
        saved = 0.0
        for r in range(j):
            tmp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        vals[j] = saved
    return vals


def eval_basis(spec: BasisSpec, t: float) -> np.ndarray:
    """Evaluate all q basis functions at t.

    Returns a length-q vector of nonnegative weights summing to one; at most
    4 consecutive entries are nonzero. Evaluation at the right endpoint takes
    the limit from the left, so the last basis function equals one there.
    """
    t = float(t)
    if not (spec.domain_lo <= t <= spec.domain_hi):
        raise ValueError(
            f"t={t} outside basis domain [{spec.domain_lo}, {spec.domain_hi}]"
        )
    q = spec.q
    knots = spec.knots
    if t >= spec.domain_hi:
        span = q - 1
    else:
        span = int(np.searchsorted(knots, t, side="right")) - 1
        span = min(max(span, ORDER - 1), q - 1)
    out = np.zeros(q)
    out[span - ORDER + 1 : span + 1] = _nonzero_window(knots, span, t)
    return out


def basis_matrix(spec: BasisSpec, grid: np.ndarray) -> np.ndarray:
    """Stack eval_basis over a grid: shape (len(grid), q)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1:
        raise ValueError(f"grid must be one-dimensional, got shape {grid.shape}")
    return np.stack([eval_basis(spec, t) for t in grid])
