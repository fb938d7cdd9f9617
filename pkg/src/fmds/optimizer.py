"""Pairwise-Adam stochastic descent for the trajectory embedding loss.

The total loss is sum over pairs i<j and grid points t_k of
[d_ij(t_k)^2 - ||C_i b(t_k) - C_j b(t_k)||^2]^2. Descent repeatedly draws a
start index h, then for each partner j > h runs an Adam loop on the pair
(C_h, C_j) with fresh zero moments until the per-step coefficient change
drops below the convergence threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSpec, basis_matrix
from .coeffs import CoeffSet
from .dissim import DissimilaritySeries, pair_indices, pair_row

logger = logging.getLogger(__name__)

try:  # compiled pair loop; pure-numpy fallback below keeps identical semantics
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters for the pairwise Adam descent.

    epsilon is the convergence threshold on the Frobenius norm of coefficient
    changes; adam_eps is the small constant added to the square-rooted second
    moment in the update denominator. pair_step_cap bounds any single pair
    loop so pathological pairs cannot stall the fit.
    """

    alpha: float = 0.001
    gamma1: float = 0.9
    gamma2: float = 0.999
    adam_eps: float = 1e-8
    epsilon: float = 0.00075
    max_sweeps: int = 1000
    pair_step_cap: int = 10_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (0 <= self.gamma1 < 1 and 0 <= self.gamma2 < 1):
            raise ValueError("decay rates must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if self.pair_step_cap < 1:
            raise ValueError("pair_step_cap must be at least 1")


@dataclass
class AdamPairState:
    """First and second moment estimates for one (h, j) pair."""

    m_h: np.ndarray
    v_h: np.ndarray
    m_j: np.ndarray
    v_j: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, p: int, q: int) -> "AdamPairState":
        return cls(
            m_h=np.zeros((p, q)),
            v_h=np.zeros((p, q)),
            m_j=np.zeros((p, q)),
            v_j=np.zeros((p, q)),
        )


@dataclass(frozen=True)
class FitResult:
    coeffs: CoeffSet
    final_loss: float
    sweeps_used: int
    converged: bool
    loss_trace: np.ndarray = field(repr=False)  # value at init, then one per sweep
    pair_cap_hits: int = 0


def _check_shapes(coeffs: CoeffSet, series: DissimilaritySeries, spec: BasisSpec) -> None:
    if coeffs.n != series.n:
        raise ValueError(f"coefficients have n={coeffs.n} but series has n={series.n}")
    if coeffs.q != spec.q:
        raise ValueError(f"coefficients have q={coeffs.q} but basis has q={spec.q}")


def target_value(
    coeffs: CoeffSet, series: DissimilaritySeries, spec: BasisSpec
) -> float:
    """Total squared-residual loss over all pairs and grid points."""
    _check_shapes(coeffs, series, spec)
    positions = coeffs.evaluate(spec, series.grid)  # (n, p, m)
    idx = pair_indices(coeffs.n)
    diffs = positions[idx[:, 0]] - positions[idx[:, 1]]
    sq = np.einsum("rpm,rpm->rm", diffs, diffs)
    resid = series.values**2 - sq
    return float(np.sum(resid * resid))


def pair_loss(
    h: int, j: int, coeffs: CoeffSet, series: DissimilaritySeries, spec: BasisSpec
) -> float:
    """Loss contribution of the single pair (h, j), 0-based, h < j."""
    _check_shapes(coeffs, series, spec)
    if not 0 <= h < j < coeffs.n:
        raise IndexError(f"need 0 <= h < j < {coeffs.n}, got ({h}, {j})")
    bmat = basis_matrix(spec, series.grid)
    delta = (coeffs.mats[h] - coeffs.mats[j]) @ bmat.T  # (p, m)
    resid = series.values[pair_row(h, j)] ** 2 - np.einsum("pm,pm->m", delta, delta)
    return float(np.sum(resid * resid))


def pair_gradients(
    h: int, j: int, coeffs: CoeffSet, series: DissimilaritySeries, spec: BasisSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of pair_loss with respect to C_h and C_j.

    The C_j gradient is the exact elementwise negative of the C_h gradient.
    """
    _check_shapes(coeffs, series, spec)
    if not 0 <= h < j < coeffs.n:
        raise IndexError(f"need 0 <= h < j < {coeffs.n}, got ({h}, {j})")
    bmat = basis_matrix(spec, series.grid)
    delta = (coeffs.mats[h] - coeffs.mats[j]) @ bmat.T  # (p, m)
    resid = series.values[pair_row(h, j)] ** 2 - np.einsum("pm,pm->m", delta, delta)
    grad_h = -4.0 * ((delta * resid) @ bmat)
    return grad_h, -grad_h


def adam_pair_step(
    state: AdamPairState,
    grads: tuple[np.ndarray, np.ndarray],
    config: FitConfig,
    c_h: np.ndarray,
    c_j: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, AdamPairState]:
    """One bias-corrected Adam update of both matrices of a pair.

    Pure: returns new coefficient matrices and the advanced state.
    """
    g_h, g_j = grads
    i = state.step + 1
    m_h = config.gamma1 * state.m_h + (1 - config.gamma1) * g_h
    m_j = config.gamma1 * state.m_j + (1 - config.gamma1) * g_j
    v_h = config.gamma2 * state.v_h + (1 - config.gamma2) * (g_h * g_h)
    v_j = config.gamma2 * state.v_j + (1 - config.gamma2) * (g_j * g_j)
    mhat_h = m_h / (1 - config.gamma1**i)
    mhat_j = m_j / (1 - config.gamma1**i)
    vhat_h = v_h / (1 - config.gamma2**i)
    vhat_j = v_j / (1 - config.gamma2**i)
    new_h = c_h - config.alpha * mhat_h / (np.sqrt(vhat_h) + config.adam_eps)
    new_j = c_j - config.alpha * mhat_j / (np.sqrt(vhat_j) + config.adam_eps)
    return new_h, new_j, AdamPairState(m_h=m_h, v_h=v_h, m_j=m_j, v_j=v_j, step=i)


def _total_loss(
    mats: np.ndarray, values_sq: np.ndarray, bmat_t: np.ndarray, idx: np.ndarray
) -> float:
    # Same computation as target_value, on precomputed pieces.
    positions = np.matmul(mats, bmat_t)
    diffs = positions[idx[:, 0]] - positions[idx[:, 1]]
    sq = np.einsum("rpm,rpm->rm", diffs, diffs)
    resid = values_sq - sq
    return float(np.sum(resid * resid))


def _pair_descent(
    mats: np.ndarray,
    h: int,
    j: int,
    dsq_row: np.ndarray,
    bmat: np.ndarray,
    bmat_t: np.ndarray,
    config: FitConfig,
) -> bool:
    """Run the per-pair Adam loop in place; True if the step cap was hit.

    The loop condition is checked before the update lands: when the
    prospective step is already smaller than epsilon it is discarded and the
    loop exits, so an exactly stationary pair never moves. Because the pair
    gradients are exact negatives, the moments of C_j mirror those of C_h
    and both matrices move by the same update with opposite signs;
    maintaining one moment pair reproduces adam_pair_step bitwise.
    """
    c_h = mats[h]
    c_j = mats[j]
    p, q = c_h.shape
    m_acc = np.zeros((p, q))
    v_acc = np.zeros((p, q))
    alpha, g1, g2, eps = config.alpha, config.gamma1, config.gamma2, config.adam_eps
    step = 0
    while True:
        delta = (c_h - c_j) @ bmat_t
        resid = dsq_row - np.einsum("pm,pm->m", delta, delta)
        grad = -4.0 * ((delta * resid) @ bmat)
        step += 1
        m_acc = g1 * m_acc + (1 - g1) * grad
        v_acc = g2 * v_acc + (1 - g2) * (grad * grad)
        mhat = m_acc / (1 - g1**step)
        vhat = v_acc / (1 - g2**step)
        update = alpha * mhat / (np.sqrt(vhat) + eps)
        change = float(np.sqrt(np.sum(update * update)))
        if change < config.epsilon:
            return False
        c_h -= update
        c_j += update
        if step >= config.pair_step_cap:
            return True


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _pair_kernel(coeff, h, j, dsq_row, bmat, alpha, g1, g2, eps, tol, cap):  # pragma: no cover
        p, q = coeff.shape[1], coeff.shape[2]
        m = bmat.shape[0]
        diff = np.empty((p, q))
        grad = np.empty((p, q))
        delta = np.empty(p)
        m_acc = np.zeros((p, q))
        v_acc = np.zeros((p, q))
        step = 0
        g1p = 1.0
        g2p = 1.0
        tol_sq = tol * tol
        while True:
            for a in range(p):
                for c in range(q):
                    diff[a, c] = coeff[h, a, c] - coeff[j, a, c]
                    grad[a, c] = 0.0
            for k in range(m):
                for a in range(p):
                    acc = 0.0
                    for c in range(q):
                        acc += diff[a, c] * bmat[k, c]
                    delta[a] = acc
                sq = 0.0
                for a in range(p):
                    sq += delta[a] * delta[a]
                resid = dsq_row[k] - sq
                for a in range(p):
                    w = delta[a] * resid
                    for c in range(q):
                        grad[a, c] += w * bmat[k, c]
            step += 1
            g1p *= g1
            g2p *= g2
            bias1 = 1.0 - g1p
            bias2 = 1.0 - g2p
            change_sq = 0.0
            for a in range(p):
                for c in range(q):
                    g = -4.0 * grad[a, c]
                    m_acc[a, c] = g1 * m_acc[a, c] + (1.0 - g1) * g
                    v_acc[a, c] = g2 * v_acc[a, c] + (1.0 - g2) * (g * g)
                    upd = alpha * (m_acc[a, c] / bias1) / (np.sqrt(v_acc[a, c] / bias2) + eps)
                    diff[a, c] = upd  # reuse as the update buffer for this step
                    change_sq += upd * upd
            if change_sq < tol_sq:
                return 0
            for a in range(p):
                for c in range(q):
                    coeff[h, a, c] -= diff[a, c]
                    coeff[j, a, c] += diff[a, c]
            if step >= cap:
                return 1


def _run_pair(
    mats: np.ndarray,
    h: int,
    j: int,
    dsq_row: np.ndarray,
    bmat: np.ndarray,
    bmat_t: np.ndarray,
    config: FitConfig,
    engine: str,
) -> bool:
    if engine == "numba":
        return bool(
            _pair_kernel(
                mats,
                h,
                j,
                dsq_row,
                bmat,
                config.alpha,
                config.gamma1,
                config.gamma2,
                config.adam_eps,
                config.epsilon,
                config.pair_step_cap,
            )
        )
    return _pair_descent(mats, h, j, dsq_row, bmat, bmat_t, config)


def _resolve_engine(engine: str) -> str:
    if engine == "auto":
        return "numba" if _HAVE_NUMBA else "numpy"
    if engine == "numba" and not _HAVE_NUMBA:
        raise ValueError("numba engine requested but numba is not installed")
    if engine not in ("numpy", "numba"):
        raise ValueError(f"unknown engine {engine!r}")
    return engine


def fit(
    series: DissimilaritySeries,
    spec: BasisSpec,
    p: int,
    config: FitConfig,
    init: CoeffSet,
    engine: str = "auto",
) -> FitResult:
    """Fit coefficient matrices to a dissimilarity series.

    Each sweep draws a start index h uniformly from the first n-1 objects
    (seeded, so runs are fully reproducible) and relaxes every pair (h, j)
    for j > h. Convergence is declared once every object has been visited
    and no object moved by epsilon or more (Frobenius norm) during the most
    recent sweep that touched it.

    engine selects the per-pair loop implementation: "numpy", "numba", or
    "auto" (numba when available). Both engines implement the same update;
    results agree to floating-point roundoff.
    """
    _check_shapes(init, series, spec)
    if p != init.p:
        raise ValueError(f"requested p={p} but init has p={init.p}")
    n = init.n
    if n < 2:
        raise ValueError("need at least two objects to fit")
    mats = np.array(init.mats, copy=True)
    bmat = basis_matrix(spec, series.grid)
    bmat_t = np.ascontiguousarray(bmat.T)
    dsq = series.values**2
    idx = pair_indices(n)
    rng = np.random.default_rng(config.seed)

    engine = _resolve_engine(engine)
    last_change = np.full(n, np.inf)
    visited = np.zeros(n, dtype=bool)
    trace = [_total_loss(mats, dsq, bmat_t, idx)]
    converged = False
    cap_hits = 0
    sweeps = 0
    for _ in range(config.max_sweeps):
        sweeps += 1
        h = int(rng.integers(0, n - 1))
        before = mats[h:].copy()
        for j in range(h + 1, n):
            if _run_pair(mats, h, j, dsq[pair_row(h, j)], bmat, bmat_t, config, engine):
                cap_hits += 1
        moved = mats[h:] - before
        last_change[h:] = np.sqrt(np.einsum("ipq,ipq->i", moved, moved))
        visited[h:] = True
        trace.append(_total_loss(mats, dsq, bmat_t, idx))
        if visited.all() and float(last_change.max()) < config.epsilon:
            converged = True
            break
    if cap_hits:
        logger.warning("pair step cap reached %d time(s) during fit", cap_hits)

    final = CoeffSet(mats, labels=init.labels)
    return FitResult(
        coeffs=final,
        final_loss=trace[-1],
        sweeps_used=sweeps,
        converged=converged,
        loss_trace=np.array(trace),
        pair_cap_hits=cap_hits,
    )


def with_seed(config: FitConfig, seed: int) -> FitConfig:
    """Copy of a config with a different RNG seed."""
    return replace(config, seed=seed)
