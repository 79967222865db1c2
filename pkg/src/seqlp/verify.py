"""Independent checks of a designed test.

Everything here works from the kernels alone and does not touch the LP:
value iteration for the cost-to-go, linear (Fredholm-type) equations for error
probabilities, cost derivatives and run-lengths, finite differences of the dual
objective, and the sublinear scaling bound of the cost-to-go in the likelihood
ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, log_warp
from .kernels import MeasureTag, TransitionKernel, hit_mass

# below this many unknowns linear systems are solved by sparse factorization
DIRECT_LIMIT = 2_000


class VerificationError(RuntimeError):
    pass


class FredholmError(VerificationError):
    """The continuation system is (close to) singular."""

    def __init__(self, message: str, spectral_estimate: float):
        super().__init__(f"{message} (spectral radius estimate {spectral_estimate:.6g})")
        self.spectral_estimate = spectral_estimate


def _stop_cost(lam, grid: Grid) -> np.ndarray:
    return np.minimum(float(lam[0]), float(lam[1]) * grid.cell_z)


def bellman_apply(rho: np.ndarray, lam, kernel: TransitionKernel) -> np.ndarray:
    """``T(rho) = min(lam0 * z0, lam1 * z1, 1 + rho @ H)``."""
    return np.minimum(_stop_cost(lam, kernel.grid), 1.0 + kernel.expect(np.asarray(rho, dtype=float)))


@dataclass(frozen=True, eq=False)
class ValueField:
    values: np.ndarray
    lam: Tuple[float, float]
    iterations: int
    final_delta: float
    converged: bool = True

    def anchor(self, grid: Grid) -> float:
        return float(self.values[grid.anchor_index])


def value_iteration(
    lam,
    kernel: TransitionKernel,
    tol: float = 1e-11,
    max_iters: int = 200_000,
) -> ValueField:
    """Iterate the Bellman operator from the stopping cost until it settles.

    Every iterate is checked to lie elementwise below its predecessor.
    """
    lam = (float(lam[0]), float(lam[1]))
    if min(lam) < 0:
        raise ValueError("multipliers must be nonnegative")
    g = _stop_cost(lam, kernel.grid)
    cur = g.copy()
    delta = math.inf
    for it in range(1, max_iters + 1):
        nxt = np.minimum(g, 1.0 + kernel.expect(cur))
        rise = float((nxt - cur).max(initial=0.0))
        if rise > 1e-12 * (1.0 + float(np.abs(cur).max(initial=0.0))):
            raise VerificationError(f"value iteration increased a cell by {rise:.3g} at sweep {it}")
        delta = float(np.abs(nxt - cur).max(initial=0.0))
        cur = nxt
        if delta <= tol:
            return ValueField(cur, lam, it, delta, True)
    return ValueField(cur, lam, max_iters, delta, False)


def _masks(masks):
    """Accept a design solution or a ``(decide_h1, decide_h0, continue)`` triple."""
    if hasattr(masks, "continue_mask"):
        return masks.stop_decide_h1_mask, masks.stop_decide_h0_mask, masks.continue_mask
    h1, h0, cont = (np.asarray(m, dtype=bool) for m in masks)
    if np.any(h1 & h0) or np.any(cont & (h1 | h0)) or not np.all(h1 | h0 | cont):
        raise ValueError("masks must partition the grid cells")
    return h1, h0, cont


def _spectral_estimate(sub: sp.csr_matrix, iters: int = 60) -> float:
    if sub.shape[0] == 0:
        return 0.0
    v = np.full(sub.shape[0], 1.0 / math.sqrt(sub.shape[0]))
    est = 0.0
    for _ in range(iters):
        w = sub @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        est = norm / float(np.linalg.norm(v))
        v = w / norm
    return est


def solve_continuation(
    kernel: TransitionKernel,
    cont: np.ndarray,
    rhs: np.ndarray,
    tol: float = 1e-12,
    max_iters: int = 1_000_000,
) -> Tuple[np.ndarray, float]:
    """Solve ``x = rhs + K x`` on the continuation cells, ``K = H^T`` restricted.

    Returns the solution on the continuation cells and a spectral-radius
    estimate of ``K``. Small systems are factorized, larger ones solved by the
    fixed-point iteration, which converges because ``K`` is sub-stochastic with
    escape mass.
    """
    idx = np.flatnonzero(cont)
    if idx.size == 0:
        return np.zeros(0), 0.0
    sub = kernel.transposed[idx][:, idx].tocsr()
    if idx.size <= DIRECT_LIMIT:
        mat = (sp.identity(idx.size, format="csc") - sub.tocsc()).tocsc()
        try:
            x = spla.splu(mat).solve(rhs)
        except RuntimeError:
            raise FredholmError("continuation system is singular", _spectral_estimate(sub)) from None
        if not np.all(np.isfinite(x)) or float(np.abs(x - rhs - sub @ x).max()) > 1e-8 * (1 + np.abs(x).max()):
            raise FredholmError("continuation system is near-singular", _spectral_estimate(sub))
        return x, _spectral_estimate(sub)
    x = rhs.copy()
    prev_step = math.inf
    ratio = 0.0
    for _ in range(max_iters):
        nxt = rhs + sub @ x
        step = float(np.abs(nxt - x).max())
        x = nxt
        if prev_step < math.inf and prev_step > 0:
            ratio = step / prev_step
        if step <= tol * (1.0 + float(np.abs(x).max())):
            return x, ratio
        if not math.isfinite(step) or (ratio >= 1.0 and step > prev_step * 1.5 and step > 1e6):
            raise FredholmError("fixed-point iteration diverges", ratio)
        prev_step = step
    raise FredholmError("fixed-point iteration did not converge", ratio)


@dataclass(frozen=True, eq=False)
class ErrorField:
    alpha0: np.ndarray
    alpha1: np.ndarray
    anchor_values: Tuple[float, float]
    spectral_estimates: Tuple[float, float] = (float("nan"), float("nan"))


def fredholm_errors(
    kernel_p0: TransitionKernel,
    kernel_p1: TransitionKernel,
    masks,
    tol: float = 1e-12,
) -> ErrorField:
    """Conditional error probabilities of the stopping rule given by ``masks``.

    ``alpha0`` is the P0-probability of ending in the decide-H1 region and
    ``alpha1`` the P1-probability of ending in the decide-H0 region, from every
    cell.
    """
    if kernel_p0.measure is not MeasureTag.P0 or kernel_p1.measure is not MeasureTag.P1:
        raise ValueError("expected the P0 kernel first and the P1 kernel second")
    h1, h0, cont = _masks(masks)
    grid = kernel_p0.grid
    out, radii = [], []
    for kernel, target in ((kernel_p0, h1), (kernel_p1, h0)):
        field = target.astype(float)
        rhs = hit_mass(kernel, target)[cont]
        x, radius = solve_continuation(kernel, cont, rhs, tol)
        field[cont] = x
        out.append(field)
        radii.append(radius)
    anchor = grid.anchor_index
    return ErrorField(out[0], out[1], (float(out[0][anchor]), float(out[1][anchor])), tuple(radii))


def fredholm_derivative(
    kernel_p0: TransitionKernel,
    kernel_p1: TransitionKernel,
    masks,
    tol: float = 1e-12,
) -> Tuple[np.ndarray, np.ndarray]:
    """Derivatives of the cost-to-go in ``lam0`` and ``lam1``.

    ``r_i = z_i * H^i(S_i) + integral of r_i over continuation cells under P0``,
    where ``S_0`` is the decide-H1 region and ``S_1`` the decide-H0 region.
    """
    h1, h0, cont = _masks(masks)
    grid = kernel_p0.grid
    z = (np.ones(grid.size), grid.cell_z)
    out = []
    for i, (kernel, target) in enumerate(((kernel_p0, h1), (kernel_p1, h0))):
        field = np.where(target, z[i], 0.0)
        rhs = (z[i] * hit_mass(kernel, target))[cont]
        x, _ = solve_continuation(kernel_p0, cont, rhs, tol)
        field[cont] = x
        out.append(field)
    return out[0], out[1]


def run_length(kernel: TransitionKernel, continue_mask: np.ndarray, tol: float = 1e-12) -> Tuple[np.ndarray, float]:
    """Expected number of further samples from every cell, and its anchor value."""
    cont = np.asarray(continue_mask, dtype=bool)
    field = np.zeros(kernel.grid.size)
    x, _ = solve_continuation(kernel, cont, np.ones(int(cont.sum())), tol)
    field[cont] = x
    return field, float(field[kernel.grid.anchor_index])


def dual_objective(lam, gamma, kernel: TransitionKernel, tol: float = 1e-11) -> float:
    """``rho_lam[anchor] - lam . gamma`` with ``rho_lam`` from value iteration."""
    vf = value_iteration(lam, kernel, tol)
    if not vf.converged:
        raise VerificationError("value iteration did not converge")
    return vf.anchor(kernel.grid) - float(lam[0]) * gamma[0] - float(lam[1]) * gamma[1]


def fd_derivative(lam, i: int, kernel: TransitionKernel, epsilon: Optional[float] = None, tol: float = 1e-12) -> float:
    """Central difference of the value-iteration anchor value in ``lam_i``."""
    lam = np.array(lam, dtype=float)
    if epsilon is None:
        epsilon = 1e-3 * lam[i]
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    anchor = kernel.grid.anchor_index
    vals = []
    for sign in (1.0, -1.0):
        shifted = lam.copy()
        shifted[i] = max(lam[i] + sign * epsilon, 0.0)
        vf = value_iteration(shifted, kernel, tol)
        if not vf.converged:
            raise VerificationError("value iteration did not converge")
        vals.append(vf.values[anchor])
    width = (lam[i] + epsilon) - max(lam[i] - epsilon, 0.0)
    return float((vals[0] - vals[1]) / width)


@dataclass(frozen=True)
class RichardsonEstimate:
    coarse: float
    fine: float
    extrapolated: float
    truncation: float


def richardson_derivative(lam, i: int, kernel: TransitionKernel, epsilon: Optional[float] = None) -> RichardsonEstimate:
    """Central differences with ``epsilon`` and ``epsilon / 2`` and their extrapolation."""
    if epsilon is None:
        epsilon = 1e-3 * float(lam[i])
    coarse = fd_derivative(lam, i, kernel, epsilon)
    fine = fd_derivative(lam, i, kernel, epsilon / 2.0)
    extrapolated = fine + (fine - coarse) / 3.0
    return RichardsonEstimate(coarse, fine, extrapolated, abs(fine - coarse))


@dataclass(frozen=True)
class ScalingReport:
    scale: Tuple[float, float]
    checked: int
    max_violation: float
    max_excess: float  # violation beyond the interpolation budget

    @property
    def passed(self) -> bool:
        return self.max_excess <= 0.0


def scaling_bounds_check(
    lam,
    kernel: TransitionKernel,
    a,
    base: Optional[ValueField] = None,
    tol: float = 1e-11,
) -> ScalingReport:
    """Check ``min(a0, a1, 1) rho(z) <= rho(a0 z0, a1 z1) <= max(a0, a1, 1) rho(z)``.

    Under P0 the first likelihood ratio stays constant, so scaling it by ``a0``
    is the same as scaling ``lam0``; scaling the second one shifts the
    log-ratio by ``log(a1)``. The scaled cost-to-go is interpolated linearly in
    the warped coordinate, and each cell is allowed a violation of twice the
    local difference of the interpolated field plus the solver tolerance.
    """
    a0, a1 = (float(v) for v in a)
    if a0 <= 0 or a1 <= 0:
        raise ValueError("scalings must be positive")
    grid = kernel.grid
    lam = (float(lam[0]), float(lam[1]))
    if base is None:
        base = value_iteration(lam, kernel, tol)
    scaled = value_iteration((a0 * lam[0], lam[1]), kernel, tol)
    shift = math.log(a1)
    t = grid.t_points
    target_s = grid.s_points + shift
    inside = (target_s >= grid.s_points[0]) & (target_s <= grid.s_points[-1])
    target_t = log_warp(target_s, grid.beta)
    lo_f, hi_f = min(a0, a1, 1.0), max(a0, a1, 1.0)
    checked, worst, excess = 0, 0.0, -math.inf
    for k in range(grid.m_theta):
        sl = slice(k * grid.m_z, (k + 1) * grid.m_z)
        row = scaled.values[sl]
        ref = base.values[sl]
        interp = np.interp(target_t, t, row)
        hi_idx = np.clip(np.searchsorted(t, target_t), 1, grid.m_z - 1)
        local = np.abs(row[hi_idx] - row[hi_idx - 1])
        budget = 2.0 * local + 10.0 * tol * (1.0 + np.abs(ref))
        under = lo_f * ref - interp
        over = interp - hi_f * ref
        viol = np.maximum(np.maximum(under, over), 0.0)[inside]
        if viol.size:
            checked += viol.size
            worst = max(worst, float(viol.max()))
            excess = max(excess, float((viol - budget[inside]).max()))
    return ScalingReport((a0, a1), checked, worst, max(excess, 0.0) if excess > 0 else 0.0)
