"""Optimal sequential test design by linear programming.

The design problem is the linear program

    maximize    rho[anchor] - gamma0 * lam0 - gamma1 * lam1 (+ c * eta . rho)
    subject to  rho_j <= lam0 * z0_j
                rho_j <= lam1 * z1_j
                rho_j - (rho @ H)_j <= 1          for every grid cell j
                lam, rho >= 0

with ``H`` the one-step kernel under P0 (so ``z0 = 1``). Small programs are
handed to :func:`seqlp.lp.solve_lp` as a whole. Large ones are solved by a
cutting-plane decomposition over the two multipliers: for fixed ``lam`` the
inner maximization over ``rho`` is an optimal stopping problem whose answer is
the Bellman fixed point, found exactly by policy iteration, and every policy it
visits yields a linear upper bound on the objective as a function of ``lam``.
A small master LP over those bounds (also solved with ``solve_lp``) proposes
the next multipliers. The loop stops once the best attained objective is
within tolerance of the master bound.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, build_grid
from .kernels import MeasureTag, TransitionKernel, build_kernel
from .lp import LinearProgram, LpStatus, solve_lp
from .models import Ar1, DomainError, ModelSpec

# problems with more cells than this go through the decomposition
DIRECT_CELL_LIMIT = 1500
# linear systems up to this size are factorized, larger ones solved by GMRES
_DIRECT_SOLVE_LIMIT = 800


class DesignError(RuntimeError):
    """The design LP could not be solved to optimality."""

    def __init__(self, message: str, status: LpStatus = LpStatus.NUMERICAL_FAILURE):
        super().__init__(message)
        self.status = status


class TrivialTestError(DesignError):
    """The optimal test stops before taking a single sample."""

    def __init__(self, message: str):
        super().__init__(message, LpStatus.OPTIMAL)


class RepairError(RuntimeError):
    pass


def _check_gamma(gamma) -> Tuple[float, float]:
    g0, g1 = (float(v) for v in gamma)
    if not (0 < g0 < 1 and 0 < g1 < 1):
        raise DomainError(f"target error probabilities must lie in (0, 1), got {(g0, g1)}")
    return g0, g1


@dataclass(frozen=True, eq=False)
class Regularization:
    c: float
    eta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        object.__setattr__(self, "eta", eta)
        if not self.c >= 0:
            raise DomainError(f"regularization weight c must be nonnegative, got {self.c}")
        if eta.ndim != 1 or np.any(eta < 0) or not np.all(np.isfinite(eta)):
            raise DomainError("eta must be a nonnegative finite vector")


def default_regularization(grid: Grid, gamma, c: Optional[float] = None) -> Regularization:
    """Uniform ``eta`` with ``sum(eta * z0) <= 1`` and ``sum(eta * z1) <= 1``."""
    g0, g1 = _check_gamma(gamma)
    if c is None:
        c = min(g0, g1) / 10.0
    z = grid.cell_z
    weight = 1.0 / max(float(grid.size), float(z.sum()))
    return Regularization(float(c), np.full(grid.size, weight))


@dataclass(frozen=True, eq=False)
class DesignProblem:
    model: ModelSpec
    grid: Grid
    kernel: TransitionKernel
    gamma: Tuple[float, float]
    regularization: Optional[Regularization] = None

    def __post_init__(self):
        object.__setattr__(self, "gamma", _check_gamma(self.gamma))
        if self.kernel.measure is not MeasureTag.P0:
            raise DomainError("the design kernel must be built under P0")
        if self.kernel.grid is not self.grid:
            raise DomainError("kernel and grid do not belong together")
        reg = self.regularization
        if reg is not None:
            if reg.eta.size != self.grid.size:
                raise DomainError("eta needs one weight per grid cell")
            if reg.c >= min(self.gamma):
                raise DomainError(
                    f"regularization weight c={reg.c} must be below min(gamma)={min(self.gamma)}; "
                    "otherwise the program may be unbounded"
                )

    @classmethod
    def build(
        cls,
        model: ModelSpec,
        gamma,
        grid: Optional[Grid] = None,
        regularize: bool = False,
        c: Optional[float] = None,
        **grid_options,
    ) -> "DesignProblem":
        """Grid, kernel and (optionally) default regularization for ``model``."""
        gamma = _check_gamma(gamma)
        if grid is None:
            grid_options.setdefault("gamma", gamma)
            grid = build_grid(model, **grid_options)
        kernel = build_kernel(model, grid, MeasureTag.P0)
        reg = default_regularization(grid, gamma, c) if regularize else None
        return cls(model, grid, kernel, gamma, reg)

    @property
    def z0(self) -> np.ndarray:
        return np.ones(self.grid.size)

    @property
    def z1(self) -> np.ndarray:
        return self.grid.cell_z


def assemble_design_lp(problem: DesignProblem) -> LinearProgram:
    """The design LP over ``(lam0, lam1, rho_1, ..., rho_M)``."""
    m = problem.grid.size
    eye = sp.identity(m, format="csr")
    zeros = sp.csr_matrix((m, 1))
    ones = sp.csr_matrix(np.ones((m, 1)))
    z1 = sp.csr_matrix(problem.z1.reshape(-1, 1))
    cont = (eye - problem.kernel.transposed).tocsr()
    a = sp.vstack(
        [
            sp.hstack([-ones, zeros, eye]),
            sp.hstack([zeros, -z1, eye]),
            sp.hstack([zeros, zeros, cont]),
        ],
        format="csr",
    )
    b = np.concatenate([np.zeros(2 * m), np.ones(m)])
    c = np.zeros(m + 2)
    c[0], c[1] = -problem.gamma[0], -problem.gamma[1]
    if problem.regularization is not None:
        c[2:] += problem.regularization.c * problem.regularization.eta
    c[2 + problem.grid.anchor_index] += 1.0
    names = ["lam0", "lam1"] + [f"rho{j}" for j in range(m)]
    rows = [f"{kind}{j}" for kind in ("stop0_", "stop1_", "cont_") for j in range(m)]
    return LinearProgram(c, a, b, names=names, row_names=rows)


def design_lp_residual(problem: DesignProblem, lam, rho) -> float:
    """Largest violation of the design LP constraints, computed without assembling it."""
    lam0, lam1 = (float(v) for v in lam)
    rho = np.asarray(rho, dtype=float)
    viol = [
        rho - lam0,
        rho - lam1 * problem.z1,
        rho - problem.kernel.expect(rho) - 1.0,
        -rho,
        np.array([-lam0, -lam1]),
    ]
    return max(0.0, max(float(v.max()) for v in viol))


def stopping_cost(lam, grid: Grid) -> np.ndarray:
    """``g = min(lam0 * z0, lam1 * z1)`` on every cell."""
    lam0, lam1 = (float(v) for v in lam)
    return np.minimum(lam0, lam1 * grid.cell_z)


def decides_h1(lam, grid: Grid) -> np.ndarray:
    """Cells where stopping decides H1, i.e. ``lam0 * z0 <= lam1 * z1`` (ties decide H1)."""
    lam0, lam1 = (float(v) for v in lam)
    return lam0 <= lam1 * grid.cell_z


def repair_solution(
    rho: np.ndarray,
    lam,
    kernel: TransitionKernel,
    tol: float = 1e-11,
    max_sweeps: int = 200_000,
) -> np.ndarray:
    """Iterate ``rho <- min(g, 1 + rho @ H)`` until the sup-norm change is at most ``tol``.

    Started from a point satisfying ``rho <= T(rho)``, every sweep is elementwise
    nondecreasing and the limit is the Bellman fixed point.
    """
    g = stopping_cost(lam, kernel.grid)
    cur = np.asarray(rho, dtype=float).copy()
    last = math.inf
    growing = 0
    for _ in range(max_sweeps):
        nxt = np.minimum(g, 1.0 + kernel.expect(cur))
        change = float(np.abs(nxt - cur).max())
        if not math.isfinite(change):
            raise RepairError("repair produced non-finite values; the kernel is broken")
        cur = nxt
        if change <= tol:
            return cur
        growing = growing + 1 if change > last else 0
        if growing > 50:
            raise RepairError("repair sweeps keep growing; the kernel is not sub-stochastic")
        last = change
    raise RepairError(f"repair did not settle within {max_sweeps} sweeps (last change {last:.3g})")


class PolicyKind(enum.Enum):
    STATE_DEPENDENT = "StateDependent"
    CONSTANT = "Constant"


class RowStatus(enum.Enum):
    REGULAR = "regular"
    ALWAYS_STOP = "always-stop"
    ALWAYS_CONTINUE = "always-continue"


@dataclass(frozen=True, eq=False)
class TestPolicy:
    """Log-likelihood-ratio thresholds ``B(theta) < A(theta)``.

    The test continues while ``B(theta) < s < A(theta)``; on stopping it decides
    H1 iff ``s >= A(theta)``. State-dependent thresholds are tabulated on
    ``theta_points`` and interpolated linearly, clamping beyond the table. For
    discrete statistics the table is looked up exactly.
    """

    __test__ = False  # not a pytest class

    kind: PolicyKind
    upper: np.ndarray
    lower: np.ndarray
    theta_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    discrete: bool = False
    row_status: Tuple[RowStatus, ...] = ()
    multiple_crossings: Tuple[bool, ...] = ()
    edge_clamped: Tuple[bool, ...] = ()
    continue_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "theta_points", np.asarray(self.theta_points, dtype=float))
        if upper.shape != lower.shape:
            raise ValueError("upper and lower thresholds must have the same shape")
        if np.any(lower > upper):
            raise ValueError("lower threshold above upper threshold")
        if self.kind is PolicyKind.CONSTANT and upper.size != 1:
            raise ValueError("a constant policy has exactly one pair of thresholds")
        if self.kind is PolicyKind.STATE_DEPENDENT and upper.size != max(1, self.theta_points.size):
            raise ValueError("one threshold pair per tabulated statistic value expected")
        if not self.row_status:
            object.__setattr__(self, "row_status", tuple(RowStatus.REGULAR for _ in upper))
        if not self.multiple_crossings:
            object.__setattr__(self, "multiple_crossings", tuple(False for _ in upper))
        if not self.edge_clamped:
            object.__setattr__(self, "edge_clamped", tuple(False for _ in upper))

    @classmethod
    def constant(cls, upper: float, lower: float) -> "TestPolicy":
        return cls(PolicyKind.CONSTANT, np.array([upper]), np.array([lower]))

    @property
    def A(self):
        return float(self.upper[0]) if self.kind is PolicyKind.CONSTANT else self.upper

    @property
    def B(self):
        return float(self.lower[0]) if self.kind is PolicyKind.CONSTANT else self.lower

    def thresholds(self, theta=None) -> Tuple[float, float]:
        """``(A(theta), B(theta))``."""
        if self.kind is PolicyKind.CONSTANT or self.theta_points.size == 0:
            return float(self.upper[0]), float(self.lower[0])
        th = self.theta_points
        if self.discrete:
            k = int(np.flatnonzero(th == theta)[0])
            return float(self.upper[k]), float(self.lower[k])
        return float(np.interp(theta, th, self.upper)), float(np.interp(theta, th, self.lower))

    def stops(self, s: float, theta=None) -> bool:
        a, b = self.thresholds(theta)
        return not (b < s < a)

    def decides_h1(self, s: float, theta=None) -> bool:
        return s >= self.thresholds(theta)[0]

    @property
    def warnings(self) -> List[str]:
        out = []
        rows = zip(self.row_status, self.multiple_crossings, self.edge_clamped)
        for k, (status, multi, edge) in enumerate(rows):
            label = f"theta={self.theta_points[k]:g}" if self.theta_points.size else "row 0"
            if status is not RowStatus.REGULAR:
                out.append(f"{label}: {status.value}")
            if multi:
                out.append(f"{label}: several crossings, outermost pair kept")
            if edge:
                out.append(f"{label}: continuation reaches the grid edge, threshold clamped")
        return out


@dataclass(frozen=True, eq=False)
class DesignSolution:
    lam: Tuple[float, float]
    rho: np.ndarray
    expected_run_length: float
    stop_decide_h1_mask: np.ndarray
    stop_decide_h0_mask: np.ndarray
    continue_mask: np.ndarray
    continuation_cost: np.ndarray
    gamma: Tuple[float, float]
    grid: Grid
    status: LpStatus = LpStatus.OPTIMAL
    lp_objective: float = float("nan")
    lp_residual: float = 0.0
    bellman_residual: float = 0.0
    method: str = "direct"
    bound_gap: float = 0.0
    iterations: int = 0
    warnings: Tuple[str, ...] = ()

    @property
    def stop_mask(self) -> np.ndarray:
        return ~self.continue_mask

    @property
    def stopping_cost(self) -> np.ndarray:
        return stopping_cost(self.lam, self.grid)

    @property
    def anchor_value(self) -> float:
        return float(self.rho[self.grid.anchor_index])


def bellman_residual(rho, lam, kernel: TransitionKernel) -> np.ndarray:
    """Per-cell ``|rho - min(g, 1 + rho @ H)|``."""
    g = stopping_cost(lam, kernel.grid)
    return np.abs(rho - np.minimum(g, 1.0 + kernel.expect(rho)))


def classify(rho, lam, grid: Grid, rel_tol: float = 1e-6):
    """Masks ``(decide_h1, decide_h0, continue)`` from a cost-to-go vector."""
    g = stopping_cost(lam, grid)
    stop = rho >= g - rel_tol * (1.0 + np.abs(rho))
    h1 = decides_h1(lam, grid)
    return stop & h1, stop & ~h1, ~stop


def solution_from_rho(
    problem: DesignProblem,
    lam,
    rho,
    classify_tol: float = 1e-6,
    **info,
) -> DesignSolution:
    """Classify cells, compute the continuation cost and check the anchor."""
    lam = (float(lam[0]), float(lam[1]))
    rho = np.asarray(rho, dtype=float)
    grid = problem.grid
    stop1, stop0, cont = classify(rho, lam, grid, classify_tol)
    anchor = grid.anchor_index
    if not cont[anchor]:
        raise TrivialTestError(
            f"the anchor cell stops immediately for gamma={problem.gamma}; "
            "the targets are too lax to require any sample"
        )
    e_tau = float(rho[anchor] - lam[0] * problem.gamma[0] - lam[1] * problem.gamma[1])
    return DesignSolution(
        lam=lam,
        rho=rho,
        expected_run_length=e_tau,
        stop_decide_h1_mask=stop1,
        stop_decide_h0_mask=stop0,
        continue_mask=cont,
        continuation_cost=1.0 + problem.kernel.expect(rho),
        gamma=problem.gamma,
        grid=grid,
        bellman_residual=float(bellman_residual(rho, lam, problem.kernel).max()),
        **info,
    )


def design_test(
    problem: DesignProblem,
    tol: float = 1e-8,
    method: str = "auto",
    classify_tol: float = 1e-6,
    max_iters: Optional[int] = None,
    warm_start: Optional[Sequence[float]] = None,
) -> DesignSolution:
    """Solve the design LP and return multipliers, cost-to-go and regions.

    ``method`` is ``"direct"`` (one LP), ``"decomposition"`` or ``"auto"``
    (direct up to :data:`DIRECT_CELL_LIMIT` cells).
    """
    if method == "auto":
        method = "direct" if problem.grid.size <= DIRECT_CELL_LIMIT else "decomposition"
    if method == "direct":
        lp = assemble_design_lp(problem)
        sol = solve_lp(lp, tol=tol, max_iters=max_iters)
        if sol.status is not LpStatus.OPTIMAL:
            raise DesignError(f"design LP ended with status {sol.status.value}: {sol.message}", sol.status)
        lam = (float(sol.x[0]), float(sol.x[1]))
        rho_lp = np.maximum(sol.x[2:], 0.0)
        info = dict(
            lp_objective=sol.objective_value,
            lp_residual=sol.max_primal_residual,
            iterations=sol.iterations,
            method="direct",
        )
    elif method == "decomposition":
        result = _decompose(problem, tol=tol, max_iters=max_iters, warm_start=warm_start)
        lam, rho_lp = result.lam, result.rho
        info = dict(
            lp_objective=result.objective,
            lp_residual=design_lp_residual(problem, lam, rho_lp),
            iterations=result.iterations,
            method="decomposition",
            bound_gap=result.gap,
        )
    else:
        raise ValueError(f"unknown design method {method!r}")
    rho = repair_solution(rho_lp, lam, problem.kernel)
    return solution_from_rho(problem, lam, rho, classify_tol, **info)


# --------------------------------------------------------------------------
# decomposition


@dataclass
class _Cut:
    value: float  # objective of the policy at lam = 0
    slope: np.ndarray  # d objective / d lam


@dataclass
class _Decomposed:
    lam: Tuple[float, float]
    rho: np.ndarray
    objective: float
    gap: float
    iterations: int


class _ContinuationSolver:
    """Solves ``(I - K_CC) x = b`` where ``K = H^T`` restricted to continuation cells."""

    def __init__(self, transposed: sp.csr_matrix, cont: np.ndarray):
        self.idx = np.flatnonzero(cont)
        n = self.idx.size
        self.sub = transposed[self.idx][:, self.idx].tocsr() if n else None
        self.lu = None
        if 0 < n <= _DIRECT_SOLVE_LIMIT:
            mat = (sp.identity(n, format="csc") - self.sub.tocsc()).tocsc()
            try:
                self.lu = spla.splu(mat)
            except RuntimeError as exc:
                raise DesignError(f"continuation system is singular: {exc}") from exc

    def solve(self, rhs: np.ndarray, guess: Optional[np.ndarray] = None) -> np.ndarray:
        if self.idx.size == 0:
            return rhs[:0]
        if self.lu is not None:
            return self.lu.solve(rhs)
        n = self.idx.size
        op = spla.LinearOperator((n, n), matvec=lambda v: v - self.sub @ v, dtype=float)
        x, info = spla.gmres(op, rhs, x0=guess, rtol=1e-13, atol=0.0, restart=80, maxiter=200)
        resid = float(np.abs(rhs - (x - self.sub @ x)).max())
        if info != 0 and resid > 1e-9 * (1.0 + float(np.abs(x).max())):
            raise DesignError(f"continuation system did not converge (residual {resid:.3g})")
        return x


def _evaluate_policy(problem: DesignProblem, transposed, cont, h1, guesses=None):
    """Run-length, decide-H1 probability and decide-H0 weighted mass of a stationary policy.

    Returns the three cell vectors ``(N, a0, a1)``; the cost of the policy at
    multipliers ``lam`` is ``N + lam0 * a0 + lam1 * a1``.
    """
    m = problem.grid.size
    z1 = problem.z1
    stop1 = ~cont & h1
    stop0 = ~cont & ~h1
    solver = _ContinuationSolver(transposed, cont)
    idx = solver.idx
    rhs_a0 = (transposed @ stop1.astype(float))[idx]
    rhs_a1 = (transposed @ np.where(stop0, z1, 0.0))[idx]
    out = []
    for k, (rhs, boundary) in enumerate(
        ((np.ones(idx.size), np.zeros(m)), (rhs_a0, stop1.astype(float)), (rhs_a1, np.where(stop0, z1, 0.0)))
    ):
        vec = boundary.copy()
        guess = None if guesses is None else guesses[k][idx]
        vec[idx] = solver.solve(rhs, guess)
        out.append(vec)
    return out


class _InnerSolver:
    """Exact Bellman fixed point for given multipliers, by policy iteration."""

    def __init__(self, problem: DesignProblem):
        self.problem = problem
        self.transposed = problem.kernel.transposed
        self.cont = np.zeros(problem.grid.size, dtype=bool)  # all-stop start is always proper
        self.fields = None
        reg = problem.regularization
        self.weights = np.zeros(problem.grid.size) if reg is None else reg.c * reg.eta
        self.weights[problem.grid.anchor_index] += 1.0

    def _cut(self, n, a0, a1) -> _Cut:
        w = self.weights
        return _Cut(float(w @ n), np.array([float(w @ a0), float(w @ a1)]) - np.array(self.problem.gamma))

    def solve(self, lam, max_rounds: int = 200):
        grid = self.problem.grid
        g = stopping_cost(lam, grid)
        h1 = decides_h1(lam, grid)
        cuts = []
        cont = self.cont
        for _ in range(max_rounds):
            fields = _evaluate_policy(self.problem, self.transposed, cont, h1, self.fields)
            self.fields = fields
            n, a0, a1 = fields
            cuts.append(self._cut(n, a0, a1))
            value = n + lam[0] * a0 + lam[1] * a1
            d = 1.0 + self.transposed @ value
            slack = 1e-12 * (1.0 + g)
            better_cont = d < g - slack
            better_stop = g < d - slack
            new_cont = np.where(better_cont, True, np.where(better_stop, False, cont))
            if np.array_equal(new_cont, cont):
                self.cont = cont
                return np.minimum(value, g), cuts
            cont = new_cont
        raise DesignError("policy iteration did not settle")


def _master(cuts: List[_Cut], lo: np.ndarray, hi: np.ndarray, tol: float):
    """Maximize ``min_k (value_k + slope_k . lam)`` over the box ``lo <= lam <= hi``."""
    # variables: lam0, lam1, t_plus, t_minus
    rows, rhs = [], []
    for cut in cuts:
        rows.append([-cut.slope[0], -cut.slope[1], 1.0, -1.0])
        rhs.append(cut.value)
    for i in range(2):
        e = [0.0] * 4
        e[i] = 1.0
        rows.append(e)
        rhs.append(hi[i])
        e = [0.0] * 4
        e[i] = -1.0
        rows.append(e)
        rhs.append(-lo[i])
    lp = LinearProgram(np.array([0.0, 0.0, 1.0, -1.0]), sp.csr_matrix(np.array(rows)), np.array(rhs))
    sol = solve_lp(lp, tol=min(tol, 1e-9))
    if sol.status is not LpStatus.OPTIMAL:
        raise DesignError(f"master problem ended with status {sol.status.value}", sol.status)
    lam = np.clip(sol.x[:2], lo, hi)
    bound = min(c.value + float(c.slope @ lam) for c in cuts)
    return lam, bound


def _initial_multipliers(problem: DesignProblem) -> np.ndarray:
    """Multipliers from a design on a grid with roughly half the resolution."""
    grid = problem.grid
    m_z, m_t = grid.m_z, grid.m_theta

    def halve(m):
        return max(3, (m // 4) * 2 + 1)

    if grid.size > DIRECT_CELL_LIMIT and (m_z > 3 or m_t > 3):
        options = dict(m_z=halve(m_z), beta=grid.beta, s_max=float(grid.s_points[-1]))
        if isinstance(problem.model, Ar1):
            th = grid.theta_points
            options.update(m_theta=halve(m_t), theta_bounds=(float(th[0]), float(th[-1])))
        try:
            coarse_grid = build_grid(problem.model, **options)
            reg = problem.regularization is not None
            c = problem.regularization.c if reg else None
            coarse = DesignProblem.build(problem.model, problem.gamma, grid=coarse_grid, regularize=reg, c=c)
            return np.array(design_test(coarse, method="auto").lam)
        except DesignError:
            pass
    # distribution-free guess: the price of an error is a few run-lengths per unit probability
    return np.array([1.0 / problem.gamma[0], 1.0 / problem.gamma[1]])


def _decompose(problem: DesignProblem, tol: float, max_iters: Optional[int], warm_start) -> _Decomposed:
    inner = _InnerSolver(problem)
    center = np.array(warm_start, dtype=float) if warm_start is not None else _initial_multipliers(problem)
    if np.any(center <= 0):
        raise ValueError("warm start multipliers must be positive")
    rho, cuts = inner.solve(center)
    best = float(inner.weights @ rho) - float(center @ np.array(problem.gamma))
    best_rho = rho
    radius = 0.25
    max_iters = 500 if max_iters is None else int(max_iters)
    gap = math.inf
    for it in range(1, max_iters + 1):
        half = radius * np.maximum(center, 1.0)
        lo = np.maximum(center - half, 0.0)
        hi = center + half
        lam, bound = _master(cuts, lo, hi, tol)
        gap = bound - best
        if gap <= tol * (1.0 + abs(best)):
            on_edge = np.any((lam <= lo + 1e-9 * half) & (lo > 0)) or np.any(lam >= hi - 1e-9 * half)
            if not on_edge:
                break
            radius *= 2.0  # the box binds: widen it before declaring optimality
            continue
        rho, new_cuts = inner.solve(lam)
        cuts.extend(new_cuts)
        value = float(inner.weights @ rho) - float(lam @ np.array(problem.gamma))
        if value > best + 1e-3 * gap:
            on_edge = np.any(np.isclose(lam, lo) & (lo > 0)) or np.any(np.isclose(lam, hi))
            center, best, best_rho = lam, value, rho
            if on_edge:
                radius *= 2.0
    else:
        raise DesignError(f"decomposition stopped after {max_iters} rounds with gap {gap:.3g}", LpStatus.ITERATION_LIMIT)
    return _Decomposed((float(center[0]), float(center[1])), best_rho, best, max(gap, 0.0), it)


# --------------------------------------------------------------------------
# thresholds


def extract_thresholds(solution: DesignSolution, grid: Optional[Grid] = None) -> TestPolicy:
    """Tabulate the thresholds where stopping and continuation costs cross."""
    grid = solution.grid if grid is None else grid
    lam0, lam1 = solution.lam
    s = grid.s_points
    f_all = solution.stopping_cost - solution.continuation_cost  # > 0 where continuing is cheaper
    cont_all = solution.continue_mask
    tie = math.log(lam0 / lam1) if lam0 > 0 and lam1 > 0 else 0.0
    uppers, lowers, status, multi, edge = [], [], [], [], []
    for k in range(grid.m_theta):
        sl = slice(k * grid.m_z, (k + 1) * grid.m_z)
        f = f_all[sl]
        cont = cont_all[sl]
        if not cont.any():
            uppers.append(tie)
            lowers.append(tie)
            status.append(RowStatus.ALWAYS_STOP)
            multi.append(False)
            edge.append(False)
            continue
        if cont.all():
            uppers.append(float(s[-1]))
            lowers.append(float(s[0]))
            status.append(RowStatus.ALWAYS_CONTINUE)
            multi.append(False)
            edge.append(True)
            continue
        ups, downs = [], []
        for j in range(grid.m_z - 1):
            if cont[j] == cont[j + 1]:
                continue
            fa, fb = f[j], f[j + 1]
            if fa == fb:
                x = 0.5 * (s[j] + s[j + 1])
            else:
                w = min(max(fa / (fa - fb), 0.0), 1.0)
                x = s[j] + w * (s[j + 1] - s[j])
            (ups if cont[j] else downs).append(float(x))
        # crossing out of continuation going upward bounds the decide-H1 side
        upper = [x for x in ups if x >= tie] or ups
        lower = [x for x in downs if x < tie] or downs
        a = max(upper) if upper else float(s[-1])
        b = min(lower) if lower else float(s[0])
        if b > a:
            b = a
        uppers.append(a)
        lowers.append(b)
        status.append(RowStatus.REGULAR)
        multi.append(len(ups) > 1 or len(downs) > 1)
        edge.append(bool(cont[0] or cont[-1]))
    kind = PolicyKind.CONSTANT if grid.theta_kind == "none" else PolicyKind.STATE_DEPENDENT
    return TestPolicy(
        kind=kind,
        upper=np.array(uppers),
        lower=np.array(lowers),
        theta_points=grid.theta_points,
        discrete=grid.theta_kind == "discrete",
        row_status=tuple(status),
        multiple_crossings=tuple(multi),
        edge_clamped=tuple(edge),
        continue_mask=cont_all.copy(),
    )


# --------------------------------------------------------------------------
# output


def design_record(solution: DesignSolution, policy: Optional[TestPolicy] = None, extra: Optional[dict] = None) -> dict:
    warnings = list(solution.warnings) + (policy.warnings if policy is not None else [])
    rec = {
        "status": solution.status.value,
        "method": solution.method,
        "lambda": [solution.lam[0], solution.lam[1]],
        "gamma": [solution.gamma[0], solution.gamma[1]],
        "expected_run_length": solution.expected_run_length,
        "rho_anchor": solution.anchor_value,
        "lp_objective": solution.lp_objective,
        "lp_residual": solution.lp_residual,
        "bellman_residual": solution.bellman_residual,
        "bound_gap": solution.bound_gap,
        "iterations": solution.iterations,
        "grid": solution.grid.metadata(),
        "cells": {
            "continue": int(solution.continue_mask.sum()),
            "stop_decide_h1": int(solution.stop_decide_h1_mask.sum()),
            "stop_decide_h0": int(solution.stop_decide_h0_mask.sum()),
        },
        "warnings": warnings,
    }
    if extra:
        rec.update(extra)
    return rec


def write_design_json(path, solution: DesignSolution, policy=None, extra=None) -> None:
    with open(path, "w") as fh:
        json.dump(design_record(solution, policy, extra), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mask_label(solution: DesignSolution, j: int) -> str:
    if solution.continue_mask[j]:
        return "continue"
    return "stop_h1" if solution.stop_decide_h1_mask[j] else "stop_h0"


def write_rho_csv(path, solution: DesignSolution) -> None:
    grid = solution.grid
    g = solution.stopping_cost
    theta = grid.cell_theta
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["cell", "s", "theta", "rho", "g", "d", "mask"])
        for j in range(grid.size):
            th = "" if np.isnan(theta[j]) else repr(float(theta[j]))
            out.writerow(
                [
                    j,
                    repr(float(grid.cell_s[j])),
                    th,
                    repr(float(solution.rho[j])),
                    repr(float(g[j])),
                    repr(float(solution.continuation_cost[j])),
                    _mask_label(solution, j),
                ]
            )


def read_rho_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rho = np.empty(len(rows))
    for r in rows:
        rho[int(r["cell"])] = float(r["rho"])
    return rho


def write_thresholds_csv(path, policy: TestPolicy) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["theta", "A", "B", "status", "multiple_crossings", "edge_clamped"])
        thetas = policy.theta_points if policy.theta_points.size else [None]
        for k, th in enumerate(thetas):
            out.writerow(
                [
                    "" if th is None else repr(float(th)),
                    repr(float(policy.upper[k])),
                    repr(float(policy.lower[k])),
                    policy.row_status[k].value,
                    int(policy.multiple_crossings[k]),
                    int(policy.edge_clamped[k]),
                ]
            )


def read_thresholds_csv(path, discrete: bool = False) -> TestPolicy:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    upper = np.array([float(r["A"]) for r in rows])
    lower = np.array([float(r["B"]) for r in rows])
    flags = dict(
        row_status=tuple(RowStatus(r["status"]) for r in rows),
        multiple_crossings=tuple(bool(int(r["multiple_crossings"])) for r in rows),
        edge_clamped=tuple(bool(int(r["edge_clamped"])) for r in rows),
    )
    if rows and rows[0]["theta"] == "":
        return TestPolicy(PolicyKind.CONSTANT, upper, lower, **flags)
    theta = np.array([float(r["theta"]) for r in rows])
    return TestPolicy(PolicyKind.STATE_DEPENDENT, upper, lower, theta, discrete=discrete, **flags)
