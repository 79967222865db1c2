"""Sparse linear programs in the form ``max c.x  s.t.  A x <= b, x >= 0``.

Solving is delegated to HiGHS as shipped with SciPy: dual simplex for small
programs, interior point with crossover for large ones. The result is re-checked
for feasibility outside the solver.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog


# above this many constraint nonzeros the interior-point method is faster
IPM_NNZ_THRESHOLD = 50_000


class LpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    names: Optional[Sequence[str]] = None
    row_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        a = sp.csr_matrix(self.a_ub, dtype=float)
        b = np.asarray(self.b_ub, dtype=float)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "a_ub", a)
        object.__setattr__(self, "b_ub", b)
        if c.ndim != 1:
            raise ValueError("objective must be a vector")
        if a.shape != (b.size, c.size):
            raise ValueError(f"constraint matrix shape {a.shape} does not match {b.size} rows x {c.size} vars")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(a.data)) and np.all(np.isfinite(b))):
            raise ValueError("linear program data must be finite")
        if self.names is not None and len(self.names) != c.size:
            raise ValueError("one name per variable expected")

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_constraints(self) -> int:
        return self.b_ub.size

    def residual(self, x: np.ndarray) -> float:
        """Largest violation of ``A x <= b`` and ``x >= 0``."""
        viol = self.a_ub @ x - self.b_ub
        worst = max(float(viol.max(initial=0.0)), float((-x).max(initial=0.0)))
        return max(worst, 0.0)


@dataclass(frozen=True, eq=False)
class LpSolution:
    x: Optional[np.ndarray]
    objective_value: float
    status: LpStatus
    max_primal_residual: float
    iterations: int = 0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


_STATUS = {
    0: LpStatus.OPTIMAL,
    1: LpStatus.ITERATION_LIMIT,
    2: LpStatus.INFEASIBLE,
    3: LpStatus.UNBOUNDED,
    4: LpStatus.NUMERICAL_FAILURE,
}


def solve_lp(lp: LinearProgram, tol: float = 1e-8, max_iters: Optional[int] = None) -> LpSolution:
    """Maximize ``lp``; infeasibility and unboundedness are statuses, not exceptions."""
    if max_iters is None:
        max_iters = 10 * (lp.num_vars + lp.num_constraints)
    res = linprog(
        -lp.objective,
        A_ub=lp.a_ub,
        b_ub=lp.b_ub,
        bounds=(0, None),
        method="highs-ipm" if lp.a_ub.nnz > IPM_NNZ_THRESHOLD else "highs-ds",
        options={
            "primal_feasibility_tolerance": tol,
            "dual_feasibility_tolerance": tol,
            "maxiter": int(max_iters),
            "presolve": True,
        },
    )
    status = _STATUS.get(res.status, LpStatus.NUMERICAL_FAILURE)
    x = None if res.x is None else np.asarray(res.x, dtype=float)
    if x is not None:
        value = float(lp.objective @ x)
        resid = lp.residual(x)
    else:
        value, resid = float("nan"), float("inf")
    if status is LpStatus.OPTIMAL and resid > 10 * tol * (1.0 + float(np.abs(x).max(initial=0.0))):
        status = LpStatus.NUMERICAL_FAILURE
    return LpSolution(x, value, status, resid, int(getattr(res, "nit", 0) or 0), str(res.message))


def write_mps(lp: LinearProgram, path, name: str = "LP") -> None:
    """Write ``lp`` in free MPS format (as a minimization of ``-c.x``)."""
    var_names = list(lp.names) if lp.names is not None else [f"x{i}" for i in range(lp.num_vars)]
    row_names = list(lp.row_names) if lp.row_names is not None else [f"r{i}" for i in range(lp.num_constraints)]
    a = lp.a_ub.tocsc()
    lines = [f"NAME {name}", "ROWS", " N obj"]
    lines += [f" L {r}" for r in row_names]
    lines.append("COLUMNS")
    for j, v in enumerate(var_names):
        if lp.objective[j] != 0:
            lines.append(f" {v} obj {-float(lp.objective[j])!r}")
        start, end = a.indptr[j], a.indptr[j + 1]
        for i, coef in zip(a.indices[start:end], a.data[start:end]):
            lines.append(f" {v} {row_names[i]} {float(coef)!r}")
    lines.append("RHS")
    for i, r in enumerate(row_names):
        if lp.b_ub[i] != 0:
            lines.append(f" rhs {r} {float(lp.b_ub[i])!r}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
