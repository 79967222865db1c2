"""Optimal sequential tests for two simple hypotheses, designed by linear programming."""

from .design import (
    DesignProblem,
    DesignSolution,
    TestPolicy,
    assemble_design_lp,
    design_test,
    extract_thresholds,
    repair_solution,
)
from .grid import Grid, build_grid
from .kernels import MeasureTag, TransitionKernel, build_kernel
from .lp import LinearProgram, LpSolution, LpStatus, solve_lp
from .models import Ar1, Hypothesis, IidGaussian, TwoStateChain
from .simulate import compare, monte_carlo, run_trial, wald_thresholds

__all__ = [
    "Ar1",
    "DesignProblem",
    "DesignSolution",
    "Grid",
    "Hypothesis",
    "IidGaussian",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "MeasureTag",
    "TestPolicy",
    "TransitionKernel",
    "TwoStateChain",
    "assemble_design_lp",
    "build_grid",
    "build_kernel",
    "compare",
    "design_test",
    "extract_thresholds",
    "monte_carlo",
    "repair_solution",
    "run_trial",
    "solve_lp",
    "wald_thresholds",
]
