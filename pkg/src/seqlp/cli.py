"""Command-line front end.

    seqlp design         --config run.ini [--output-dir DIR]
    seqlp verify         --config run.ini [--output-dir DIR]
    seqlp simulate       --config run.ini [--policy optimal|wald] [--seed N]
    seqlp compare        --config run.ini [--seed N]
    seqlp export-figures --config run.ini

Exit codes: 0 success, 2 invalid configuration or usage, 3 solver failure,
4 trivial test, 5 failed verification, 6 missing design outputs,
7 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .design import (
    DesignError,
    DesignProblem,
    RepairError,
    TrivialTestError,
    bellman_residual,
    default_regularization,
    design_test,
    extract_thresholds,
    read_rho_csv,
    read_thresholds_csv,
    solution_from_rho,
    write_design_json,
    write_rho_csv,
    write_thresholds_csv,
)
from .grid import build_grid
from .kernels import MeasureTag, build_kernel
from .lp import LpStatus
from .simulate import compare, monte_carlo, wald_thresholds, write_comparison_csv
from .verify import (
    VerificationError,
    fd_derivative,
    fredholm_derivative,
    fredholm_errors,
    run_length,
    value_iteration,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TRIVIAL = 4
EXIT_VERIFY = 5
EXIT_MISSING = 6
EXIT_NONCONVERGED = 7


class MissingOutputs(RuntimeError):
    pass


def _dump_json(path: Path, record) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _problem(cfg: RunConfig) -> DesignProblem:
    model = cfg.build_model()
    grid = build_grid(model, **cfg.grid_options())
    kernel = build_kernel(model, grid, MeasureTag.P0)
    reg = None
    if cfg.design.regularization_c is not None:
        reg = default_regularization(grid, cfg.design.gamma, cfg.design.regularization_c)
    return DesignProblem(model, grid, kernel, cfg.design.gamma, reg)


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_design(cfg: RunConfig, problem: DesignProblem):
    out = Path(cfg.output.directory)
    needed = [out / "design.json", out / "rho.csv", out / "thresholds.csv"]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise MissingOutputs("design outputs not found: " + ", ".join(missing) + "; run 'seqlp design' first")
    with open(needed[0]) as fh:
        record = json.load(fh)
    if record["grid"] != problem.grid.metadata():
        raise MissingOutputs("design outputs were produced for a different grid; rerun 'seqlp design'")
    rho = read_rho_csv(needed[1])
    if rho.size != problem.grid.size:
        raise MissingOutputs("rho.csv does not match the grid size")
    policy = read_thresholds_csv(needed[2], discrete=problem.grid.theta_kind == "discrete")
    return record, rho, policy


def cmd_design(cfg: RunConfig) -> int:
    problem = _problem(cfg)
    sol = design_test(problem, tol=cfg.lp.tol, method=cfg.design.method, max_iters=cfg.lp.max_iters)
    policy = extract_thresholds(sol)
    out = _out_dir(cfg)
    write_design_json(out / "design.json", sol, policy, {"model": cfg.model.type})
    write_rho_csv(out / "rho.csv", sol)
    write_thresholds_csv(out / "thresholds.csv", policy)
    print(f"model            {cfg.model.type}")
    print(f"gamma            {float(sol.gamma[0])!r}, {float(sol.gamma[1])!r}")
    print(f"lambda*          {float(sol.lam[0])!r}, {float(sol.lam[1])!r}")
    print(f"E0[tau]          {float(sol.expected_run_length)!r}")
    print(f"method           {sol.method} ({sol.iterations} iterations)")
    print(f"LP residual      {sol.lp_residual:.3e}")
    print(f"Bellman residual {sol.bellman_residual:.3e}")
    for w in policy.warnings[:10]:
        print(f"warning          {w}")
    if len(policy.warnings) > 10:
        print(f"warning          ... {len(policy.warnings) - 10} more in design.json")
    return EXIT_OK


def _check(name, value, reference, margin, passed) -> dict:
    return {"name": name, "value": value, "reference": reference, "margin": margin, "passed": bool(passed)}


def verification_checks(problem: DesignProblem, record: dict, rho: np.ndarray) -> List[dict]:
    lam = tuple(record["lambda"])
    gamma = problem.gamma
    grid = problem.grid
    anchor = grid.anchor_index
    kernel1 = build_kernel(problem.model, grid, MeasureTag.P1)
    checks = []

    resid = bellman_residual(rho, lam, problem.kernel)
    worst = float((resid / (1.0 + np.abs(rho))).max())
    checks.append(_check("bellman_residual", worst, 0.0, 1e-6, worst <= 1e-6))

    vf = value_iteration(lam, problem.kernel)
    diff = abs(vf.values[anchor] - rho[anchor])
    checks.append(
        _check("value_iteration_anchor", float(vf.values[anchor]), float(rho[anchor]), 1e-4 * (1 + rho[anchor]),
               vf.converged and diff <= 1e-4 * (1 + rho[anchor]))
    )

    try:
        sol = solution_from_rho(problem, lam, rho)
    except TrivialTestError:
        checks.append(_check("anchor_continues", 0.0, 1.0, 0.0, False))
        return checks
    e_tau = sol.expected_run_length
    errors = fredholm_errors(problem.kernel, kernel1, sol)
    _, r1 = fredholm_derivative(problem.kernel, kernel1, sol)
    fd = [fd_derivative(lam, i, problem.kernel) for i in (0, 1)]
    for i in (0, 1):
        alpha = errors.anchor_values[i]
        margin = max(0.005, 2.0 * abs(fd[i] - alpha))
        checks.append(_check(f"fredholm_alpha{i}", alpha, gamma[i], margin, abs(alpha - gamma[i]) <= margin))
        checks.append(
            _check(f"fd_derivative{i}", fd[i], gamma[i], 0.02 * gamma[i], abs(fd[i] - gamma[i]) <= 0.02 * gamma[i])
        )
    cont = sol.continue_mask
    consistency = float(np.abs(r1 - grid.cell_z * errors.alpha1)[cont].max(initial=0.0))
    scale = float(np.abs(r1[cont]).max(initial=0.0))
    checks.append(_check("derivative_consistency", consistency, 0.0, 0.02 * (1 + scale), consistency <= 0.02 * (1 + scale)))
    _, n_anchor = run_length(problem.kernel, cont)
    checks.append(_check("run_length", n_anchor, e_tau, 0.02 * e_tau, abs(n_anchor - e_tau) <= 0.02 * e_tau))
    # the run-length identity holds up to the discretization of the change of measure
    approx = rho[anchor] - lam[0] * errors.anchor_values[0] - lam[1] * errors.anchor_values[1]
    checks.append(
        _check("run_length_identity", n_anchor, float(approx), 1e-3 * (1 + n_anchor),
               abs(n_anchor - approx) <= 1e-3 * (1 + n_anchor))
    )
    return checks


def cmd_verify(cfg: RunConfig) -> int:
    problem = _problem(cfg)
    record, rho, _ = _load_design(cfg, problem)
    checks = verification_checks(problem, record, rho)
    passed = all(c["passed"] for c in checks)
    _dump_json(Path(cfg.output.directory) / "verify.json", {"passed": passed, "checks": checks})
    for c in checks:
        flag = "PASS" if c["passed"] else "FAIL"
        print(f"{flag}  {c['name']:<24} value={c['value']:.10g} reference={c['reference']:.10g} margin={c['margin']:.3g}")
    return EXIT_OK if passed else EXIT_VERIFY


def _policy(cfg: RunConfig, problem: DesignProblem, source: str):
    if source == "wald":
        return wald_thresholds(cfg.wald_gamma)
    _, _, policy = _load_design(cfg, problem)
    return policy


def cmd_simulate(cfg: RunConfig, source: str) -> int:
    model = cfg.build_model()
    if source == "optimal":
        policy = _policy(cfg, _problem(cfg), source)
    else:
        policy = wald_thresholds(cfg.wald_gamma)
    reports = {}
    for truth in (0, 1):
        rep = monte_carlo(policy, model, truth, cfg.sim.runs, cfg.sim.seed, cfg.sim.max_samples)
        reports[f"H{truth}"] = rep.record()
        print(
            f"{source:<8} truth=H{truth} error={rep.empirical_error:.5f} (se {rep.error_se:.2g}) "
            f"E[tau]={rep.mean_run_length:.5f} (se {rep.run_length_se:.2g}) censored={rep.censored_count}"
        )
    record = {"policy": source, "seed": cfg.sim.seed, "runs": cfg.sim.runs, "reports": reports}
    _dump_json(_out_dir(cfg) / f"simulate_{source}.json", record)
    unreliable = any(r["unreliable"] for r in reports.values())
    return EXIT_NONCONVERGED if unreliable else EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    problem = _problem(cfg)
    optimal = _policy(cfg, problem, "optimal")
    wald = wald_thresholds(cfg.wald_gamma)
    table = compare([("optimal", optimal), ("wald", wald)], problem.model, cfg.design.gamma, cfg.sim.runs, cfg.sim.seed,
                    cfg.sim.max_samples)
    out = _out_dir(cfg)
    write_comparison_csv(out / "comparison.csv", table)
    print(f"{'policy':<8} {'A':>9} {'B':>9} {'alpha0':>8} {'alpha1':>8} {'E0[tau]':>9} {'ratio':>7}")
    for row in table.rows:
        print(
            f"{row.name:<8} {row.upper:9.4f} {row.lower:9.4f} {row.alpha0:8.5f} {row.alpha1:8.5f} "
            f"{row.run_length:9.4f} {row.ratio:7.4f}"
        )
    return EXIT_OK


def cmd_export_figures(cfg: RunConfig) -> int:
    problem = _problem(cfg)
    record, rho, policy = _load_design(cfg, problem)
    sol = solution_from_rho(problem, tuple(record["lambda"]), rho)
    grid = problem.grid
    out = _out_dir(cfg)
    theta = grid.cell_theta
    g = sol.stopping_cost
    with open(out / "cost_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "s", "z", "g", "d", "rho", "mask"])
        for j in range(grid.size):
            mask = "continue" if sol.continue_mask[j] else ("stop_h1" if sol.stop_decide_h1_mask[j] else "stop_h0")
            w.writerow(
                ["" if math.isnan(theta[j]) else repr(float(theta[j]))]
                + [repr(float(v)) for v in (grid.cell_s[j], grid.cell_z[j], g[j], sol.continuation_cost[j], rho[j])]
                + [mask]
            )
    wald = wald_thresholds(cfg.wald_gamma)
    with open(out / "threshold_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "A", "B", "wald_A", "wald_B"])
        thetas = policy.theta_points if policy.theta_points.size else [None]
        for k, th in enumerate(thetas):
            w.writerow(
                ["" if th is None else repr(float(th))]
                + [repr(float(v)) for v in (policy.upper[k], policy.lower[k], wald.A, wald.B)]
            )
    print(f"wrote {out / 'cost_curves.csv'} and {out / 'threshold_curves.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqlp", description="Optimal sequential tests via linear programming.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("design", "verify", "simulate", "compare", "export-figures"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--output-dir", help="overrides [output] directory")
        p.add_argument("--seed", type=int, help="overrides [sim] seed")
        if name == "simulate":
            p.add_argument("--policy", choices=("optimal", "wald"), default="optimal")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.output_dir, args.seed)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "design":
            return cmd_design(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.policy)
        if args.command == "compare":
            return cmd_compare(cfg)
        return cmd_export_figures(cfg)
    except TrivialTestError as exc:
        print(f"trivial test: {exc}", file=sys.stderr)
        return EXIT_TRIVIAL
    except DesignError as exc:
        print(f"design failed ({exc.status.value}): {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED if exc.status is LpStatus.ITERATION_LIMIT else EXIT_SOLVER
    except RepairError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except MissingOutputs as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
