"""Monte Carlo evaluation of sequential tests.

Trial ``k`` of a run with seed ``seed`` draws its randomness from a Philox
stream keyed by ``(seed, k)``, so trials are independent of execution order and
aggregate counts do not depend on how trials are scheduled.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .design import PolicyKind, TestPolicy
from .models import Ar1, DomainError, Hypothesis, IidGaussian, ModelSpec, TwoStateChain

DEFAULT_MAX_SAMPLES = 100_000
CENSOR_LIMIT = 0.01
_Z95 = 1.959963984540054
_BLOCK = 32


def wald_thresholds(gamma, printed_form: bool = False) -> TestPolicy:
    """Constant Wald thresholds ``A = log((1 - g1) / g0)``, ``B = log(g1 / (1 - g0))``.

    ``printed_form=True`` returns ``A = log(g1 / (1 - g0))``, ``B = log(g0 / (1 - g1))``
    instead, a labeling that cannot bracket zero; it is kept only for
    comparison and is rejected when it would put ``B`` above ``A``.
    """
    g0, g1 = (float(v) for v in gamma)
    if not (0 < g0 < 1 and 0 < g1 < 1):
        raise DomainError(f"target error probabilities must lie in (0, 1), got {(g0, g1)}")
    if g0 + g1 >= 1:
        raise DomainError("Wald thresholds need gamma0 + gamma1 < 1")
    if printed_form:
        upper, lower = math.log(g1 / (1 - g0)), math.log(g0 / (1 - g1))
        if lower > upper:
            raise DomainError(f"printed-form thresholds are inverted for gamma={(g0, g1)}")
    else:
        upper, lower = math.log((1 - g1) / g0), math.log(g1 / (1 - g0))
    return TestPolicy.constant(upper, lower)


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream of trial ``index``."""
    if not (0 <= seed < 2**64 and 0 <= index < 2**64):
        raise ValueError("seed and trial index must lie in [0, 2**64)")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


@dataclass(frozen=True)
class TrialOutcome:
    decision: Optional[Hypothesis]
    tau: int
    censored: bool = False


def _lookup(policy: TestPolicy) -> Callable:
    """Fast ``theta -> (A, B)`` for the simulation loop."""
    if policy.kind is PolicyKind.CONSTANT or policy.theta_points.size == 0:
        pair = (float(policy.upper[0]), float(policy.lower[0]))
        return lambda theta: pair
    th = [float(v) for v in policy.theta_points]
    up = [float(v) for v in policy.upper]
    lo = [float(v) for v in policy.lower]
    if policy.discrete:
        table = {t: (a, b) for t, a, b in zip(th, up, lo)}
        return lambda theta: table[float(theta)]
    last = len(th) - 1

    def interp(theta):
        if theta <= th[0]:
            return up[0], lo[0]
        if theta >= th[last]:
            return up[last], lo[last]
        k = bisect.bisect_right(th, theta)
        w = (theta - th[k - 1]) / (th[k] - th[k - 1])
        return up[k - 1] + w * (up[k] - up[k - 1]), lo[k - 1] + w * (lo[k] - lo[k - 1])

    return interp


def _stepper(model: ModelSpec, truth: Hypothesis):
    """``step(theta, normal, uniform) -> (llr increment, next theta)``."""
    if isinstance(model, IidGaussian):
        mu, sigma, var = model.mu, model.sigma, model.sigma**2
        mean = mu if truth == Hypothesis.H1 else 0.0
        scale, shift = mu / var, mu * mu / (2.0 * var)

        def step(theta, n, u):
            return (mean + sigma * n) * scale - shift, None

        return step
    if isinstance(model, TwoStateChain):
        sigma, var = model.sigma, model.sigma**2
        log_ratio = {}
        for prev in TwoStateChain.states:
            for st in TwoStateChain.states:
                p0, p1 = model.p0_of(st), model.p1_of(st, prev)
                log_ratio[prev, st] = (
                    (math.log(p1) if p1 > 0 else -math.inf) - (math.log(p0) if p0 > 0 else -math.inf)
                )
        h1 = truth == Hypothesis.H1

        def step(theta, n, u):
            first = model.p1[theta - 1][0] if h1 else model.p0[0]
            st = 1 if u < first else 2
            y = (st / 2.0 if h1 else 0.0) + sigma * n
            return log_ratio[theta, st] + y * st / (2.0 * var) - st * st / (8.0 * var), st

        return step
    if isinstance(model, Ar1):
        sigma, var = model.sigma, model.sigma**2
        a = model.coefficient(truth)
        da, dsq = (model.a1 - model.a0) / var, (model.a1**2 - model.a0**2) / (2.0 * var)

        def step(theta, n, u):
            x = a * theta + sigma * n
            return da * theta * x - dsq * theta * theta, x

        return step
    raise TypeError(f"unknown model {model!r}")


def _run(lookup, step, theta0, rng: np.random.Generator, max_samples: int, forced: bool, needs_uniform: bool):
    s, theta, n = 0.0, theta0, 0
    normals = rng.standard_normal(_BLOCK)
    uniforms = rng.random(_BLOCK) if needs_uniform else normals
    pos = 0
    while n < max_samples:
        if pos == _BLOCK:
            normals = rng.standard_normal(_BLOCK)
            uniforms = rng.random(_BLOCK) if needs_uniform else normals
            pos = 0
        inc, theta = step(theta, normals[pos], uniforms[pos])
        pos += 1
        n += 1
        s += inc
        upper, lower = lookup(theta)
        if s >= upper:
            return TrialOutcome(Hypothesis.H1, n)
        if s <= lower:
            return TrialOutcome(Hypothesis.H0, n)
    if forced:
        upper, lower = lookup(theta)
        return TrialOutcome(Hypothesis.H1 if s >= 0.5 * (upper + lower) else Hypothesis.H0, n, True)
    return TrialOutcome(None, n, True)


def run_trial(
    policy: TestPolicy,
    model: ModelSpec,
    truth: Hypothesis,
    rng: np.random.Generator,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    forced_decision: bool = False,
) -> TrialOutcome:
    """Run one sequential test from ``s = 0`` at the model's initial statistic."""
    truth = Hypothesis(truth)
    if max_samples < 1:
        raise ValueError("max_samples must be at least 1")
    _check_compatible(policy, model)
    return _run(
        _lookup(policy),
        _stepper(model, truth),
        model.theta0,
        rng,
        int(max_samples),
        forced_decision,
        isinstance(model, TwoStateChain),
    )


def _check_compatible(policy: TestPolicy, model: ModelSpec) -> None:
    if policy.kind is PolicyKind.CONSTANT:
        return
    if isinstance(model, IidGaussian):
        if policy.theta_points.size > 1:
            raise DomainError("the i.i.d. model has no statistic to index thresholds by")
    elif isinstance(model, TwoStateChain):
        if not policy.discrete or set(policy.theta_points.tolist()) != set(map(float, TwoStateChain.states)):
            raise DomainError("chain policies need one threshold pair per state")
    elif policy.discrete:
        raise DomainError("AR(1) policies need thresholds on a real statistic axis")


def simulate_trials(
    policy: TestPolicy,
    model: ModelSpec,
    truth: Hypothesis,
    seed: int,
    indices: Iterable[int],
    max_samples: int = DEFAULT_MAX_SAMPLES,
    forced_decision: bool = False,
) -> List[TrialOutcome]:
    """Outcomes of the trials with the given indices, in the given order."""
    truth = Hypothesis(truth)
    _check_compatible(policy, model)
    lookup, step = _lookup(policy), _stepper(model, truth)
    uniform = isinstance(model, TwoStateChain)
    return [
        _run(lookup, step, model.theta0, trial_rng(seed, k), int(max_samples), forced_decision, uniform)
        for k in indices
    ]


@dataclass(frozen=True)
class SimulationReport:
    runs: int
    truth: Hypothesis
    seed: int
    decided: int
    errors: int
    empirical_error: float
    error_se: float
    error_ci: Tuple[float, float]
    mean_run_length: float
    run_length_se: float
    run_length_ci: Tuple[float, float]
    censored_count: int
    unreliable: bool

    def record(self) -> dict:
        rec = asdict(self)
        rec["truth"] = self.truth.name
        rec["error_ci"] = list(self.error_ci)
        rec["run_length_ci"] = list(self.run_length_ci)
        return rec


def aggregate(outcomes: Sequence[TrialOutcome], truth: Hypothesis, seed: int) -> SimulationReport:
    """Summary statistics; censored trials are excluded from every count but the censor count."""
    truth = Hypothesis(truth)
    runs = len(outcomes)
    if runs == 0:
        raise ValueError("no trials to aggregate")
    censored = sum(1 for o in outcomes if o.decision is None)
    done = [o for o in outcomes if o.decision is not None]
    n = len(done)
    errors = sum(1 for o in done if o.decision != truth)
    tau_sum = sum(o.tau for o in done)
    tau_sq = sum(o.tau * o.tau for o in done)
    if n == 0:
        nan = float("nan")
        return SimulationReport(runs, truth, seed, 0, 0, nan, nan, (0.0, 1.0), nan, nan, (nan, nan), censored, True)
    p = errors / n
    mean = tau_sum / n
    if n > 1:
        p_se = math.sqrt(p * (1.0 - p) / n)
        var = max(tau_sq - n * mean * mean, 0.0) / (n - 1)
        t_se = math.sqrt(var / n)
    else:
        p_se = t_se = math.inf
    err_ci = (max(0.0, p - _Z95 * p_se), min(1.0, p + _Z95 * p_se))
    tau_ci = (mean - _Z95 * t_se, mean + _Z95 * t_se)
    unreliable = censored > CENSOR_LIMIT * runs
    return SimulationReport(runs, truth, seed, n, errors, p, p_se, err_ci, mean, t_se, tau_ci, censored, unreliable)


def monte_carlo(
    policy: TestPolicy,
    model: ModelSpec,
    truth: Hypothesis,
    runs: int,
    seed: int,
    max_samples: int = DEFAULT_MAX_SAMPLES,
    forced_decision: bool = False,
) -> SimulationReport:
    """Run trials ``0 .. runs - 1`` and summarize them."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    outcomes = simulate_trials(policy, model, truth, seed, range(runs), max_samples, forced_decision)
    return aggregate(outcomes, truth, seed)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    upper: float
    lower: float
    alpha0: float
    alpha1: float
    run_length: float
    run_length_se: float
    ratio: float  # run-length relative to the first policy


@dataclass(frozen=True)
class Comparison:
    rows: Tuple[ComparisonRow, ...]
    ratios: np.ndarray  # ratios[i, j] = E0[tau] of policy i / E0[tau] of policy j
    gamma: Tuple[float, float]
    runs: int
    seed: int
    reports: Tuple[Tuple[SimulationReport, SimulationReport], ...] = ()


def compare(
    policies: Sequence[Tuple[str, TestPolicy]],
    model: ModelSpec,
    gamma,
    runs: int,
    seed: int,
    max_samples: int = DEFAULT_MAX_SAMPLES,
) -> Comparison:
    """Empirical errors under both hypotheses and run-length under H0 for each policy.

    All policies see the same trial streams, which makes their run-length
    ratios far less noisy than independent runs would.
    """
    if len(policies) < 2:
        raise ValueError("compare needs at least two policies")
    rows, reports, lengths = [], [], []
    for name, policy in policies:
        r0 = monte_carlo(policy, model, Hypothesis.H0, runs, seed, max_samples)
        r1 = monte_carlo(policy, model, Hypothesis.H1, runs, seed, max_samples)
        reports.append((r0, r1))
        lengths.append(r0.mean_run_length)
        theta = model.theta0
        upper, lower = policy.thresholds(theta)
        rows.append([name, upper, lower, r0.empirical_error, r1.empirical_error, r0.mean_run_length, r0.run_length_se])
    lengths = np.array(lengths)
    ratios = lengths[:, None] / lengths[None, :]
    out = tuple(ComparisonRow(*row, float(ratios[i, 0])) for i, row in enumerate(rows))
    return Comparison(out, ratios, (float(gamma[0]), float(gamma[1])), runs, seed, tuple(reports))


def write_comparison_csv(path, comparison: Comparison) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["policy", "A", "B", "alpha0", "alpha1", "E0_tau", "E0_tau_se", "ratio"])
        for row in comparison.rows:
            out.writerow(
                [row.name]
                + [repr(float(v)) for v in (row.upper, row.lower, row.alpha0, row.alpha1, row.run_length)]
                + [repr(float(row.run_length_se)), repr(float(row.ratio))]
            )
