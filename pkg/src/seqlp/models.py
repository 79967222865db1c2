"""Observation models for two simple hypotheses with a Markov sufficient statistic.

Three models are supported:

* :class:`IidGaussian` -- i.i.d. N(0, sigma) under H0 versus N(mu, sigma) under H1.
  The statistic space is empty; ``None`` is used as the unit statistic.
* :class:`TwoStateChain` -- observable two-state chain. An observation is the pair
  ``(y, state)``. Under H0 the state is drawn from ``p0`` independently of the past
  and ``y ~ N(0, sigma)``; under H1 the state follows the transition matrix ``p1``
  and ``y ~ N(state / 2, sigma)``. The statistic is the last observed state.
* :class:`Ar1` -- Gaussian AR(1) with coefficient ``a0`` under H0 and ``a1`` under H1.
  The statistic is the previous observation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Raised when an argument lies outside the model's domain."""


class Hypothesis(enum.IntEnum):
    H0 = 0
    H1 = 1


def _normal_logpdf(x: float, mean: float, sigma: float) -> float:
    u = (x - mean) / sigma
    return -0.5 * u * u - math.log(sigma) - _LOG_SQRT_2PI


@dataclass(frozen=True)
class IidGaussian:
    mu: float = 1.0
    sigma: float = 1.0

    theta0 = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.mu == 0:
            raise DomainError("mu must be nonzero, otherwise the hypotheses coincide")

    @property
    def name(self) -> str:
        return "iid"


@dataclass(frozen=True)
class TwoStateChain:
    sigma: float = 1.0
    p0: Tuple[float, float] = (0.5, 0.5)
    p1: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.8, 0.2), (0.2, 0.8))
    theta0: int = 1

    states = (1, 2)

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        p0 = tuple(float(v) for v in self.p0)
        p1 = tuple(tuple(float(v) for v in row) for row in self.p1)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        if len(p0) != 2 or min(p0) < 0 or abs(sum(p0) - 1.0) > 1e-12:
            raise DomainError(f"p0 must be a probability vector over two states, got {p0}")
        if len(p1) != 2 or any(len(row) != 2 for row in p1):
            raise DomainError("p1 must be a 2x2 matrix")
        for row in p1:
            if min(row) < 0 or abs(sum(row) - 1.0) > 1e-12:
                raise DomainError(f"rows of p1 must be probability vectors, got {row}")
        if self.theta0 not in self.states:
            raise DomainError(f"theta0 must be 1 or 2, got {self.theta0}")

    @property
    def name(self) -> str:
        return "chain"

    def p0_of(self, state: int) -> float:
        return self.p0[state - 1]

    def p1_of(self, state: int, prev: int) -> float:
        return self.p1[prev - 1][state - 1]


@dataclass(frozen=True)
class Ar1:
    a0: float = 0.0
    a1: float = 1.0
    sigma: float = 1.0
    theta0: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.a0 == self.a1:
            raise DomainError("a0 and a1 must differ")
        if not math.isfinite(self.theta0):
            raise DomainError("theta0 must be finite")

    @property
    def name(self) -> str:
        return "ar1"

    def coefficient(self, hyp: Hypothesis) -> float:
        return self.a1 if hyp == Hypothesis.H1 else self.a0


ModelSpec = Union[IidGaussian, TwoStateChain, Ar1]


def _check_theta(model: ModelSpec, theta) -> None:
    if isinstance(model, IidGaussian):
        if theta is not None:
            raise DomainError("the i.i.d. model has no statistic; pass theta=None")
    elif isinstance(model, TwoStateChain):
        if theta not in TwoStateChain.states:
            raise DomainError(f"chain statistic must be 1 or 2, got {theta!r}")
    elif isinstance(model, Ar1):
        if theta is None or not math.isfinite(theta):
            raise DomainError(f"AR(1) statistic must be a finite real, got {theta!r}")
    else:
        raise TypeError(f"unknown model {model!r}")


def _split_chain_obs(x):
    try:
        y, state = x
    except (TypeError, ValueError):
        raise DomainError(f"chain observations are (y, state) pairs, got {x!r}") from None
    if state not in TwoStateChain.states:
        raise DomainError(f"observed state must be 1 or 2, got {state!r}")
    return float(y), int(state)


def log_conditional_density(model: ModelSpec, hyp: Hypothesis, x, theta) -> float:
    """Log of the one-step density of ``x`` given the statistic ``theta``."""
    hyp = Hypothesis(hyp)
    _check_theta(model, theta)
    if isinstance(model, IidGaussian):
        mean = model.mu if hyp == Hypothesis.H1 else 0.0
        return _normal_logpdf(float(x), mean, model.sigma)
    if isinstance(model, TwoStateChain):
        y, state = _split_chain_obs(x)
        if hyp == Hypothesis.H0:
            p, mean = model.p0_of(state), 0.0
        else:
            p, mean = model.p1_of(state, theta), state / 2.0
        if p == 0:
            return -math.inf
        return math.log(p) + _normal_logpdf(y, mean, model.sigma)
    return _normal_logpdf(float(x), model.coefficient(hyp) * theta, model.sigma)


def conditional_density(model: ModelSpec, hyp: Hypothesis, x, theta) -> float:
    """One-step density ``f_{hyp, theta}(x)``."""
    return math.exp(log_conditional_density(model, hyp, x, theta))


def llr_increment(model: ModelSpec, x, theta) -> float:
    """Log-likelihood-ratio increment ``log f1(x|theta) - log f0(x|theta)``.

    Evaluated in closed form so that tail observations do not underflow.
    """
    _check_theta(model, theta)
    if isinstance(model, IidGaussian):
        mu, var = model.mu, model.sigma**2
        return float(x) * mu / var - mu * mu / (2.0 * var)
    if isinstance(model, TwoStateChain):
        y, state = _split_chain_obs(x)
        p0, p1 = model.p0_of(state), model.p1_of(state, theta)
        var = model.sigma**2
        with np.errstate(divide="ignore"):
            log_ratio = float(np.log(p1) - np.log(p0))
        return log_ratio + y * state / (2.0 * var) - state * state / (8.0 * var)
    var = model.sigma**2
    da = model.a1 - model.a0
    return da * theta * float(x) / var - (model.a1**2 - model.a0**2) * theta * theta / (2.0 * var)


def update_statistic(model: ModelSpec, theta, x):
    """Next value of the sufficient statistic after observing ``x``."""
    _check_theta(model, theta)
    if isinstance(model, IidGaussian):
        return None
    if isinstance(model, TwoStateChain):
        return _split_chain_obs(x)[1]
    return float(x)


def sample_observation(model: ModelSpec, hyp: Hypothesis, theta, rng: np.random.Generator):
    """Draw one observation from the model under ``hyp`` given ``theta``."""
    hyp = Hypothesis(hyp)
    _check_theta(model, theta)
    if isinstance(model, IidGaussian):
        mean = model.mu if hyp == Hypothesis.H1 else 0.0
        return mean + model.sigma * rng.standard_normal()
    if isinstance(model, TwoStateChain):
        p_first = model.p0[0] if hyp == Hypothesis.H0 else model.p1[theta - 1][0]
        state = 1 if rng.random() < p_first else 2
        mean = state / 2.0 if hyp == Hypothesis.H1 else 0.0
        return (mean + model.sigma * rng.standard_normal(), state)
    return model.coefficient(hyp) * theta + model.sigma * rng.standard_normal()


def statistic_space(model: ModelSpec):
    """Discrete statistic values, ``()`` for the i.i.d. model, ``None`` for a real axis."""
    if isinstance(model, IidGaussian):
        return ()
    if isinstance(model, TwoStateChain):
        return TwoStateChain.states
    return None
