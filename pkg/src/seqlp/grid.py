"""Discretization grid over the warped likelihood ratio and the statistic axis.

The likelihood ratio ``z`` is sampled uniformly in the warped coordinate
``t = 1 / (1 + z**-beta)``. Cells are stored theta-major: the flat index of
``(j, k)`` (``j`` on the ratio axis, ``k`` on the statistic axis) is
``k * m_z + j``. For the two-state chain this stacks ``rho(z, 1)`` on top of
``rho(z, 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .models import Ar1, DomainError, IidGaussian, ModelSpec, TwoStateChain


class GridError(ValueError):
    pass


def warp(z, beta: float):
    """Map likelihood ratios ``z > 0`` to ``(0, 1]``."""
    z = np.asarray(z, dtype=float)
    if beta <= 0:
        raise DomainError("beta must be positive")
    if np.any(z <= 0):
        raise DomainError("warp is defined for z > 0 only")
    out = 1.0 / (1.0 + z ** (-beta))
    return float(out) if out.ndim == 0 else out


def unwarp(t, beta: float):
    """Inverse of :func:`warp` on the open unit interval."""
    t = np.asarray(t, dtype=float)
    if beta <= 0:
        raise DomainError("beta must be positive")
    if np.any((t <= 0) | (t >= 1)):
        raise DomainError("unwarp is defined for 0 < t < 1 only")
    out = np.exp(log_unwarp(t, beta))
    return float(out) if out.ndim == 0 else out


def log_unwarp(t, beta: float):
    """``log(unwarp(t))``, i.e. the log-likelihood ratio for a warped coordinate."""
    t = np.asarray(t, dtype=float)
    return (np.log(t) - np.log1p(-t)) / beta


def log_warp(s, beta: float):
    """Warped coordinate of a log-likelihood ratio ``s``."""
    s = np.asarray(s, dtype=float)
    return 1.0 / (1.0 + np.exp(-beta * s))


def wald_band(gamma: Tuple[float, float]) -> Tuple[float, float]:
    """Classical Wald thresholds ``(B, A)`` in the log-likelihood-ratio domain."""
    g0, g1 = gamma
    if not (0 < g0 < 1 and 0 < g1 < 1):
        raise DomainError(f"target error probabilities must lie in (0, 1), got {gamma}")
    return math.log(g1 / (1.0 - g0)), math.log((1.0 - g1) / g0)


@dataclass(frozen=True, eq=False)
class Grid:
    beta: float
    t_points: np.ndarray
    theta_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    theta_kind: str = "none"  # "none", "discrete" or "real"
    theta0: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.t_points, dtype=float)
        object.__setattr__(self, "t_points", t)
        object.__setattr__(self, "theta_points", np.asarray(self.theta_points, dtype=float))
        if t.ndim != 1 or t.size == 0:
            raise GridError("t_points must be a non-empty vector")
        if np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) <= 0):
            raise GridError("t_points must be strictly increasing inside (0, 1)")
        if not np.any(t == 0.5):
            raise GridError("t = 0.5 must be a grid point so that z = 1 is representable")
        if self.theta_kind == "none":
            if self.theta_points.size:
                raise GridError("a grid without statistic axis cannot carry theta points")
        else:
            if self.theta_points.size == 0 or np.any(np.diff(self.theta_points) <= 0):
                raise GridError("theta points must be strictly increasing")
            if not np.any(self.theta_points == self.theta0):
                raise GridError(f"theta0={self.theta0} must be a grid point")

    @property
    def m_z(self) -> int:
        return self.t_points.size

    @property
    def m_theta(self) -> int:
        return max(1, self.theta_points.size)

    @property
    def size(self) -> int:
        return self.m_z * self.m_theta

    @cached_property
    def s_points(self) -> np.ndarray:
        s = log_unwarp(self.t_points, self.beta)
        s[self.t_points == 0.5] = 0.0
        return s

    @cached_property
    def z_points(self) -> np.ndarray:
        z = np.exp(self.s_points)
        z[self.t_points == 0.5] = 1.0
        return z

    @cached_property
    def s_edges(self) -> np.ndarray:
        """Cell boundaries on the log-ratio axis; the outer cells are unbounded."""
        s = self.s_points
        return np.concatenate(([-np.inf], 0.5 * (s[1:] + s[:-1]), [np.inf]))

    @cached_property
    def theta_edges(self) -> np.ndarray:
        th = self.theta_points
        if self.theta_kind != "real":
            raise GridError("theta edges exist only for a real statistic axis")
        return np.concatenate(([-np.inf], 0.5 * (th[1:] + th[:-1]), [np.inf]))

    @cached_property
    def anchor_z_index(self) -> int:
        return int(np.flatnonzero(self.t_points == 0.5)[0])

    @cached_property
    def anchor_theta_index(self) -> int:
        if self.theta_kind == "none":
            return 0
        return int(np.flatnonzero(self.theta_points == self.theta0)[0])

    @cached_property
    def anchor_index(self) -> int:
        return self.flat_index(self.anchor_z_index, self.anchor_theta_index)

    def flat_index(self, j, k):
        return k * self.m_z + j

    @cached_property
    def cell_s(self) -> np.ndarray:
        """Log-ratio of every flat cell."""
        return np.tile(self.s_points, self.m_theta)

    @cached_property
    def cell_z(self) -> np.ndarray:
        return np.tile(self.z_points, self.m_theta)

    @cached_property
    def cell_theta(self) -> np.ndarray:
        """Statistic value of every flat cell (NaN for the i.i.d. model)."""
        if self.theta_kind == "none":
            return np.full(self.size, np.nan)
        return np.repeat(self.theta_points, self.m_z)

    def theta_slot(self, theta) -> int:
        """Row index of a discrete statistic value."""
        if self.theta_kind == "none":
            return 0
        hits = np.flatnonzero(self.theta_points == theta)
        if hits.size == 0:
            raise DomainError(f"theta={theta!r} is not on the grid")
        return int(hits[0])

    def s_cell_width(self, j: Optional[int] = None) -> float:
        """Width of the log-ratio cell ``j`` (the largest interior width when omitted)."""
        s = self.s_points
        if s.size < 2:
            return 0.0
        widths = np.diff(s)
        if j is None:
            return float(widths.max())
        lo = widths[j - 1] if j > 0 else widths[0]
        hi = widths[j] if j < widths.size else widths[-1]
        return float(0.5 * (lo + hi))

    def metadata(self) -> dict:
        return {
            "beta": self.beta,
            "m_z": self.m_z,
            "m_theta": self.theta_points.size,
            "theta_kind": self.theta_kind,
            "s_min": float(self.s_points[0]),
            "s_max": float(self.s_points[-1]),
            "theta_min": float(self.theta_points[0]) if self.theta_points.size else None,
            "theta_max": float(self.theta_points[-1]) if self.theta_points.size else None,
            "theta0": self.theta0,
            "cells": self.size,
            "anchor_index": self.anchor_index,
        }


def default_theta_bounds(model: Ar1) -> Tuple[float, float]:
    half = 6.0 * model.sigma
    return -half, half


def _real_axis(lo: float, hi: float, m: int, theta0: float) -> np.ndarray:
    if m < 3 or m % 2 == 0:
        raise GridError(f"m_theta must be odd and at least 3, got {m}")
    if not hi > lo:
        raise GridError(f"degenerate statistic range [{lo}, {hi}]")
    step = (hi - lo) / (m - 1)
    # shift so that theta0 is a node, keeping the spacing
    shift = round((theta0 - lo) / step)
    if not (0 <= shift < m):
        raise GridError(f"theta0={theta0} lies outside the statistic range [{lo}, {hi}]")
    pts = theta0 + step * (np.arange(m) - shift)
    pts[shift] = theta0
    return pts


def build_grid(
    model: ModelSpec,
    m_z: int = 201,
    m_theta: int = 201,
    beta: float = 0.5,
    gamma: Tuple[float, float] = (0.1, 0.1),
    s_margin: Optional[float] = None,
    s_max: Optional[float] = None,
    theta_bounds: Optional[Sequence[float]] = None,
) -> Grid:
    """Build the grid for ``model``.

    The log-ratio range is symmetric, ``[-s_max, s_max]``. Unless given, ``s_max``
    covers Wald's band for ``gamma`` widened by ``s_margin`` on each side
    (default: half the band width). ``gamma`` should be the smallest target the
    grid will be used for.
    """
    if m_z < 3 or m_z % 2 == 0:
        raise GridError(f"m_z must be odd and at least 3, got {m_z}")
    if beta <= 0:
        raise GridError("beta must be positive")
    if s_max is None:
        lower, upper = wald_band(gamma)
        if s_margin is None:
            s_margin = 0.5 * (upper - lower)
        s_max = max(upper + s_margin, -(lower - s_margin))
    if not (math.isfinite(s_max) and s_max > 0):
        raise GridError(f"degenerate log-ratio range, s_max={s_max}")
    t_hi = float(log_warp(s_max, beta))
    if not t_hi < 1.0:
        raise GridError(f"s_max={s_max} is too large for beta={beta}")
    half = (m_z - 1) // 2
    offsets = np.arange(-half, half + 1) / half
    t = 0.5 + (t_hi - 0.5) * offsets
    t[half] = 0.5

    if isinstance(model, IidGaussian):
        return Grid(beta=beta, t_points=t)
    if isinstance(model, TwoStateChain):
        return Grid(
            beta=beta,
            t_points=t,
            theta_points=np.array(TwoStateChain.states, dtype=float),
            theta_kind="discrete",
            theta0=float(model.theta0),
        )
    if isinstance(model, Ar1):
        lo, hi = theta_bounds if theta_bounds is not None else default_theta_bounds(model)
        pts = _real_axis(float(lo), float(hi), m_theta, float(model.theta0))
        return Grid(beta=beta, t_points=t, theta_points=pts, theta_kind="real", theta0=float(model.theta0))
    raise TypeError(f"unknown model {model!r}")


def locate(grid: Grid, s: float, theta=None):
    """Cells and convex weights that represent the point ``(s, theta)``.

    Returns ``(indices, weights)``. The point is interpolated linearly in ``s``
    between the two bracketing cells and, for a real statistic axis, linearly in
    ``theta``. Points outside the grid are clamped to the boundary cells.
    """
    js, ws = _bracket(grid.s_points, s)
    if grid.theta_kind == "none":
        ks, wk = [0], [1.0]
    elif grid.theta_kind == "discrete":
        ks, wk = [grid.theta_slot(theta)], [1.0]
    else:
        ks, wk = _bracket(grid.theta_points, float(theta))
    idx, w = [], []
    for k, a in zip(ks, wk):
        for j, b in zip(js, ws):
            if a * b > 0:
                idx.append(grid.flat_index(j, k))
                w.append(a * b)
    return np.array(idx, dtype=int), np.array(w)


def _bracket(points: np.ndarray, x: float):
    n = points.size
    if n == 1 or x <= points[0]:
        return [0], [1.0]
    if x >= points[-1]:
        return [n - 1], [1.0]
    hi = int(np.searchsorted(points, x, side="right"))
    lo = hi - 1
    if points[lo] == x:
        return [lo], [1.0]
    f = (x - points[lo]) / (points[hi] - points[lo])
    return [lo, hi], [1.0 - f, f]
