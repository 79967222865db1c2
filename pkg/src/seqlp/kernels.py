"""Column-stochastic transition matrices on the design grid.

Entry ``(i, j)`` of a kernel matrix is the probability of moving from grid cell
``j`` to grid cell ``i`` with one observation, so the continuation cost of a
row vector ``rho`` is ``1 + rho @ H``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

from .grid import Grid
from .models import Ar1, Hypothesis, IidGaussian, ModelSpec, TwoStateChain

# entries below this are dropped before renormalization; the dropped mass per
# column stays far below 1e-9 even on 201 x 201 grids
MASS_CUTOFF = 1e-12

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class MeasureTag(enum.Enum):
    P0 = 0
    P1 = 1

    @property
    def hypothesis(self) -> Hypothesis:
        return Hypothesis(self.value)


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    matrix: sp.csc_matrix
    measure: MeasureTag
    grid: Grid
    model: ModelSpec

    @cached_property
    def transposed(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Expected next-step value ``(values @ H)_j`` for every source cell ``j``."""
        return self.transposed @ values

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


def gauss_mass(lo, hi):
    """``Phi(hi) - Phi(lo)`` without cancellation in the upper tail."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    upper = lo > 0
    return np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def _phi(u):
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(-0.5 * u * u) / _SQRT_2PI
    return np.where(np.isfinite(u), out, 0.0)


def _assemble(rows, cols, vals, grid: Grid) -> sp.csc_matrix:
    keep = vals > MASS_CUTOFF
    m = grid.size
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(m, m)).tocsc()
    mat.sum_duplicates()
    sums = np.asarray(mat.sum(axis=0)).ravel()
    if np.any(sums < 0.5):
        bad = int(np.argmin(sums))
        raise KernelError(
            f"column {bad} keeps only {sums[bad]:.3g} of its mass; the grid range is too small"
        )
    mat = mat @ sp.diags(1.0 / sums)
    return sp.csc_matrix(mat)


def _deposit_on_s(grid: Grid, src_s: np.ndarray, mean: np.ndarray, sd: np.ndarray, weight: np.ndarray):
    """Masses of N(src_s + mean, sd) on every log-ratio cell, scaled by ``weight``.

    All inputs broadcast over source entries; the result has a trailing axis of
    length ``m_z``.
    """
    edges = grid.s_edges
    center = (src_s + mean)[..., None]
    with np.errstate(invalid="ignore"):
        lo = (edges[:-1] - center) / sd[..., None]
        hi = (edges[1:] - center) / sd[..., None]
    return weight[..., None] * gauss_mass(lo, hi)


def _kernel_iid(model: IidGaussian, grid: Grid, measure: MeasureTag):
    drift = model.mu**2 / (2.0 * model.sigma**2)
    mean = -drift if measure is MeasureTag.P0 else drift
    sd = abs(model.mu) / model.sigma
    m = grid.m_z
    s = grid.s_points
    mass = _deposit_on_s(grid, s, np.full(m, mean), np.full(m, sd), np.ones(m))  # [src, dst]
    cols, rows = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    return rows.ravel(), cols.ravel(), mass.ravel()


def _chain_step(model: TwoStateChain, measure: MeasureTag, dest: int, prev: int):
    """(probability of ``dest``, mean of the log-ratio increment, its spread)."""
    var = model.sigma**2
    p0, p1 = model.p0_of(dest), model.p1_of(dest, prev)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(p1) - np.log(p0)
    y_mean = 0.0 if measure is MeasureTag.P0 else dest / 2.0
    mean = log_ratio + dest * y_mean / (2.0 * var) - dest * dest / (8.0 * var)
    sd = dest / (2.0 * model.sigma)
    weight = p0 if measure is MeasureTag.P0 else p1
    return weight, mean, sd


def _kernel_chain(model: TwoStateChain, grid: Grid, measure: MeasureTag):
    m = grid.m_z
    s = grid.s_points
    rows, cols, vals = [], [], []
    src_j, dst_i = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    for k, prev in enumerate(TwoStateChain.states):
        for l, dest in enumerate(TwoStateChain.states):
            weight, mean, sd = _chain_step(model, measure, dest, prev)
            if weight == 0:
                continue
            if np.isinf(mean):
                # the increment is certain to be +-inf: everything lands on a boundary cell
                mass = np.zeros((m, m))
                mass[:, -1 if mean > 0 else 0] = weight
            else:
                mass = _deposit_on_s(grid, s, np.full(m, mean), np.full(m, sd), np.full(m, weight))
            rows.append((l * m + dst_i).ravel())
            cols.append((k * m + src_j).ravel())
            vals.append(mass.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _kernel_ar1(model: Ar1, grid: Grid, measure: MeasureTag):
    """AR(1) kernel.

    The next observation ``x ~ N(a_i theta, sigma)`` is binned on the statistic
    axis by CDF differences. Within a bin the log-ratio increment is linear in
    ``x``, so it is evaluated at the conditional mean of ``x`` over the bin,
    and the resulting ``s'`` is split between the two bracketing log-ratio cells.
    """
    m_z, m_t = grid.m_z, grid.theta_points.size
    th = grid.theta_points
    edges = grid.theta_edges
    sigma, var = model.sigma, model.sigma**2
    a = model.coefficient(measure.hypothesis)

    mean = a * th[:, None]  # [src k, 1]
    lo = (edges[None, :-1] - mean) / sigma
    hi = (edges[None, 1:] - mean) / sigma
    mass = gauss_mass(lo, hi)  # [src k, dst l]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = mean + sigma * (_phi(lo) - _phi(hi)) / mass
    cond = np.clip(np.where(mass > 0, cond, th[None, :]), edges[None, :-1], edges[None, 1:])
    ds = (model.a1 - model.a0) * th[:, None] * cond / var - (model.a1**2 - model.a0**2) * th[:, None] ** 2 / (
        2.0 * var
    )

    k_idx, l_idx = np.nonzero(mass > MASS_CUTOFF)
    w = mass[k_idx, l_idx]
    inc = ds[k_idx, l_idx]

    s = grid.s_points
    target = s[None, :] + inc[:, None]  # [pair, src j]
    hi_idx = np.clip(np.searchsorted(s, target, side="right"), 1, m_z - 1)
    lo_idx = hi_idx - 1
    frac = np.clip((target - s[lo_idx]) / (s[hi_idx] - s[lo_idx]), 0.0, 1.0)

    src = (k_idx[:, None] * m_z + np.arange(m_z)[None, :]).astype(np.int64)
    base = (l_idx[:, None] * m_z).astype(np.int64)
    rows = np.concatenate(((base + lo_idx).ravel(), (base + hi_idx).ravel()))
    cols = np.concatenate((src.ravel(), src.ravel()))
    vals = np.concatenate(((w[:, None] * (1.0 - frac)).ravel(), (w[:, None] * frac).ravel()))
    return rows, cols, vals


def build_kernel(model: ModelSpec, grid: Grid, measure: MeasureTag = MeasureTag.P0) -> TransitionKernel:
    """Discretize the one-step law of ``(s, theta)`` under ``measure``."""
    measure = MeasureTag(measure)
    if isinstance(model, IidGaussian) and grid.theta_kind == "none":
        parts = _kernel_iid(model, grid, measure)
    elif isinstance(model, TwoStateChain) and grid.theta_kind == "discrete":
        parts = _kernel_chain(model, grid, measure)
    elif isinstance(model, Ar1) and grid.theta_kind == "real":
        if grid.theta0 != model.theta0:
            raise KernelError("grid was built for a different initial statistic")
        parts = _kernel_ar1(model, grid, measure)
    else:
        raise KernelError(f"grid with theta axis {grid.theta_kind!r} does not fit model {model!r}")
    return TransitionKernel(_assemble(*parts, grid), measure, grid, model)


def hit_mass(kernel: TransitionKernel, target_mask: np.ndarray) -> np.ndarray:
    """One-step probability, per source cell, of landing in ``target_mask``."""
    mask = np.asarray(target_mask, dtype=bool)
    if mask.shape != (kernel.grid.size,):
        raise ValueError("mask length must equal the number of grid cells")
    return kernel.expect(mask.astype(float))


def restrict(kernel: TransitionKernel, keep_mask: np.ndarray) -> sp.csc_matrix:
    """Sub-matrix of the kernel over the kept cells (rows and columns)."""
    keep = np.asarray(keep_mask, dtype=bool)
    if keep.shape != (kernel.grid.size,):
        raise ValueError("mask length must equal the number of grid cells")
    if not keep.any():
        raise ValueError("cannot restrict a kernel to an empty set of cells")
    idx = np.flatnonzero(keep)
    return sp.csc_matrix(kernel.matrix[idx][:, idx])


def dump_triplets(kernel: TransitionKernel, path) -> None:
    """Write the kernel as ``row,col,value`` lines."""
    coo = kernel.matrix.tocoo()
    order = np.lexsort((coo.row, coo.col))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            writer.writerow([int(r), int(c), repr(float(v))])
