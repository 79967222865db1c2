import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from seqlp.grid import build_grid
from seqlp.kernels import (
    KernelError,
    MeasureTag,
    build_kernel,
    dump_triplets,
    gauss_mass,
    hit_mass,
    restrict,
)
from seqlp.models import Ar1, IidGaussian, TwoStateChain

MODELS = [IidGaussian(), TwoStateChain(), Ar1()]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
@pytest.mark.parametrize("measure", list(MeasureTag))
def test_columns_are_stochastic(model, measure):
    grid = build_grid(model, m_z=41, m_theta=21)
    k = build_kernel(model, grid, measure)
    np.testing.assert_allclose(k.column_sums(), 1.0, atol=1e-9)
    assert k.matrix.min() >= 0


@settings(max_examples=25, deadline=None)
@given(
    mu=st.floats(min_value=0.2, max_value=3.0),
    sigma=st.floats(min_value=0.3, max_value=3.0),
    g=st.floats(min_value=0.005, max_value=0.3),
)
def test_iid_columns_stochastic_for_any_parameters(mu, sigma, g):
    model = IidGaussian(mu, sigma)
    grid = build_grid(model, m_z=31, gamma=(g, g))
    for measure in MeasureTag:
        np.testing.assert_allclose(build_kernel(model, grid, measure).column_sums(), 1.0, atol=1e-9)


def test_iid_column_matches_normal_cell_masses():
    model = IidGaussian(mu=1.0, sigma=1.0)
    grid = build_grid(model, m_z=51)
    k = build_kernel(model, grid, MeasureTag.P1)
    j = 20
    edges = grid.s_edges
    # under P1 the log-ratio increment is N(mu^2 / 2, mu)
    expected = norm.cdf(edges[1:], grid.s_points[j] + 0.5, 1.0) - norm.cdf(edges[:-1], grid.s_points[j] + 0.5, 1.0)
    expected[expected <= 1e-12] = 0.0
    expected /= expected.sum()
    np.testing.assert_allclose(k.matrix[:, j].toarray().ravel(), expected, atol=1e-13)


def test_gauss_mass_tail_accuracy():
    assert gauss_mass(9.0, np.inf) == pytest.approx(norm.sf(9.0), rel=1e-10)
    assert gauss_mass(-np.inf, np.inf) == 1.0


def test_chain_state_marginals():
    model = TwoStateChain()
    grid = build_grid(model, m_z=41)
    m = grid.m_z
    for measure, expect in ((MeasureTag.P0, [[0.5, 0.5], [0.5, 0.5]]), (MeasureTag.P1, [[0.8, 0.2], [0.2, 0.8]])):
        dense = build_kernel(model, grid, measure).matrix.toarray()
        for prev in range(2):
            col = prev * m + m // 2
            to_first = dense[:m, col].sum()
            assert to_first == pytest.approx(expect[prev][0], abs=1e-12)


def test_ar1_statistic_marginal_and_sparsity():
    model = Ar1()
    grid = build_grid(model, m_z=31, m_theta=41)
    k = build_kernel(model, grid, MeasureTag.P1)
    m_z, m_t = grid.m_z, grid.m_theta
    src_theta = 25
    col = grid.flat_index(m_z // 2, src_theta)
    dense = k.matrix[:, col].toarray().ravel().reshape(m_t, m_z)
    edges = grid.theta_edges
    mean = grid.theta_points[src_theta]  # a1 = 1
    expected = norm.cdf(edges[1:], mean) - norm.cdf(edges[:-1], mean)
    np.testing.assert_allclose(dense.sum(axis=1), expected, atol=1e-11)
    counts = np.diff(k.matrix.indptr)
    assert counts.max() <= 2 * m_t


def test_ar1_kernel_preserves_log_ratio_drift():
    # expected log-ratio step under P0 for a0 = 0, a1 = 1 is -theta^2 / 2
    model = Ar1()
    grid = build_grid(model, m_z=61, m_theta=61)
    k = build_kernel(model, grid, MeasureTag.P0)
    mean_s = k.expect(grid.cell_s)
    for th_idx in (26, 30, 33):
        for j in (25, 30, 35):
            cell = grid.flat_index(j, th_idx)
            th = grid.theta_points[th_idx]
            # only the far tail of x lands beyond the log-ratio range and gets clamped
            assert mean_s[cell] - grid.cell_s[cell] == pytest.approx(-th * th / 2, abs=1e-5)


def test_hit_mass_and_restrict():
    model = IidGaussian()
    grid = build_grid(model, m_z=21)
    k = build_kernel(model, grid)
    everything = np.ones(grid.size, dtype=bool)
    np.testing.assert_allclose(hit_mass(k, everything), 1.0, atol=1e-12)
    keep = np.zeros(grid.size, dtype=bool)
    keep[5:15] = True
    sub = restrict(k, keep)
    assert sub.shape == (10, 10)
    assert np.asarray(sub.sum(axis=0)).max() < 1.0
    with pytest.raises(ValueError):
        restrict(k, np.zeros(grid.size, dtype=bool))
    with pytest.raises(ValueError):
        hit_mass(k, np.ones(3, dtype=bool))


def test_mismatched_grid_rejected():
    with pytest.raises(KernelError):
        build_kernel(Ar1(), build_grid(IidGaussian(), m_z=11))
    with pytest.raises(KernelError):
        build_kernel(Ar1(theta0=0.5), build_grid(Ar1(), m_z=11, m_theta=11))


def test_dump_triplets(tmp_path):
    grid = build_grid(IidGaussian(), m_z=11)
    k = build_kernel(IidGaussian(), grid)
    path = tmp_path / "k.csv"
    dump_triplets(k, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == k.nnz
    total = sum(float(r["value"]) for r in rows)
    assert total == pytest.approx(grid.size)
