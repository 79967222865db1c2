import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from seqlp import IidGaussian
from seqlp.design import extract_thresholds, solution_from_rho
from seqlp.grid import Grid
from seqlp.kernels import MeasureTag, TransitionKernel, build_kernel
from seqlp.verify import (
    FredholmError,
    bellman_apply,
    dual_objective,
    fd_derivative,
    fredholm_derivative,
    fredholm_errors,
    richardson_derivative,
    run_length,
    scaling_bounds_check,
    value_iteration,
)


@pytest.fixture(scope="module")
def iid_p1_kernel(iid_problem):
    return build_kernel(iid_problem.model, iid_problem.grid, MeasureTag.P1)


@pytest.fixture(scope="module")
def chain_p1_kernel(chain_problem):
    return build_kernel(chain_problem.model, chain_problem.grid, MeasureTag.P1)


def all_stop_masks(grid):
    n = grid.size
    return np.zeros(n, bool), np.ones(n, bool), np.zeros(n, bool)


class TestBellman:
    def test_zero_input(self, iid_problem):
        lam = (3.0, 5.0)
        g = np.minimum(lam[0], lam[1] * iid_problem.grid.cell_z)
        out = bellman_apply(np.zeros(iid_problem.grid.size), lam, iid_problem.kernel)
        np.testing.assert_array_equal(out, np.minimum(g, 1.0))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), l0=st.floats(0.0, 50.0), l1=st.floats(0.0, 50.0))
    def test_monotone_and_capped(self, iid_problem, seed, l0, l1):
        rng = np.random.default_rng(seed)
        n = iid_problem.grid.size
        rho = rng.random(n) * 20
        bigger = rho + rng.random(n)
        lo = bellman_apply(rho, (l0, l1), iid_problem.kernel)
        hi = bellman_apply(bigger, (l0, l1), iid_problem.kernel)
        assert np.all(lo <= hi + 1e-12)
        g = np.minimum(l0, l1 * iid_problem.grid.cell_z)
        assert np.all(hi <= g)


class TestValueIteration:
    def test_zero_multipliers(self, iid_problem):
        vf = value_iteration((0.0, 0.0), iid_problem.kernel)
        assert vf.iterations == 1
        assert np.all(vf.values == 0.0)

    def test_negative_multipliers_rejected(self, iid_problem):
        with pytest.raises(ValueError):
            value_iteration((-1.0, 1.0), iid_problem.kernel)

    @pytest.mark.parametrize("name", ["iid", "chain", "ar1_small"])
    def test_matches_lp(self, name, request):
        sol = request.getfixturevalue(f"{name}_design")
        kernel = request.getfixturevalue(f"{name}_problem").kernel
        vf = value_iteration(sol.lam, kernel)
        assert vf.converged
        anchor = sol.anchor_value
        assert vf.anchor(sol.grid) == pytest.approx(anchor, abs=1e-4 * (1 + anchor))

    def test_iterates_nonincreasing_and_bounded(self, chain_problem, chain_design):
        kernel = chain_problem.kernel
        lam = chain_design.lam
        g = np.minimum(lam[0], lam[1] * kernel.grid.cell_z)
        cur = g.copy()
        for _ in range(100):
            nxt = bellman_apply(cur, lam, kernel)
            assert np.all(nxt <= cur + 1e-12)
            assert np.all((nxt >= 0) & (nxt <= g))
            cur = nxt

    def test_converged_field_has_small_residual(self, iid_problem):
        vf = value_iteration((9.0, 18.0), iid_problem.kernel, tol=1e-11)
        residual = np.abs(bellman_apply(vf.values, vf.lam, iid_problem.kernel) - vf.values).max()
        assert residual <= 1e-11


class TestFredholm:
    def test_designed_errors_near_targets(self, iid_problem, iid_p1_kernel, iid_design):
        err = fredholm_errors(iid_problem.kernel, iid_p1_kernel, iid_design)
        a0, a1 = err.anchor_values
        assert a0 == pytest.approx(0.1, abs=0.005)
        assert a1 == pytest.approx(0.1, abs=0.005)
        assert np.all((err.alpha0 >= -1e-12) & (err.alpha0 <= 1 + 1e-12))
        assert max(err.spectral_estimates) < 1.0

    def test_all_stop_decide_h0(self, iid_problem, iid_p1_kernel):
        err = fredholm_errors(iid_problem.kernel, iid_p1_kernel, all_stop_masks(iid_problem.grid))
        assert np.all(err.alpha0 == 0.0)
        assert np.all(err.alpha1 == 1.0)

    def test_all_stop_derivative(self, iid_problem, iid_p1_kernel):
        grid = iid_problem.grid
        h1 = grid.cell_z >= 1.0
        masks = (h1, ~h1, np.zeros(grid.size, bool))
        r0, r1 = fredholm_derivative(iid_problem.kernel, iid_p1_kernel, masks)
        np.testing.assert_array_equal(r0[h1], 1.0)
        np.testing.assert_array_equal(r1[~h1], grid.cell_z[~h1])

    @pytest.mark.parametrize("name", ["iid", "chain"])
    def test_derivative_identity(self, name, request):
        problem = request.getfixturevalue(f"{name}_problem")
        sol = request.getfixturevalue(f"{name}_design")
        k1 = request.getfixturevalue(f"{name}_p1_kernel")
        err = fredholm_errors(problem.kernel, k1, sol)
        r0, r1 = fredholm_derivative(problem.kernel, k1, sol)
        cont = sol.continue_mask
        z = sol.grid.cell_z
        np.testing.assert_allclose(r0[cont], err.alpha0[cont], atol=1e-10)
        # the two kernels are related by the likelihood ratio only up to quadrature error
        np.testing.assert_allclose(r1[cont], (z * err.alpha1)[cont], rtol=1e-3)
        anchor = sol.grid.anchor_index
        assert r0[anchor] == pytest.approx(err.anchor_values[0], abs=1e-10)
        assert r1[anchor] == pytest.approx(err.anchor_values[1], rel=1e-3)

    def test_singular_system(self):
        model = IidGaussian()
        grid = Grid(beta=0.5, t_points=np.array([0.25, 0.5, 0.75]))
        kernel = TransitionKernel(sp.identity(3, format="csc"), MeasureTag.P0, grid, model)
        other = TransitionKernel(sp.identity(3, format="csc"), MeasureTag.P1, grid, model)
        masks = (np.array([False, False, True]), np.array([True, False, False]), np.array([False, True, False]))
        with pytest.raises(FredholmError) as info:
            fredholm_errors(kernel, other, masks)
        assert info.value.spectral_estimate == pytest.approx(1.0)

    def test_masks_must_partition(self, iid_problem, iid_p1_kernel):
        n = iid_problem.grid.size
        bad = (np.ones(n, bool), np.ones(n, bool), np.zeros(n, bool))
        with pytest.raises(ValueError):
            fredholm_errors(iid_problem.kernel, iid_p1_kernel, bad)

    def test_kernel_order_checked(self, iid_problem, iid_p1_kernel, iid_design):
        with pytest.raises(ValueError):
            fredholm_errors(iid_p1_kernel, iid_problem.kernel, iid_design)


class TestRunLength:
    def test_all_stop(self, iid_problem):
        field, anchor = run_length(iid_problem.kernel, np.zeros(iid_problem.grid.size, bool))
        assert anchor == 0.0 and np.all(field == 0.0)

    def test_identity_with_errors(self, iid_problem, iid_p1_kernel, iid_design):
        sol = iid_design
        _, n = run_length(iid_problem.kernel, sol.continue_mask)
        err = fredholm_errors(iid_problem.kernel, iid_p1_kernel, sol)
        r0, r1 = fredholm_derivative(iid_problem.kernel, iid_p1_kernel, sol)
        anchor = sol.grid.anchor_index
        # the cost-to-go splits into samples plus weighted stopping costs
        # r1 carries the quadrature error of the change of measure, hence the 1e-5
        value = n + sol.lam[0] * r0[anchor] + sol.lam[1] * r1[anchor]
        assert value == pytest.approx(sol.anchor_value, rel=1e-5)
        assert n == pytest.approx(sol.anchor_value - sol.lam[0] * err.anchor_values[0] - sol.lam[1] * err.anchor_values[1], abs=1e-3 * (1 + n))

    def test_matches_lp(self, chain_problem, chain_design):
        _, n = run_length(chain_problem.kernel, chain_design.continue_mask)
        assert n == pytest.approx(chain_design.expected_run_length, rel=0.02)


class TestDual:
    def test_zero(self, iid_problem):
        assert dual_objective((0.0, 0.0), (0.1, 0.1), iid_problem.kernel) == 0.0

    @pytest.mark.parametrize("name", ["iid", "chain"])
    def test_at_optimum(self, name, request):
        sol = request.getfixturevalue(f"{name}_design")
        kernel = request.getfixturevalue(f"{name}_problem").kernel
        value = dual_objective(sol.lam, sol.gamma, kernel)
        assert value == pytest.approx(sol.expected_run_length, abs=1e-4 * (1 + value))

    @settings(max_examples=20, deadline=None)
    @given(
        a=st.tuples(st.floats(0.0, 40.0), st.floats(0.0, 40.0)),
        b=st.tuples(st.floats(0.0, 40.0), st.floats(0.0, 40.0)),
    )
    def test_midpoint_concavity(self, iid_problem, a, b):
        kernel = iid_problem.kernel
        mid = ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)
        lhs = dual_objective(mid, (0.1, 0.1), kernel)
        rhs = 0.5 * (dual_objective(a, (0.1, 0.1), kernel) + dual_objective(b, (0.1, 0.1), kernel))
        assert lhs >= rhs - 1e-9


class TestFiniteDifference:
    @pytest.mark.parametrize("i", [0, 1])
    def test_slope_equals_target(self, iid_problem, iid_design, i):
        assert fd_derivative(iid_design.lam, i, iid_problem.kernel) == pytest.approx(0.1, rel=0.02)

    def test_trivial_region(self, iid_problem):
        # with lam0 < 1 and lam0 < lam1 the anchor stops at once and decides H1
        kernel = iid_problem.kernel
        assert fd_derivative((0.3, 0.6), 0, kernel) == pytest.approx(1.0, abs=1e-9)
        assert fd_derivative((0.6, 0.3), 1, kernel) == pytest.approx(1.0, abs=1e-9)
        slope = fd_derivative((0.3, 0.6), 0, kernel) - 0.1
        assert slope == pytest.approx(0.9) and slope > 0

    @pytest.mark.parametrize("i", [0, 1])
    @pytest.mark.parametrize("factor", [0.97, 1.03])
    def test_matches_fredholm_off_the_optimum(self, iid_problem, iid_p1_kernel, iid_design, i, factor):
        # the optimal multipliers sit on a kink of the cost-to-go, so the
        # comparison is made at nearby multipliers where one policy is optimal
        lam = (iid_design.lam[0] * factor, iid_design.lam[1] * factor)
        vf = value_iteration(lam, iid_problem.kernel)
        sol = solution_from_rho(iid_problem, lam, vf.values)
        rich = richardson_derivative(lam, i, iid_problem.kernel)
        r = fredholm_derivative(iid_problem.kernel, iid_p1_kernel, sol)[i]
        anchor = iid_problem.grid.anchor_index
        assert rich.extrapolated == pytest.approx(r[anchor], abs=max(1e-3, 10 * rich.truncation))

    @pytest.mark.parametrize("i", [0, 1])
    def test_at_the_optimum_between_neighbouring_policies(self, iid_problem, iid_p1_kernel, iid_design, i):
        kernel = iid_problem.kernel
        anchor = iid_problem.grid.anchor_index
        slopes = []
        for factor in (0.999, 1.001):
            lam = (iid_design.lam[0] * factor, iid_design.lam[1] * factor)
            sol = solution_from_rho(iid_problem, lam, value_iteration(lam, kernel).values)
            slopes.append(fredholm_derivative(kernel, iid_p1_kernel, sol)[i][anchor])
        fd = fd_derivative(iid_design.lam, i, kernel)
        assert min(slopes) - 1e-6 <= fd <= max(slopes) + 1e-6
        assert fd == pytest.approx(0.1, rel=0.02)

    def test_bad_step(self, iid_problem):
        with pytest.raises(ValueError):
            fd_derivative((1.0, 1.0), 0, iid_problem.kernel, epsilon=0.0)


class TestScaling:
    def test_identity(self, iid_problem, iid_design):
        report = scaling_bounds_check(iid_design.lam, iid_problem.kernel, (1.0, 1.0))
        assert report.max_violation <= 1e-13 and report.passed
        assert report.checked == iid_problem.grid.size

    @pytest.mark.parametrize("name", ["iid", "chain"])
    def test_doubling(self, name, request):
        sol = request.getfixturevalue(f"{name}_design")
        kernel = request.getfixturevalue(f"{name}_problem").kernel
        assert scaling_bounds_check(sol.lam, kernel, (2.0, 2.0)).passed

    def test_random_scalings(self, iid_problem, iid_design):
        rng = np.random.default_rng(7)
        kernel = iid_problem.kernel
        base = value_iteration(iid_design.lam, kernel)
        for a in rng.uniform(0.5, 2.0, size=(100, 2)):
            report = scaling_bounds_check(iid_design.lam, kernel, a, base=base)
            assert report.passed, (a, report)

    def test_rejects_nonpositive(self, iid_problem):
        with pytest.raises(ValueError):
            scaling_bounds_check((1.0, 1.0), iid_problem.kernel, (0.0, 1.0))


def test_thresholds_stable_under_classifier_tolerance(iid_problem, iid_design):
    loose = solution_from_rho(iid_problem, iid_design.lam, iid_design.rho, classify_tol=1e-4)
    tight = solution_from_rho(iid_problem, iid_design.lam, iid_design.rho, classify_tol=1e-8)
    a = extract_thresholds(loose)
    b = extract_thresholds(tight)
    width = iid_problem.grid.s_cell_width()
    assert abs(a.A - b.A) <= width and abs(a.B - b.B) <= width
