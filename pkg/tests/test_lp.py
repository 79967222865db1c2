import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_lp, random_bounded_lp
from seqlp.lp import LinearProgram, LpStatus, solve_lp, write_mps


def lp(c, a, b):
    return LinearProgram(np.array(c, float), sp.csr_matrix(np.array(a, float)), np.array(b, float))


def test_single_variable():
    sol = solve_lp(lp([1.0], [[1.0]], [3.0]))
    assert sol.status is LpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.objective_value == pytest.approx(3.0)


def test_two_variable_vertex():
    sol = solve_lp(lp([1, 1], [[1, 2], [3, 1]], [4, 6]))
    np.testing.assert_allclose(sol.x, [1.6, 1.2], atol=1e-9)
    assert sol.objective_value == pytest.approx(2.8)
    oracle, _ = brute_force_lp([1, 1], [[1, 2], [3, 1]], [4, 6])
    assert oracle == pytest.approx(2.8)


def test_infeasible_is_a_status():
    sol = solve_lp(lp([1.0], [[1.0]], [-1.0]))
    assert sol.status is LpStatus.INFEASIBLE
    assert not sol.optimal


def test_unbounded_is_a_status():
    sol = solve_lp(lp([1.0, 0.0], [[0.0, 1.0]], [1.0]))
    assert sol.status is LpStatus.UNBOUNDED


def test_iteration_limit():
    rng = np.random.default_rng(0)
    a = rng.random((40, 30))
    sol = solve_lp(lp(rng.random(30), a, np.ones(40)), max_iters=1)
    assert sol.status is LpStatus.ITERATION_LIMIT


def test_malformed_programs_rejected():
    with pytest.raises(ValueError):
        lp([1.0, 2.0], [[1.0]], [1.0])
    with pytest.raises(ValueError):
        lp([np.inf], [[1.0]], [1.0])


def test_brute_force_equivalence_on_random_programs():
    rng = np.random.default_rng(20240611)
    for _ in range(200):
        c, a, b = random_bounded_lp(rng)
        sol = solve_lp(lp(c, a, b))
        oracle, _ = brute_force_lp(c, a, b)
        if oracle is None:
            assert sol.status is LpStatus.INFEASIBLE
        else:
            assert sol.status is LpStatus.OPTIMAL
            assert sol.objective_value == pytest.approx(oracle, abs=1e-8)
            assert sol.max_primal_residual <= 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.floats(min_value=0.01, max_value=100.0))
def test_objective_scaling(seed, k):
    c, a, b = random_bounded_lp(np.random.default_rng(seed))
    base = solve_lp(lp(c, a, b))
    scaled = solve_lp(lp(k * c, a, b))
    assert base.status is scaled.status
    if base.optimal:
        assert scaled.objective_value == pytest.approx(k * base.objective_value, abs=1e-7 * (1 + k))
        # each returned point is feasible and optimal for the other scaling too
        prog = lp(c, a, b)
        assert prog.residual(scaled.x) <= 1e-8
        assert float(c @ scaled.x) == pytest.approx(base.objective_value, abs=1e-7 * (1 + 1 / k))


def test_solution_feasibility_rechecked():
    rng = np.random.default_rng(5)
    c, a, b = random_bounded_lp(rng, 6, 8)
    prog = lp(c, a, b)
    sol = solve_lp(prog)
    if sol.optimal:
        assert prog.residual(sol.x) == sol.max_primal_residual
        assert sol.objective_value == pytest.approx(float(c @ sol.x))


def test_deterministic():
    rng = np.random.default_rng(11)
    c, a, b = random_bounded_lp(rng)
    first, second = solve_lp(lp(c, a, b)), solve_lp(lp(c, a, b))
    assert first.status is second.status
    if first.optimal:
        assert np.array_equal(first.x, second.x)


def test_write_mps(tmp_path):
    prog = LinearProgram(
        np.array([1.0, 1.0]), sp.csr_matrix(np.array([[1.0, 2.0], [3.0, 1.0]])), np.array([4.0, 6.0]),
        names=["x", "y"], row_names=["r1", "r2"],
    )
    path = tmp_path / "p.mps"
    write_mps(prog, path)
    text = path.read_text().splitlines()
    assert text[0] == "NAME LP" and text[-1] == "ENDATA"
    assert " L r1" in text and " x obj -1.0" in text
    assert " y r1 2.0" in text and " rhs r2 6.0" in text
