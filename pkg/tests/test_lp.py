import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from pwdice.lp import LpProblem, LpSolution, dump_lp_text, load_lp_text, solve_lp, verify_solution


def transport_lp(cost, rows, cols):
    """Standard-form transport LP over a row-major coupling; keeps every marginal row."""
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    return LpProblem(cost.reshape(-1), A, np.concatenate([rows, cols]))


def enumerate_vertices(problem):
    """All basic feasible solutions, by brute force over column subsets of size rank(A)."""
    A, b = problem.A, problem.b
    r = np.linalg.matrix_rank(A)
    # Keep an independent subset of rows so square bases exist.
    rows = []
    for i in range(A.shape[0]):
        if np.linalg.matrix_rank(A[rows + [i]]) > len(rows):
            rows.append(i)
    A, b = A[rows], b[rows]
    vertices = []
    for cols in itertools.combinations(range(A.shape[1]), r):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xB = np.linalg.solve(B, b)
        if np.all(xB >= -1e-12):
            x = np.zeros(A.shape[1])
            x[list(cols)] = xB
            vertices.append(x)
    return vertices


def test_zero_cost_diagonal_matching():
    sol = solve_lp(transport_lp([[0, 1], [1, 0]], [0.5, 0.5], [0.5, 0.5]))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(sol.x, [0.5, 0, 0, 0.5], atol=1e-12)


@pytest.mark.parametrize("rule", ["bland", "dantzig"])
def test_two_by_two_transport(rule):
    problem = transport_lp([[1, 2], [3, 1]], [0.4, 0.6], [0.5, 0.5])
    sol = solve_lp(problem, rule=rule)
    assert sol.objective == pytest.approx(1.2, abs=1e-12)
    np.testing.assert_allclose(sol.x, [0.4, 0, 0.1, 0.5], atol=1e-12)
    # One marginal row is redundant.
    assert len(sol.dropped_rows) == 1
    assert verify_solution(problem, sol).passed
    best = min(problem.c @ v for v in enumerate_vertices(problem))
    assert best == pytest.approx(1.2, abs=1e-12)


def test_unequal_marginals_infeasible():
    sol = solve_lp(transport_lp([[1, 2], [3, 1]], [0.5, 0.6], [0.5, 0.5]))
    assert sol.status == "infeasible"


def test_unbounded():
    # min -x1 s.t. x1 - x2 = 1
    sol = solve_lp(LpProblem([-1.0, 0.0], [[1.0, -1.0]], [1.0]))
    assert sol.status == "unbounded"


def test_negative_rhs_handled():
    problem = LpProblem([1.0, 2.0, 0.0], [[-1.0, -1.0, 1.0]], [-2.0])
    sol = solve_lp(problem)
    assert sol.objective == pytest.approx(2.0)
    assert verify_solution(problem, sol).passed


def test_problem_validation():
    with pytest.raises(ValueError):
        LpProblem([1.0, 2.0], [[1.0, 1.0, 1.0]], [1.0])
    with pytest.raises(ValueError):
        LpProblem([1.0], [[np.inf]], [1.0])


@pytest.mark.parametrize("seed", range(12))
def test_transport_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, 4, size=2)
    cost = rng.random((m, n))
    problem = transport_lp(cost, rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n)))
    sol = solve_lp(problem)
    best = min(problem.c @ v for v in enumerate_vertices(problem))
    assert abs(sol.objective - best) <= 1e-9
    assert verify_solution(problem, sol).passed


@pytest.mark.parametrize("seed", range(20))
def test_random_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    m, n = 6, 14
    A = rng.normal(size=(m, n))
    A[-1] = A[0] + A[1]  # redundant row
    x_feas = rng.random(n)
    b = A @ x_feas
    c = rng.random(n)  # nonnegative cost keeps the problem bounded
    problem = LpProblem(c, A, b)
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    for rule in ("bland", "dantzig"):
        sol = solve_lp(problem, rule=rule)
        assert sol.status == "optimal"
        assert abs(sol.objective - ref.fun) <= 1e-8 * (1 + abs(ref.fun))
        report = verify_solution(problem, sol)
        assert report.passed, str(report)


def test_column_permutation_equivariance():
    rng = np.random.default_rng(5)
    problem = transport_lp(rng.random((3, 3)), rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3)))
    sol = solve_lp(problem)
    perm = rng.permutation(9)
    permuted = LpProblem(problem.c[perm], problem.A[:, perm], problem.b)
    psol = solve_lp(permuted)
    assert psol.objective == pytest.approx(sol.objective, abs=1e-12)
    # The optimum of a random-cost transport LP is unique almost surely.
    np.testing.assert_allclose(psol.x, sol.x[perm], atol=1e-12)


def test_certificate_detects_infeasible_perturbation():
    problem = transport_lp([[1, 2], [3, 1]], [0.4, 0.6], [0.5, 0.5])
    sol = solve_lp(problem)
    bad = LpSolution(sol.x + np.array([1e-3, 0, 0, 0]), sol.objective, sol.dual, "optimal")
    report = verify_solution(problem, bad)
    assert not report["primal_feasibility"].passed


def test_certificate_detects_suboptimal_vertex():
    rng = np.random.default_rng(2)
    problem = transport_lp(rng.random((3, 3)), np.full(3, 1 / 3), np.full(3, 1 / 3))
    sol = solve_lp(problem)
    worst = max(enumerate_vertices(problem), key=lambda v: problem.c @ v)
    assert problem.c @ worst > sol.objective + 1e-6
    # Duals that certify the worst vertex: least-squares fit on its support.
    support = worst > 1e-12
    y = np.linalg.lstsq(problem.A[:, support].T, problem.c[support], rcond=None)[0]
    report = verify_solution(problem, LpSolution(worst, float(problem.c @ worst), y, "optimal"))
    assert not report["reduced_costs"].passed


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_duality_gap_small(seed):
    rng = np.random.default_rng(seed)
    problem = transport_lp(rng.random((4, 4)), rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4)))
    sol = solve_lp(problem)
    report = verify_solution(problem, sol)
    assert report["duality_gap"].residual <= 1e-7 * (1 + abs(sol.objective))
    assert report.passed


def test_text_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    problem = transport_lp(rng.random((2, 3)), [0.3, 0.7], [0.2, 0.3, 0.5])
    dump_lp_text(problem, tmp_path / "lp.txt")
    back = load_lp_text(tmp_path / "lp.txt")
    np.testing.assert_array_equal(back.A, problem.A)
    np.testing.assert_array_equal(back.b, problem.b)
    np.testing.assert_array_equal(back.c, problem.c)


@pytest.mark.parametrize("rule", ["bland", "dantzig"])
def test_beale_cycling_example_terminates(rule):
    # Largest-coefficient pivoting cycles on this degenerate problem without a safeguard.
    c = [0, 0, 0, -0.75, 20, -0.5, 6]
    A = [[1, 0, 0, 0.25, -8, -1, 9],
         [0, 1, 0, 0.5, -12, -0.5, 3],
         [0, 0, 1, 0, 0, 1, 0]]
    problem = LpProblem(c, A, [0, 0, 1])
    sol = solve_lp(problem, rule=rule)
    ref = linprog(c, A_eq=A, b_eq=[0, 0, 1], bounds=(0, None), method="highs")
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(ref.fun, abs=1e-10)
    assert sol.objective == pytest.approx(-1.25, abs=1e-12)
