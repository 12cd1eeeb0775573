"""Dense two-phase primal simplex for standard-form LPs.

Solves ``min c @ x  s.t.  A @ x = b, x >= 0`` and returns a certified
solution (primal point, equality duals, status). Bland's rule is the default
pivoting rule; Dantzig's most-negative-reduced-cost rule is available for
speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

FEAS_TOL = 1e-8
COST_TOL = 1e-8
PIVOT_TOL = 1e-9
SLACK_TOL = 1e-7
GAP_TOL = 1e-7


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    variable_names: list[str] | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape != (b.size, c.size):
            raise ValueError(f"A has shape {A.shape}, expected {(b.size, c.size)}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("LP data must be finite")
        if self.variable_names is not None and len(self.variable_names) != c.size:
            raise ValueError("variable_names length does not match c")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    dual: np.ndarray
    status: str
    iterations: int = 0
    basis: np.ndarray | None = None
    dropped_rows: list[int] = field(default_factory=list)


@dataclass
class Check:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)


@dataclass
class CertificateReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self) -> str:
        lines = [
            f"{c.name:<24} {'ok' if c.passed else 'FAIL':<4} residual={c.residual:.3e} tol={c.tolerance:.1e}"
            for c in self.checks
        ]
        return "\n".join(lines)


class _Basis:
    """Revised-simplex state: basic column indices over a fixed column set.

    Every quantity is recomputed from the original matrix through a fresh LU
    factorisation, so no pivoting error accumulates across iterations.
    """

    def __init__(self, M: np.ndarray, rhs: np.ndarray, basis: np.ndarray):
        self.M = M
        self.rhs = rhs
        self.basis = basis
        self.refactor()

    def refactor(self) -> None:
        self.lu = lu_factor(self.M[:, self.basis])

    def solve(self, v: np.ndarray) -> np.ndarray:
        return lu_solve(self.lu, v)

    def solve_t(self, v: np.ndarray) -> np.ndarray:
        return lu_solve(self.lu, v, trans=1)

    def x_basic(self) -> np.ndarray:
        return self.solve(self.rhs)

    def drop_row(self, row: int) -> None:
        self.M = np.delete(self.M, row, axis=0)
        self.rhs = np.delete(self.rhs, row)
        self.basis = np.delete(self.basis, row)
        self.refactor()


def _run_simplex(st: _Basis, cost: np.ndarray, allowed: np.ndarray, rule: str, max_iter: int):
    """Primal simplex iterations; returns (status, iterations)."""
    scale = 1.0 + np.max(np.abs(cost))
    stalled = 0
    for it in range(max_iter):
        xB = np.maximum(st.x_basic(), 0.0)
        y = st.solve_t(cost[st.basis])
        reduced = cost - st.M.T @ y
        reduced[~allowed] = 0.0
        reduced[st.basis] = 0.0
        candidates = np.flatnonzero(reduced < -COST_TOL * scale)
        if candidates.size == 0:
            return "optimal", it
        # Dantzig falls back to Bland after a long degenerate run, which rules out cycling.
        if rule == "bland" or stalled > 2 * len(st.basis):
            col = candidates[0]
        else:
            col = candidates[np.argmin(reduced[candidates])]
        column = st.solve(st.M[:, col])
        positive = np.flatnonzero(column > PIVOT_TOL * (1.0 + np.max(np.abs(column))))
        if positive.size == 0:
            return "unbounded", it
        ratios = xB[positive] / column[positive]
        best = ratios.min()
        stalled = stalled + 1 if best <= 1e-14 else 0
        tied = positive[ratios <= best + 1e-12 * (1.0 + best)]
        # Bland: among tied rows leave the basic variable of smallest index.
        row = tied[np.argmin(st.basis[tied])]
        st.basis[row] = col
        st.refactor()
    raise RuntimeError(f"simplex exceeded {max_iter} iterations")


def solve_lp(problem: LpProblem, rule: str = "bland", max_iter: int = 50_000) -> LpSolution:
    """Two-phase primal simplex.

    Phase 1 minimises the sum of artificial variables. Artificials still basic
    at zero afterwards are swapped out where possible; rows where that fails
    are linearly dependent and get dropped (their dual is reported as 0).
    """
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivot rule {rule!r}")
    A, b, c = problem.A, problem.b, problem.c
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A1 = A * sign[:, None]
    b1 = b * sign

    st = _Basis(np.hstack([A1, np.eye(m)]), b1.copy(), np.arange(n, n + m))
    phase1_cost = np.concatenate([np.zeros(n), np.ones(m)])
    status, it1 = _run_simplex(st, phase1_cost, np.ones(n + m, dtype=bool), rule, max_iter)
    infeas = float(np.sum(st.x_basic()[st.basis >= n]))
    if infeas > FEAS_TOL * (1.0 + np.max(np.abs(b), initial=0.0)):
        return LpSolution(np.zeros(n), np.nan, np.zeros(m), "infeasible", it1)

    kept_rows = list(range(m))
    dropped = []
    row = 0
    while row < st.basis.size:
        if st.basis[row] >= n:
            # Row `row` of B^-1 A over the structural, nonbasic columns.
            e = np.zeros(st.basis.size)
            e[row] = 1.0
            entries = np.abs(st.solve_t(e) @ st.M[:, :n])
            entries[st.basis[st.basis < n]] = 0.0
            j = int(np.argmax(entries))
            if entries[j] > 1e-7:
                st.basis[row] = j
                st.refactor()
            else:
                dropped.append(kept_rows.pop(row))
                st.drop_row(row)
                continue
        row += 1

    allowed = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
    cost2 = np.concatenate([c, np.zeros(m)])
    status, it2 = _run_simplex(st, cost2, allowed, rule, max_iter)
    if status != "optimal":
        return LpSolution(np.zeros(n), -np.inf, np.zeros(m), status, it1 + it2)

    x = np.zeros(n)
    x[st.basis] = np.maximum(st.x_basic(), 0.0)
    y_kept = st.solve_t(cost2[st.basis])
    dual = np.zeros(m)
    dual[kept_rows] = y_kept * sign[kept_rows]
    return LpSolution(x, float(c @ x), dual, "optimal", it1 + it2, st.basis.copy(), sorted(dropped))


def verify_solution(problem: LpProblem, solution: LpSolution) -> CertificateReport:
    """Recompute feasibility, dual feasibility, slackness and the duality gap."""
    A, b, c = problem.A, problem.b, problem.c
    x, y = solution.x, solution.dual
    reduced = c - A.T @ y
    objective = float(c @ x)
    checks = [
        Check("primal_feasibility", float(np.max(np.abs(A @ x - b), initial=0.0)),
              FEAS_TOL * (1.0 + np.max(np.abs(b), initial=0.0))),
        Check("nonnegativity", float(max(0.0, -np.min(x, initial=0.0))), 1e-10),
        Check("reduced_costs", float(max(0.0, -np.min(reduced, initial=0.0))), COST_TOL),
        Check("complementary_slackness", float(np.max(np.abs(x * reduced), initial=0.0)), SLACK_TOL),
        Check("duality_gap", abs(objective - float(b @ y)), GAP_TOL * (1.0 + abs(objective))),
    ]
    return CertificateReport(checks)


def dump_lp_text(problem: LpProblem, path) -> None:
    """Plain-text dump: ``m n`` header, the cost row, then ``m`` rows of ``A | b``."""
    m, n = problem.shape
    lines = [f"{m} {n}", " ".join(repr(float(v)) for v in problem.c)]
    for i in range(m):
        lines.append(" ".join(repr(float(v)) for v in problem.A[i]) + " " + repr(float(problem.b[i])))
    Path(path).write_text("\n".join(lines) + "\n")


def load_lp_text(path) -> LpProblem:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    m, n = int(rows[0][0]), int(rows[0][1])
    c = np.array(rows[1], dtype=float)
    body = np.array(rows[2:2 + m], dtype=float).reshape(m, n + 1)
    return LpProblem(c, body[:, :n], body[:, n])
