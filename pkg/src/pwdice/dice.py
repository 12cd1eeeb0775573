"""Primal Wasserstein occupancy matching: exact LP and regularized duals.

Dual vector layout (length ``3 * S``)::

    lam[:S]       value-like multipliers of the Bellman flow rows
    lam[S:2S]     multipliers of the learner-marginal rows of the coupling
    lam[2S:]      multipliers of the expert-marginal rows of the coupling

The regularized dual objective is minimised; at its optimum it equals minus
the regularized primal value.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import EmpiricalModel
from .lp import LpProblem, LpSolution, solve_lp
from .mdp import Policy

log = logging.getLogger(__name__)

LOG_CAP = 1e4

COST_KINDS = (
    "zero_one",
    "smodice_log_ratio",
    "discriminator_R",
    "combined_contrastive",
    "euclidean",
    "cosine",
    "custom",
)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CostSpec:
    """State distance table ``matrix[i, j] = c(s_i, s_j)``."""

    matrix: np.ndarray
    kind: str = "custom"
    capped_states: tuple = ()

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"cost matrix must be square, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValueError("cost matrix must be finite")
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "zero_one" and not (np.all(np.diag(M) == 0) and np.all(M[~np.eye(len(M), dtype=bool)] != 0)):
            raise ValueError("zero_one cost must vanish exactly on the diagonal")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)


@dataclass(frozen=True)
class PwdiceConfig:
    eps1: float = 0.01
    eps2: float = 0.01
    divergence: str = "kl"
    optimizer: str = "lbfgs"
    step_size: float = 1e-2
    iterations: int = 20_000
    tolerance: float = 1e-7

    def __post_init__(self):
        if self.divergence not in ("kl", "chi2"):
            raise ValueError(f"divergence must be 'kl' or 'chi2', got {self.divergence!r}")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("eps1 and eps2 must be positive for the regularized dual")
        if self.optimizer not in ("adam", "lbfgs"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# Named hyper-parameter presets. Only "tabular" is used by default.
PRESETS = {
    "tabular": dict(eps1=0.01, eps2=0.01),
    "mujoco": dict(eps1=0.5, eps2=0.5),
    "kitchen": dict(eps1=0.01, eps2=2.0),
}


@dataclass
class DualVariables:
    lam: np.ndarray
    objective: float = np.nan
    converged: bool = False
    iterations: int = 0
    grad_norm: float = np.inf
    trace: list = field(default_factory=list, repr=False)

    def blocks(self):
        S = self.lam.size // 3
        return self.lam[:S], self.lam[S:2 * S], self.lam[2 * S:]


@dataclass
class PrimalResult:
    Pi: np.ndarray
    d_sa: np.ndarray
    wasserstein: float
    policy: Policy
    lp: LpSolution


def safe_log_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """``log(num / den)`` with ``-LOG_CAP`` wherever either side is zero."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = (num > 0) & (den > 0)
    out = np.full(num.shape, -LOG_CAP)
    out[ok] = np.log(num[ok] / den[ok])
    return out


# --- exact LP ----------------------------------------------------------------

def assemble_primal_lp(model: EmpiricalModel, cost: CostSpec) -> LpProblem:
    """Equality-form LP over ``x = [Pi.ravel(), d_sa.ravel()]`` with ``3 S`` rows."""
    S, A = model.num_states, model.num_actions
    if cost.matrix.shape != (S, S):
        raise ValueError(f"cost is {cost.matrix.shape}, model has {S} states")
    gamma = model.gamma
    nP = S * S
    Amat = np.zeros((3 * S, nP + S * A))
    # Bellman flow: sum_a d(s,a) - gamma sum_{s',a'} p(s|s',a') d(s',a') = (1-gamma) p0(s)
    flow = -gamma * model.p_hat.reshape(S * A, S).T
    for s in range(S):
        flow[s, s * A:(s + 1) * A] += 1.0
    Amat[:S, nP:] = flow
    # Learner marginal: sum_j Pi(s, j) - sum_a d(s, a) = 0
    for s in range(S):
        Amat[S + s, s * S:(s + 1) * S] = 1.0
        Amat[S + s, nP + s * A:nP + (s + 1) * A] = -1.0
    # Expert marginal: sum_i Pi(i, s) = dE(s)
    for s in range(S):
        Amat[2 * S + s, s:nP:S] = 1.0
    b = np.concatenate([(1.0 - gamma) * model.p0_hat, np.zeros(S), model.dE_s])
    c = np.concatenate([cost.matrix.ravel(), np.zeros(S * A)])
    names = [f"Pi[{i},{j}]" for i in range(S) for j in range(S)]
    names += [f"d[{s},{a}]" for s in range(S) for a in range(A)]
    return LpProblem(c, Amat, b, names)


def solve_primal_lp(model: EmpiricalModel, cost: CostSpec, rule: str = "dantzig") -> PrimalResult:
    problem = assemble_primal_lp(model, cost)
    sol = solve_lp(problem, rule=rule)
    if sol.status != "optimal":
        raise RuntimeError(f"primal LP is {sol.status}; the empirical model is inconsistent")
    S, A = model.num_states, model.num_actions
    Pi = sol.x[:S * S].reshape(S, S)
    d_sa = sol.x[S * S:].reshape(S, A)
    return PrimalResult(Pi, d_sa, sol.objective, extract_policy(d_sa), sol)


# --- Fenchel conjugates -----------------------------------------------------------

def _weighted_lse(z: np.ndarray, w: np.ndarray):
    """log sum w exp(z) over the support of ``w`` and the matching softmax."""
    mask = w > 0
    zs = z[mask]
    zmax = zs.max()
    e = w[mask] * np.exp(zs - zmax)
    total = e.sum()
    p = np.zeros_like(z, dtype=float)
    p[mask] = e / total
    return zmax + np.log(total), p


def fenchel_kl(y: np.ndarray, q: np.ndarray):
    """``max_p E_p[y] - KL(p || q)`` over the simplex and its maximiser."""
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    return _weighted_lse(y, q)


def _coupling_logits(lam, model: EmpiricalModel, cost: CostSpec, eps1: float):
    S = model.num_states
    return (lam[S:2 * S, None] + lam[None, 2 * S:] - cost.matrix) / eps1


def _advantage(lam, model: EmpiricalModel):
    """``-gamma E_{p_hat}[lam_k] + lam_i - lam_{i+S}`` per state-action."""
    S = model.num_states
    v = lam[:S]
    return -model.gamma * model.p_hat @ v + v[:, None] - lam[S:2 * S, None]


def _assemble_gradient(Pi_like, d_like, model: EmpiricalModel):
    """Gradient of the dual, given the coupling and occupancy weights at ``lam``."""
    S = model.num_states
    d_s = d_like.sum(axis=1)
    inflow = np.einsum("sa,sak->k", d_like, model.p_hat)
    grad = np.empty(3 * S)
    grad[:S] = d_s - model.gamma * inflow - (1.0 - model.gamma) * model.p0_hat
    grad[S:2 * S] = Pi_like.sum(axis=1) - d_s
    grad[2 * S:] = Pi_like.sum(axis=0) - model.dE_s
    return grad


def coupling_prior(model: EmpiricalModel) -> np.ndarray:
    """Reference coupling: task-agnostic state marginal times expert marginal."""
    return np.outer(model.dI_s, model.dE_s)


def _linear_term(lam, model: EmpiricalModel) -> float:
    S = model.num_states
    return (1.0 - model.gamma) * model.p0_hat @ lam[:S] + model.dE_s @ lam[2 * S:]


def dual_objective_kl(lam, model: EmpiricalModel, cost: CostSpec, config: PwdiceConfig):
    """KL-regularized dual value and analytic gradient."""
    lam = np.asarray(lam, dtype=float)
    z1 = _coupling_logits(lam, model, cost, config.eps1)
    z2 = _advantage(lam, model) / config.eps2
    lse1, Pi = _weighted_lse(z1, coupling_prior(model))
    lse2, d_sa = _weighted_lse(z2, model.dI_sa)
    for name, val in (("coupling", lse1), ("occupancy", lse2)):
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite {name} log-sum-exp term")
    value = config.eps1 * lse1 + config.eps2 * lse2 - _linear_term(lam, model)
    return float(value), _assemble_gradient(Pi, d_sa, model)


def dual_objective_chi2(lam, model: EmpiricalModel, cost: CostSpec, config: PwdiceConfig):
    """Half chi-square regularized dual value and analytic gradient."""
    lam = np.asarray(lam, dtype=float)
    U = coupling_prior(model)
    h1 = _coupling_logits(lam, model, cost, config.eps1) + 1.0
    h2 = _advantage(lam, model) / config.eps2 + 1.0
    value = (
        0.5 * config.eps1 * np.sum(U * h1 ** 2)
        + 0.5 * config.eps2 * np.sum(model.dI_sa * h2 ** 2)
        - _linear_term(lam, model)
    )
    if not np.isfinite(value):
        raise FloatingPointError("non-finite chi2 dual value")
    return float(value), _assemble_gradient(U * h1, model.dI_sa * h2, model)


def dual_objective(lam, model, cost, config: PwdiceConfig):
    if config.divergence == "kl":
        return dual_objective_kl(lam, model, cost, config)
    return dual_objective_chi2(lam, model, cost, config)


def chi2_policy_weights(lam, model: EmpiricalModel, config: PwdiceConfig) -> np.ndarray:
    """Behavior-cloning weights ``max(0, advantage / eps2 + 1)``."""
    return np.maximum(0.0, _advantage(np.asarray(lam, dtype=float), model) / config.eps2 + 1.0)


# --- optimisation ---------------------------------------------------------------

def adam_minimize(fun, x0, step_size=1e-2, iterations=20_000, tolerance=1e-7,
                  beta1=0.9, beta2=0.999, eps=1e-8):
    """Full-batch Adam; returns (best_x, best_value, converged, iterations, trace).

    ``fun`` returns ``(value, gradient)``. The best iterate by value is kept.
    """
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_val = x.copy(), np.inf
    trace = []
    for t in range(1, iterations + 1):
        val, g = fun(x)
        if val < best_val:
            best_x, best_val = x.copy(), val
        trace.append(val)
        if np.max(np.abs(g)) <= tolerance:
            return best_x, best_val, True, t, trace
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x -= step_size * mhat / (np.sqrt(vhat) + eps)
    val, _ = fun(x)
    if val < best_val:
        best_x, best_val = x.copy(), val
    return best_x, best_val, False, iterations, trace


def lbfgs_minimize(fun, x0, iterations=20_000, tolerance=1e-7):
    """Quasi-Newton descent; returns the same tuple as :func:`adam_minimize`."""
    trace = []

    def wrapped(x):
        val, g = fun(x)
        trace.append(val)
        return val, g

    res = minimize(
        wrapped, np.asarray(x0, dtype=float), jac=True, method="L-BFGS-B",
        options=dict(maxiter=iterations, maxfun=2 * iterations, gtol=tolerance,
                     ftol=1e-15, maxcor=30),
    )
    _, g = fun(res.x)
    return res.x, float(res.fun), bool(np.max(np.abs(g)) <= tolerance), int(res.nit), trace


def optimize_dual(model: EmpiricalModel, cost: CostSpec, config: PwdiceConfig,
                  seed: int | None = None, init: np.ndarray | None = None) -> DualVariables:
    """Minimise the regularized dual from ``lam = 0`` (or ``init``).

    The tabular objective is deterministic, so ``seed`` only tags the run.
    Reaching the iteration cap without meeting ``config.tolerance`` returns the
    best iterate with ``converged=False`` and emits a :class:`ConvergenceWarning`.
    """
    S = model.num_states
    x0 = np.zeros(3 * S) if init is None else np.asarray(init, dtype=float)

    def fun(lam):
        return dual_objective(lam, model, cost, config)

    if config.optimizer == "adam":
        lam, val, ok, its, trace = adam_minimize(
            fun, x0, config.step_size, config.iterations, config.tolerance)
    else:
        lam, val, ok, its, trace = lbfgs_minimize(fun, x0, config.iterations, config.tolerance)
    _, g = fun(lam)
    gnorm = float(np.max(np.abs(g)))
    if not ok:
        warnings.warn(f"dual optimisation stopped at |grad|_inf={gnorm:.2e} after {its} iterations",
                      ConvergenceWarning, stacklevel=2)
    return DualVariables(lam, val, ok, its, gnorm, trace)


def recover_primal(lam, model: EmpiricalModel, cost: CostSpec, config: PwdiceConfig):
    """Coupling and state-action occupancy attaining the inner maximisation at ``lam``."""
    lam = np.asarray(lam, dtype=float)
    U = coupling_prior(model)
    if config.divergence == "kl":
        _, Pi = _weighted_lse(_coupling_logits(lam, model, cost, config.eps1), U)
        _, d_sa = _weighted_lse(_advantage(lam, model) / config.eps2, model.dI_sa)
        return Pi, d_sa
    Pi = U * np.maximum(0.0, _coupling_logits(lam, model, cost, config.eps1) + 1.0)
    d_sa = model.dI_sa * chi2_policy_weights(lam, model, config)
    return _normalized(Pi, U), _normalized(d_sa, model.dI_sa)


def _normalized(p, fallback):
    total = p.sum()
    return p / total if total > 0 else fallback.copy()


def extract_policy(d_sa: np.ndarray) -> Policy:
    """Condition a state-action occupancy on the state; empty rows become uniform."""
    d_sa = np.asarray(d_sa, dtype=float)
    mass = d_sa.sum(axis=1, keepdims=True)
    uniform = np.full_like(d_sa, 1.0 / d_sa.shape[1])
    probs = np.where(mass > 0, d_sa / np.where(mass > 0, mass, 1.0), uniform)
    return Policy(probs)


def _kl(p, q) -> float:
    mask = p > 0
    if np.any(q[mask] <= 0):
        return np.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _half_chi2(p, q) -> float:
    mask = q > 0
    if np.any(p[~mask] > 0):
        return np.inf
    return float(0.5 * np.sum((p[mask] - q[mask]) ** 2 / q[mask]))


def regularized_primal_objective(Pi, d_sa, model: EmpiricalModel, cost: CostSpec,
                                 config: PwdiceConfig) -> float:
    """Transport cost plus the two divergence penalties."""
    div = _kl if config.divergence == "kl" else _half_chi2
    U = coupling_prior(model)
    return float(np.sum(cost.matrix * Pi) + config.eps1 * div(Pi, U) + config.eps2 * div(d_sa, model.dI_sa))


def constraint_residuals(Pi, d_sa, model: EmpiricalModel) -> dict:
    """L1 residuals of the flow, learner-marginal and expert-marginal rows."""
    S = model.num_states
    grad = _assemble_gradient(Pi, d_sa, model)
    return {
        "bellman_flow": float(np.abs(grad[:S]).sum()),
        "learner_marginal": float(np.abs(grad[S:2 * S]).sum()),
        "expert_marginal": float(np.abs(grad[2 * S:]).sum()),
    }


@dataclass
class DualResult:
    dual: DualVariables
    Pi: np.ndarray
    d_sa: np.ndarray
    policy: Policy


def solve_regularized(model: EmpiricalModel, cost: CostSpec, config: PwdiceConfig | None = None,
                      seed: int | None = None) -> DualResult:
    """Optimise the dual, recover the primal point and extract the policy.

    The chi-square policy follows the clipped weights; KL uses the softmax
    occupancy directly.
    """
    config = config or PwdiceConfig()
    dual = optimize_dual(model, cost, config, seed)
    Pi, d_sa = recover_primal(dual.lam, model, cost, config)
    return DualResult(dual, Pi, d_sa, extract_policy(d_sa))
