"""SMODICE baseline, cost builders and evaluation metrics."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .data import EmpiricalModel
from .dice import (
    LOG_CAP,
    ConvergenceWarning,
    CostSpec,
    _weighted_lse,
    adam_minimize,
    extract_policy,
    lbfgs_minimize,
    safe_log_ratio,
)
from .mdp import Policy, TabularMDP, exact_occupancies, policy_return

log = logging.getLogger(__name__)


# --- SMODICE -------------------------------------------------------------------

def smodice_log_ratio(model: EmpiricalModel) -> np.ndarray:
    """``log(dE / dI)`` per state, ``-LOG_CAP`` where undefined."""
    return safe_log_ratio(model.dE_s, model.dI_s)


def _smodice_logits(V, model: EmpiricalModel, gamma: float):
    return smodice_log_ratio(model)[:, None] + gamma * model.p_hat @ V - V[:, None]


def smodice_dual_objective(V, model: EmpiricalModel, gamma: float | None = None):
    """KL dual of the relaxed state-occupancy matching problem, with gradient."""
    gamma = model.gamma if gamma is None else gamma
    V = np.asarray(V, dtype=float)
    lse, w = _weighted_lse(_smodice_logits(V, model, gamma), model.dI_sa)
    value = (1.0 - gamma) * model.p0_hat @ V + lse
    grad = (1.0 - gamma) * model.p0_hat + gamma * np.einsum("sa,sak->k", w, model.p_hat) - w.sum(axis=1)
    return float(value), grad


@dataclass
class SmodiceResult:
    V: np.ndarray
    d_sa: np.ndarray
    policy: Policy
    objective: float
    converged: bool
    iterations: int


def smodice_solve(model: EmpiricalModel, gamma: float | None = None, optimizer: str = "lbfgs",
                  step_size: float = 1e-2, iterations: int = 20_000, tolerance: float = 1e-7) -> SmodiceResult:
    gamma = model.gamma if gamma is None else gamma

    def fun(V):
        return smodice_dual_objective(V, model, gamma)

    x0 = np.zeros(model.num_states)
    if optimizer == "adam":
        V, val, ok, its, _ = adam_minimize(fun, x0, step_size, iterations, tolerance)
    else:
        V, val, ok, its, _ = lbfgs_minimize(fun, x0, iterations, tolerance)
    if not ok:
        warnings.warn("SMODICE dual did not reach tolerance", ConvergenceWarning, stacklevel=2)
    _, d_sa = _weighted_lse(_smodice_logits(V, model, gamma), model.dI_sa)
    return SmodiceResult(V, d_sa, extract_policy(d_sa), val, ok, its)


# --- costs -----------------------------------------------------------------------

def discriminator_reward(model: EmpiricalModel, alpha: float = 0.01) -> np.ndarray:
    """``log(dE / ((1 - alpha) dI + alpha dE))``; ``-LOG_CAP`` where dE = 0."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    mixed = (1.0 - alpha) * model.dI_s + alpha * model.dE_s
    return safe_log_ratio(model.dE_s, mixed)


def _capped(values: np.ndarray) -> tuple:
    idx = tuple(int(i) for i in np.flatnonzero(np.abs(values) >= LOG_CAP))
    if idx:
        log.warning("log-ratio capped at %g for states %s", LOG_CAP, idx)
    return idx


def build_cost(kind: str, model: EmpiricalModel, encoder=None, beta: float = 5.0,
               state_features: np.ndarray | None = None, alpha: float = 0.01) -> CostSpec:
    """Construct one of the supported state distance tables."""
    S = model.num_states
    if kind == "zero_one":
        return CostSpec(1.0 - np.eye(S), kind)
    if kind == "smodice_log_ratio":
        r = smodice_log_ratio(model)
        return CostSpec(np.repeat(-r[:, None], S, axis=1), kind, _capped(r))
    if kind == "discriminator_R":
        R = discriminator_reward(model, alpha)
        return CostSpec(np.repeat(-R[:, None], S, axis=1), kind, _capped(R))
    if kind == "combined_contrastive":
        if encoder is None:
            raise ValueError("combined_contrastive cost needs a trained encoder")
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        from .contrastive import embedding_cost

        R = discriminator_reward(model, alpha)
        return CostSpec(-R[:, None] + embedding_cost(encoder, beta), kind, _capped(R))
    if kind in ("euclidean", "cosine"):
        if state_features is None:
            raise ValueError(f"{kind} cost needs state feature vectors")
        F = np.asarray(state_features, dtype=float).reshape(S, -1)
        if kind == "euclidean":
            diff = F[:, None, :] - F[None, :, :]
            return CostSpec(np.sqrt(np.sum(diff ** 2, axis=-1)), kind)
        norms = np.linalg.norm(F, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        Fn = F / norms[:, None]
        return CostSpec(1.0 - Fn @ Fn.T, kind)
    raise ValueError(f"unknown cost kind {kind!r}")


# --- metrics -------------------------------------------------------------------

def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def tv_state(mdp: TabularMDP, learner: Policy, expert: Policy) -> float:
    return tv_distance(exact_occupancies(mdp, learner).d_s, exact_occupancies(mdp, expert).d_s)


def tv_statepair(mdp: TabularMDP, learner: Policy, expert: Policy) -> float:
    return tv_distance(exact_occupancies(mdp, learner).d_ss, exact_occupancies(mdp, expert).d_ss)


def regret(mdp: TabularMDP, learner: Policy, expert: Policy) -> float:
    """Expert return minus learner return, both evaluated in the true MDP."""
    return policy_return(mdp, expert) - policy_return(mdp, learner)


@dataclass
class MetricsRecord:
    method: str
    divergence: str
    cost_kind: str
    eta: float
    expert_size: int
    ta_size: int
    seed: int
    regret: float = np.nan
    tv_state: float = np.nan
    tv_statepair: float = np.nan
    objective: float = np.nan
    converged: bool = True
    runtime_ms: int = 0
    status: str = "ok"

    def as_row(self) -> dict:
        return asdict(self)
