"""Tabular MDPs: random benchmark generator, exact planning and occupancies."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import softmax

ROW_ATOL = 1e-12
POLICY_ATOL = 1e-9


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exhausts its iteration budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


def _check_distribution(p: np.ndarray, name: str, atol: float, axis=-1) -> None:
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if not np.allclose(p.sum(axis=axis), 1.0, rtol=0, atol=atol):
        raise ValueError(f"{name} does not sum to 1 within {atol}")


@dataclass(frozen=True)
class TabularMDP:
    """Finite discounted MDP.

    ``transition[s, a, s2]`` is p(s2 | s, a) and ``reward[s, a]`` is r(s, a).
    Arrays are made read-only on construction.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    gamma: float
    goal_state: int = -1

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        p0 = np.array(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if r.shape != (S, A):
            raise ValueError(f"reward must have shape {(S, A)}, got {r.shape}")
        if p0.shape != (S,):
            raise ValueError(f"initial_dist must have shape {(S,)}, got {p0.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        _check_distribution(P, "transition", ROW_ATOL)
        _check_distribution(p0, "initial_dist", ROW_ATOL)
        for arr in (P, r, p0):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "goal_state", int(self.goal_state))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def with_goal(self, goal: int) -> "TabularMDP":
        """Copy of this MDP whose only reward is +1 in state ``goal``."""
        reward = np.zeros((self.num_states, self.num_actions))
        reward[goal, :] = 1.0
        return TabularMDP(self.transition, reward, self.initial_dist, self.gamma, goal)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "goal_state": self.goal_state,
            "initial_dist": self.initial_dist.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMDP":
        mdp = cls(
            transition=np.asarray(doc["transition"], dtype=float),
            reward=np.asarray(doc["reward"], dtype=float),
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
            gamma=doc["gamma"],
            goal_state=doc.get("goal_state", -1),
        )
        if (mdp.num_states, mdp.num_actions) != (doc["num_states"], doc["num_actions"]):
            raise ValueError("declared num_states/num_actions disagree with array shapes")
        return mdp

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TabularMDP":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Policy:
    """Stochastic tabular policy, ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError(f"policy must be a 2-d array, got shape {probs.shape}")
        _check_distribution(probs, "policy", POLICY_ATOL)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    def entropy(self) -> np.ndarray:
        """Per-state entropy in nats."""
        p = self.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, -p * np.log(p), 0.0)
        return terms.sum(axis=1)


@dataclass(frozen=True)
class OccupancySet:
    """Discounted state, state-action and state-pair occupancies of a policy."""

    d_s: np.ndarray
    d_sa: np.ndarray
    d_ss: np.ndarray = field(repr=False)


def generate_random_mdp(
    num_states: int,
    num_actions: int,
    branching: int = 4,
    eta: float = 0.1,
    seed: int | None = 0,
    gamma: float = 0.95,
) -> TabularMDP:
    """Random MDP of the tabular benchmark.

    Every (s, a) gets ``branching`` distinct successors chosen uniformly; their
    probabilities are ``(1 - eta) * X + eta * Y`` with X a one-hot draw from the
    uniform categorical and Y ~ Dirichlet(1, ..., 1). The agent starts in state
    0 and the goal is chosen by :func:`select_goal_state`.
    """
    if num_states < 1 or num_actions < 1:
        raise ValueError("num_states and num_actions must be positive")
    if not 1 <= branching <= num_states:
        raise ValueError(f"branching must lie in [1, {num_states}], got {branching}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    rng = np.random.default_rng(seed)
    P = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            successors = rng.choice(num_states, size=branching, replace=False)
            x = np.zeros(branching)
            x[rng.integers(branching)] = 1.0
            y = rng.dirichlet(np.ones(branching))
            P[s, a, successors] = (1.0 - eta) * x + eta * y
    # Renormalize away floating-point drift from the convex combination.
    P /= P.sum(axis=2, keepdims=True)
    p0 = np.zeros(num_states)
    p0[0] = 1.0
    base = TabularMDP(P, np.zeros((num_states, num_actions)), p0, gamma)
    if num_states == 1:
        return base.with_goal(0)
    return base.with_goal(select_goal_state(base))


def select_goal_state(mdp: TabularMDP, start: int = 0) -> int:
    """Goal minimising the optimal start value, over all states but ``start``.

    Candidates unreachable from ``start`` (optimal value exactly 0) are skipped
    unless nothing else is available; ties go to the lowest index.
    """
    values = {}
    for x in range(mdp.num_states):
        if x == start:
            continue
        V, _ = value_iteration(mdp.with_goal(x))
        values[x] = V[start]
    reachable = {x: v for x, v in values.items() if v > 0.0}
    pool = reachable or values
    best = min(pool.values())
    return min(x for x, v in pool.items() if v == best)


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 100_000):
    """Optimal state and action values.

    Stops once the sup-norm Bellman residual of ``V`` is at most ``tol``.

    Returns
    -------
    V : ndarray, shape (S,)
    Q : ndarray, shape (S, A)
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P, r, gamma = mdp.transition, mdp.reward, mdp.gamma
    V = np.zeros(mdp.num_states)
    residual = np.inf
    for _ in range(max_iter):
        Q = r + gamma * P @ V
        V_new = Q.max(axis=1)
        residual = np.max(np.abs(V_new - V))
        V = V_new
        if residual <= tol:
            return V, r + gamma * P @ V
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} iterations", residual)


def greedy_policy(Q: np.ndarray, mode: str = "deterministic", temperature: float = 1.0) -> Policy:
    """Deterministic argmax (ties to the lowest action) or Boltzmann policy over ``Q``."""
    Q = np.asarray(Q, dtype=float)
    if mode == "deterministic":
        probs = np.zeros_like(Q)
        probs[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
        return Policy(probs)
    if mode == "softmax":
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        return Policy(softmax(Q / temperature, axis=1))
    raise ValueError(f"unknown greedy mode {mode!r}")


def state_transition_matrix(mdp: TabularMDP, policy: Policy) -> np.ndarray:
    """P_pi[s, s2] = sum_a pi(a|s) p(s2|s,a)."""
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def exact_occupancies(mdp: TabularMDP, policy: Policy) -> OccupancySet:
    """Solve the Bellman flow equation for the discounted occupancies."""
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("policy shape does not match the MDP")
    P_pi = state_transition_matrix(mdp, policy)
    lhs = np.eye(mdp.num_states) - mdp.gamma * P_pi.T
    d_s = np.linalg.solve(lhs, (1.0 - mdp.gamma) * mdp.initial_dist)
    d_s = np.clip(d_s, 0.0, None)
    d_s /= d_s.sum()
    d_sa = d_s[:, None] * policy.probs
    d_ss = np.einsum("sa,sat->st", d_sa, mdp.transition)
    return OccupancySet(d_s=d_s, d_sa=d_sa, d_ss=d_ss)


def policy_return(mdp: TabularMDP, policy: Policy) -> float:
    """Expected discounted return from the initial distribution."""
    occ = exact_occupancies(mdp, policy)
    return float(np.sum(occ.d_sa * mdp.reward) / (1.0 - mdp.gamma))


def optimal_expert(mdp: TabularMDP, mode: str = "deterministic", temperature: float = 1.0) -> Policy:
    _, Q = value_iteration(mdp)
    return greedy_policy(Q, mode, temperature)
