"""Shared builders and independent oracles for the test suite."""

import numpy as np

from pwdice.data import estimate_empirical_model, sample_dataset
from pwdice.mdp import Policy, TabularMDP, generate_random_mdp, optimal_expert


def chain_mdp(n=3, gamma=0.95):
    """Deterministic chain 0 -> 1 -> ... -> n-1 (absorbing, rewarding) with one action."""
    P = np.zeros((n, 1, n))
    for s in range(n):
        P[s, 0, min(s + 1, n - 1)] = 1.0
    p0 = np.zeros(n)
    p0[0] = 1.0
    return TabularMDP(P, np.zeros((n, 1)), p0, gamma).with_goal(n - 1)


def two_cycles_mdp(n=5, num_actions=2, gamma=0.95):
    """Two disjoint deterministic n-cycles; every action steps forward."""
    S = 2 * n
    P = np.zeros((S, num_actions, S))
    for s in range(S):
        base = (s // n) * n
        P[s, :, base + (s - base + 1) % n] = 1.0
    p0 = np.zeros(S)
    p0[0] = p0[n] = 0.5
    return TabularMDP(P, np.zeros((S, num_actions)), p0, gamma)


def random_model(S=5, A=3, eta=0.3, seed=0, n_expert=2000, n_ta=5000, expert_mode="deterministic"):
    mdp = generate_random_mdp(S, A, min(4, S), eta, seed)
    expert = optimal_expert(mdp, expert_mode, 1.0)
    E = sample_dataset(mdp, expert, n_expert, seed + 1, kind="expert")
    I = sample_dataset(mdp, Policy.uniform(S, A), n_ta, seed + 2)
    return mdp, expert, estimate_empirical_model(E, I, S, A, mdp.gamma)


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        e = e.reshape(x.shape)
        flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def monte_carlo_occupancy(mdp, policy, episodes, seed):
    """Discounted state visitation by geometric-horizon rollouts, vectorised over episodes."""
    rng = np.random.default_rng(seed)
    S = mdp.num_states
    counts = np.zeros(S)
    s = rng.choice(S, size=episodes, p=mdp.initial_dist)
    alive = np.ones(episodes, dtype=bool)
    P_cdf = np.cumsum(mdp.transition, axis=2)
    pi_cdf = np.cumsum(policy.probs, axis=1)
    while alive.any():
        idx = np.flatnonzero(alive)
        np.add.at(counts, s[idx], 1.0)
        a = np.minimum((rng.random(idx.size)[:, None] > pi_cdf[s[idx]]).sum(axis=1), mdp.num_actions - 1)
        nxt = np.minimum((rng.random(idx.size)[:, None] > P_cdf[s[idx], a]).sum(axis=1), S - 1)
        s[idx] = nxt
        alive[idx[rng.random(idx.size) < 1.0 - mdp.gamma]] = False
    return counts / counts.sum()
