"""Dataset sampling, CSV persistence and count-based empirical models."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import Policy, TabularMDP


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line."""


@dataclass(frozen=True)
class ExpertDataset:
    """State-only expert samples."""

    states: np.ndarray
    initial_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int).reshape(-1)
        if states.size < 1:
            raise ValueError("expert dataset must be nonempty")
        if states.min() < 0:
            raise ValueError("state indices must be nonnegative")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "initial_states", np.asarray(self.initial_states, dtype=int).reshape(-1))

    def __len__(self) -> int:
        return self.states.size


@dataclass(frozen=True)
class TransitionDataset:
    """Task-agnostic (s, a, s') triples, one row each."""

    triples: np.ndarray
    initial_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        triples = np.asarray(self.triples, dtype=int)
        if triples.ndim != 2 or triples.shape[1] != 3:
            raise ValueError(f"triples must have shape (n, 3), got {triples.shape}")
        if triples.shape[0] < 1:
            raise ValueError("transition dataset must be nonempty")
        if triples.min() < 0:
            raise ValueError("indices must be nonnegative")
        object.__setattr__(self, "triples", triples)
        object.__setattr__(self, "initial_states", np.asarray(self.initial_states, dtype=int).reshape(-1))

    def __len__(self) -> int:
        return self.triples.shape[0]

    @property
    def states(self) -> np.ndarray:
        return self.triples[:, 0]

    @property
    def actions(self) -> np.ndarray:
        return self.triples[:, 1]

    @property
    def next_states(self) -> np.ndarray:
        return self.triples[:, 2]


@dataclass(frozen=True)
class EmpiricalModel:
    """Count-based estimates from an expert and a task-agnostic dataset."""

    p_hat: np.ndarray
    pi_I: np.ndarray
    dE_s: np.ndarray
    dI_s: np.ndarray
    dI_sa: np.ndarray
    p0_hat: np.ndarray
    gamma: float

    @property
    def num_states(self) -> int:
        return self.p_hat.shape[0]

    @property
    def num_actions(self) -> int:
        return self.p_hat.shape[1]

    def as_mdp(self, reward: np.ndarray | None = None) -> TabularMDP:
        S, A = self.num_states, self.num_actions
        return TabularMDP(self.p_hat, np.zeros((S, A)) if reward is None else reward, self.p0_hat, self.gamma)


def _inverse_cdf(cdf_rows: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cdf_rows, u, side="right"))
    return min(idx, cdf_rows.size - 1)


def sample_dataset(
    mdp: TabularMDP,
    policy: Policy,
    num_transitions: int,
    seed: int | None = 0,
    horizon_mode: str | int = "geometric",
    kind: str = "transitions",
):
    """Roll out ``policy`` in ``mdp`` until ``num_transitions`` samples exist.

    ``horizon_mode="geometric"`` ends each episode with probability
    ``1 - gamma`` after every step, so recorded states are draws from the
    discounted occupancy. An integer ``T`` (or ``"fixed:T"``) gives fixed
    length-T episodes instead. ``kind`` is ``"expert"`` for a state-only
    dataset or ``"transitions"`` for (s, a, s') triples.
    """
    if num_transitions < 1:
        raise ValueError("num_transitions must be at least 1")
    if kind not in ("expert", "transitions"):
        raise ValueError(f"unknown dataset kind {kind!r}")
    horizon = _parse_horizon(horizon_mode)
    rng = np.random.default_rng(seed)
    p0_cdf = np.cumsum(mdp.initial_dist)
    pi_cdf = np.cumsum(policy.probs, axis=1)
    P_cdf = np.cumsum(mdp.transition, axis=2)
    # Three uniforms per step: action, next state, termination.
    u = rng.random((num_transitions, 3))
    u_init = rng.random(num_transitions)

    triples = np.empty((num_transitions, 3), dtype=int)
    initial_states = []
    s = -1
    t = 0
    for n in range(num_transitions):
        if s < 0:
            s = _inverse_cdf(p0_cdf, u_init[len(initial_states)])
            initial_states.append(s)
            t = 0
        a = _inverse_cdf(pi_cdf[s], u[n, 0])
        s_next = _inverse_cdf(P_cdf[s, a], u[n, 1])
        triples[n] = (s, a, s_next)
        t += 1
        if horizon is None:
            done = u[n, 2] < 1.0 - mdp.gamma
        else:
            done = t >= horizon
        s = -1 if done else s_next

    meta = {
        "seed": seed,
        "horizon_mode": horizon_mode if horizon is None else f"fixed:{horizon}",
        "gamma": mdp.gamma,
    }
    init = np.asarray(initial_states, dtype=int)
    if kind == "expert":
        return ExpertDataset(triples[:, 0].copy(), init, meta)
    return TransitionDataset(triples, init, meta)


def _parse_horizon(mode) -> int | None:
    if mode == "geometric":
        return None
    if isinstance(mode, str) and mode.startswith("fixed:"):
        mode = mode.split(":", 1)[1]
    try:
        T = int(mode)
    except (TypeError, ValueError):
        raise ValueError(f"horizon_mode must be 'geometric' or a positive length, got {mode!r}") from None
    if T < 1:
        raise ValueError("fixed horizon must be positive")
    return T


def _normalize_rows(counts: np.ndarray) -> np.ndarray:
    """Row-normalize along the last axis; empty rows become uniform."""
    totals = counts.sum(axis=-1, keepdims=True)
    uniform = np.full_like(counts, 1.0 / counts.shape[-1], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), uniform)
    return out


def estimate_empirical_model(
    expert: ExpertDataset,
    transitions: TransitionDataset,
    num_states: int,
    num_actions: int,
    gamma: float,
) -> EmpiricalModel:
    """Count-based transition, behavior policy and occupancy estimates."""
    _check_range(expert.states, num_states, "expert state")
    _check_range(transitions.states, num_states, "state")
    _check_range(transitions.next_states, num_states, "next state")
    _check_range(transitions.actions, num_actions, "action")

    sas = np.zeros((num_states, num_actions, num_states))
    np.add.at(sas, (transitions.states, transitions.actions, transitions.next_states), 1.0)
    sa_counts = sas.sum(axis=2)
    p_hat = _normalize_rows(sas)
    pi_I = _normalize_rows(sa_counts)

    dI_sa = sa_counts / sa_counts.sum()
    dI_s = dI_sa.sum(axis=1)
    dE_s = np.bincount(expert.states, minlength=num_states).astype(float)
    dE_s /= dE_s.sum()

    starts = transitions.initial_states
    if starts.size:
        _check_range(starts, num_states, "initial state")
        p0 = np.bincount(starts, minlength=num_states).astype(float)
        p0_hat = p0 / p0.sum()
    else:
        p0_hat = np.full(num_states, 1.0 / num_states)
    return EmpiricalModel(p_hat, pi_I, dE_s, dI_s, dI_sa, p0_hat, float(gamma))


def _check_range(values: np.ndarray, bound: int, what: str) -> None:
    if values.size and (values.min() < 0 or values.max() >= bound):
        bad = values[(values < 0) | (values >= bound)][0]
        raise ValueError(f"{what} index {bad} outside [0, {bound})")


# --- persistence -----------------------------------------------------------

EXPERT_HEADER = ["s"]
TRANSITION_HEADER = ["s", "a", "s_next"]


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_dataset(dataset, path, policy_kind: str | None = None) -> None:
    """Write ``dataset`` as CSV plus a ``<path>.json`` metadata sidecar."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if isinstance(dataset, ExpertDataset):
        writer.writerow(EXPERT_HEADER)
        writer.writerows([int(s)] for s in dataset.states)
    else:
        writer.writerow(TRANSITION_HEADER)
        writer.writerows(row.tolist() for row in dataset.triples)
    path.write_text(buf.getvalue())
    meta = {
        "seed": dataset.meta.get("seed"),
        "policy_kind": policy_kind or dataset.meta.get("policy_kind"),
        "horizon_mode": dataset.meta.get("horizon_mode"),
        "gamma": dataset.meta.get("gamma"),
        "initial_states": dataset.initial_states.tolist(),
    }
    _sidecar(path).write_text(json.dumps(meta))


def load_dataset(path, num_states: int | None = None, num_actions: int | None = None):
    """Inverse of :func:`save_dataset`.

    Raises :class:`DatasetFormatError` naming the line of the first bad record;
    indices are range-checked when ``num_states``/``num_actions`` are given.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        text = fh.read()
    rows = list(csv.reader(io.StringIO(text.replace("\r\n", "\n"))))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header == EXPERT_HEADER:
        width = 1
    elif header == TRANSITION_HEADER:
        width = 3
    else:
        raise DatasetFormatError(f"{path}:1: unrecognised header {rows[0]!r}")

    bounds = [num_states] if width == 1 else [num_states, num_actions, num_states]
    names = header
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise DatasetFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            rec = [int(c) for c in row]
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: non-integer field in {row!r}") from None
        for value, bound, name in zip(rec, bounds, names):
            if value < 0 or (bound is not None and value >= bound):
                raise DatasetFormatError(f"{path}:{lineno}: {name}={value} out of range [0, {bound})")
        records.append(rec)
    if not records:
        raise DatasetFormatError(f"{path}: no records")

    meta, init = {}, np.zeros(0, dtype=int)
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
        init = np.asarray(meta.get("initial_states", []), dtype=int)
    arr = np.asarray(records, dtype=int)
    if width == 1:
        return ExpertDataset(arr[:, 0], init, meta)
    return TransitionDataset(arr, init, meta)
