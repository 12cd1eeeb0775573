"""Benchmark sweeps over random tabular MDPs and theorem-level self checks."""

from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import MetricsRecord, build_cost, regret, smodice_solve, tv_state, tv_statepair
from .data import estimate_empirical_model, sample_dataset
from .dice import (
    CostSpec,
    PwdiceConfig,
    constraint_residuals,
    dual_objective,
    fenchel_kl,
    optimize_dual,
    recover_primal,
    regularized_primal_objective,
    solve_primal_lp,
    solve_regularized,
)
from .mdp import Policy, generate_random_mdp, optimal_expert

CSV_HEADER = [f.name for f in fields(MetricsRecord)]
METHODS = ("pwdice-lp", "pwdice-reg", "smodice", "bc")


@dataclass(frozen=True)
class MethodSpec:
    """One solver in a sweep. ``divergence`` and ``eps*`` apply to ``pwdice-reg`` only."""

    name: str
    divergence: str = "kl"
    cost_kind: str = "zero_one"
    eps1: float = 0.01
    eps2: float = 0.01
    optimizer: str = "lbfgs"

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; choose from {METHODS}")

    @property
    def divergence_label(self) -> str:
        if self.name == "pwdice-reg":
            return self.divergence
        return "kl" if self.name == "smodice" else "none"

    @property
    def cost_label(self) -> str:
        return self.cost_kind if self.name.startswith("pwdice") else "none"


def default_methods() -> tuple:
    return (MethodSpec("pwdice-lp"), MethodSpec("pwdice-reg"), MethodSpec("smodice"))


@dataclass(frozen=True)
class ExperimentConfig:
    num_states: int = 20
    num_actions: int = 4
    branching: int = 4
    gamma: float = 0.95
    eta_list: tuple = (0.01, 0.1, 1.0)
    expert_sizes: tuple = (1000,)
    ta_sizes: tuple = (10, 100, 1000, 10000)
    num_seeds: int = 10
    base_seed: int = 0
    methods: tuple = field(default_factory=default_methods)
    expert_mode: str = "deterministic"
    temperature: float = 1.0
    output: str | None = None
    workers: int = 1

    def __post_init__(self):
        for name in ("eta_list", "expert_sizes", "ta_sizes", "methods"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, value)
        methods = tuple(m if isinstance(m, MethodSpec) else MethodSpec(**m) for m in self.methods)
        object.__setattr__(self, "methods", methods)
        if min(self.expert_sizes) < 1 or min(self.ta_sizes) < 1:
            raise ValueError("dataset sizes must be positive")
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be positive")
        if self.expert_mode not in ("deterministic", "softmax"):
            raise ValueError(f"expert_mode must be deterministic or softmax, got {self.expert_mode!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["methods"] = [asdict(m) for m in self.methods]
        return doc

    def size(self) -> int:
        return (len(self.eta_list) * len(self.expert_sizes) * len(self.ta_sizes)
                * self.num_seeds * len(self.methods))


def preset(name: str) -> ExperimentConfig:
    """``paper``: the full random-MDP benchmark. ``ci``: a smaller desk-scale version."""
    if name == "paper":
        return ExperimentConfig()
    if name == "ci":
        return ExperimentConfig(num_states=10, num_seeds=5, ta_sizes=(100, 1000))
    raise ValueError(f"unknown preset {name!r}")


@dataclass(frozen=True)
class GridPoint:
    eta: float
    expert_size: int
    ta_size: int
    seed: int


def derive_seed(base_seed: int, *coords) -> int:
    """Deterministic 32-bit seed from the base seed and integer-coded point coordinates."""
    keys = [int(base_seed)]
    for c in coords:
        keys.append(int(round(c * 1_000_000)) if isinstance(c, float) else int(c))
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


def grid_points(config: ExperimentConfig) -> list:
    return [GridPoint(float(eta), int(ne), int(ni), seed)
            for eta in config.eta_list
            for ne in config.expert_sizes
            for ni in config.ta_sizes
            for seed in range(config.num_seeds)]


@dataclass
class Instance:
    mdp: object
    expert: Policy
    model: object


def prepare_instance(config: ExperimentConfig, point: GridPoint) -> Instance:
    """MDP, expert and empirical model shared by every method at ``point``.

    The MDP depends on (eta, seed) only; each dataset additionally on its own size.
    """
    mdp = generate_random_mdp(config.num_states, config.num_actions, config.branching, point.eta,
                              derive_seed(config.base_seed, 0, point.eta, point.seed), config.gamma)
    expert = optimal_expert(mdp, config.expert_mode, config.temperature)
    E = sample_dataset(mdp, expert, point.expert_size,
                       derive_seed(config.base_seed, 1, point.eta, point.seed, point.expert_size), kind="expert")
    uniform = Policy.uniform(config.num_states, config.num_actions)
    I = sample_dataset(mdp, uniform, point.ta_size,
                       derive_seed(config.base_seed, 2, point.eta, point.seed, point.ta_size))
    model = estimate_empirical_model(E, I, config.num_states, config.num_actions, config.gamma)
    return Instance(mdp, expert, model)


def solve_method(method: MethodSpec, model, seed: int | None = None):
    """Run one method on an empirical model; returns ``(policy, objective, converged, extra)``."""
    if method.name == "bc":
        return Policy(model.pi_I), np.nan, True, {}
    if method.name == "smodice":
        res = smodice_solve(model, optimizer=method.optimizer)
        return res.policy, res.objective, res.converged, {"iterations": res.iterations}
    cost = build_cost(method.cost_kind, model)
    if method.name == "pwdice-lp":
        res = solve_primal_lp(model, cost)
        if res.lp.status != "optimal":
            raise RuntimeError(f"LP status {res.lp.status}")
        return res.policy, res.wasserstein, True, {"iterations": res.lp.iterations, "d_sa": res.d_sa, "Pi": res.Pi}
    cfg = PwdiceConfig(eps1=method.eps1, eps2=method.eps2, divergence=method.divergence,
                       optimizer=method.optimizer)
    res = solve_regularized(model, cost, cfg, seed)
    # The minimised dual equals minus the regularized distance.
    return res.policy, -res.dual.objective, res.dual.converged, {
        "iterations": res.dual.iterations, "d_sa": res.d_sa, "Pi": res.Pi}


def _evaluate(instance: Instance, config: ExperimentConfig, point: GridPoint, method: MethodSpec) -> MetricsRecord:
    rec = MetricsRecord(method.name, method.divergence_label, method.cost_label, point.eta,
                        point.expert_size, point.ta_size, point.seed)
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            policy, objective, converged, _ = solve_method(method, instance.model, point.seed)
        rec.runtime_ms = int(round(1000 * (time.perf_counter() - t0)))
        rec.objective = float(objective)
        rec.converged = bool(converged)
        rec.regret = regret(instance.mdp, policy, instance.expert)
        rec.tv_state = tv_state(instance.mdp, policy, instance.expert)
        rec.tv_statepair = tv_statepair(instance.mdp, policy, instance.expert)
    except Exception as exc:  # noqa: BLE001 - recorded per row, sweep continues
        rec.runtime_ms = int(round(1000 * (time.perf_counter() - t0)))
        rec.converged = False
        rec.status = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    return rec


def run_single(config: ExperimentConfig, point: GridPoint, method: MethodSpec) -> MetricsRecord:
    """Full pipeline for one (grid point, method); solver errors land in ``status``."""
    try:
        instance = prepare_instance(config, point)
    except Exception as exc:  # noqa: BLE001
        return MetricsRecord(method.name, method.divergence_label, method.cost_label, point.eta,
                             point.expert_size, point.ta_size, point.seed, converged=False,
                             status=f"error: {type(exc).__name__}: {exc}")
    return _evaluate(instance, config, point, method)


def _run_point(args) -> list:
    config, point = args
    try:
        instance = prepare_instance(config, point)
    except Exception:  # noqa: BLE001
        return [run_single(config, point, m) for m in config.methods]
    return [_evaluate(instance, config, point, m) for m in config.methods]


def run_grid(config: ExperimentConfig, workers: int | None = None) -> list:
    """All records of the cross product, in grid order regardless of ``workers``."""
    workers = config.workers if workers is None else workers
    jobs = [(config, p) for p in grid_points(config)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_point, jobs))
    else:
        chunks = [_run_point(j) for j in jobs]
    return [rec for chunk in chunks for rec in chunk]


def _format(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            row = rec.as_row()
            writer.writerow([_format(row[k]) for k in CSV_HEADER])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _stats(values) -> dict:
    v = np.sort(np.asarray([x for x in values if np.isfinite(x)], dtype=float))
    if v.size == 0:
        return {"mean": None, "std": None}
    return {"mean": float(np.mean(v)), "std": float(np.std(v))}


def aggregate(records) -> dict:
    """Per-cell mean/std over seeds, method ordering by mean regret, and the largest LP-vs-Reg gaps.

    Values are sorted before reduction so the result does not depend on row order.
    """
    cells: dict = {}
    for rec in records:
        r = rec.as_row() if hasattr(rec, "as_row") else rec
        cell = f"eta={float(r['eta'])}|E={int(r['expert_size'])}|I={int(r['ta_size'])}"
        label = r["method"] if r["method"] != "pwdice-reg" else f"pwdice-reg-{r['divergence']}"
        entry = cells.setdefault(cell, {}).setdefault(label, {"rows": [], "failures": 0})
        if str(r["status"]) != "ok":
            entry["failures"] += 1
        entry["rows"].append(r)

    summary = {"cells": {}, "lp_vs_reg": {"max_abs_gap": None, "abs_cell": None,
                                          "max_rel_gap": None, "rel_cell": None}}
    gaps = summary["lp_vs_reg"]
    for cell in sorted(cells):
        out = {}
        for label in sorted(cells[cell]):
            entry = cells[cell][label]
            rows = entry["rows"]
            out[label] = {
                "n": len(rows),
                "failures": entry["failures"],
                **{f"{k}_{s}": v for k in ("regret", "tv_state", "tv_statepair", "runtime_ms")
                   for s, v in _stats(float(r[k]) for r in rows).items()},
            }
        ranked = [m for m in out if out[m]["regret_mean"] is not None]
        ordering = sorted(ranked, key=lambda m: (out[m]["regret_mean"], m))
        summary["cells"][cell] = {"methods": out, "ordering": ordering}
        if "pwdice-lp" in out and "pwdice-reg-kl" in out:
            lp, reg = out["pwdice-lp"]["regret_mean"], out["pwdice-reg-kl"]["regret_mean"]
            if lp is not None and reg is not None:
                gap = abs(reg - lp)
                if gaps["max_abs_gap"] is None or gap > gaps["max_abs_gap"]:
                    gaps.update(max_abs_gap=gap, abs_cell=cell)
                rel = gap / abs(lp) if lp != 0 else np.inf
                if gaps["max_rel_gap"] is None or rel > gaps["max_rel_gap"]:
                    gaps.update(max_rel_gap=float(rel), rel_cell=cell)
    return summary


def run_sweep(config: ExperimentConfig, out_csv=None, workers: int | None = None):
    """Run the cross product, write ``out_csv`` and ``<out_csv>.summary.json``.

    Returns ``(records, summary)``.
    """
    records = run_grid(config, workers)
    summary = aggregate(records)
    summary["rows"] = len(records)
    summary["expected_rows"] = config.size()
    out_csv = out_csv or config.output
    if out_csv:
        write_csv(records, out_csv)
        Path(str(out_csv) + ".summary.json").write_text(json.dumps(summary, indent=2))
    return records, summary


# --- self checks -----------------------------------------------------------------------------

@dataclass
class VerifyConfig:
    num_states: int = 10
    num_actions: int = 4
    num_seeds: int = 5
    eta_list: tuple = (0.01, 0.1, 1.0)
    wrong_cost_sign: bool = False
    base_seed: int = 0


def _check(name, residual, tolerance, **details) -> dict:
    return {"name": name, "residual": float(residual), "tolerance": float(tolerance),
            "passed": bool(residual <= tolerance), "details": details}


def _small_model(num_states, num_actions, eta, seed, n=10_000, expert_mode="deterministic"):
    mdp = generate_random_mdp(num_states, num_actions, 4, eta, seed)
    expert = optimal_expert(mdp, expert_mode, 1.0)
    E = sample_dataset(mdp, expert, n, seed + 10_000, kind="expert")
    I = sample_dataset(mdp, Policy.uniform(num_states, num_actions), n, seed + 20_000)
    return estimate_empirical_model(E, I, num_states, num_actions, mdp.gamma)


def check_mass(cfg: VerifyConfig) -> dict:
    worst = 0.0
    for eta in cfg.eta_list:
        for seed in range(cfg.num_seeds):
            model = _small_model(cfg.num_states, cfg.num_actions, eta, cfg.base_seed + seed, 1000)
            res = solve_primal_lp(model, build_cost("zero_one", model))
            worst = max(worst, abs(res.Pi.sum() - 1.0), abs(res.d_sa.sum() - 1.0))
    return _check("lp_mass", worst, 1e-8)


def check_fenchel(cfg: VerifyConfig, instances: int = 20, step: float = 1e-2) -> dict:
    """Grid search of ``E_p[y] - KL(p||q)`` over the simplex against the log-sum-exp value.

    ``q ~ Dirichlet(2, ..., 2)`` keeps the maximiser away from the simplex boundary,
    where a step-``step`` grid cannot resolve it.
    """
    rng = np.random.default_rng(cfg.base_seed)
    grid_err, closed_err = 0.0, 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 5))
        q = rng.dirichlet(np.full(n, 2.0))
        y = rng.uniform(-1.0, 1.0, size=n)
        value, p_star = fenchel_kl(y, q)
        grid_err = max(grid_err, abs(_simplex_grid_max(y, q, step) - value))
        closed_err = max(closed_err, abs(_fenchel_primal(p_star, y, q) - value))
    return _check("fenchel_bruteforce", max(grid_err / 1e-3, closed_err / 1e-9), 1.0,
                  grid_error=grid_err, closed_form_error=closed_err)


def _fenchel_primal(p, y, q) -> float:
    mask = p > 0
    return float(p @ y - np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _simplex_grid_max(y, q, step) -> float:
    k = int(round(1.0 / step))
    n = len(q)
    best = -np.inf
    # Enumerate compositions of k into n parts, vectorised over the last coordinate.
    def rec(prefix, remaining, depth):
        nonlocal best
        if depth == n - 2:
            a = np.arange(remaining + 1)
            P = np.empty((a.size, n))
            P[:, :n - 2] = prefix
            P[:, n - 2] = a
            P[:, n - 1] = remaining - a
            P /= k
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(P > 0, P * np.log(P / q), 0.0)
            best = max(best, float(np.max(P @ y - terms.sum(axis=1))))
            return
        for i in range(remaining + 1):
            rec(prefix + [i], remaining - i, depth + 1)
    rec([], k, 0)
    return best


def smodice_limit_sequence(model, eps1_list=(1e-1, 1e-2, 1e-3), wrong_cost_sign: bool = False) -> dict:
    """PW-DICE KL duals with ``c = -log(dE/dI)``, ``eps2 = 1`` against the SMODICE dual optimum.

    Each eps1 warm-starts from the previous solution.
    """
    cost = build_cost("smodice_log_ratio", model)
    if wrong_cost_sign:
        cost = CostSpec(-cost.matrix, "custom")
    sm = smodice_solve(model)
    gaps, l1 = [], []
    init = None
    for e1 in eps1_list:
        cfg = PwdiceConfig(eps1=e1, eps2=1.0)
        dual = optimize_dual(model, cost, cfg, init=init)
        init = dual.lam
        _, d_sa = recover_primal(dual.lam, model, cost, cfg)
        gaps.append(abs(dual.objective - sm.objective))
        l1.append(float(np.abs(d_sa - sm.d_sa).sum()))
    return {"eps1": list(eps1_list), "gaps": gaps, "d_sa_l1": l1}


def smodice_limit_model(num_states: int, seed: int):
    return _small_model(num_states, 4, 0.5, seed, 100_000, "softmax")


def check_smodice_limit(cfg: VerifyConfig) -> dict:
    worst = 0.0
    runs = []
    for seed in range(cfg.num_seeds):
        model = smodice_limit_model(cfg.num_states, cfg.base_seed + seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            run = smodice_limit_sequence(model, wrong_cost_sign=cfg.wrong_cost_sign)
        runs.append(run)
        g = run["gaps"]
        decreasing = all(b < a for a, b in zip(g, g[1:]))
        # Normalised so that <= 1 means every requirement holds.
        score = max(g[-1] / 1e-2, run["d_sa_l1"][-1] / 1e-2)
        worst = max(worst, score if decreasing else np.inf)
    return _check("smodice_limit", worst, 1.0, runs=runs)


def check_strong_duality(cfg: VerifyConfig, instances: int = 10) -> dict:
    gap, resid = 0.0, 0.0
    config = PwdiceConfig()
    for seed in range(instances):
        model = _small_model(cfg.num_states, cfg.num_actions, 0.1, cfg.base_seed + seed, 1000)
        cost = build_cost("zero_one", model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = solve_regularized(model, cost, config)
        primal = regularized_primal_objective(res.Pi, res.d_sa, model, cost, config)
        gap = max(gap, abs(res.dual.objective + primal))
        r = constraint_residuals(res.Pi, res.d_sa, model)
        resid = max(resid, r["learner_marginal"], r["expert_marginal"], r["bellman_flow"])
    return _check("strong_duality", max(gap, resid) / 1e-3, 1.0, duality_gap=gap, constraint_residual=resid)


def gauge_shift(lam, shift: float, num_states: int) -> np.ndarray:
    """Add ``shift`` to the expert-marginal block and subtract it from the learner-marginal block."""
    S = num_states
    out = np.array(lam, dtype=float)
    out[S:2 * S] -= shift
    out[2 * S:] += shift
    return out


def check_gauge(cfg: VerifyConfig, trials: int = 20) -> dict:
    rng = np.random.default_rng(cfg.base_seed)
    model = _small_model(cfg.num_states, cfg.num_actions, 0.1, cfg.base_seed, 1000)
    cost = build_cost("zero_one", model)
    config = PwdiceConfig()
    obj_err, occ_err = 0.0, 0.0
    for _ in range(trials):
        lam = rng.normal(scale=0.1, size=3 * cfg.num_states)
        shifted = gauge_shift(lam, rng.normal(), cfg.num_states)
        f0, _ = dual_objective(lam, model, cost, config)
        f1, _ = dual_objective(shifted, model, cost, config)
        _, d0 = recover_primal(lam, model, cost, config)
        _, d1 = recover_primal(shifted, model, cost, config)
        obj_err = max(obj_err, abs(f1 - f0))
        occ_err = max(occ_err, float(np.max(np.abs(d1 - d0))))
    return _check("gauge_invariance", max(obj_err / 1e-10, occ_err / 1e-12), 1.0,
                  objective_change=obj_err, d_sa_change=occ_err)


def verify_theorems(cfg: VerifyConfig | None = None) -> dict:
    """Run every self check; the report's ``passed`` is the conjunction."""
    cfg = cfg or VerifyConfig()
    checks = [check_mass(cfg), check_fenchel(cfg), check_smodice_limit(cfg),
              check_strong_duality(cfg), check_gauge(cfg)]
    return {"passed": all(c["passed"] for c in checks), "checks": checks,
            "config": {**asdict(cfg), "eta_list": list(cfg.eta_list)}}


def verify_preset(name: str, **overrides) -> VerifyConfig:
    if name == "paper":
        base = VerifyConfig(num_seeds=10)
    elif name == "ci":
        base = VerifyConfig()
    else:
        raise ValueError(f"unknown preset {name!r}")
    return replace(base, **overrides)
