"""Command-line interface: ``pwdice <subcommand> ...``.

Exit codes: 0 success, 1 hard error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .baselines import build_cost, regret, smodice_solve, tv_state, tv_statepair
from .contrastive import ContrastiveConfig, load_encoder, save_encoder, train_embedding
from .data import estimate_empirical_model, load_dataset, sample_dataset, save_dataset
from .dice import ConvergenceWarning, PwdiceConfig, solve_primal_lp, solve_regularized
from .mdp import Policy, TabularMDP, generate_random_mdp, optimal_expert

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2

log = logging.getLogger("pwdice")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _emit(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_gen_mdp(args) -> int:
    branching = min(4, args.states) if args.branching is None else args.branching
    mdp = generate_random_mdp(args.states, args.actions, branching, args.eta, args.seed, args.gamma)
    if args.out:
        mdp.save(args.out)
    else:
        print(json.dumps(mdp.to_dict()))
    return EXIT_OK


def cmd_sample(args) -> int:
    mdp = TabularMDP.load(args.mdp)
    if args.policy == "uniform":
        policy = Policy.uniform(mdp.num_states, mdp.num_actions)
    else:
        policy = optimal_expert(mdp, args.expert_mode, args.temperature)
    kind = args.kind or ("expert" if args.policy == "expert" else "transitions")
    horizon = args.horizon if args.horizon == "geometric" else int(args.horizon)
    data = sample_dataset(mdp, policy, args.size, args.seed, horizon, kind)
    policy_kind = "uniform" if args.policy == "uniform" else f"expert-{args.expert_mode}"
    save_dataset(data, args.out, policy_kind=policy_kind)
    return EXIT_OK


def _load_model(args):
    if args.mdp:
        mdp = TabularMDP.load(args.mdp)
        S, A, gamma = mdp.num_states, mdp.num_actions, mdp.gamma
    else:
        if args.states is None or args.actions is None:
            raise ValueError("give --mdp or both --states and --actions")
        S, A, gamma = args.states, args.actions, args.gamma
    E = load_dataset(args.expert, S)
    I = load_dataset(args.transitions, S, A)
    return estimate_empirical_model(E, I, S, A, gamma)


def cmd_solve(args) -> int:
    model = _load_model(args)
    encoder = load_encoder(args.encoder)[0] if args.encoder else None
    doc = {"method": args.method, "divergence": None, "eps1": None, "eps2": None}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        if args.method == "bc":
            policy, objective, converged, iterations, distance = Policy(model.pi_I), None, True, 0, None
        elif args.method == "smodice":
            res = smodice_solve(model)
            policy, objective, converged, iterations = res.policy, res.objective, res.converged, res.iterations
            distance = res.objective
            doc["divergence"] = "kl"
        else:
            cost = build_cost(args.cost, model, encoder=encoder, beta=args.beta)
            if args.method == "lp":
                res = solve_primal_lp(model, cost, rule=args.pivot)
                if res.lp.status != "optimal":
                    raise RuntimeError(f"LP solver returned status {res.lp.status}")
                policy, objective, converged, iterations = res.policy, res.wasserstein, True, res.lp.iterations
                distance = res.wasserstein
            else:
                cfg = PwdiceConfig(eps1=args.eps1, eps2=args.eps2, divergence=args.divergence,
                                   optimizer=args.optimizer, iterations=args.iterations)
                res = solve_regularized(model, cost, cfg, args.seed)
                policy, objective = res.policy, res.dual.objective
                converged, iterations = res.dual.converged, res.dual.iterations
                distance = -res.dual.objective
                doc.update(divergence=args.divergence, eps1=args.eps1, eps2=args.eps2)
    for w in caught:
        log.warning("%s", w.message)
    doc.update(objective=objective, converged=converged, iterations=int(iterations),
               policy=policy.probs.tolist(), wasserstein_or_dual_value=distance)
    _emit(doc, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    mdp = TabularMDP.load(args.mdp)
    result = json.loads(Path(args.result).read_text())
    learner = Policy(np.asarray(result["policy"], dtype=float))
    expert = optimal_expert(mdp, args.expert_mode, args.temperature)
    doc = {
        "method": result.get("method"),
        "regret": regret(mdp, learner, expert),
        "tv_state": tv_state(mdp, learner, expert),
        "tv_statepair": tv_statepair(mdp, learner, expert),
    }
    _emit(doc, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.config:
        config = ex.ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        config = ex.preset(args.preset)
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    out = args.out or config.output or "results.csv"
    records, summary = ex.run_sweep(config, out, args.workers)
    failures = sum(r.status != "ok" for r in records)
    print(f"{len(records)} rows written to {out} ({failures} failed); summary in {out}.summary.json")
    gap = summary["lp_vs_reg"]
    if gap["max_abs_gap"] is not None:
        print(f"max LP vs Reg(KL) cell-mean regret gap: {gap['max_abs_gap']:.4g} at {gap['abs_cell']}, "
              f"relative {gap['max_rel_gap']:.1%} at {gap['rel_cell']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    overrides = {"wrong_cost_sign": args.wrong_cost_sign}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    report = ex.verify_theorems(ex.verify_preset(args.preset, **overrides))
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']} residual={c['residual']:.3e} tol={c['tolerance']:.1e}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, default=float) + "\n")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_embed(args) -> int:
    data = load_dataset(args.transitions, args.states)
    if not hasattr(data, "triples"):
        raise ValueError("embedding needs a transition dataset (s,a,s_next)")
    cfg = ContrastiveConfig(dim=args.dim, epochs=args.epochs, learning_rate=args.lr,
                            seed=0 if args.seed is None else args.seed)
    result = train_embedding(data, args.states, cfg)
    save_encoder(result.encoder, result.W0, args.out)
    if result.losses:
        print(f"final InfoNCE loss {result.losses[-1]:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pwdice", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-mdp", help="generate a random tabular MDP")
    g.add_argument("--states", type=int, default=20)
    g.add_argument("--actions", type=int, default=4)
    g.add_argument("--branching", type=int, help="successors per (s, a); default min(4, states)")
    g.add_argument("--eta", type=float, default=0.1)
    g.add_argument("--gamma", type=float, default=0.95)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_mdp)

    s = sub.add_parser("sample", help="roll out a policy and write a dataset CSV")
    s.add_argument("--mdp", required=True)
    s.add_argument("--policy", choices=["expert", "uniform"], default="expert")
    s.add_argument("--expert-mode", choices=["deterministic", "softmax"], default="deterministic")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--kind", choices=["expert", "transitions"])
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--horizon", default="geometric", help="'geometric' or a fixed episode length")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    v = sub.add_parser("solve", help="solve for an imitation policy from two dataset files")
    v.add_argument("--expert", required=True)
    v.add_argument("--transitions", required=True)
    v.add_argument("--mdp", help="MDP JSON used only for |S|, |A| and gamma")
    v.add_argument("--states", type=int)
    v.add_argument("--actions", type=int)
    v.add_argument("--gamma", type=float, default=0.95)
    v.add_argument("--method", choices=["lp", "reg", "smodice", "bc"], default="lp")
    v.add_argument("--divergence", choices=["kl", "chi2"], default="kl")
    v.add_argument("--cost", default="zero_one",
                   choices=["zero_one", "smodice_log_ratio", "discriminator_R", "combined_contrastive"])
    v.add_argument("--encoder", help="embedding JSON for the combined_contrastive cost")
    v.add_argument("--beta", type=float, default=5.0)
    v.add_argument("--eps1", type=float, default=0.01)
    v.add_argument("--eps2", type=float, default=0.01)
    v.add_argument("--optimizer", choices=["lbfgs", "adam"], default="lbfgs")
    v.add_argument("--iterations", type=int, default=20_000)
    v.add_argument("--pivot", choices=["bland", "dantzig"], default="dantzig")
    v.add_argument("--seed", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="regret and TV distances of a solved policy in the true MDP")
    e.add_argument("--mdp", required=True)
    e.add_argument("--result", required=True)
    e.add_argument("--expert-mode", choices=["deterministic", "softmax"], default="deterministic")
    e.add_argument("--temperature", type=float, default=1.0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help="run a benchmark grid and write CSV plus summary JSON")
    w.add_argument("--config", help="JSON file of ExperimentConfig fields")
    w.add_argument("--preset", choices=["paper", "ci"], default="ci")
    w.add_argument("--workers", type=int)
    w.add_argument("--seed", type=int, help="overrides base_seed")
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("verify", help="run the theorem-level self checks")
    r.add_argument("--preset", choices=["paper", "ci"], default="ci")
    r.add_argument("--seed", type=int)
    r.add_argument("--wrong-cost-sign", action="store_true", help="negative control: flip the cost sign")
    r.add_argument("--out")
    r.set_defaults(func=cmd_verify)

    m = sub.add_parser("embed", help="train contrastive state embeddings on a transition dataset")
    m.add_argument("--transitions", required=True)
    m.add_argument("--states", type=int, required=True)
    m.add_argument("--dim", type=int, default=32)
    m.add_argument("--epochs", type=int, default=200)
    m.add_argument("--lr", type=float, default=1e-2)
    m.add_argument("--seed", type=int)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_embed)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
