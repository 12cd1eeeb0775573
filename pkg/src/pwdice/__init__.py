"""Primal Wasserstein DICE for offline imitation from observation on tabular MDPs."""

from .baselines import MetricsRecord, build_cost, regret, smodice_solve, tv_state, tv_statepair
from .data import (
    DatasetFormatError,
    EmpiricalModel,
    ExpertDataset,
    TransitionDataset,
    estimate_empirical_model,
    load_dataset,
    sample_dataset,
    save_dataset,
)
from .dice import (
    ConvergenceWarning,
    CostSpec,
    PwdiceConfig,
    dual_objective,
    optimize_dual,
    recover_primal,
    solve_primal_lp,
    solve_regularized,
)
from .lp import LpProblem, solve_lp, verify_solution
from .mdp import Policy, TabularMDP, exact_occupancies, generate_random_mdp, optimal_expert, value_iteration

__version__ = "0.1.0"
