"""Constrained optimal impulse control of deterministic flows, discounted costs.

The pipeline: define an :class:`~impulsecontrol.model.ImpulseProblem`,
discretize it onto a grid, solve the multiplier-modified Bellman equation per
Lagrange multiplier, maximize the concave dual functional, and assemble a
feasible mixture of minimizer policies with complementary slackness.  The
fluid-buffer benchmark in :mod:`impulsecontrol.fluidq` has a closed-form
optimum used as the end-to-end oracle.
"""

from .model import (CEMETERY, INFINITY, ConfigError, DiscreteMDP, GridSpec,
                    ImpulseProblem, ValidationReport, discretize,
                    fluid_problem, problem_from_config, stage_cost,
                    transition, validate)
from .bellman import (BellmanConfig, BellmanSolution, MinimizerSet,
                      StationaryPolicy, ValueFn, argmin_set, bellman_backup,
                      default_slack, residual, solve_W)
from .policy_eval import (CostVector, MixedPolicy, OccupationMeasure,
                          check_characteristic, eval_mixture, eval_policy,
                          occupation_measure, policy_from_table,
                          policy_to_table, simulate_oracle, threshold_rule)
from .dual import (CertificateReport, DualBracketError, DualConfig, DualPoint,
                   DualResult, MixtureInfeasibleError, build_mixture,
                   dual_value, maximize_dual, mix_weights, solve_constrained,
                   verify_optimality)
from . import fluidq

__all__ = [
    "CEMETERY", "INFINITY", "ConfigError", "DiscreteMDP", "GridSpec",
    "ImpulseProblem", "ValidationReport", "discretize", "fluid_problem",
    "problem_from_config", "stage_cost", "transition", "validate",
    "BellmanConfig", "BellmanSolution", "MinimizerSet", "StationaryPolicy",
    "ValueFn", "argmin_set", "bellman_backup", "default_slack", "residual",
    "solve_W",
    "CostVector", "MixedPolicy", "OccupationMeasure", "check_characteristic",
    "eval_mixture", "eval_policy", "occupation_measure", "policy_from_table",
    "policy_to_table", "simulate_oracle", "threshold_rule",
    "CertificateReport", "DualBracketError", "DualConfig", "DualPoint",
    "DualResult", "MixtureInfeasibleError", "build_mixture", "dual_value",
    "maximize_dual", "mix_weights", "solve_constrained", "verify_optimality",
    "fluidq",
]

__version__ = "0.1.0"
