"""Markovian traffic equilibrium solver for ride-hailing fleets.

A fleet of profit-seeking drivers circulates on a congestible road network,
alternating empty repositioning with passenger trips. Drivers follow a
semi-Markov decision process with logit link choice; the fleet's stationary
mass distribution feeds back into travel times and matching probabilities.
This package computes the resulting equilibrium, its model variants
(endogenous participation, myopic drivers, congestion-unaware loading,
directed cycles), steady-state metrics, and an agent-level simulation
oracle, behind both a library API and the `mter` command line tool.
"""

from .errors import (ConvergenceError, DomainError, ModelViolationError,
                     MterError, NumericalError, ParseError, StructuralError,
                     ValidationError)
from .network import (DemandModel, Link, LinkEnvironment, Network,
                      ParseReport, compute_fares, derive_demand,
                      matching_probability, parse_link_file, parse_network,
                      parse_trips_file, travel_time)
from .smdp import (Policies, SMDPParams, ValueFunctions, bellman_apply,
                   choice_probabilities, social_surplus, solve_values)
from .loading import (ChainSpec, MassDistribution, StateIndex, build_chain,
                      flow_balance_residual, masses_to_env, prune_transient,
                      stationary_flows_blocked, stationary_masses)
from .equilibrium import (EquilibriumResult, SolverConfig, fixed_point_map,
                          gap, multi_start, solve_equilibrium, step_update)
from .extensions import (CycleProblem, CycleReport, ParticipationParams,
                         ParticipationResult, congestion_unaware_load,
                         cycle_map, solve_cycle, solve_myopic,
                         solve_participation, spread, sweep_parameter)
from .metrics import MetricsBundle, compute_metrics
from .microsim import SimConfig, SimResult, simulate

__version__ = "0.1.0"

__all__ = [
    "MterError", "ParseError", "ValidationError", "StructuralError",
    "DomainError", "ConvergenceError", "NumericalError", "ModelViolationError",
    "Link", "Network", "DemandModel", "LinkEnvironment", "ParseReport",
    "parse_network", "parse_link_file", "parse_trips_file", "derive_demand",
    "compute_fares", "travel_time", "matching_probability",
    "SMDPParams", "ValueFunctions", "Policies", "social_surplus",
    "bellman_apply", "solve_values", "choice_probabilities",
    "ChainSpec", "StateIndex", "MassDistribution", "build_chain",
    "prune_transient", "stationary_masses", "stationary_flows_blocked",
    "masses_to_env", "flow_balance_residual",
    "SolverConfig", "EquilibriumResult", "fixed_point_map", "gap",
    "step_update", "solve_equilibrium", "multi_start",
    "ParticipationParams", "ParticipationResult", "solve_participation",
    "solve_myopic", "congestion_unaware_load", "CycleProblem", "CycleReport",
    "cycle_map", "spread", "solve_cycle", "sweep_parameter",
    "MetricsBundle", "compute_metrics",
    "SimConfig", "SimResult", "simulate",
    "__version__",
]
