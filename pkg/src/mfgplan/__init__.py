"""Finite-state planning solver with affine relabeling noise.

The package solves the coupled transport system for the decoupling field of
a mean field game on a box grid, drives the initial-condition penalization
toward the planning limit, and provides the supporting machinery: method of
characteristics, nonlinear resolvents with their transported counterpart,
monotonicity and regularity diagnostics, optimal trajectories, and the log
straightening of half-space models.
"""

from .errors import (BlowupError, ConfigError, IntegrationError, NewtonError,
                     PlanningError, TrajectoryExitError)
from .model import (AffineNoiseMap, FieldSpec, ModelSpec, MonotonicityReport,
                    affine_couple_eigenvalue, check_couple_monotone,
                    check_monotone_map, eval_field, load_model,
                    model_from_items, register_field, registered_names,
                    save_model)
from .grid_solver import (AnalyticField, Box, GridField, GridSolution, Slice,
                          SolverParams, lipschitz_norm, node_jacobians,
                          residual, sample_solution, solve_master,
                          write_meta_jsonl, write_solution_csv)
from .characteristics import (CharState, flow_forward, penalized_data,
                              solve_by_shooting)
from .yosida import (ResidualField, YosidaField, eqV_residual, invert_shift,
                     resolvent, yosida_apply, yosida_by_transport,
                     yosida_field)
from .planning import (EstimateReport, ExtractedLimit, GraphLimitDiagnostic,
                       PenalizationRun, certificate_bound,
                       certificate_horizon, cross_monotonicity,
                       estimate_certificate, extract_limit, extracted_field,
                       graph_limit_diagnostic, penalized_slice,
                       run_penalization)
from .trajectories import (PlanningConvergence, Trajectory,
                           check_planning_convergence,
                           check_value_consistency, integrate_backward)
from .halfspace import (HalfspaceModel, HalfspaceSolution, LogFit,
                        PullbackField, chain_rule_defect, check_factorization,
                        check_inward_flow, check_log_blowup,
                        from_log_coordinates, solve_halfspace,
                        to_log_coordinates, transformed_model)

__version__ = "0.1.0"

__all__ = [
    "AffineNoiseMap", "AnalyticField", "BlowupError", "Box", "CharState",
    "ConfigError", "EstimateReport", "ExtractedLimit", "FieldSpec",
    "GraphLimitDiagnostic", "GridField", "GridSolution", "HalfspaceModel",
    "HalfspaceSolution", "IntegrationError", "LogFit", "ModelSpec",
    "MonotonicityReport", "NewtonError", "PenalizationRun",
    "PlanningConvergence", "PlanningError", "PullbackField", "ResidualField",
    "Slice", "SolverParams", "Trajectory", "TrajectoryExitError",
    "YosidaField", "affine_couple_eigenvalue", "certificate_bound",
    "certificate_horizon", "chain_rule_defect", "check_couple_monotone",
    "check_factorization", "check_inward_flow", "check_log_blowup",
    "check_monotone_map", "check_planning_convergence",
    "check_value_consistency", "cross_monotonicity", "eqV_residual",
    "estimate_certificate", "eval_field", "extract_limit", "extracted_field",
    "flow_forward", "from_log_coordinates", "graph_limit_diagnostic",
    "integrate_backward", "invert_shift", "lipschitz_norm", "load_model",
    "model_from_items", "node_jacobians", "penalized_data", "penalized_slice",
    "register_field", "registered_names", "resolvent", "residual",
    "run_penalization", "sample_solution", "save_model", "solve_by_shooting",
    "solve_halfspace", "solve_master", "to_log_coordinates",
    "transformed_model", "write_meta_jsonl", "write_solution_csv",
    "yosida_apply", "yosida_by_transport", "yosida_field",
]
