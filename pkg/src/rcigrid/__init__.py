"""Robust controlled-invariant sets for linearized power-system frequency
dynamics, computed centrally or by a consensus decomposition over buses,
plus the controllers and adversarial simulation that use them."""

__version__ = "0.1.0"

from .polytope import (Box, HPolytope, EmptyPolytopeError, PolytopeError,
                       contains_scaled, intersect, linear_image, minkowski_sum,
                       pontryagin_diff, project, reduce, support, vertices)
from .network import NetworkSpec, build_model, load_network, theorem1_step_bound
from .invariant import (CONVERGED, EMPTY_FAILURE, INCONCLUSIVE, IterationConfig,
                        RciResult, centralized_rci, consensus_coupling, distributed_rci)
from .controllers import (CostSpec, RegulationMap, lqr_control, onestep_mpc_control,
                          rmpc_control, solve_riccati)
from .adversary import SimConfig, TrajectoryLog, adversarial_disturbance, simulate

__all__ = [
    "Box", "HPolytope", "EmptyPolytopeError", "PolytopeError", "contains_scaled",
    "intersect", "linear_image", "minkowski_sum", "pontryagin_diff", "project",
    "reduce", "support", "vertices", "NetworkSpec", "build_model", "load_network",
    "theorem1_step_bound", "CONVERGED", "EMPTY_FAILURE", "INCONCLUSIVE",
    "IterationConfig", "RciResult", "centralized_rci", "consensus_coupling",
    "distributed_rci", "CostSpec", "RegulationMap", "lqr_control",
    "onestep_mpc_control", "rmpc_control", "solve_riccati", "SimConfig",
    "TrajectoryLog", "adversarial_disturbance", "simulate",
]
