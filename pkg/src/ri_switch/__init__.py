"""Runtime interchange of controller groups under timed policies.

Policies are written in a small DSL, compiled to valued discrete timed
automata, and enforced tick by tick by :class:`RiManager`, which suspends
groups whose policy would be driven into a trap and releases one valid
group output per input.
"""

from .builtins import EvalError, NonPositiveDistance, kin, min_front
from .controllers import (ControllerBank, ControllerConfig, ControllerGroup, DimensionMismatch,
                          MlpModel, PidGains, PidState, brake_linear, distance_pid, f110_bank,
                          mlp_infer, steer_geometric, swerve_heuristic)
from .dsl import DslError, PolicySyntaxError, format_policy, parse_policy
from .manager import (ManagerError, MaskViolation, OutOfOrder, PolicyDeadlock, RiManager,
                      SelectionPolicy, TraceReport, check_trace)
from .policies import f110_policies
from .sim import (LidarConfig, PedestrianProcess, Scenario, ScenarioResult, TrackMap,
                  VehicleConfig, VehicleState, detect_collisions, raycast, run_scenario,
                  step_vehicle)
from .vdta import (BOTTOM, IoEvent, Trace, Vdta, VdtaState, accepts, can_avoid_trap,
                   load_policy, project_input, run, step, step_input, step_suspended,
                   trap_locations)

__version__ = "0.1.0"

__all__ = [
    "BOTTOM", "ControllerBank", "ControllerConfig", "ControllerGroup", "DimensionMismatch",
    "DslError", "EvalError", "IoEvent", "LidarConfig", "ManagerError", "MaskViolation",
    "MlpModel", "NonPositiveDistance", "OutOfOrder", "PedestrianProcess", "PidGains", "PidState",
    "PolicyDeadlock", "PolicySyntaxError", "RiManager", "Scenario", "ScenarioResult",
    "SelectionPolicy", "Trace", "TraceReport", "TrackMap", "Vdta", "VdtaState", "VehicleConfig",
    "VehicleState", "accepts", "brake_linear", "can_avoid_trap", "check_trace",
    "detect_collisions", "distance_pid", "f110_bank", "f110_policies", "format_policy", "kin",
    "load_policy", "min_front", "mlp_infer", "parse_policy", "project_input", "raycast", "run",
    "run_scenario", "step", "step_input", "step_suspended", "step_vehicle", "steer_geometric",
    "swerve_heuristic", "trap_locations",
]
