from enum import Enum


class KernelKind(str, Enum):
    locally_periodic = "locally_periodic"
    mars_density = "mars_density"
    squared_exponential = "squared_exponential"
    constant = "constant"


class ModelKind(str, Enum):
    double_integrator = "double_integrator"
    aerocapture = "aerocapture"


class DensityKind(str, Enum):
    exponential = "exponential"
    table = "table"


class ConstraintTarget(str, Enum):
    state = "state"
    control = "control"


class SolveStatus(str, Enum):
    optimal = "optimal"
    optimal_inaccurate = "optimal_inaccurate"
    infeasible = "infeasible"
    unbounded = "unbounded"
    numerical_failure = "numerical_failure"


class ScpStatus(str, Enum):
    converged = "converged"
    max_iterations = "max_iterations"
    stopped_infeasible = "stopped_infeasible"
    stopped_solver_failure = "stopped_solver_failure"
    propagation_failed = "propagation_failed"


class StateWeightMode(str, Enum):
    fixed = "fixed"
    dynamic_pressure = "dynamic_pressure"


class DesiredTrajectoryMode(str, Enum):
    fixed = "fixed"
    mean = "mean"


class XiMode(str, Enum):
    fixed = "fixed"
    delta_v_gradient = "delta_v_gradient"


class TrustWeightMode(str, Enum):
    fixed = "fixed"
    apoapsis_gradient = "apoapsis_gradient"
