"""Successive convex programming loop for covariance steering in a random field.

Each iteration propagates the nominal system under the current controls, linearises
and discretises it, builds the disturbance statistics, solves the convex subproblem
and moves the nominal controls to the optimised feedforward.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from block_assembly import (BlockSteeringData, FeedbackPolicy, assemble_blocks, gains_from_L,
                            split_gains)
from convex_subproblem import (ChanceConstraintSpec, ConicProgram, LinearCovariance, SteeringObjective,
                               TerminalConstraint, TrustRegion, build_program, evaluate_costs,
                               linear_covariance, solve_program, weight_factor)
from discretization import discretize
from dynamics_models import SystemModel
from enums import DesiredTrajectoryMode, ScpStatus, StateWeightMode, TrustWeightMode, XiMode
from errors import ConfigError, PropagationError, SolverFailureError, SubproblemInfeasibleError
from grf_kernels import GaussianRandomField
from nominal_propagation import DEFAULT_QUADRATURE_NODES, NominalTrajectory, TimePartition, propagate_nominal
from solvers import SolverAdapter

logger = logging.getLogger(__name__)

Matrix = List[List[float]]


def check_weight(values: Optional[Matrix]) -> Optional[Matrix]:
    """Weights must be square, symmetric and positive semidefinite."""
    if values is None:
        return values
    matrix = np.asarray(values, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"weight matrices must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-14):
        raise ValueError("weight matrices must be symmetric")
    weight_factor(matrix)
    return values


class ObjectiveSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    state_weight_mode: StateWeightMode = StateWeightMode.fixed
    state_weight: Optional[Matrix] = Field(None, description="Q_k for k < N in fixed mode (Q_N = 0)")
    control_weight: Optional[Matrix] = Field(None, description="R_k, weight on the control deviation")
    feedforward_weight: Optional[Matrix] = Field(None, description="R-bar_k, weight on the mean control")
    desired_mode: DesiredTrajectoryMode = DesiredTrajectoryMode.fixed
    desired_states: Optional[List[List[float]]] = Field(None, description="x^d_k for k = 0..N in fixed mode")
    xi_mode: XiMode = XiMode.fixed
    xi: Optional[List[float]] = Field(None, description="Percentile direction in fixed mode")
    p_f: float = Field(0.1, gt=0.0, lt=1.0, description="Percentile level of the J2 cost")
    eta: float = Field(0.0, ge=0.0, description="Weight of J2")

    @field_validator("state_weight", "control_weight", "feedforward_weight")
    @classmethod
    def check_weights(cls, values: Optional[Matrix]) -> Optional[Matrix]:
        return check_weight(values)

    @model_validator(mode="after")
    def check_modes(self) -> "ObjectiveSettings":
        if self.eta > 0.0:
            if self.p_f >= 0.5:
                raise ValueError("a percentile cost (eta > 0) needs p_f < 0.5")
            if self.xi_mode == XiMode.fixed and self.xi is None:
                raise ValueError("xi is required when xi_mode is fixed and eta > 0")
        return self


class TrustSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    control_weight: Optional[Matrix] = Field(None, description="M^u_k, applied at every step")
    control_radius: Optional[float] = Field(None, gt=0.0, description="Delta^u; unbounded when omitted")
    state_weight_mode: TrustWeightMode = TrustWeightMode.fixed
    state_weight: Optional[Matrix] = Field(None, description="M^x_k in fixed mode")
    state_steps: Optional[List[int]] = Field(None, description="Knots carrying M^x_k in fixed mode (default 1..N)")
    state_radius: Optional[float] = Field(None, gt=0.0, description="Delta^x in model units; unbounded when omitted")

    @field_validator("control_weight", "state_weight")
    @classmethod
    def check_weights(cls, values: Optional[Matrix]) -> Optional[Matrix]:
        return check_weight(values)


class ScpConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_iterations: int = Field(3, ge=1)
    tolerance: float = Field(1e-3, gt=0.0, description="Relative objective change that stops the loop")
    trust: TrustSettings = Field(default_factory=TrustSettings)
    initial_controls: Optional[List[List[float]]] = Field(None, description="u^(0)_k, zero when omitted")
    quadrature_nodes: int = Field(DEFAULT_QUADRATURE_NODES, ge=1)


class ScpIterationRecord(BaseModel):
    iteration: int
    status: str
    objective: float
    j1: float
    j2: Optional[float] = None
    worst_violation: float
    worst_constraint: Optional[str] = None
    control_change: float
    nominal_gap: Optional[float] = None
    solve_time: float
    repair_mass: float = 0.0


@dataclass(frozen=True)
class SteeringProblem:
    """Everything a steering solve needs besides the SCP settings."""
    model: SystemModel
    field: GaussianRandomField
    partition: TimePartition
    x0_mean: np.ndarray
    p0: np.ndarray
    objective: ObjectiveSettings
    chance: Sequence[ChanceConstraintSpec] = ()
    terminal: Optional[TerminalConstraint] = None


@dataclass
class ScpResult:
    policy: FeedbackPolicy
    records: List[ScpIterationRecord]
    status: ScpStatus
    history: List[FeedbackPolicy] = dataclass_field(default_factory=list)
    trajectories: List[NominalTrajectory] = dataclass_field(default_factory=list)


def _matrix(values: Optional[Matrix], dim: int) -> np.ndarray:
    return np.zeros((dim, dim)) if values is None else np.asarray(values, dtype=float).reshape(dim, dim)


def build_objective(settings: ObjectiveSettings, model: SystemModel, trajectory: NominalTrajectory) -> SteeringObjective:
    """Evaluates the objective providers at the current nominal."""
    n, m = model.state_dim, model.control_dim
    n_steps = trajectory.partition.n_steps
    knot_states = trajectory.knot_states

    if settings.state_weight_mode == StateWeightMode.dynamic_pressure:
        if not hasattr(model, "dynamic_pressure"):
            raise ConfigError("dynamic-pressure state weights need a model with an atmosphere")
        q_weights = []
        for x in knot_states[:-1]:
            gradient = model.dynamic_pressure_gradient(x)
            q_weights.append(np.outer(gradient, gradient) / model.dynamic_pressure(x) ** 2)
    else:
        q_weights = [_matrix(settings.state_weight, n)] * n_steps
    q_weights = np.array(list(q_weights) + [np.zeros((n, n))])

    desired = None
    if settings.desired_mode == DesiredTrajectoryMode.fixed and settings.desired_states is not None:
        desired = np.asarray(settings.desired_states, dtype=float)
        if desired.shape != (n_steps + 1, n):
            raise ConfigError(f"desired_states must have {n_steps + 1} rows of {n} values")
    elif settings.desired_mode == DesiredTrajectoryMode.fixed:
        desired = np.zeros((n_steps + 1, n))

    xi = None
    if settings.xi_mode == XiMode.delta_v_gradient:
        if not hasattr(model, "delta_v"):
            raise ConfigError("xi_mode delta_v_gradient needs the aerocapture model")
        _, xi = model.delta_v(trajectory.final_state)
    elif settings.xi is not None:
        xi = np.asarray(settings.xi, dtype=float)

    return SteeringObjective(
        q_weights=q_weights,
        r_weights=np.array([_matrix(settings.control_weight, m)] * n_steps),
        r_bar_weights=np.array([_matrix(settings.feedforward_weight, m)] * n_steps),
        desired=desired,
        xi=xi,
        p_f=settings.p_f,
        eta=settings.eta,
    )


def build_trust_region(settings: TrustSettings, model: SystemModel, trajectory: NominalTrajectory) -> TrustRegion:
    n, m = model.state_dim, model.control_dim
    n_steps = trajectory.partition.n_steps
    control_weights = None
    if settings.control_weight is not None:
        control_weights = np.array([_matrix(settings.control_weight, m)] * n_steps)

    state_weights = np.zeros((n_steps + 1, n, n))
    if settings.state_weight_mode == TrustWeightMode.apoapsis_gradient:
        if not hasattr(model, "apoapsis_gradient"):
            raise ConfigError("apoapsis-gradient trust weights need the aerocapture model")
        gradient = model.apoapsis_gradient(trajectory.final_state)
        state_weights[n_steps] = np.outer(gradient, gradient)
    elif settings.state_weight is not None:
        steps = settings.state_steps if settings.state_steps is not None else range(1, n_steps + 1)
        for k in steps:
            state_weights[k] = _matrix(settings.state_weight, n)
    return TrustRegion(
        control_weights=control_weights,
        control_radius=np.inf if settings.control_radius is None else settings.control_radius,
        state_weights=state_weights if np.any(state_weights) else None,
        state_radius=np.inf if settings.state_radius is None else settings.state_radius,
    )


def extract_policy(l_mat: np.ndarray, v: np.ndarray, blocks: BlockSteeringData, partition: TimePartition,
                   nominal_controls: np.ndarray, lincov: Optional[LinearCovariance] = None) -> FeedbackPolicy:
    n, m, n_steps = blocks.state_dim, blocks.control_dim, blocks.n_steps
    lincov = lincov or linear_covariance(blocks, l_mat, v)
    k_mat = gains_from_L(l_mat, blocks.b_bold)
    return FeedbackPolicy(
        knots=tuple(partition.knots),
        gains=split_gains(k_mat, n_steps, n, m),
        feedforward=v.reshape(n_steps, m).copy(),
        reference_means=lincov.state_means,
        nominal_controls=np.asarray(nominal_controls, dtype=float).reshape(n_steps, m).copy(),
        predicted_state_covariances=lincov.state_covariances,
        predicted_control_covariances=lincov.control_covariances,
    )


def _initial_controls(config: ScpConfig, model: SystemModel, n_steps: int) -> np.ndarray:
    if config.initial_controls is None:
        return np.zeros((n_steps, model.control_dim))
    controls = np.asarray(config.initial_controls, dtype=float)
    if controls.shape != (n_steps, model.control_dim):
        raise ConfigError(f"initial_controls must have {n_steps} rows of {model.control_dim} values")
    return controls


def run_scp(problem: SteeringProblem, config: ScpConfig, adapter: SolverAdapter,
            on_program: Optional[Callable[[int, ConicProgram], None]] = None) -> ScpResult:
    """Runs the SCP loop and returns the last successful policy with one record per solved iteration."""
    model, field, partition = problem.model, problem.field, problem.partition
    n_steps = partition.n_steps
    u_hat = _initial_controls(config, model, n_steps)
    records: List[ScpIterationRecord] = []
    history: List[FeedbackPolicy] = []
    trajectories: List[NominalTrajectory] = []
    policy: Optional[FeedbackPolicy] = None
    status = ScpStatus.max_iterations
    trajectory = propagate_nominal(model, field, problem.x0_mean, u_hat, partition, config.quadrature_nodes)

    for iteration in range(1, config.max_iterations + 1):
        ltv = discretize(trajectory, model, field)
        blocks = assemble_blocks(ltv, problem.x0_mean, problem.p0)
        objective = build_objective(problem.objective, model, trajectory)
        trust = build_trust_region(config.trust, model, trajectory)
        program = build_program(blocks, objective, problem.chance, problem.terminal, trust,
                                nominal_states=trajectory.knot_states, nominal_controls=trajectory.controls,
                                spectral_terminal=adapter.supports_semidefinite)
        if on_program is not None:
            on_program(iteration, program)
        if iteration == 1:
            zero_gain = np.zeros(program.layout.l_shape)
            history.append(extract_policy(zero_gain, u_hat.ravel(), blocks, partition, u_hat))
        trajectories.append(trajectory)

        try:
            solution = solve_program(adapter, program)
        except (SubproblemInfeasibleError, SolverFailureError) as e:
            if policy is None:
                raise
            logger.warning("Iteration %d subproblem stopped with %s; keeping the policy of iteration %d",
                           iteration, e.status, iteration - 1)
            status = (ScpStatus.stopped_infeasible if isinstance(e, SubproblemInfeasibleError)
                      else ScpStatus.stopped_solver_failure)
            break

        lincov = linear_covariance(blocks, solution.l_mat, solution.v)
        policy = extract_policy(solution.l_mat, solution.v, blocks, partition, u_hat, lincov)
        history.append(policy)
        costs = evaluate_costs(blocks, objective, solution.l_mat, solution.v)
        new_controls = solution.v.reshape(n_steps, model.control_dim)
        control_change = float(np.linalg.norm(new_controls - u_hat))

        nominal_gap = None
        try:
            trajectory = propagate_nominal(model, field, problem.x0_mean, new_controls, partition,
                                           config.quadrature_nodes)
            scale = max(float(np.max(np.abs(lincov.state_means))), 1e-12)
            nominal_gap = float(np.max(np.abs(trajectory.knot_states - lincov.state_means)) / scale)
        except PropagationError as e:
            logger.warning("Nominal propagation under the iteration %d controls failed: %s", iteration, e)
            trajectory = None

        record = ScpIterationRecord(
            iteration=iteration,
            status=solution.status.value,
            objective=solution.objective,
            j1=costs["j1"],
            j2=costs.get("j2"),
            worst_violation=solution.worst_violation,
            worst_constraint=solution.worst_constraint,
            control_change=control_change,
            nominal_gap=nominal_gap,
            solve_time=solution.solve_time,
            repair_mass=ltv.repair_mass,
        )
        records.append(record)
        logger.info("SCP iteration %d: objective %.6g, J2 %s, |du| %.3g, gap %s, %.2f s",
                    iteration, record.objective, "-" if record.j2 is None else f"{record.j2:.6g}",
                    control_change, "-" if nominal_gap is None else f"{nominal_gap:.3g}", record.solve_time)
        u_hat = new_controls

        if len(records) >= 2:
            previous = records[-2].objective
            if abs(record.objective - previous) < config.tolerance * max(abs(previous), 1e-12):
                status = ScpStatus.converged
                break
        if trajectory is None:
            status = ScpStatus.propagation_failed
            break

    return ScpResult(policy=policy, records=records, status=status, history=history, trajectories=trajectories)
