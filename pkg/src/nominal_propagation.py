"""Fixed-step RK4 propagation of the nominal system and of its state-transition matrices.

Each segment ``[t_k, t_{k+1}]`` of the partition is integrated on a uniform grid of
``substeps_per_segment`` steps. States at the segment's Gauss-Legendre nodes are
reached by a partial RK4 step from the preceding grid point, so the grid itself is
the same whatever quadrature order is requested.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from dynamics_models import SystemModel
from errors import ModelDomainError, PropagationError
from grf_kernels import GaussianRandomField

logger = logging.getLogger(__name__)

DEFAULT_QUADRATURE_NODES = 8


class TimePartition(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    knots: Tuple[float, ...] = Field(..., description="Decision times t_0 < t_1 < ... < t_N, s",
                                     examples=[(0.0, 1.0, 2.0, 3.0, 4.0, 5.0)])
    substeps_per_segment: int = Field(10, ge=1, description="RK4 steps per segment")

    @field_validator("knots")
    @classmethod
    def check_knots(cls, knots: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(knots) < 2:
            raise ValueError("a partition needs at least two knots")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("partition knots must be strictly increasing")
        return knots

    @property
    def n_steps(self) -> int:
        return len(self.knots) - 1

    @property
    def final_time(self) -> float:
        return self.knots[-1]

    def segment(self, k: int) -> Tuple[float, float]:
        return self.knots[k], self.knots[k + 1]

    def substep_times(self, k: int) -> np.ndarray:
        t_start, t_end = self.segment(k)
        return np.linspace(t_start, t_end, self.substeps_per_segment + 1)


def gauss_legendre(t_start: float, t_end: float, n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped onto ``[t_start, t_end]``."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (t_end - t_start)
    return t_start + half * (x + 1.0), half * w


def field_mean_at(field: GaussianRandomField, model: SystemModel, x: np.ndarray) -> float:
    return float(field.mean_fn(field.points(model.index_map(x)))[0])


def rk4_step(rate: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rate(t, y)
    k2 = rate(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rate(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rate(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class SegmentGrid:
    """Nominal states of one segment on its RK4 grid and at its quadrature nodes."""
    index: int
    times: np.ndarray
    states: np.ndarray
    node_times: np.ndarray
    node_weights: np.ndarray
    node_states: np.ndarray
    node_index_points: np.ndarray
    node_field_means: np.ndarray

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class NominalTrajectory:
    partition: TimePartition
    controls: np.ndarray
    segments: Tuple[SegmentGrid, ...]

    @property
    def knot_states(self) -> np.ndarray:
        return np.vstack([self.segments[0].states[0]] + [s.states[-1] for s in self.segments])

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].states[-1]

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([self.segments[0].times[:1]] + [s.times[1:] for s in self.segments])

    @property
    def states(self) -> np.ndarray:
        return np.vstack([self.segments[0].states[:1]] + [s.states[1:] for s in self.segments])

    @property
    def quadrature_nodes(self) -> int:
        return self.segments[0].node_times.shape[0]


@dataclass(frozen=True)
class SegmentStm:
    """``node_stms[i] = Phi(tau_i, t_k)``, ``grid_stms[j] = Phi(t_j, t_k)``, ``end_stm = Phi(t_{k+1}, t_k)``."""
    index: int
    node_stms: np.ndarray
    grid_stms: np.ndarray
    end_stm: np.ndarray

    def to_end(self) -> np.ndarray:
        """``Phi(t_{k+1}, tau_i)`` at every quadrature node."""
        return np.einsum("ij,qjk->qik", self.end_stm, np.linalg.inv(self.node_stms))


def _nominal_rate(model: SystemModel, field: GaussianRandomField, u: np.ndarray):
    def rate(t: float, x: np.ndarray) -> np.ndarray:
        return model.dynamics(x, u, field_mean_at(field, model, x))
    return rate


def _joint_rate(model: SystemModel, field: GaussianRandomField, u: np.ndarray):
    n = model.state_dim

    def rate(t: float, y: np.ndarray) -> np.ndarray:
        x = y[:n]
        psi = field_mean_at(field, model, x)
        a, _, _ = model.jacobians(x, u, psi)
        phi = y[n:].reshape(n, n)
        return np.concatenate([model.dynamics(x, u, psi), (a @ phi).ravel()])
    return rate


def _march(rate, times: np.ndarray, y0: np.ndarray, node_times: np.ndarray, check) -> Tuple[np.ndarray, np.ndarray]:
    """RK4 over ``times``; node values come from partial steps off the grid point before each node."""
    values = np.empty((times.shape[0], y0.shape[0]))
    values[0] = y0
    for j in range(times.shape[0] - 1):
        values[j + 1] = rk4_step(rate, times[j], values[j], times[j + 1] - times[j])
        check(values[j + 1], times[j + 1])
    h = times[1] - times[0]
    node_values = np.empty((node_times.shape[0], y0.shape[0]))
    for i, tau in enumerate(node_times):
        j = min(int((tau - times[0]) // h), times.shape[0] - 2)
        node_values[i] = rk4_step(rate, times[j], values[j], tau - times[j])
    return values, node_values


def _checked(model: SystemModel, n: int):
    def check(y: np.ndarray, t: float) -> None:
        try:
            model.check_domain(y[:n], t)
        except ModelDomainError as e:
            raise PropagationError(e.reason, time=t if e.time is None else e.time) from e
    return check


def propagate_nominal(model: SystemModel, field: GaussianRandomField, x0: Sequence[float],
                      controls, partition: TimePartition,
                      quadrature_nodes: int = DEFAULT_QUADRATURE_NODES) -> NominalTrajectory:
    """Integrates ``x' = f(x, u_k, mu(phi(x)))`` with piecewise-constant controls."""
    n_steps = partition.n_steps
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1 and model.control_dim == 1:
        controls = controls[:, None]
    if controls.shape != (n_steps, model.control_dim):
        raise ValueError(f"expected {n_steps} controls of dimension {model.control_dim}, "
                         f"got shape {np.shape(controls)}")
    x = np.asarray(x0, dtype=float)
    if x.shape != (model.state_dim,):
        raise ValueError(f"initial state must have dimension {model.state_dim}")
    check = _checked(model, model.state_dim)
    check(x, partition.knots[0])

    segments: List[SegmentGrid] = []
    for k in range(n_steps):
        times = partition.substep_times(k)
        node_times, node_weights = gauss_legendre(*partition.segment(k), quadrature_nodes)
        try:
            states, node_states = _march(_nominal_rate(model, field, controls[k]), times, x, node_times, check)
        except ModelDomainError as e:
            if isinstance(e, PropagationError):
                raise
            raise PropagationError(f"nominal propagation failed in segment {k}: {e}", time=float(times[0])) from e
        index_points = np.vstack([model.index_map(s) for s in node_states])
        segments.append(SegmentGrid(
            index=k,
            times=times,
            states=states,
            node_times=node_times,
            node_weights=node_weights,
            node_states=node_states,
            node_index_points=index_points,
            node_field_means=field.mean_fn(field.points(index_points)),
        ))
        x = states[-1]
        logger.debug("Segment %d propagated to t=%.6g, x=%s", k, times[-1], x)
    return NominalTrajectory(partition=partition, controls=controls, segments=tuple(segments))


def propagate_stm(model: SystemModel, field: GaussianRandomField, trajectory: NominalTrajectory,
                  k: int) -> SegmentStm:
    """Integrates ``Phi' = A(t) Phi`` with ``Phi(t_k, t_k) = I`` alongside the nominal states of segment ``k``."""
    segment = trajectory.segments[k]
    n = model.state_dim
    y0 = np.concatenate([segment.states[0], np.eye(n).ravel()])
    values, node_values = _march(_joint_rate(model, field, trajectory.controls[k]), segment.times, y0,
                                 segment.node_times, _checked(model, n))
    grid_stms = values[:, n:].reshape(-1, n, n)
    return SegmentStm(
        index=k,
        node_stms=node_values[:, n:].reshape(-1, n, n),
        grid_stms=grid_stms,
        end_stm=grid_stms[-1],
    )
