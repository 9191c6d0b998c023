"""Discrete LTV model and disturbance statistics along a nominal trajectory.

Around the nominal, ``x' = A x + B u + G psi + c(t)`` with
``c = f(x^, u^, mu^) - A x^ - B u^ - G mu^``. Over segment ``k``

    x_{k+1} = A_k x_k + B_k u_k + c_k + w_k,   w_k = int Phi(t_{k+1}, t) G(t) psi(t) dt

and the ``w_k`` are jointly Gaussian because ``psi`` is a Gaussian random field.
All integrals use the Gauss-Legendre nodes stored on the trajectory.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from dynamics_models import SystemModel
from grf_kernels import GaussianRandomField, repair_psd
from nominal_propagation import NominalTrajectory, SegmentStm, propagate_stm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentIntegrands:
    """Quadrature-weighted ``Phi(t_{k+1}, tau_i)`` times B, c and G at each node."""
    phi_b: np.ndarray
    phi_c: np.ndarray
    phi_g: np.ndarray


@dataclass(frozen=True)
class DiscreteLTVProblem:
    a_mats: np.ndarray
    b_mats: np.ndarray
    c_vecs: np.ndarray
    w_means: np.ndarray
    w_cov: np.ndarray
    quadrature_nodes: int
    repair_mass: float = 0.0

    @property
    def n_steps(self) -> int:
        return self.a_mats.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_mats.shape[1]

    @property
    def control_dim(self) -> int:
        return self.b_mats.shape[2]

    @property
    def w_mean(self) -> np.ndarray:
        """Stacked disturbance mean ``W-bar``."""
        return self.w_means.ravel()

    def cov_block(self, k: int, l: int) -> np.ndarray:
        n = self.state_dim
        return self.w_cov[k * n:(k + 1) * n, l * n:(l + 1) * n]


def segment_integrands(trajectory: NominalTrajectory, model: SystemModel, stm: SegmentStm) -> SegmentIntegrands:
    segment = trajectory.segments[stm.index]
    u = trajectory.controls[stm.index]
    to_end = stm.to_end()
    phi_b, phi_c, phi_g = [], [], []
    for i, x in enumerate(segment.node_states):
        psi = float(segment.node_field_means[i])
        a, b, g = model.jacobians(x, u, psi)
        c = model.dynamics(x, u, psi) - a @ x - b @ u - g * psi
        weight = segment.node_weights[i]
        phi_b.append(weight * to_end[i] @ b)
        phi_c.append(weight * to_end[i] @ c)
        phi_g.append(weight * to_end[i] @ g)
    return SegmentIntegrands(np.array(phi_b), np.array(phi_c), np.array(phi_g))


def _stm(trajectory, model, field, k, stm: Optional[SegmentStm]) -> SegmentStm:
    return stm if stm is not None else propagate_stm(model, field, trajectory, k)


def discretize_segment(trajectory: NominalTrajectory, model: SystemModel, field: GaussianRandomField, k: int,
                       stm: Optional[SegmentStm] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(A_k, B_k, c_k)`` for segment ``k``."""
    stm = _stm(trajectory, model, field, k, stm)
    integrands = segment_integrands(trajectory, model, stm)
    return stm.end_stm, integrands.phi_b.sum(axis=0), integrands.phi_c.sum(axis=0)


def disturbance_mean(trajectory: NominalTrajectory, model: SystemModel, field: GaussianRandomField, k: int,
                     stm: Optional[SegmentStm] = None) -> np.ndarray:
    """``E(w_k) = int Phi(t_{k+1}, t) G(t) mu^(t) dt``."""
    stm = _stm(trajectory, model, field, k, stm)
    integrands = segment_integrands(trajectory, model, stm)
    return integrands.phi_g.T @ trajectory.segments[k].node_field_means


def disturbance_covariance(trajectory: NominalTrajectory, model: SystemModel, field: GaussianRandomField,
                           k: int, l: int, stms: Optional[Sequence[SegmentStm]] = None) -> np.ndarray:
    """``Cov(w_k, w_l)`` by tensor-product quadrature of the kernel along the nominal."""
    stm_k = stms[k] if stms is not None else None
    stm_l = stms[l] if stms is not None else None
    g_k = segment_integrands(trajectory, model, _stm(trajectory, model, field, k, stm_k)).phi_g
    g_l = segment_integrands(trajectory, model, _stm(trajectory, model, field, l, stm_l)).phi_g
    kernel = field.cov_fn(trajectory.segments[k].node_index_points, trajectory.segments[l].node_index_points)
    return g_k.T @ kernel @ g_l


def discretize(trajectory: NominalTrajectory, model: SystemModel, field: GaussianRandomField) -> DiscreteLTVProblem:
    """Discretises every segment and assembles the full disturbance covariance ``Cov(W)``."""
    n_steps, n = trajectory.partition.n_steps, model.state_dim
    a_mats, b_mats, c_vecs, w_means = [], [], [], []
    weighted_g: List[np.ndarray] = []
    for k in range(n_steps):
        stm = propagate_stm(model, field, trajectory, k)
        integrands = segment_integrands(trajectory, model, stm)
        a_mats.append(stm.end_stm)
        b_mats.append(integrands.phi_b.sum(axis=0))
        c_vecs.append(integrands.phi_c.sum(axis=0))
        w_means.append(integrands.phi_g.T @ trajectory.segments[k].node_field_means)
        weighted_g.append(integrands.phi_g)

    # Cov(W) = Gq Sigma Gq^T with Gq block diagonal over segments
    q = trajectory.quadrature_nodes
    gq = np.zeros((n_steps * n, n_steps * q))
    for k, g in enumerate(weighted_g):
        gq[k * n:(k + 1) * n, k * q:(k + 1) * q] = g.T
    points = np.vstack([s.node_index_points for s in trajectory.segments])
    w_cov, removed = repair_psd(gq @ field.cov_fn(points, points) @ gq.T, label="disturbance covariance Cov(W)")
    logger.debug("Discretised %d segments; Cov(W) repair removed %.3e of its mass", n_steps, removed)
    return DiscreteLTVProblem(
        a_mats=np.array(a_mats),
        b_mats=np.array(b_mats),
        c_vecs=np.array(c_vecs),
        w_means=np.array(w_means),
        w_cov=w_cov,
        quadrature_nodes=q,
        repair_mass=removed,
    )
