"""Stacked form of the discrete LTV system and the state-history feedback policy.

With ``X = [x_0; ...; x_N]``, ``U = [u_0; ...; u_{N-1}]`` and ``W = [w_0; ...; w_{N-1}]``

    X = A x_0 + B U + C + G W

where ``B`` and ``G`` are strictly block lower-triangular. A feedback law
``U = K (X - X-bar) + V`` is optimised through ``L = K (I - B K)^-1``, which makes the
closed-loop deviation ``X~ = (I + B L)(A x~_0 + G W~)`` affine in ``L``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from discretization import DiscreteLTVProblem
from grf_kernels import psd_sqrt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockSteeringData:
    a_bold: np.ndarray
    b_bold: np.ndarray
    g_bold: np.ndarray
    c_bold: np.ndarray
    w_mean: np.ndarray
    x0_mean: np.ndarray
    s_mat: np.ndarray
    s_half: np.ndarray
    state_dim: int
    control_dim: int
    n_steps: int

    def state_selector(self, k: int) -> np.ndarray:
        """``E_k`` with ``E_k X = x_k``."""
        n = self.state_dim
        e = np.zeros((n, (self.n_steps + 1) * n))
        e[:, k * n:(k + 1) * n] = np.eye(n)
        return e

    def control_selector(self, k: int) -> np.ndarray:
        """``E^u_k`` with ``E^u_k U = u_k``."""
        m = self.control_dim
        e = np.zeros((m, self.n_steps * m))
        e[:, k * m:(k + 1) * m] = np.eye(m)
        return e

    def mean_offset(self) -> np.ndarray:
        """``A x-bar_0 + C + G W-bar``: the part of ``X-bar`` that does not depend on ``V``."""
        return self.a_bold @ self.x0_mean + self.c_bold + self.g_bold @ self.w_mean

    def state_mean(self, v: np.ndarray) -> np.ndarray:
        return self.mean_offset() + self.b_bold @ v

    def closed_loop(self, l_mat: np.ndarray) -> np.ndarray:
        """``I + B L``."""
        return np.eye(self.b_bold.shape[0]) + self.b_bold @ l_mat

    def feedback_mask(self) -> np.ndarray:
        return feedback_mask(self.n_steps, self.state_dim, self.control_dim)


def feedback_mask(n_steps: int, state_dim: int, control_dim: int) -> np.ndarray:
    """Entries of the ``(N m) x ((N + 1) n)`` gain matrix allowed to be nonzero (block ``l <= k``)."""
    block = np.tril(np.ones((n_steps, n_steps + 1), dtype=bool))
    return np.kron(block, np.ones((control_dim, state_dim), dtype=bool))


def assemble_blocks(ltv: DiscreteLTVProblem, x0_mean, p0) -> BlockSteeringData:
    n, m, n_steps = ltv.state_dim, ltv.control_dim, ltv.n_steps
    x0_mean = np.asarray(x0_mean, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if x0_mean.shape != (n,) or p0.shape != (n, n):
        raise ValueError(f"initial mean/covariance must have shapes ({n},) and ({n}, {n}), "
                         f"got {x0_mean.shape} and {p0.shape}")
    if ltv.w_cov.shape != (n_steps * n, n_steps * n):
        raise ValueError(f"Cov(W) must be {n_steps * n} square, got {ltv.w_cov.shape}")

    rows = (n_steps + 1) * n
    a_bold = np.zeros((rows, n))
    b_bold = np.zeros((rows, n_steps * m))
    g_bold = np.zeros((rows, n_steps * n))
    a_bold[:n] = np.eye(n)
    for k in range(n_steps):
        current, following = slice(k * n, (k + 1) * n), slice((k + 1) * n, (k + 2) * n)
        a_bold[following] = ltv.a_mats[k] @ a_bold[current]
        b_bold[following] = ltv.a_mats[k] @ b_bold[current]
        g_bold[following] = ltv.a_mats[k] @ g_bold[current]
        b_bold[following, k * m:(k + 1) * m] = ltv.b_mats[k]
        g_bold[following, k * n:(k + 1) * n] = np.eye(n)
    c_bold = g_bold @ ltv.c_vecs.ravel()

    s_mat = a_bold @ p0 @ a_bold.T + g_bold @ ltv.w_cov @ g_bold.T
    s_mat = 0.5 * (s_mat + s_mat.T)
    return BlockSteeringData(
        a_bold=a_bold,
        b_bold=b_bold,
        g_bold=g_bold,
        c_bold=c_bold,
        w_mean=ltv.w_mean,
        x0_mean=x0_mean,
        s_mat=s_mat,
        s_half=psd_sqrt(s_mat),
        state_dim=n,
        control_dim=m,
        n_steps=n_steps,
    )


def gains_from_L(l_mat: np.ndarray, b_bold: np.ndarray) -> np.ndarray:
    """``K = L (I + B L)^-1``; the triangular structure is preserved."""
    identity = np.eye(b_bold.shape[0])
    return np.linalg.solve((identity + b_bold @ l_mat).T, l_mat.T).T


def L_from_gains(k_mat: np.ndarray, b_bold: np.ndarray) -> np.ndarray:
    """``L = K (I - B K)^-1``."""
    identity = np.eye(b_bold.shape[0])
    return np.linalg.solve((identity - b_bold @ k_mat).T, k_mat.T).T


def state_covariance(blocks: BlockSteeringData, l_mat: np.ndarray) -> np.ndarray:
    """``Cov(X) = (I + B L) S (I + B L)^T``."""
    closed = blocks.closed_loop(l_mat)
    return closed @ blocks.s_mat @ closed.T


def control_covariance(blocks: BlockSteeringData, l_mat: np.ndarray) -> np.ndarray:
    """``Cov(U) = L S L^T``."""
    return l_mat @ blocks.s_mat @ l_mat.T


def split_gains(k_mat: np.ndarray, n_steps: int, state_dim: int, control_dim: int) -> np.ndarray:
    """Stacked gain matrix to blocks ``K[k, l]`` of shape ``(N, N, m, n)``."""
    blocks = k_mat.reshape(n_steps, control_dim, n_steps + 1, state_dim)[:, :, :n_steps, :]
    mask = np.tril(np.ones((n_steps, n_steps)))[:, :, None, None]
    return blocks.transpose(0, 2, 1, 3) * mask


def join_gains(gains: np.ndarray) -> np.ndarray:
    """Blocks ``(N, N, m, n)`` to the stacked ``(N m) x ((N + 1) n)`` gain matrix."""
    n_steps, _, m, n = gains.shape
    stacked = np.zeros((n_steps * m, (n_steps + 1) * n))
    stacked[:, :n_steps * n] = gains.transpose(0, 2, 1, 3).reshape(n_steps * m, n_steps * n)
    return stacked


@dataclass(frozen=True)
class FeedbackPolicy:
    """``u_k = sum_{l <= k} K[k, l] (x_l - x-bar_l) + v_k``.

    ``nominal_controls`` are the controls the policy was linearised about; the
    predicted covariances come from the linear-covariance model of the same solve.
    """
    knots: tuple
    gains: np.ndarray
    feedforward: np.ndarray
    reference_means: np.ndarray
    nominal_controls: np.ndarray
    predicted_state_covariances: Optional[np.ndarray] = None
    predicted_control_covariances: Optional[np.ndarray] = None

    def __post_init__(self):
        n_steps = len(self.knots) - 1
        if self.gains.shape[:2] != (n_steps, n_steps) or self.feedforward.shape[0] != n_steps:
            raise ValueError(f"policy arrays do not match a partition of {n_steps} steps")
        if self.reference_means.shape[0] != n_steps + 1:
            raise ValueError("policy needs one reference mean per knot")

    @property
    def n_steps(self) -> int:
        return len(self.knots) - 1

    @property
    def state_dim(self) -> int:
        return self.reference_means.shape[1]

    @property
    def control_dim(self) -> int:
        return self.feedforward.shape[1]

    def control(self, k: int, states: Sequence[np.ndarray]) -> np.ndarray:
        """Control at knot ``k`` given the realised states ``x_0, ..., x_k``."""
        if len(states) < k + 1:
            raise ValueError(f"control at step {k} needs {k + 1} states, got {len(states)}")
        u = self.feedforward[k].copy()
        for l in range(k + 1):
            u += self.gains[k, l] @ (np.asarray(states[l]) - self.reference_means[l])
        return u

    def stacked_gains(self) -> np.ndarray:
        return join_gains(self.gains)

    def open_loop(self) -> "FeedbackPolicy":
        """Zero gains, feedforward equal to the nominal controls."""
        return replace(self, gains=np.zeros_like(self.gains), feedforward=self.nominal_controls.copy(),
                       predicted_state_covariances=None, predicted_control_covariances=None)
