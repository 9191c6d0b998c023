"""Convex covariance-steering subproblem as a second-order-cone program over ``(L, V)``.

The decision vector is ``z = [free entries of L (row-major), V, auxiliary epigraph
scalars]``. Every constraint is a cone ``||F z + g|| <= h^T z + d``, an equality
``E z = f`` or, for adapters with semidefinite support, a spectral-norm bound
``sigma_max(reshape(M z + m)) <= bound``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import ndtri

from block_assembly import BlockSteeringData, control_covariance, state_covariance
from enums import ConstraintTarget, SolveStatus
from errors import SolverFailureError, SubproblemInfeasibleError

logger = logging.getLogger(__name__)

CONE_TOLERANCE = 1e-6
WEIGHT_RANK_TOLERANCE = 1e-12
SUPPORT_TOLERANCE = 1e-9


def gaussian_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile probability must lie in (0, 1), got {p}")
    return float(ndtri(p))


class ChanceConstraintSpec(BaseModel):
    """``Pr(a^T x_k > alpha) <= p`` for states, ``Pr(b^T u_k > beta) <= p`` for controls."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    target: ConstraintTarget = Field(..., description="Whether the half-plane applies to x_k or u_k")
    step: int = Field(..., ge=0, description="Knot index k")
    direction: Tuple[float, ...] = Field(..., description="Direction vector a (state) or b (control)",
                                         examples=[(0.212766, 8.51064)])
    bound: float = Field(..., description="Bound alpha (state) or beta (control)")
    probability: float = Field(..., gt=0.0, lt=0.5, description="Allowed violation probability")

    @field_validator("direction")
    @classmethod
    def check_direction(cls, direction: Tuple[float, ...]) -> Tuple[float, ...]:
        if not direction or not np.any(np.asarray(direction) != 0.0):
            raise ValueError("chance-constraint direction must be a nonzero vector")
        return direction

    @property
    def name(self) -> str:
        return f"chance_{self.target.value}[k={self.step}]"


@dataclass(frozen=True)
class SteeringObjective:
    """``J = J1 + eta J2`` with per-step weights; ``desired`` is ``None`` when x^d tracks the mean."""
    q_weights: np.ndarray
    r_weights: np.ndarray
    r_bar_weights: np.ndarray
    desired: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    p_f: float = 0.1
    eta: float = 0.0

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError("eta must be nonnegative")
        if not 0.0 < self.p_f < 1.0:
            raise ValueError("p_f must lie in (0, 1)")
        if self.eta > 0.0:
            if self.xi is None:
                raise ValueError("a percentile cost (eta > 0) needs a direction xi")
            if self.p_f >= 0.5:
                raise ValueError("a percentile cost needs p_f < 0.5")


@dataclass(frozen=True)
class TerminalConstraint:
    mean: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TrustRegion:
    """``||u-bar_k - u^_k||_{Mu_k} <= control_radius`` and ``||x-bar_k - x^_k||_{Mx_k} <= state_radius``."""
    control_weights: Optional[np.ndarray] = None
    control_radius: float = np.inf
    state_weights: Optional[np.ndarray] = None
    state_radius: float = np.inf


@dataclass(frozen=True)
class DecisionLayout:
    rows: np.ndarray
    cols: np.ndarray
    l_shape: Tuple[int, int]
    n_v: int
    aux_names: Tuple[str, ...]

    @property
    def n_l(self) -> int:
        return self.rows.shape[0]

    @property
    def size(self) -> int:
        return self.n_l + self.n_v + len(self.aux_names)

    @property
    def v_slice(self) -> slice:
        return slice(self.n_l, self.n_l + self.n_v)

    def aux_index(self, name: str) -> int:
        return self.n_l + self.n_v + self.aux_names.index(name)

    def unpack(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        l_mat = np.zeros(self.l_shape)
        l_mat[self.rows, self.cols] = z[:self.n_l]
        return l_mat, z[self.v_slice].copy()


@dataclass(frozen=True)
class ConeBlock:
    name: str
    f_mat: np.ndarray
    g_vec: np.ndarray
    h_vec: np.ndarray
    d: float

    def slack(self, z: np.ndarray) -> float:
        """Positive when the cone is violated."""
        return float(np.linalg.norm(self.f_mat @ z + self.g_vec) - (self.h_vec @ z + self.d))


@dataclass(frozen=True)
class EqualityBlock:
    name: str
    e_mat: np.ndarray
    f_vec: np.ndarray

    def slack(self, z: np.ndarray) -> float:
        return float(np.max(np.abs(self.e_mat @ z - self.f_vec), initial=0.0))


@dataclass(frozen=True)
class SpectralBlock:
    name: str
    map_mat: np.ndarray
    offset: np.ndarray
    shape: Tuple[int, int]
    bound: float = 1.0

    def slack(self, z: np.ndarray) -> float:
        matrix = (self.map_mat @ z + self.offset).reshape(self.shape)
        return float(np.linalg.norm(matrix, 2) - self.bound)


@dataclass(frozen=True)
class ConicProgram:
    layout: DecisionLayout
    cost: np.ndarray
    cost_offset: float
    cones: Tuple[ConeBlock, ...]
    equalities: Tuple[EqualityBlock, ...]
    spectral: Tuple[SpectralBlock, ...] = ()

    @property
    def is_trivial(self) -> bool:
        return not (self.cones or self.equalities or self.spectral) and not np.any(self.cost)

    def constraint_names(self) -> List[str]:
        return [c.name for c in (*self.equalities, *self.cones, *self.spectral)]

    def worst_violation(self, z: np.ndarray) -> Tuple[float, Optional[str]]:
        worst, name = 0.0, None
        for block in (*self.equalities, *self.cones, *self.spectral):
            slack = block.slack(z)
            if slack > worst:
                worst, name = slack, block.name
        return worst, name


def _spread_support(s_half: np.ndarray) -> np.ndarray:
    """Stacked state entries with nonnegligible spread; L only enters as ``L S_half``."""
    row_norms = np.linalg.norm(s_half, axis=1)
    largest = row_norms.max(initial=0.0)
    if largest == 0.0:
        return np.zeros(row_norms.shape, dtype=bool)
    return row_norms > SUPPORT_TOLERANCE * largest


class _ProgramBuilder:
    """Accumulates cones over the ``(L, V)`` part; auxiliary scalars are appended at the end."""

    def __init__(self, blocks: BlockSteeringData):
        self.blocks = blocks
        rows, cols = np.nonzero(blocks.feedback_mask() & _spread_support(blocks.s_half)[None, :])
        self.rows, self.cols = rows, cols
        self.n_l, self.n_v = rows.shape[0], blocks.n_steps * blocks.control_dim
        self.base = self.n_l + self.n_v
        self.aux_names: List[str] = []
        self.cost = np.zeros(self.base)
        self.cost_offset = 0.0
        self.aux_cost: Dict[int, float] = {}
        self._cones: List[tuple] = []
        self.equalities: List[EqualityBlock] = []
        self.spectral: List[SpectralBlock] = []

    # affine maps of L; each returns a (rows, n_l) coefficient matrix

    def lt_map(self, beta: np.ndarray) -> np.ndarray:
        """``z_L -> S_half L^T beta``."""
        return self.blocks.s_half[:, self.cols] * beta[self.rows][None, :]

    def closed_loop_vector(self, a_full: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """``S_half (I + B L)^T a_full`` as ``(F_L, g)``."""
        return self.lt_map(self.blocks.b_bold.T @ a_full), self.blocks.s_half @ a_full

    def left_map(self, left: np.ndarray) -> np.ndarray:
        """``z_L -> vec(left L S_half)`` (row-major)."""
        s_half = self.blocks.s_half
        tensor = np.einsum("pj,js->psj", left[:, self.rows], s_half[self.cols, :])
        return tensor.reshape(left.shape[0] * s_half.shape[1], self.n_l)

    def full(self, f_l: Optional[np.ndarray] = None, f_v: Optional[np.ndarray] = None, rows: int = 0) -> np.ndarray:
        rows = f_l.shape[0] if f_l is not None else (f_v.shape[0] if f_v is not None else rows)
        f = np.zeros((rows, self.base))
        if f_l is not None:
            f[:, :self.n_l] = f_l
        if f_v is not None:
            f[:, self.n_l:] = f_v
        return f

    def new_aux(self, name: str, cost: float) -> int:
        self.aux_names.append(name)
        index = len(self.aux_names) - 1
        self.aux_cost[index] = cost
        return index

    def add_cone(self, name: str, f: np.ndarray, g: np.ndarray, h: Optional[np.ndarray] = None, d: float = 0.0,
                 aux_column: Optional[Dict[int, np.ndarray]] = None, aux_h: Optional[Dict[int, float]] = None):
        h = np.zeros(self.base) if h is None else h
        self._cones.append((name, f, g, h, d, aux_column or {}, aux_h or {}))

    def add_norm_epigraph(self, name: str, f: np.ndarray, g: np.ndarray, weight: float) -> None:
        """``s >= ||f z + g||`` with ``weight * s`` added to the cost."""
        aux = self.new_aux(name, weight)
        self.add_cone(name, f, g, aux_h={aux: 1.0})

    def add_square_epigraph(self, name: str, f: np.ndarray, g: np.ndarray, weight: float = 1.0) -> None:
        """``t >= ||f z + g||^2`` via ``||[2 (f z + g); t - 1]|| <= t + 1``."""
        if f.shape[0] == 0 or (not np.any(f) and not np.any(g)):
            return
        aux = self.new_aux(name, weight)
        rows = f.shape[0] + 1
        f_full = np.zeros((rows, self.base))
        f_full[:-1] = 2.0 * f
        g_full = np.concatenate([2.0 * g, [-1.0]])
        column = np.zeros(rows)
        column[-1] = 1.0
        self.add_cone(name, f_full, g_full, d=1.0, aux_column={aux: column}, aux_h={aux: 1.0})

    def finalize(self) -> ConicProgram:
        n_aux = len(self.aux_names)

        def widen(matrix: np.ndarray) -> np.ndarray:
            return np.hstack([matrix, np.zeros((matrix.shape[0], n_aux))])

        cones = []
        for name, f, g, h, d, aux_column, aux_h in self._cones:
            f_full, h_full = widen(f), np.concatenate([h, np.zeros(n_aux)])
            for aux, column in aux_column.items():
                f_full[:, self.base + aux] = column
            for aux, value in aux_h.items():
                h_full[self.base + aux] = value
            cones.append(ConeBlock(name, f_full, g, h_full, float(d)))
        cost = np.concatenate([self.cost, np.zeros(n_aux)])
        for aux, value in self.aux_cost.items():
            cost[self.base + aux] = value
        layout = DecisionLayout(
            rows=self.rows,
            cols=self.cols,
            l_shape=(self.n_v, self.blocks.s_half.shape[0]),
            n_v=self.n_v,
            aux_names=tuple(self.aux_names),
        )
        return ConicProgram(
            layout=layout,
            cost=cost,
            cost_offset=self.cost_offset,
            cones=tuple(cones),
            equalities=tuple(EqualityBlock(e.name, widen(e.e_mat), e.f_vec) for e in self.equalities),
            spectral=tuple(SpectralBlock(s.name, widen(s.map_mat), s.offset, s.shape, s.bound)
                           for s in self.spectral),
        )


def weight_factor(weight: np.ndarray) -> np.ndarray:
    """Rows ``F`` with ``F^T F = weight`` for a PSD ``weight``; zero-rank weights give no rows."""
    sym = 0.5 * (weight + weight.T)
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    if eigenvalues.size and eigenvalues[0] < -1e-9 * max(abs(eigenvalues[-1]), 1.0):
        raise ValueError(f"weight matrix is not positive semidefinite (min eigenvalue {eigenvalues[0]:.3e})")
    keep = eigenvalues > WEIGHT_RANK_TOLERANCE * max(eigenvalues[-1] if eigenvalues.size else 0.0, 1e-300)
    return np.sqrt(eigenvalues[keep])[:, None] * eigenvectors[:, keep].T


def inverse_sqrt(matrix: np.ndarray) -> np.ndarray:
    sym = 0.5 * (matrix + matrix.T)
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    if eigenvalues[0] <= 0.0:
        raise ValueError(f"terminal covariance bound must be positive definite (min eigenvalue {eigenvalues[0]:.3e})")
    return (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T


def _block_factor(weights: Sequence[np.ndarray], dim: int, total_blocks: int) -> np.ndarray:
    """Stacked factor of ``blkdiag(weights)`` padded to ``total_blocks`` blocks."""
    rows = []
    for k, weight in enumerate(weights):
        factor = weight_factor(np.asarray(weight, dtype=float))
        padded = np.zeros((factor.shape[0], total_blocks * dim))
        padded[:, k * dim:(k + 1) * dim] = factor
        rows.append(padded)
    return np.vstack(rows) if rows else np.zeros((0, total_blocks * dim))


def build_program(blocks: BlockSteeringData, objective: SteeringObjective,
                  chance: Sequence[ChanceConstraintSpec] = (), terminal: Optional[TerminalConstraint] = None,
                  trust: Optional[TrustRegion] = None, nominal_states: Optional[np.ndarray] = None,
                  nominal_controls: Optional[np.ndarray] = None, spectral_terminal: bool = False) -> ConicProgram:
    """Encodes costs J1 and J2, chance constraints, terminal constraints and trust regions."""
    n, m, n_steps = blocks.state_dim, blocks.control_dim, blocks.n_steps
    builder = _ProgramBuilder(blocks)
    b_bold, offset = blocks.b_bold, blocks.mean_offset()

    # J1: covariance parts
    q_factor = _block_factor(objective.q_weights, n, n_steps + 1)
    r_factor = _block_factor(objective.r_weights, m, n_steps)
    if q_factor.shape[0]:
        builder.add_square_epigraph(
            "cost_state_covariance", builder.full(f_l=builder.left_map(q_factor @ b_bold)),
            (q_factor @ blocks.s_half).ravel())
        if objective.desired is not None:
            desired = np.asarray(objective.desired, dtype=float).ravel()
            builder.add_square_epigraph("cost_state_mean", builder.full(f_v=q_factor @ b_bold),
                                        q_factor @ (offset - desired))
    if r_factor.shape[0]:
        builder.add_square_epigraph("cost_control_covariance", builder.full(f_l=builder.left_map(r_factor)),
                                    np.zeros(r_factor.shape[0] * blocks.s_half.shape[1]))
    r_bar_factor = _block_factor(objective.r_bar_weights, m, n_steps)
    if r_bar_factor.shape[0]:
        builder.add_square_epigraph("cost_feedforward", builder.full(f_v=r_bar_factor), np.zeros(r_bar_factor.shape[0]))

    # J2: percentile of xi^T x_f
    if objective.eta > 0.0:
        xi_full = blocks.state_selector(n_steps).T @ np.asarray(objective.xi, dtype=float)
        builder.cost[builder.n_l:] += objective.eta * (b_bold.T @ xi_full)
        builder.cost_offset += objective.eta * float(xi_full @ offset)
        f_l, g = builder.closed_loop_vector(xi_full)
        builder.add_norm_epigraph("cost_percentile", builder.full(f_l=f_l), g,
                                  objective.eta * gaussian_quantile(1.0 - objective.p_f))

    for spec in chance:
        _add_chance_cone(builder, spec, offset)

    if terminal is not None and terminal.mean is not None:
        selector = blocks.state_selector(n_steps)
        builder.equalities.append(EqualityBlock(
            "terminal_mean", builder.full(f_v=selector @ b_bold), np.asarray(terminal.mean, dtype=float) - selector @ offset))
    if terminal is not None and terminal.covariance is not None:
        _add_terminal_covariance(builder, inverse_sqrt(np.asarray(terminal.covariance, dtype=float)), spectral_terminal)

    if trust is not None:
        _add_trust_cones(builder, trust, offset, nominal_states, nominal_controls)

    program = builder.finalize()
    logger.debug("Built conic program: %d variables, %d cones, %d equalities, %d spectral blocks",
                 program.layout.size, len(program.cones), len(program.equalities), len(program.spectral))
    return program


def _add_chance_cone(builder: _ProgramBuilder, spec: ChanceConstraintSpec, offset: np.ndarray) -> None:
    blocks = builder.blocks
    direction = np.asarray(spec.direction, dtype=float)
    factor = gaussian_quantile(1.0 - spec.probability)
    if spec.target == ConstraintTarget.state:
        if spec.step > blocks.n_steps or direction.shape != (blocks.state_dim,):
            raise ValueError(f"{spec.name}: needs step <= {blocks.n_steps} and a direction of size {blocks.state_dim}")
        a_full = blocks.state_selector(spec.step).T @ direction
        f_l, g = builder.closed_loop_vector(a_full)
        h_v = -(blocks.b_bold.T @ a_full)
        d = spec.bound - float(a_full @ offset)
    else:
        if spec.step >= blocks.n_steps or direction.shape != (blocks.control_dim,):
            raise ValueError(f"{spec.name}: needs step < {blocks.n_steps} and a direction of size {blocks.control_dim}")
        b_full = blocks.control_selector(spec.step).T @ direction
        f_l, g = builder.lt_map(b_full), np.zeros(blocks.s_half.shape[0])
        h_v = -b_full
        d = spec.bound
    builder.add_cone(spec.name, builder.full(f_l=factor * f_l), factor * g, h=builder.full(f_v=h_v[None, :])[0], d=d)


def _add_terminal_covariance(builder: _ProgramBuilder, pf_inv_half: np.ndarray, spectral: bool) -> None:
    blocks = builder.blocks
    selector = blocks.state_selector(blocks.n_steps)
    columns = [builder.closed_loop_vector(selector.T @ pf_inv_half[:, j]) for j in range(blocks.state_dim)]
    # row-major entries of the (S rows) x n matrix S_half (I + B L)^T E_N^T P_f^-1/2
    f_l = np.stack([c[0] for c in columns], axis=1).reshape(-1, builder.n_l)
    g = np.stack([c[1] for c in columns], axis=1).ravel()
    if spectral:
        builder.spectral.append(SpectralBlock("terminal_covariance", builder.full(f_l=f_l), g,
                                              (blocks.s_half.shape[0], blocks.state_dim)))
    else:
        builder.add_cone("terminal_covariance", builder.full(f_l=f_l), g, d=1.0)


def _add_trust_cones(builder: _ProgramBuilder, trust: TrustRegion, offset: np.ndarray,
                     nominal_states: Optional[np.ndarray], nominal_controls: Optional[np.ndarray]) -> None:
    blocks = builder.blocks
    n, m = blocks.state_dim, blocks.control_dim
    if trust.control_weights is not None and np.isfinite(trust.control_radius):
        for k, weight in enumerate(trust.control_weights):
            factor = weight_factor(np.asarray(weight, dtype=float))
            if factor.shape[0] == 0:
                continue
            selector = blocks.control_selector(k)
            builder.add_cone(f"trust_control[k={k}]", builder.full(f_v=factor @ selector),
                             -factor @ nominal_controls[k], d=trust.control_radius)
    if trust.state_weights is not None and np.isfinite(trust.state_radius):
        for k, weight in enumerate(trust.state_weights):
            factor = weight_factor(np.asarray(weight, dtype=float))
            if factor.shape[0] == 0:
                continue
            selector = blocks.state_selector(k)
            builder.add_cone(f"trust_state[k={k}]", builder.full(f_v=factor @ selector @ blocks.b_bold),
                             factor @ (selector @ offset - nominal_states[k]), d=trust.state_radius)


@dataclass(frozen=True)
class SubproblemSolution:
    l_mat: np.ndarray
    v: np.ndarray
    objective: float
    status: SolveStatus
    solve_time: float
    worst_violation: float
    worst_constraint: Optional[str]
    diagnostics: Dict[str, object] = dataclass_field(default_factory=dict)


def solve_program(adapter, program: ConicProgram) -> SubproblemSolution:
    """Runs the adapter, unpacks ``(L, V)`` and checks every constraint at the returned point."""
    if program.is_trivial:
        z = np.zeros(program.layout.size)
        l_mat, v = program.layout.unpack(z)
        return SubproblemSolution(l_mat, v, program.cost_offset, SolveStatus.optimal, 0.0, 0.0, None)

    result = adapter.solve(program)
    if result.status in (SolveStatus.infeasible, SolveStatus.unbounded):
        raise SubproblemInfeasibleError(
            f"convex subproblem is {result.status.value} ({result.message})",
            status=result.status.value,
            diagnostics={"constraints": program.constraint_names(), "solver": adapter.name},
        )
    if result.status == SolveStatus.numerical_failure or result.z is None:
        raise SolverFailureError(f"solver {adapter.name} failed: {result.message}", status=result.status.value)
    if result.status == SolveStatus.optimal_inaccurate:
        logger.warning("Solver %s returned an inaccurate solution", adapter.name)

    worst, worst_name = program.worst_violation(result.z)
    if worst > CONE_TOLERANCE:
        logger.warning("Constraint %s violated by %.3e at the returned solution", worst_name, worst)
    l_mat, v = program.layout.unpack(result.z)
    objective = float(program.cost @ result.z + program.cost_offset)
    return SubproblemSolution(l_mat, v, objective, result.status, result.solve_time, worst, worst_name,
                              diagnostics={"solver": adapter.name, "message": result.message})


def format_program(program: ConicProgram) -> str:
    """Plain-text canonical form: layout, dense cost, then one section per constraint block."""
    layout = program.layout
    lines = [
        "# conic program: minimize c^T z + c0",
        f"variables {layout.size}",
        f"layout L {layout.n_l} V {layout.n_v} aux {len(layout.aux_names)}",
        "L_entries " + " ".join(f"{r},{c}" for r, c in zip(layout.rows, layout.cols)),
        "aux " + " ".join(layout.aux_names),
        "c " + " ".join(repr(float(x)) for x in program.cost),
        f"c0 {program.cost_offset!r}",
    ]
    for eq in program.equalities:
        lines.append(f"equality {eq.name} rows {eq.e_mat.shape[0]}")
        lines.extend("E " + " ".join(repr(float(x)) for x in row) + " = " + repr(float(f))
                     for row, f in zip(eq.e_mat, eq.f_vec))
    for cone in program.cones:
        lines.append(f"cone {cone.name} rows {cone.f_mat.shape[0]} d {cone.d!r}")
        lines.append("h " + " ".join(repr(float(x)) for x in cone.h_vec))
        lines.extend("F " + " ".join(repr(float(x)) for x in row) + " + " + repr(float(g))
                     for row, g in zip(cone.f_mat, cone.g_vec))
    for block in program.spectral:
        lines.append(f"spectral {block.name} shape {block.shape[0]}x{block.shape[1]} bound {block.bound!r}")
        lines.extend("M " + " ".join(repr(float(x)) for x in row) + " + " + repr(float(g))
                     for row, g in zip(block.map_mat, block.offset))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LinearCovariance:
    state_means: np.ndarray
    state_covariances: np.ndarray
    control_means: np.ndarray
    control_covariances: np.ndarray


def linear_covariance(blocks: BlockSteeringData, l_mat: np.ndarray, v: np.ndarray) -> LinearCovariance:
    """Per-knot predicted mean and covariance of states and controls for ``(L, V)``."""
    n, m, n_steps = blocks.state_dim, blocks.control_dim, blocks.n_steps
    cov_x = state_covariance(blocks, l_mat)
    cov_u = control_covariance(blocks, l_mat)
    return LinearCovariance(
        state_means=blocks.state_mean(v).reshape(n_steps + 1, n),
        state_covariances=np.array([cov_x[k * n:(k + 1) * n, k * n:(k + 1) * n] for k in range(n_steps + 1)]),
        control_means=v.reshape(n_steps, m),
        control_covariances=np.array([cov_u[k * m:(k + 1) * m, k * m:(k + 1) * m] for k in range(n_steps)]),
    )


def evaluate_costs(blocks: BlockSteeringData, objective: SteeringObjective, l_mat: np.ndarray,
                   v: np.ndarray) -> Dict[str, float]:
    """J1 and the J2 surrogate at ``(L, V)``, evaluated directly from the block matrices."""
    n, m, n_steps = blocks.state_dim, blocks.control_dim, blocks.n_steps
    q_bold = np.zeros(((n_steps + 1) * n,) * 2)
    for k, weight in enumerate(objective.q_weights):
        q_bold[k * n:(k + 1) * n, k * n:(k + 1) * n] = weight
    r_bold = np.zeros((n_steps * m,) * 2)
    r_bar_bold = np.zeros_like(r_bold)
    for k in range(n_steps):
        r_bold[k * m:(k + 1) * m, k * m:(k + 1) * m] = objective.r_weights[k]
        r_bar_bold[k * m:(k + 1) * m, k * m:(k + 1) * m] = objective.r_bar_weights[k]
    closed = blocks.closed_loop(l_mat)
    mean = blocks.state_mean(v)
    j1 = float(np.trace((closed.T @ q_bold @ closed + l_mat.T @ r_bold @ l_mat) @ blocks.s_mat) + v @ r_bar_bold @ v)
    if objective.desired is not None:
        error = mean - np.asarray(objective.desired, dtype=float).ravel()
        j1 += float(error @ q_bold @ error)
    costs = {"j1": j1}
    if objective.xi is not None:
        xi_full = blocks.state_selector(n_steps).T @ np.asarray(objective.xi, dtype=float)
        spread = np.linalg.norm(blocks.s_half @ closed.T @ xi_full)
        costs["j2"] = float(xi_full @ mean + gaussian_quantile(1.0 - objective.p_f) * spread)
        costs["total"] = j1 + objective.eta * costs["j2"]
    else:
        costs["total"] = j1
    return costs
