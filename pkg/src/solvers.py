# solvers.py
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import cvxpy as cp
import numpy as np

import config
from enums import SolveStatus

logger = logging.getLogger(__name__)

SEMIDEFINITE_SOLVERS = frozenset({"CLARABEL", "SCS", "MOSEK", "CVXOPT", "COPT"})

_STATUS_MAP = {
    cp.OPTIMAL: SolveStatus.optimal,
    cp.OPTIMAL_INACCURATE: SolveStatus.optimal_inaccurate,
    cp.INFEASIBLE: SolveStatus.infeasible,
    cp.INFEASIBLE_INACCURATE: SolveStatus.infeasible,
    cp.UNBOUNDED: SolveStatus.unbounded,
    cp.UNBOUNDED_INACCURATE: SolveStatus.unbounded,
}


@dataclass(frozen=True)
class SolverResult:
    status: SolveStatus
    z: Optional[np.ndarray]
    objective: Optional[float]
    solve_time: float
    message: str = ""


class SolverAdapter(ABC):
    """Interface for anything that can solve a ConicProgram."""
    name: str = "abstract"

    @property
    @abstractmethod
    def supports_semidefinite(self) -> bool:
        pass

    @abstractmethod
    def solve(self, program) -> SolverResult:
        pass


class CvxpyConicAdapter(SolverAdapter):
    """Solves conic programs through cvxpy with any installed conic solver.

    Decision entries that neither the cost nor any constraint touches are fixed at zero.
    Not reentrant: one solve at a time per instance.
    """

    def __init__(self, solver: Optional[str] = None, verbose: Optional[bool] = None):
        self.solver = (solver or config.SOLVER_NAME).upper()
        self.verbose = config.SOLVER_VERBOSE if verbose is None else verbose
        self.name = f"cvxpy/{self.solver}"
        if self.solver not in cp.installed_solvers():
            logger.warning("Solver %s is not installed; cvxpy has %s", self.solver, ", ".join(cp.installed_solvers()))

    @property
    def supports_semidefinite(self) -> bool:
        return self.solver in SEMIDEFINITE_SOLVERS

    @staticmethod
    def _active_columns(program) -> np.ndarray:
        used = program.cost != 0.0
        for cone in program.cones:
            used |= np.any(cone.f_mat != 0.0, axis=0) | (cone.h_vec != 0.0)
        for eq in program.equalities:
            used |= np.any(eq.e_mat != 0.0, axis=0)
        for block in program.spectral:
            used |= np.any(block.map_mat != 0.0, axis=0)
        return np.flatnonzero(used)

    def solve(self, program) -> SolverResult:
        active = self._active_columns(program)
        z_full = np.zeros(program.layout.size)
        if active.size == 0:
            # every constraint is constant; check them at z = 0
            worst, name = program.worst_violation(z_full)
            status = SolveStatus.infeasible if worst > 1e-9 else SolveStatus.optimal
            return SolverResult(status, z_full, program.cost_offset, 0.0, name or "constant program")

        z = cp.Variable(active.size)
        constraints = []
        for eq in program.equalities:
            constraints.append(eq.e_mat[:, active] @ z == eq.f_vec)
        for cone in program.cones:
            constraints.append(cp.SOC(cone.h_vec[active] @ z + cone.d, cone.f_mat[:, active] @ z + cone.g_vec))
        for block in program.spectral:
            matrix = cp.reshape(block.map_mat[:, active] @ z + block.offset, block.shape, order="C")
            constraints.append(cp.sigma_max(matrix) <= block.bound)
        problem = cp.Problem(cp.Minimize(program.cost[active] @ z + program.cost_offset), constraints)

        started = time.perf_counter()
        try:
            problem.solve(solver=self.solver, verbose=self.verbose)
        except cp.error.SolverError as e:
            return SolverResult(SolveStatus.numerical_failure, None, None, time.perf_counter() - started, str(e))
        elapsed = time.perf_counter() - started

        status = _STATUS_MAP.get(problem.status, SolveStatus.numerical_failure)
        logger.debug("%s finished with status %s in %.3f s", self.name, problem.status, elapsed)
        if status not in (SolveStatus.optimal, SolveStatus.optimal_inaccurate) or z.value is None:
            return SolverResult(status, None, None, elapsed, str(problem.status))
        z_full[active] = z.value
        return SolverResult(status, z_full, float(problem.value), elapsed, str(problem.status))
