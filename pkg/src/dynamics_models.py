"""Controlled systems driven by a scalar field value, plus aerocapture orbit math.

A model maps ``(x, u, psi)`` to the state derivative, where ``psi`` is the value of
the random field at the index point ``index_map(x)``.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from enums import DensityKind
from errors import ArtifactIOError, CaptureError, ModelDomainError

logger = logging.getLogger(__name__)

FD_RELATIVE_STEP = 1e-6
# 2 mu / r - v^2 below this fraction of 2 mu / r counts as an escape orbit
CAPTURE_ENERGY_TOLERANCE = 1e-12


def central_difference(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                       relative_step: float = FD_RELATIVE_STEP) -> np.ndarray:
    """Jacobian of ``fn`` at ``x`` with per-component step ``relative_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    jacobian = np.zeros((f0.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        step = relative_step * max(1.0, abs(x[i]))
        forward, backward = x.copy(), x.copy()
        forward[i] += step
        backward[i] -= step
        jacobian[:, i] = (np.atleast_1d(fn(forward)) - np.atleast_1d(fn(backward))) / (2.0 * step)
    return jacobian


class SystemModel(ABC):
    """Dynamics ``x' = f(x, u, psi)`` with field index map ``phi(x)``."""
    state_dim: int
    control_dim: int
    index_dim: int = 1
    state_names: Tuple[str, ...] = ()

    @abstractmethod
    def dynamics(self, x: np.ndarray, u: np.ndarray, psi: float) -> np.ndarray:
        pass

    @abstractmethod
    def index_map(self, x: np.ndarray) -> np.ndarray:
        pass

    def check_domain(self, x: np.ndarray, t: Optional[float] = None) -> None:
        if not np.all(np.isfinite(x)):
            raise ModelDomainError("state is not finite", time=t)

    def jacobians(self, x: np.ndarray, u: np.ndarray, psi: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(df/dx, df/du, df/dpsi)``; finite differences unless overridden."""
        return finite_difference_jacobians(self, x, u, psi)

    def terminal_functional(self, x_f: np.ndarray) -> Optional[float]:
        """Scalar figure of merit of the final state, if the model defines one."""
        return None


def finite_difference_jacobians(model: SystemModel, x, u, psi) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a = central_difference(lambda xx: model.dynamics(xx, u, psi), x)
    b = central_difference(lambda uu: model.dynamics(x, uu, psi), u)
    g = central_difference(lambda pp: model.dynamics(x, u, float(pp[0])), np.array([psi], dtype=float))
    return a, b, g[:, 0]


class DoubleIntegrator(SystemModel):
    """Position/velocity pair pushed by the control and by a position-dependent force."""
    state_dim = 2
    control_dim = 1
    index_dim = 1
    state_names = ("r", "v")

    def dynamics(self, x, u, psi):
        return np.array([x[1], float(np.atleast_1d(u)[0]) + psi])

    def index_map(self, x):
        return np.array([x[0]])

    def jacobians(self, x, u, psi):
        return np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), np.array([0.0, 1.0])


# Atmosphere and vehicle

class ExponentialDensity:
    def __init__(self, surface_density: float, scale_height: float):
        self.surface_density = surface_density
        self.scale_height = scale_height

    def __call__(self, altitude: float) -> float:
        return self.surface_density * np.exp(-altitude / self.scale_height)

    def derivative(self, altitude: float) -> float:
        return -self(altitude) / self.scale_height


class TabulatedDensity:
    """Density table interpolated linearly in log-density."""

    def __init__(self, altitudes: np.ndarray, densities: np.ndarray):
        altitudes = np.asarray(altitudes, dtype=float)
        densities = np.asarray(densities, dtype=float)
        if altitudes.ndim != 1 or altitudes.shape != densities.shape or altitudes.size < 2:
            raise ValueError("density table needs at least two (altitude, density) rows")
        if np.any(np.diff(altitudes) <= 0.0):
            raise ValueError("density table altitudes must be strictly increasing")
        if np.any(densities <= 0.0):
            raise ValueError("density table values must be positive")
        self.altitudes = altitudes
        self.log_densities = np.log(densities)
        self.slopes = np.diff(self.log_densities) / np.diff(altitudes)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TabulatedDensity":
        try:
            table = np.genfromtxt(path, delimiter=",", comments="#")
        except OSError as e:
            raise ArtifactIOError(f"Cannot read density table {path}: {e}") from e
        table = np.atleast_2d(table)
        table = table[~np.isnan(table).any(axis=1)]
        if table.shape[1] != 2:
            raise ArtifactIOError(f"Density table {path} must have two columns (altitude m, density kg/m^3)")
        return cls(table[:, 0], table[:, 1])

    def _segment(self, altitude: float) -> int:
        return int(np.clip(np.searchsorted(self.altitudes, altitude) - 1, 0, self.slopes.size - 1))

    def __call__(self, altitude: float) -> float:
        i = self._segment(altitude)
        return float(np.exp(self.log_densities[i] + self.slopes[i] * (altitude - self.altitudes[i])))

    def derivative(self, altitude: float) -> float:
        return self.slopes[self._segment(altitude)] * self(altitude)


class DensityProfile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: DensityKind = DensityKind.exponential
    surface_density: float = Field(0.020, ge=0.0, description="Density at zero altitude, kg/m^3")
    scale_height: float = Field(11_100.0, gt=0.0, description="Density scale height, m")
    table_path: Optional[str] = Field(None, description="Two-column CSV: altitude m, density kg/m^3")

    @model_validator(mode="after")
    def check_table(self) -> "DensityProfile":
        if self.kind == DensityKind.table and not self.table_path:
            raise ValueError("a tabulated density profile needs table_path")
        return self

    def build(self, base_dir: Optional[Path] = None):
        if self.kind == DensityKind.table:
            path = Path(self.table_path)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return TabulatedDensity.from_csv(path)
        return ExponentialDensity(self.surface_density, self.scale_height)


class AerocaptureParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ballistic_coefficient: float = Field(150.0, gt=0.0, description="B_c = m / (S C_D), kg/m^2")
    lift_to_drag: float = Field(0.2, gt=0.0, description="Lift-to-drag ratio")
    mu: float = Field(4.2828e13, gt=0.0, description="Gravitational parameter, m^3/s^2")
    planet_radius: float = Field(3_397_000.0, gt=0.0, description="Planet radius, m")
    target_apoapsis: float = Field(5 * 3_397_000.0, gt=0.0, description="Target apoapsis radius, m")
    target_periapsis: float = Field(2 * 3_397_000.0, gt=0.0, description="Target periapsis radius, m")
    density: DensityProfile = Field(default_factory=DensityProfile)

    @model_validator(mode="after")
    def check_targets(self) -> "AerocaptureParams":
        if not self.target_apoapsis > self.target_periapsis > self.planet_radius:
            raise ValueError("target radii must satisfy apoapsis > periapsis > planet radius")
        return self


@dataclass(frozen=True)
class ExitState:
    """State at the end of atmospheric flight, SI units."""
    r_f: float
    v_f: float
    gamma_f: float

    def __post_init__(self):
        if not (self.r_f > 0.0 and self.v_f > 0.0):
            raise ValueError(f"exit radius and speed must be positive, got r={self.r_f}, v={self.v_f}")

    def as_array(self) -> np.ndarray:
        return np.array([self.r_f, self.v_f, self.gamma_f])


def _exit_orbit(exit: ExitState, params: AerocaptureParams) -> Tuple[float, float]:
    mu = params.mu
    escape_term = 2.0 * mu / exit.r_f
    energy_term = escape_term - exit.v_f ** 2
    if energy_term <= CAPTURE_ENERGY_TOLERANCE * escape_term:
        raise CaptureError(
            f"exit state is not captured: 2 mu / r - v^2 = {energy_term:.6g} (parabolic or hyperbolic orbit)")
    semi_major_axis = mu / energy_term
    discriminant = 1.0 - (exit.r_f * exit.v_f * np.cos(exit.gamma_f)) ** 2 / (mu * semi_major_axis)
    if discriminant < 0.0:
        if discriminant < -1e-12:
            raise CaptureError(f"exit orbit has a negative eccentricity discriminant ({discriminant:.3e})")
        discriminant = 0.0
    return semi_major_axis, float(np.sqrt(discriminant))


def exit_orbit_apoapsis(exit: ExitState, params: AerocaptureParams) -> float:
    semi_major_axis, eccentricity = _exit_orbit(exit, params)
    return semi_major_axis * (1.0 + eccentricity)


def exit_orbit_periapsis(exit: ExitState, params: AerocaptureParams) -> float:
    semi_major_axis, eccentricity = _exit_orbit(exit, params)
    return semi_major_axis * (1.0 - eccentricity)


def delta_v_value(exit: ExitState, params: AerocaptureParams) -> float:
    """Periapsis-correction burn at the exit apoapsis plus apoapsis clean-up burn at the target periapsis.

    Both burns count by magnitude; an exit periapsis above the target needs a lowering burn.
    """
    mu = params.mu
    r_a = exit_orbit_apoapsis(exit, params)
    r_pt, r_at = params.target_periapsis, params.target_apoapsis
    if r_a <= r_pt:
        raise CaptureError(f"exit apoapsis {r_a:.6g} m does not reach the target periapsis {r_pt:.6g} m")
    v_a_minus = np.sqrt(max(exit.v_f ** 2 + 2.0 * mu * (1.0 / r_a - 1.0 / exit.r_f), 0.0))
    v_a_plus = np.sqrt(2.0 * mu * (1.0 / r_a - 1.0 / (r_a + r_pt)))
    v_p_minus = np.sqrt(2.0 * mu * (1.0 / r_pt - 1.0 / (r_a + r_pt)))
    v_p_plus = np.sqrt(2.0 * mu * (1.0 / r_pt - 1.0 / (r_at + r_pt)))
    return float(abs(v_a_plus - v_a_minus) + abs(v_p_plus - v_p_minus))


def delta_v(exit: ExitState, params: AerocaptureParams) -> Tuple[float, np.ndarray]:
    """Delta-v and its gradient with respect to ``(r_f, v_f, gamma_f)``."""
    value = delta_v_value(exit, params)
    gradient = central_difference(lambda x: delta_v_value(ExitState(*x), params), exit.as_array())[0]
    return value, gradient


def apoapsis_gradient(exit: ExitState, params: AerocaptureParams) -> np.ndarray:
    return central_difference(lambda x: exit_orbit_apoapsis(ExitState(*x), params), exit.as_array())[0]


class AerocaptureModel(SystemModel):
    """Longitudinal atmospheric flight; control is the bank-angle cosine.

    The state ``(r, v, gamma)`` is expressed in ``length_unit`` metres (radius and
    speed) and radians; the field index is the altitude in the same length unit.
    """
    state_dim = 3
    control_dim = 1
    index_dim = 1
    state_names = ("r", "v", "gamma")

    def __init__(self, params: AerocaptureParams, length_unit: float = 1000.0, density=None):
        self.params = params
        self.length_unit = length_unit
        self.density = density if density is not None else params.density.build()
        self._scale = np.array([length_unit, length_unit, 1.0])

    def to_si(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self._scale

    def from_si(self, x_si: np.ndarray) -> np.ndarray:
        return np.asarray(x_si, dtype=float) / self._scale

    def exit_state(self, x: np.ndarray) -> ExitState:
        r, v, gamma = self.to_si(x)
        return ExitState(r, v, gamma)

    def check_domain(self, x, t=None):
        super().check_domain(x, t)
        r, v, _ = self.to_si(x)
        if r <= 0.9 * self.params.planet_radius:
            raise ModelDomainError(f"radius {r:.6g} m is below the density model domain", time=t)
        if v <= 0.0:
            raise ModelDomainError(f"speed {v:.6g} m/s is not positive", time=t)

    def _density(self, r: float, psi: float) -> Tuple[float, float, float]:
        """Returns (rho, d rho / d r, nominal rho); density is clamped at zero."""
        altitude = r - self.params.planet_radius
        nominal = self.density(altitude)
        factor = 1.0 + psi
        if factor <= 0.0:
            return 0.0, 0.0, nominal
        return nominal * factor, self.density.derivative(altitude) * factor, nominal

    def index_map(self, x):
        return np.array([x[0] - self.params.planet_radius / self.length_unit])

    def dynamics(self, x, u, psi):
        p = self.params
        r, v, gamma = self.to_si(x)
        if v <= 0.0:
            raise ModelDomainError(f"speed {v:.6g} m/s is not positive")
        u = float(np.atleast_1d(u)[0])
        rho, _, _ = self._density(r, psi)
        r_dot = v * np.sin(gamma)
        v_dot = -rho * v * v / (2.0 * p.ballistic_coefficient) - p.mu * np.sin(gamma) / r ** 2
        gamma_dot = (rho * v * p.lift_to_drag * u / (2.0 * p.ballistic_coefficient)
                     - (p.mu / r ** 2 - v * v / r) * np.cos(gamma) / v)
        return np.array([r_dot, v_dot, gamma_dot]) / self._scale

    def jacobians(self, x, u, psi):
        p = self.params
        r, v, gamma = self.to_si(x)
        u = float(np.atleast_1d(u)[0])
        rho, drho, nominal = self._density(r, psi)
        mu, bc = p.mu, p.ballistic_coefficient
        k = p.lift_to_drag / (2.0 * bc)
        sin_g, cos_g = np.sin(gamma), np.cos(gamma)

        a = np.array([
            [0.0, sin_g, v * cos_g],
            [-drho * v * v / (2.0 * bc) + 2.0 * mu * sin_g / r ** 3, -rho * v / bc, -mu * cos_g / r ** 2],
            [drho * v * k * u - (-2.0 * mu / (r ** 3 * v) + v / r ** 2) * cos_g,
             rho * k * u + (mu / (r * r * v * v) + 1.0 / r) * cos_g,
             (mu / (r * r * v) - v / r) * sin_g],
        ])
        b = np.array([[0.0], [0.0], [rho * v * k]])
        clamped = 1.0 + psi <= 0.0
        g = np.zeros(3) if clamped else nominal * np.array([0.0, -v * v / (2.0 * bc), v * k * u])

        scale = self._scale
        return a * scale[None, :] / scale[:, None], b / scale[:, None], g / scale

    def dynamic_pressure(self, x) -> float:
        r, v, _ = self.to_si(x)
        return 0.5 * self.density(r - self.params.planet_radius) * v * v

    def dynamic_pressure_gradient(self, x) -> np.ndarray:
        r, v, _ = self.to_si(x)
        altitude = r - self.params.planet_radius
        grad_si = np.array([0.5 * self.density.derivative(altitude) * v * v, self.density(altitude) * v, 0.0])
        return grad_si * self._scale

    def delta_v(self, x_f) -> Tuple[float, np.ndarray]:
        """Delta-v in m/s and its gradient with respect to the model-unit state."""
        value, gradient_si = delta_v(self.exit_state(x_f), self.params)
        return value, gradient_si * self._scale

    def apoapsis_gradient(self, x_f) -> np.ndarray:
        """Gradient of the exit apoapsis, in model length units per model-unit state."""
        return apoapsis_gradient(self.exit_state(x_f), self.params) * self._scale / self.length_unit

    def terminal_functional(self, x_f) -> Optional[float]:
        try:
            return delta_v_value(self.exit_state(x_f), self.params)
        except (CaptureError, ValueError):
            logger.debug("No delta-v for non-captured exit state %s", x_f)
            return float("nan")
