"""Scalar Gaussian random fields: covariance kernels, Gram matrices and samplers.

A field is described by a mean function and a covariance function over an index
space of dimension ``index_dim``. Both callables are vectorised over rows:
``mean_fn(Z) -> (n,)`` and ``cov_fn(Z1, Z2) -> (n1, n2)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import solve_triangular

from enums import KernelKind
from errors import KernelRepairError, NumericalError

logger = logging.getLogger(__name__)

PSD_CLIP_RELATIVE = 1e-12
PSD_EIGEN_FLOOR = 1e-30
PSD_MAX_REMOVED_MASS = 1e-6
CONDITIONING_JITTER = 1e-10
CONDITIONAL_VARIANCE_TOLERANCE = 1e-8

REQUIRED_PARAMETERS: Dict[KernelKind, Tuple[str, ...]] = {
    KernelKind.locally_periodic: ("variance", "period", "periodic_length", "length_scale"),
    KernelKind.mars_density: ("variance_max", "scale_height", "transition_altitude", "c_scale"),
    KernelKind.squared_exponential: ("variance", "length_scale"),
    KernelKind.constant: ("variance",),
}
OPTIONAL_PARAMETERS: Dict[KernelKind, Tuple[str, ...]] = {
    KernelKind.mars_density: ("variance_scale",),
}


class KernelSpec(BaseModel):
    """Closed set of covariance kernels with their named parameters."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: KernelKind = Field(..., description="Kernel family")
    parameters: Dict[str, float] = Field(
        default_factory=dict,
        description="Named kernel parameters, in the units of the field's index space",
        examples=[{"variance": 2e-6, "period": 0.35, "periodic_length": 0.8, "length_scale": 1.0}],
    )

    @model_validator(mode="after")
    def check_parameters(self) -> "KernelSpec":
        required = REQUIRED_PARAMETERS[self.kind]
        allowed = set(required) | set(OPTIONAL_PARAMETERS.get(self.kind, ()))
        missing = [name for name in required if name not in self.parameters]
        if missing:
            raise ValueError(f"{self.kind.value} kernel is missing parameters: {', '.join(missing)}")
        unknown = sorted(set(self.parameters) - allowed)
        if unknown:
            raise ValueError(f"{self.kind.value} kernel does not accept parameters: {', '.join(unknown)}")
        for name, value in self.parameters.items():
            if not np.isfinite(value):
                raise ValueError(f"kernel parameter {name} must be finite")
            # a constant kernel may be degenerate (zero variance)
            if self.kind == KernelKind.constant and value >= 0.0:
                continue
            if value <= 0.0:
                raise ValueError(f"kernel parameter {name} must be strictly positive, got {value}")
        return self

    @property
    def length_scale(self) -> float:
        """Characteristic distance of the kernel, used to thin conditioning sets."""
        p = self.parameters
        match self.kind:
            case KernelKind.locally_periodic:
                return min(p["period"], p["length_scale"])
            case KernelKind.mars_density:
                return p["scale_height"]
            case KernelKind.squared_exponential:
                return p["length_scale"]
        return 1.0


def _distance(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    diff = z1[:, None, :] - z2[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


class ConstantMean:
    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.full(points.shape[0], self.value)


class ConstantKernel:
    def __init__(self, variance: float):
        self.variance = variance

    def __call__(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        return np.full((z1.shape[0], z2.shape[0]), self.variance)


class SquaredExponentialKernel:
    def __init__(self, variance: float, length_scale: float):
        self.variance = variance
        self.length_scale = length_scale

    def __call__(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        d = _distance(z1, z2)
        return self.variance * np.exp(-d * d / (2.0 * self.length_scale ** 2))


class LocallyPeriodicKernel:
    """Periodic kernel damped by a squared-exponential envelope."""

    def __init__(self, variance: float, period: float, periodic_length: float, length_scale: float):
        self.variance = variance
        self.period = period
        self.periodic_length = periodic_length
        self.length_scale = length_scale

    def __call__(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        d = _distance(z1, z2)
        periodic = np.exp(-2.0 * np.sin(np.pi * d / self.period) ** 2 / self.periodic_length ** 2)
        envelope = np.exp(-d * d / (2.0 * self.length_scale ** 2))
        return self.variance * periodic * envelope


class MarsDensityKernel:
    """Altitude kernel for fractional density variations.

    Exponential correlation in altitude, with a variance that saturates at
    ``variance_max`` above ``transition_altitude`` and decays exponentially below it.
    ``variance_scale`` converts the configured variance units to field units
    (1e-4 turns percent squared into a fractional variance).
    """

    def __init__(self, variance_max: float, scale_height: float, transition_altitude: float,
                 c_scale: float, variance_scale: float = 1.0):
        self.variance_max = variance_max
        self.scale_height = scale_height
        self.transition_altitude = transition_altitude
        self.c_scale = c_scale
        self.variance_scale = variance_scale

    def __call__(self, z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        h1 = z1[:, 0][:, None]
        h2 = z2[:, 0][None, :]
        h_min = np.minimum(h1, h2)
        variance = np.where(
            h_min < self.transition_altitude,
            self.variance_max * np.exp(np.minimum(h_min - self.transition_altitude, 0.0) / self.c_scale),
            self.variance_max,
        )
        return self.variance_scale * variance * np.exp(-np.abs(h1 - h2) / self.scale_height)


def build_kernel(spec: KernelSpec) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    p = spec.parameters
    match spec.kind:
        case KernelKind.locally_periodic:
            return LocallyPeriodicKernel(p["variance"], p["period"], p["periodic_length"], p["length_scale"])
        case KernelKind.mars_density:
            return MarsDensityKernel(p["variance_max"], p["scale_height"], p["transition_altitude"],
                                     p["c_scale"], p.get("variance_scale", 1.0))
        case KernelKind.squared_exponential:
            return SquaredExponentialKernel(p["variance"], p["length_scale"])
        case KernelKind.constant:
            return ConstantKernel(p["variance"])
    raise ValueError(f"Unsupported kernel kind: {spec.kind}")


@dataclass(frozen=True)
class GaussianRandomField:
    mean_fn: Callable[[np.ndarray], np.ndarray]
    cov_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    index_dim: int = 1
    length_scale: float = 1.0

    def __post_init__(self):
        if self.index_dim < 1:
            raise ValueError("index_dim must be a positive integer")

    def points(self, points) -> np.ndarray:
        """Coerces ``points`` to an ``(n, index_dim)`` array."""
        array = np.asarray(points, dtype=float)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(-1, 1) if self.index_dim == 1 else array.reshape(1, -1)
        if array.ndim != 2 or array.shape[1] != self.index_dim:
            raise ValueError(
                f"index points must have dimension {self.index_dim}, got shape {np.shape(points)}")
        return array

    def point(self, z) -> np.ndarray:
        array = np.atleast_1d(np.asarray(z, dtype=float))
        if array.ndim != 1 or array.shape[0] != self.index_dim:
            raise ValueError(f"index point must have dimension {self.index_dim}, got shape {np.shape(z)}")
        return array


def field_from_spec(spec: KernelSpec, mean: float = 0.0, index_dim: int = 1) -> GaussianRandomField:
    if spec.kind == KernelKind.mars_density and index_dim != 1:
        raise ValueError("the mars_density kernel is indexed by altitude only")
    return GaussianRandomField(
        mean_fn=ConstantMean(mean),
        cov_fn=build_kernel(spec),
        index_dim=index_dim,
        length_scale=spec.length_scale,
    )


def eval_cov(field: GaussianRandomField, z1, z2) -> float:
    a = field.point(z1).reshape(1, -1)
    b = field.point(z2).reshape(1, -1)
    return float(field.cov_fn(a, b)[0, 0])


def repair_psd(matrix: np.ndarray, label: str = "covariance matrix",
               max_removed_mass: float = PSD_MAX_REMOVED_MASS) -> Tuple[np.ndarray, float]:
    """Symmetrises ``matrix`` and clips small negative eigenvalues.

    Eigenvalues below ``1e-12 * max(lambda_max, 1e-30)`` are raised to that level.
    Returns the repaired matrix and the relative Frobenius mass the clipping changed.
    """
    sym = 0.5 * (matrix + matrix.T)
    if sym.size == 0:
        return sym, 0.0
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    epsilon = PSD_CLIP_RELATIVE * max(eigenvalues[-1], PSD_EIGEN_FLOOR)
    if eigenvalues[0] >= epsilon:
        return sym, 0.0
    clipped = np.maximum(eigenvalues, epsilon)
    repaired = (eigenvectors * clipped) @ eigenvectors.T
    repaired = 0.5 * (repaired + repaired.T)
    scale = np.linalg.norm(sym)
    removed = float(np.linalg.norm(repaired - sym) / scale) if scale > 0.0 else 0.0
    if removed > max_removed_mass:
        raise KernelRepairError(
            f"{label} is not positive semidefinite: min eigenvalue {eigenvalues[0]:.3e}, "
            f"max eigenvalue {eigenvalues[-1]:.3e}, repair would remove {removed:.3e} of its mass")
    logger.debug("Repaired %s: clipped %d eigenvalues, removed mass %.3e",
                 label, int(np.sum(eigenvalues < epsilon)), removed)
    return repaired, removed


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root R of a PSD matrix, so that ``matrix = R.T @ R``."""
    sym = 0.5 * (matrix + matrix.T)
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * root) @ eigenvectors.T


def gram_matrix(field: GaussianRandomField, points) -> np.ndarray:
    z = field.points(points)
    if z.shape[0] == 0:
        raise ValueError("gram_matrix needs at least one point")
    repaired, _ = repair_psd(field.cov_fn(z, z), label="Gram matrix")
    return repaired


def sample_paths(field: GaussianRandomField, points, n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Draws ``n_paths`` joint samples at ``points``; returns shape ``(n_paths, n_points)``."""
    z = field.points(points)
    if z.shape[0] == 0:
        raise ValueError("sample_paths needs at least one point")
    raw = field.cov_fn(z, z)
    repair_psd(raw, label="Gram matrix")
    root = psd_sqrt(raw)
    normals = rng.standard_normal((n_paths, z.shape[0]))
    return field.mean_fn(z)[None, :] + normals @ root


def sample_joint(field: GaussianRandomField, points, rng: np.random.Generator) -> np.ndarray:
    return sample_paths(field, points, 1, rng)[0]


def field_band(field: GaussianRandomField, points, width: float = 2.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean and the ``mean -/+ width * sigma`` envelope at ``points``."""
    z = field.points(points)
    mean = field.mean_fn(z)
    sigma = np.sqrt(np.clip(np.array([field.cov_fn(p[None, :], p[None, :])[0, 0] for p in z]), 0.0, None))
    return mean, mean - width * sigma, mean + width * sigma


@dataclass
class SequentialSamplerState:
    """Draws of one field realisation along a path that is only known as it unfolds.

    ``factor`` holds the lower Cholesky factor of the jittered Gram matrix of the
    visited points and ``whitened`` the residuals ``factor^-1 (values - mean)``.
    """
    index_dim: int = 1
    thin_radius: float = 0.0
    visited_points: List[np.ndarray] = dataclass_field(default_factory=list)
    sampled_values: List[float] = dataclass_field(default_factory=list)
    factor: np.ndarray = dataclass_field(default_factory=lambda: np.zeros((0, 0)))
    whitened: np.ndarray = dataclass_field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.sampled_values)

    def _grow(self, size: int) -> None:
        capacity = self.factor.shape[0]
        if size <= capacity:
            return
        new_capacity = max(size, 2 * capacity, 16)
        factor = np.zeros((new_capacity, new_capacity))
        factor[:capacity, :capacity] = self.factor
        whitened = np.zeros(new_capacity)
        whitened[:capacity] = self.whitened
        self.factor, self.whitened = factor, whitened


def new_sampler_state(field: GaussianRandomField, thin_radius: float = 0.0) -> SequentialSamplerState:
    return SequentialSamplerState(index_dim=field.index_dim, thin_radius=thin_radius)


def conditional_sample_next(state: SequentialSamplerState, field: GaussianRandomField, z_new,
                            rng: np.random.Generator) -> float:
    """Samples Psi(z_new) conditioned on every value already drawn into ``state``."""
    z = field.point(z_new)
    n = len(state)
    if n:
        visited = np.asarray(state.visited_points)
        distances = np.sqrt(np.sum((visited - z[None, :]) ** 2, axis=1))
        nearest = int(np.argmin(distances))
        if distances[nearest] <= state.thin_radius:
            return state.sampled_values[nearest]

    z_row = z[None, :]
    prior_mean = float(field.mean_fn(z_row)[0])
    prior_variance = float(field.cov_fn(z_row, z_row)[0, 0])
    if prior_variance <= 0.0:
        # uncorrelated with everything and deterministic
        return prior_mean
    jitter = CONDITIONING_JITTER * prior_variance
    total = prior_variance + jitter

    if n:
        cross = field.cov_fn(visited, z_row)[:, 0]
        projection = solve_triangular(state.factor[:n, :n], cross, lower=True, check_finite=False)
        mean = prior_mean + float(projection @ state.whitened[:n])
        variance = total - float(projection @ projection)
    else:
        projection = np.zeros(0)
        mean = prior_mean
        variance = total

    if variance < -CONDITIONAL_VARIANCE_TOLERANCE * total:
        raise NumericalError(
            f"conditional variance {variance:.3e} is negative at index point {z.tolist()}; "
            "the kernel is ill-conditioned on the visited points")
    diagonal = np.sqrt(max(variance, jitter))
    value = mean + np.sqrt(max(variance, 0.0)) * float(rng.standard_normal())

    state._grow(n + 1)
    state.factor[n, :n] = projection
    state.factor[n, n] = diagonal
    state.whitened[n] = (value - mean) / diagonal
    state.visited_points.append(z)
    state.sampled_values.append(value)
    return value


def sample_sequential(field: GaussianRandomField, points: Sequence, rng: np.random.Generator,
                      thin_radius: float = 0.0) -> np.ndarray:
    """Convenience wrapper drawing the points one after another."""
    state = new_sampler_state(field, thin_radius=thin_radius)
    z = field.points(points)
    return np.array([conditional_sample_next(state, field, p, rng) for p in z])
