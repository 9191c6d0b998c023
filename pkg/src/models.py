import json
import sys
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from block_assembly import FeedbackPolicy
from convex_subproblem import ChanceConstraintSpec, TerminalConstraint
from dynamics_models import AerocaptureParams
from enums import ConstraintTarget, ModelKind
from errors import ArtifactIOError, ConfigError
from grf_kernels import KernelSpec
from monte_carlo import McConfig
from nominal_propagation import TimePartition
from scp_driver import ObjectiveSettings, ScpConfig

SCHEMA_VERSION = 1
STATE_DIMS = {ModelKind.double_integrator: 2, ModelKind.aerocapture: 3}
CONTROL_DIMS = {ModelKind.double_integrator: 1, ModelKind.aerocapture: 1}


def _is_psd(matrix: np.ndarray, strict: bool = False) -> bool:
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-14):
        return False
    eigenvalues = np.linalg.eigvalsh(matrix)
    floor = 1e-12 * max(abs(eigenvalues[-1]), 1e-300)
    return eigenvalues[0] > 0.0 if strict else eigenvalues[0] >= -floor


class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ModelKind = Field(..., description="System driven by the random field", title="Model",
                            examples=["double_integrator", "aerocapture"])
    length_unit: float = Field(1000.0, gt=0.0, description="Metres per model length unit (aerocapture)")
    aerocapture: Optional[AerocaptureParams] = Field(None, description="Vehicle, planet and atmosphere")

    @model_validator(mode="after")
    def check_params(self) -> "ModelSection":
        if self.kind == ModelKind.aerocapture and self.aerocapture is None:
            self.aerocapture = AerocaptureParams()
        return self


class FieldSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kernel: KernelSpec
    mean: float = Field(0.0, description="Constant mean of the field")


class InitialSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mean: List[float] = Field(..., description="Initial state mean x-bar_0")
    covariance: List[List[float]] = Field(..., description="Initial state covariance P_0")


class ChanceConstraintGroup(BaseModel):
    """One half-plane applied at several knots."""
    model_config = ConfigDict(extra="forbid")

    target: ConstraintTarget
    steps: Optional[List[int]] = Field(None, description="Knots to constrain; every admissible knot when omitted")
    direction: List[float]
    bound: float
    probability: float = Field(..., gt=0.0, lt=0.5, description="Allowed violation probability per knot")


class TerminalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mean: Optional[List[float]] = Field(None, description="Required final mean x-bar_f")
    covariance: Optional[List[List[float]]] = Field(None, description="Upper bound P_f on the final covariance")


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Optional[str] = Field(None, description="Artifact directory; GRF_STEER_OUTPUT_DIR when omitted")


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = Field(..., description="Scenario file format version")
    name: str = Field(..., title="Scenario Name", examples=["double-integrator", "aerocapture"])
    description: str = ""
    model: ModelSection
    field: FieldSection
    partition: TimePartition
    initial: InitialSection
    chance: List[ChanceConstraintGroup] = Field(default_factory=list)
    terminal: Optional[TerminalSection] = None
    objective: ObjectiveSettings = Field(default_factory=ObjectiveSettings)
    scp: ScpConfig = Field(default_factory=ScpConfig)
    monte_carlo: McConfig = Field(default_factory=McConfig)
    output: OutputSection = Field(default_factory=OutputSection)

    _source_dir: Optional[Path] = PrivateAttr(None)

    @property
    def state_dim(self) -> int:
        return STATE_DIMS[self.model.kind]

    @property
    def control_dim(self) -> int:
        return CONTROL_DIMS[self.model.kind]

    @property
    def source_dir(self) -> Optional[Path]:
        return self._source_dir

    @model_validator(mode="after")
    def check_dimensions(self) -> "ScenarioConfig":
        n, m, n_steps = self.state_dim, self.control_dim, self.partition.n_steps
        if len(self.initial.mean) != n:
            raise ValueError(f"initial.mean must have {n} entries")
        p0 = np.asarray(self.initial.covariance, dtype=float)
        if p0.shape != (n, n) or not _is_psd(p0):
            raise ValueError(f"initial.covariance must be a symmetric PSD {n}x{n} matrix")
        for group in self.chance:
            size, last = (n, n_steps) if group.target == ConstraintTarget.state else (m, n_steps - 1)
            if len(group.direction) != size:
                raise ValueError(f"{group.target.value} chance-constraint direction must have {size} entries")
            if group.steps is not None and any(k < 0 or k > last for k in group.steps):
                raise ValueError(f"{group.target.value} chance-constraint steps must lie in 0..{last}")
        if self.terminal is not None:
            if self.terminal.mean is not None and len(self.terminal.mean) != n:
                raise ValueError(f"terminal.mean must have {n} entries")
            if self.terminal.covariance is not None:
                pf = np.asarray(self.terminal.covariance, dtype=float)
                if pf.shape != (n, n) or not _is_psd(pf, strict=True):
                    raise ValueError(f"terminal.covariance must be a symmetric positive definite {n}x{n} matrix")
        if self.scp.initial_controls is not None and np.shape(self.scp.initial_controls) != (n_steps, m):
            raise ValueError(f"scp.initial_controls must have {n_steps} rows of {m} values")
        for name, values, size in (("objective.state_weight", self.objective.state_weight, n),
                                   ("objective.control_weight", self.objective.control_weight, m),
                                   ("objective.feedforward_weight", self.objective.feedforward_weight, m),
                                   ("scp.trust.control_weight", self.scp.trust.control_weight, m),
                                   ("scp.trust.state_weight", self.scp.trust.state_weight, n)):
            if values is not None and np.shape(values) != (size, size):
                raise ValueError(f"{name} must be a {size}x{size} matrix")
        return self

    def chance_specs(self) -> List[ChanceConstraintSpec]:
        specs = []
        for group in self.chance:
            last = self.partition.n_steps if group.target == ConstraintTarget.state else self.partition.n_steps - 1
            steps = group.steps if group.steps is not None else range(last + 1)
            specs.extend(ChanceConstraintSpec(target=group.target, step=k, direction=tuple(group.direction),
                                              bound=group.bound, probability=group.probability) for k in steps)
        return specs

    def terminal_constraint(self) -> Optional[TerminalConstraint]:
        if self.terminal is None or (self.terminal.mean is None and self.terminal.covariance is None):
            return None
        return TerminalConstraint(
            mean=None if self.terminal.mean is None else np.asarray(self.terminal.mean, dtype=float),
            covariance=None if self.terminal.covariance is None else np.asarray(self.terminal.covariance, dtype=float),
        )


def parse_scenario(data: dict, source_dir: Optional[Path] = None) -> ScenarioConfig:
    try:
        scenario = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario: {e}") from e
    scenario._source_dir = source_dir
    return scenario


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ArtifactIOError(f"Cannot read scenario {path}: {e}") from e
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Scenario {path} is not valid TOML: {e}") from e
    return parse_scenario(data, source_dir=path.parent)


def dump_scenario(scenario: ScenarioConfig) -> str:
    return json.dumps(scenario.model_dump(mode="json"), indent=2)


# Policy artifact

class GainBlock(BaseModel):
    k: int = Field(..., ge=0, description="Control step")
    l: int = Field(..., ge=0, description="State knot the gain multiplies")
    matrix: List[List[float]] = Field(..., description="K_{k,l}, row-major")


class PolicyDocument(BaseModel):
    """Table-lookup form of a feedback policy."""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    knots: List[float]
    state_dim: int
    control_dim: int
    reference_means: List[List[float]] = Field(..., description="x-bar_k for k = 0..N")
    feedforward: List[List[float]] = Field(..., description="v_k for k = 0..N-1")
    nominal_controls: List[List[float]] = Field(..., description="u^_k the policy was linearised about")
    gains: List[GainBlock]
    predicted_state_covariances: Optional[List[List[List[float]]]] = None
    predicted_control_covariances: Optional[List[List[List[float]]]] = None

    @classmethod
    def from_policy(cls, policy: FeedbackPolicy) -> "PolicyDocument":
        return cls(
            knots=list(policy.knots),
            state_dim=policy.state_dim,
            control_dim=policy.control_dim,
            reference_means=policy.reference_means.tolist(),
            feedforward=policy.feedforward.tolist(),
            nominal_controls=policy.nominal_controls.tolist(),
            gains=[GainBlock(k=k, l=l, matrix=policy.gains[k, l].tolist())
                   for k in range(policy.n_steps) for l in range(k + 1)],
            predicted_state_covariances=None if policy.predicted_state_covariances is None
            else policy.predicted_state_covariances.tolist(),
            predicted_control_covariances=None if policy.predicted_control_covariances is None
            else policy.predicted_control_covariances.tolist(),
        )

    def to_policy(self) -> FeedbackPolicy:
        n_steps = len(self.knots) - 1
        gains = np.zeros((n_steps, n_steps, self.control_dim, self.state_dim))
        for block in self.gains:
            if block.l > block.k or block.k >= n_steps:
                raise ArtifactIOError(f"gain block ({block.k}, {block.l}) is outside the lower-triangular structure")
            gains[block.k, block.l] = block.matrix
        return FeedbackPolicy(
            knots=tuple(self.knots),
            gains=gains,
            feedforward=np.asarray(self.feedforward, dtype=float),
            reference_means=np.asarray(self.reference_means, dtype=float),
            nominal_controls=np.asarray(self.nominal_controls, dtype=float),
            predicted_state_covariances=None if self.predicted_state_covariances is None
            else np.asarray(self.predicted_state_covariances, dtype=float),
            predicted_control_covariances=None if self.predicted_control_covariances is None
            else np.asarray(self.predicted_control_covariances, dtype=float),
        )
