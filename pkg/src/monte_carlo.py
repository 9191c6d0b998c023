"""Closed-loop Monte Carlo validation of feedback policies.

Every trial draws its own field realisation lazily: the field value at each RK4
stage is sampled conditionally on all values already drawn in that trial.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import ndtri

import config
from block_assembly import FeedbackPolicy
from convex_subproblem import ChanceConstraintSpec
from dynamics_models import SystemModel
from enums import ConstraintTarget
from errors import ModelDomainError, NumericalError
from grf_kernels import GaussianRandomField, conditional_sample_next, eval_cov, new_sampler_state, psd_sqrt
from nominal_propagation import TimePartition, rk4_step

logger = logging.getLogger(__name__)

PERCENTILES = (50.0, 90.0, 99.0)
# numpy percentile method for empirical samples
PERCENTILE_METHOD = "linear"
CONFIDENCE_LEVEL = 0.95
THIN_FRACTION = 1e-3


class McConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trials: int = Field(5000, ge=1)
    seed: int = Field(0, ge=0, description="Master seed; trial i uses the stream spawned with key (i,)")
    substeps_per_segment: Optional[int] = Field(None, ge=1, description="RK4 steps per segment, partition's when omitted")
    control_bounds: Optional[Tuple[float, float]] = Field(None, description="Saturation applied before the dynamics")
    thin_fraction: float = Field(THIN_FRACTION, ge=0.0, description="Conditioning-set thinning radius / kernel length scale")
    workers: int = Field(default_factory=lambda: config.MC_WORKERS, ge=1)


@dataclass(frozen=True)
class TrialResult:
    index: int
    knot_states: Optional[np.ndarray] = None
    commanded_controls: Optional[np.ndarray] = None
    knot_field_values: Optional[np.ndarray] = None
    terminal_value: Optional[float] = None
    times: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None
    field_values: Optional[np.ndarray] = None
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass(frozen=True)
class TrialContext:
    policy: FeedbackPolicy
    model: SystemModel
    field: GaussianRandomField
    partition: TimePartition
    x0_mean: np.ndarray
    p0: np.ndarray
    mc: McConfig
    record_dense: bool = False


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def simulate_trial(context: TrialContext, rng: np.random.Generator, index: int = 0) -> TrialResult:
    """One closed-loop rollout of the true nonlinear dynamics through a fresh field realisation."""
    policy, model, field, partition, mc = context.policy, context.model, context.field, context.partition, context.mc
    x = context.x0_mean + psd_sqrt(context.p0) @ rng.standard_normal(model.state_dim)
    sampler = new_sampler_state(field, thin_radius=mc.thin_fraction * field.length_scale)
    substeps = mc.substeps_per_segment or partition.substeps_per_segment

    def psi_at(state: np.ndarray) -> float:
        return conditional_sample_next(sampler, field, model.index_map(state), rng)

    knot_states, commanded, knot_psi = [x], [], []
    times, states, controls, psis = [], [], [], []
    try:
        model.check_domain(x, partition.knots[0])
        for k in range(partition.n_steps):
            u_cmd = policy.control(k, knot_states)
            u = np.clip(u_cmd, *mc.control_bounds) if mc.control_bounds is not None else u_cmd
            commanded.append(u_cmd)

            def rate(t: float, y: np.ndarray) -> np.ndarray:
                return model.dynamics(y, u, psi_at(y))

            grid = np.linspace(*partition.segment(k), substeps + 1)
            for j in range(substeps):
                if j == 0:
                    knot_psi.append(psi_at(x))
                if context.record_dense:
                    times.append(grid[j])
                    states.append(x)
                    controls.append(u)
                    psis.append(psi_at(x))
                x = rk4_step(rate, grid[j], x, grid[j + 1] - grid[j])
                model.check_domain(x, grid[j + 1])
            knot_states.append(x)
        knot_psi.append(psi_at(x))
        if context.record_dense:
            times.append(partition.final_time)
            states.append(x)
            controls.append(np.full(model.control_dim, np.nan))
            psis.append(knot_psi[-1])
    except (ModelDomainError, NumericalError) as e:
        return TrialResult(index=index, failure=str(e))

    return TrialResult(
        index=index,
        knot_states=np.array(knot_states),
        commanded_controls=np.array(commanded),
        knot_field_values=np.array(knot_psi),
        terminal_value=model.terminal_functional(x),
        times=np.array(times) if context.record_dense else None,
        states=np.array(states) if context.record_dense else None,
        controls=np.array(controls) if context.record_dense else None,
        field_values=np.array(psis) if context.record_dense else None,
    )


def _run_trial(context: TrialContext, index: int) -> TrialResult:
    return simulate_trial(context, trial_rng(context.mc.seed, index), index)


def run_trials(context: TrialContext) -> List[TrialResult]:
    """Runs every trial, in worker processes when ``mc.workers > 1``; results are ordered by trial index."""
    indices = range(context.mc.trials)
    if context.mc.workers > 1 and context.mc.trials > 1:
        chunk = max(1, context.mc.trials // (4 * context.mc.workers))
        with ProcessPoolExecutor(max_workers=context.mc.workers) as executor:
            results = list(executor.map(partial(_run_trial, context), indices, chunksize=chunk))
    else:
        results = []
        for i in indices:
            results.append(_run_trial(context, i))
            if (i + 1) % 1000 == 0:
                logger.info("Simulated %d/%d trials", i + 1, context.mc.trials)
    failed = [r for r in results if r.failed]
    if failed:
        logger.warning("%d of %d trials failed; first failure: %s", len(failed), len(results), failed[0].failure)
    return results


# Report

class ViolationStat(BaseModel):
    name: str
    target: ConstraintTarget
    step: int
    allowed: float
    violations: int
    rate: float = Field(..., ge=0.0, le=1.0)
    ci_low: float
    ci_high: float


class DistributionSummary(BaseModel):
    mean: float
    std: float
    percentiles: Dict[str, float] = Field(..., description="Keyed by percentile, e.g. '99'")
    method: str = Field(PERCENTILE_METHOD, description="numpy percentile method, or 'normal'")


class FieldEnvelope(BaseModel):
    times: List[float]
    mc_mean: List[float]
    mc_std: List[float]
    predicted_std: List[float]


class DynamicPressureStats(BaseModel):
    times: List[float]
    nominal: List[float]
    mc_mean: List[float]
    mc_std: List[float]


class McReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trials: int
    successful: int
    failed: int
    failures: List[str] = Field(default_factory=list, description="First failure messages")
    seed: int
    knots: List[float]
    state_names: List[str]
    state_mean: List[List[float]]
    state_cov: List[List[List[float]]]
    control_mean: List[List[float]]
    control_cov: List[List[List[float]]]
    predicted_state_mean: List[List[float]]
    predicted_state_cov: Optional[List[List[List[float]]]] = None
    predicted_control_mean: List[List[float]]
    predicted_control_cov: Optional[List[List[List[float]]]] = None
    violations: List[ViolationStat] = Field(default_factory=list)
    terminal_samples: Optional[List[float]] = None
    terminal_summary: Optional[DistributionSummary] = None
    predicted_terminal: Optional[DistributionSummary] = None
    field_envelope: Optional[FieldEnvelope] = None
    dynamic_pressure: Optional[DynamicPressureStats] = None


def wilson_interval(successes: int, trials: int, level: float = CONFIDENCE_LEVEL) -> Tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    z = float(ndtri(0.5 + 0.5 * level))
    p = successes / trials
    denominator = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denominator
    half = z * np.sqrt(p * (1.0 - p) / trials + z * z / (4 * trials * trials)) / denominator
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == trials else min(1.0, centre + half)
    return low, high


def summarize(samples: np.ndarray) -> DistributionSummary:
    values = np.percentile(samples, PERCENTILES, method=PERCENTILE_METHOD)
    return DistributionSummary(
        mean=float(np.mean(samples)),
        std=float(np.std(samples, ddof=1)) if samples.size > 1 else 0.0,
        percentiles={f"{p:g}": float(v) for p, v in zip(PERCENTILES, values)},
    )


def predicted_terminal_distribution(policy: FeedbackPolicy, model: SystemModel) -> Optional[DistributionSummary]:
    """Normal approximation of the terminal functional from the linear-covariance prediction."""
    if not hasattr(model, "delta_v") or policy.predicted_state_covariances is None:
        return None
    try:
        value, gradient = model.delta_v(policy.reference_means[-1])
    except (NumericalError, ValueError) as e:
        logger.warning("No predicted terminal distribution: %s", e)
        return None
    std = float(np.sqrt(max(gradient @ policy.predicted_state_covariances[-1] @ gradient, 0.0)))
    return DistributionSummary(
        mean=value,
        std=std,
        percentiles={f"{p:g}": value + std * float(ndtri(p / 100.0)) for p in PERCENTILES},
        method="normal",
    )


def _sample_covariances(samples: np.ndarray) -> np.ndarray:
    """``samples`` has shape (trials, steps, dim); returns (steps, dim, dim)."""
    centred = samples - samples.mean(axis=0)
    denominator = max(samples.shape[0] - 1, 1)
    return np.einsum("tki,tkj->kij", centred, centred) / denominator


def aggregate(results: Sequence[TrialResult], policy: FeedbackPolicy, model: SystemModel, field: GaussianRandomField,
              chance: Sequence[ChanceConstraintSpec] = (), seed: int = 0) -> McReport:
    ok = [r for r in results if not r.failed]
    if not ok:
        raise NumericalError(f"all {len(results)} Monte Carlo trials failed; first failure: {results[0].failure}")
    states = np.array([r.knot_states for r in ok])
    controls = np.array([r.commanded_controls for r in ok])
    field_values = np.array([r.knot_field_values for r in ok])

    violations = []
    for spec in chance:
        direction = np.asarray(spec.direction, dtype=float)
        values = (states[:, spec.step] if spec.target == ConstraintTarget.state else controls[:, spec.step]) @ direction
        count = int(np.sum(values > spec.bound))
        low, high = wilson_interval(count, len(ok))
        violations.append(ViolationStat(name=spec.name, target=spec.target, step=spec.step, allowed=spec.probability,
                                        violations=count, rate=count / len(ok), ci_low=low, ci_high=high))

    terminal_samples = None
    terminal_summary = None
    values = np.array([r.terminal_value for r in ok if r.terminal_value is not None], dtype=float)
    values = values[np.isfinite(values)]
    if values.size:
        terminal_samples = values.tolist()
        terminal_summary = summarize(values)

    knots = list(policy.knots)
    nominal_points = np.vstack([model.index_map(x) for x in policy.reference_means])
    envelope = FieldEnvelope(
        times=knots,
        mc_mean=field_values.mean(axis=0).tolist(),
        mc_std=field_values.std(axis=0, ddof=1 if len(ok) > 1 else 0).tolist(),
        predicted_std=[float(np.sqrt(max(eval_cov(field, z, z), 0.0))) for z in nominal_points],
    )

    pressure = None
    if hasattr(model, "dynamic_pressure"):
        q = np.array([[model.dynamic_pressure(x) for x in trial] for trial in states])
        pressure = DynamicPressureStats(
            times=knots,
            nominal=[model.dynamic_pressure(x) for x in policy.reference_means],
            mc_mean=q.mean(axis=0).tolist(),
            mc_std=q.std(axis=0, ddof=1 if len(ok) > 1 else 0).tolist(),
        )

    failures = [r.failure for r in results if r.failed]
    return McReport(
        trials=len(results),
        successful=len(ok),
        failed=len(failures),
        failures=failures[:10],
        seed=seed,
        knots=knots,
        state_names=list(model.state_names),
        state_mean=states.mean(axis=0).tolist(),
        state_cov=_sample_covariances(states).tolist(),
        control_mean=controls.mean(axis=0).tolist(),
        control_cov=_sample_covariances(controls).tolist(),
        predicted_state_mean=policy.reference_means.tolist(),
        predicted_state_cov=None if policy.predicted_state_covariances is None
        else policy.predicted_state_covariances.tolist(),
        predicted_control_mean=policy.feedforward.tolist(),
        predicted_control_cov=None if policy.predicted_control_covariances is None
        else policy.predicted_control_covariances.tolist(),
        violations=violations,
        terminal_samples=terminal_samples,
        terminal_summary=terminal_summary,
        predicted_terminal=predicted_terminal_distribution(policy, model),
        field_envelope=envelope,
        dynamic_pressure=pressure,
    )
