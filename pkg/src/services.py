# services.py
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.stats import norm

from block_assembly import FeedbackPolicy
from convex_subproblem import format_program
from dynamics_models import AerocaptureModel, DoubleIntegrator, SystemModel
from enums import ModelKind
from errors import ConfigError
from grf_kernels import GaussianRandomField, field_band, field_from_spec, sample_paths
from models import ScenarioConfig
from monte_carlo import McReport, TrialContext, aggregate, run_trials
from repository import FileArtifactRepository
from scp_driver import ScpResult, SteeringProblem, run_scp
from solvers import SolverAdapter

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 40
ENVELOPE_SIGMAS = 3.0


def build_model(scenario: ScenarioConfig) -> SystemModel:
    match scenario.model.kind:
        case ModelKind.double_integrator:
            return DoubleIntegrator()
        case ModelKind.aerocapture:
            params = scenario.model.aerocapture
            return AerocaptureModel(params, length_unit=scenario.model.length_unit,
                                    density=params.density.build(scenario.source_dir))
    raise ConfigError(f"Unsupported model kind: {scenario.model.kind}")


def build_field(scenario: ScenarioConfig, model: SystemModel) -> GaussianRandomField:
    try:
        return field_from_spec(scenario.field.kernel, mean=scenario.field.mean, index_dim=model.index_dim)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_problem(scenario: ScenarioConfig) -> SteeringProblem:
    model = build_model(scenario)
    return SteeringProblem(
        model=model,
        field=build_field(scenario, model),
        partition=scenario.partition,
        x0_mean=np.asarray(scenario.initial.mean, dtype=float),
        p0=np.asarray(scenario.initial.covariance, dtype=float),
        objective=scenario.objective,
        chance=scenario.chance_specs(),
        terminal=scenario.terminal_constraint(),
    )


def _sigmas(covariances) -> np.ndarray:
    return np.sqrt(np.clip(np.diagonal(np.asarray(covariances, dtype=float), axis1=-2, axis2=-1), 0.0, None))


class SteeringService:
    def __init__(self, adapter: SolverAdapter, repository: FileArtifactRepository):
        self.adapter = adapter
        self.repository = repository

    def solve(self, scenario: ScenarioConfig, iterations: Optional[int] = None,
              dump_program: bool = False) -> ScpResult:
        problem = build_problem(scenario)
        scp = scenario.scp if iterations is None else scenario.scp.model_copy(update={"max_iterations": iterations})
        if scp.max_iterations < 1:
            raise ConfigError("the number of iterations must be at least 1")

        def on_program(iteration: int, program) -> None:
            if dump_program:
                self.repository.save_text(f"program_iter{iteration}.txt", format_program(program))

        logger.info("Solving scenario %s with %s (up to %d iterations)", scenario.name, self.adapter.name,
                    scp.max_iterations)
        result = run_scp(problem, scp, self.adapter, on_program=on_program)
        for k, policy in enumerate(result.history):
            self.repository.save_policy(policy, f"policy_iter{k}.json")
        self.repository.save_policy(result.policy)
        self.repository.save_iterations(result.records)
        logger.info("SCP finished: %s after %d iterations", result.status.value, len(result.records))
        return result

    def simulate(self, scenario: ScenarioConfig, policy: FeedbackPolicy, trials: Optional[int] = None,
                 seed: Optional[int] = None, open_loop: bool = False, trajectories: bool = False,
                 report_name: Optional[str] = None) -> McReport:
        if len(policy.knots) != len(scenario.partition.knots) or not np.allclose(policy.knots, scenario.partition.knots):
            raise ConfigError(f"policy knots {list(policy.knots)} do not match the scenario partition "
                              f"{list(scenario.partition.knots)}")
        problem = build_problem(scenario)
        if policy.state_dim != problem.model.state_dim or policy.control_dim != problem.model.control_dim:
            raise ConfigError("policy dimensions do not match the scenario model")
        updates = {k: v for k, v in (("trials", trials), ("seed", seed)) if v is not None}
        mc = scenario.monte_carlo.model_copy(update=updates)
        if open_loop:
            policy = policy.open_loop()

        context = TrialContext(policy=policy, model=problem.model, field=problem.field, partition=problem.partition,
                               x0_mean=problem.x0_mean, p0=problem.p0, mc=mc, record_dense=trajectories)
        logger.info("Running %d trials (seed %d, %s)", mc.trials, mc.seed, "open loop" if open_loop else "closed loop")
        results = run_trials(context)
        report = aggregate(results, policy, problem.model, problem.field, problem.chance, seed=mc.seed)
        self.repository.save_report(report, report_name or ("report_open_loop.json" if open_loop else "report.json"))
        if trajectories:
            self.repository.save_table("trajectories.csv", self._trajectory_header(problem.model),
                                       self._trajectory_rows(results))
        return report

    @staticmethod
    def _trajectory_header(model: SystemModel) -> List[str]:
        controls = [f"u{i}" for i in range(model.control_dim)] if model.control_dim > 1 else ["u"]
        return ["trial", "t", *model.state_names, *controls, "psi"]

    @staticmethod
    def _trajectory_rows(results):
        for result in results:
            if result.failed:
                continue
            for t, x, u, psi in zip(result.times, result.states, result.controls, result.field_values):
                yield [result.index, t, *x, *u, psi]

    def report(self, report: McReport, prefix: str = "") -> List[Path]:
        """Plot-ready tables: state envelopes, control fan, terminal histogram, field envelope."""
        written = []
        knots = report.knots
        rows = []
        for source, means, covariances in (("monte_carlo", report.state_mean, report.state_cov),
                                           ("linear_covariance", report.predicted_state_mean, report.predicted_state_cov)):
            if covariances is None:
                continue
            sigmas = _sigmas(covariances)
            for k, (mean, sigma) in enumerate(zip(np.asarray(means), sigmas)):
                for i, name in enumerate(report.state_names):
                    rows.append([source, k, knots[k], name, mean[i], sigma[i],
                                 mean[i] - ENVELOPE_SIGMAS * sigma[i], mean[i] + ENVELOPE_SIGMAS * sigma[i]])
        written.append(self.repository.save_table(
            f"{prefix}state_envelopes.csv",
            ["source", "k", "t", "state", "mean", "sigma", "lower_3sigma", "upper_3sigma"], rows))

        rows = []
        for source, means, covariances in (("monte_carlo", report.control_mean, report.control_cov),
                                           ("linear_covariance", report.predicted_control_mean,
                                            report.predicted_control_cov)):
            if covariances is None:
                continue
            sigmas = _sigmas(covariances)
            for k, (mean, sigma) in enumerate(zip(np.asarray(means), sigmas)):
                rows.append([source, k, knots[k], knots[k + 1], mean[0], sigma[0],
                             mean[0] - ENVELOPE_SIGMAS * sigma[0], mean[0] + ENVELOPE_SIGMAS * sigma[0]])
        written.append(self.repository.save_table(
            f"{prefix}control_fan.csv",
            ["source", "k", "t_start", "t_end", "mean", "sigma", "lower_3sigma", "upper_3sigma"], rows))

        if report.violations:
            written.append(self.repository.save_table(
                f"{prefix}violations.csv", ["name", "target", "step", "allowed", "violations", "rate", "ci_low", "ci_high"],
                ([v.name, v.target.value, v.step, v.allowed, v.violations, v.rate, v.ci_low, v.ci_high]
                 for v in report.violations)))

        if report.terminal_samples:
            samples = np.asarray(report.terminal_samples)
            counts, edges = np.histogram(samples, bins=HISTOGRAM_BINS)
            centres = 0.5 * (edges[:-1] + edges[1:])
            predicted = report.predicted_terminal
            density = (norm.pdf(centres, predicted.mean, predicted.std) if predicted is not None and predicted.std > 0
                       else np.full(centres.shape, np.nan))
            written.append(self.repository.save_table(
                f"{prefix}terminal_histogram.csv", ["bin_low", "bin_high", "count", "predicted_density"],
                zip(edges[:-1], edges[1:], counts, density)))

        if report.field_envelope is not None:
            envelope = report.field_envelope
            written.append(self.repository.save_table(
                f"{prefix}field_envelope.csv", ["k", "t", "mc_mean", "mc_std", "predicted_std"],
                ([k, t, m, s, p] for k, (t, m, s, p) in enumerate(
                    zip(envelope.times, envelope.mc_mean, envelope.mc_std, envelope.predicted_std)))))

        if report.dynamic_pressure is not None:
            pressure = report.dynamic_pressure
            written.append(self.repository.save_table(
                f"{prefix}dynamic_pressure.csv", ["k", "t", "nominal", "mc_mean", "mc_std"],
                ([k, t, q, m, s] for k, (t, q, m, s) in enumerate(
                    zip(pressure.times, pressure.nominal, pressure.mc_mean, pressure.mc_std)))))
        return written

    def sample_field(self, scenario: ScenarioConfig, lower: float, upper: float, n_points: int = 200,
                     n_paths: int = 5, seed: int = 0) -> Path:
        """Sample paths of the scenario's field on a 1-D grid with its 2-sigma band."""
        model = build_model(scenario)
        field = build_field(scenario, model)
        if field.index_dim != 1:
            raise ConfigError("field sampling is only available for one-dimensional index spaces")
        if not upper > lower or n_points < 1 or n_paths < 0:
            raise ConfigError("sample-field needs upper > lower, at least one point and a nonnegative path count")
        grid = np.linspace(lower, upper, n_points)
        mean, low, high = field_band(field, grid, width=2.0)
        paths = sample_paths(field, grid, n_paths, np.random.default_rng(seed)) if n_paths else np.zeros((0, n_points))
        header = ["z", "mean", "lower_2sigma", "upper_2sigma", *[f"path_{i}" for i in range(n_paths)]]
        rows = ([z, m, lo, hi, *paths[:, j]] for j, (z, m, lo, hi) in enumerate(zip(grid, mean, low, high)))
        return self.repository.save_table("field_samples.csv", header, rows)
