import unittest

import numpy as np

from block_assembly import FeedbackPolicy
from convex_subproblem import ChanceConstraintSpec
from dynamics_models import DoubleIntegrator
from errors import ModelDomainError, NumericalError
from grf_kernels import KernelSpec, field_from_spec
from monte_carlo import (McConfig, TrialContext, aggregate, run_trials, simulate_trial, summarize, trial_rng,
                         wilson_interval)
from nominal_propagation import TimePartition, propagate_nominal

N_STEPS = 4
PARTITION = TimePartition(knots=(0.0, 1.0, 2.0, 3.0, 4.0), substeps_per_segment=8)
QUIET_FIELD = field_from_spec(KernelSpec(kind="constant", parameters={"variance": 0.0}), mean=0.3)
PERIODIC_FIELD = field_from_spec(KernelSpec(kind="locally_periodic", parameters={
    "variance": 2e-6, "period": 0.35, "periodic_length": 0.8, "length_scale": 1.0}))


class WalledIntegrator(DoubleIntegrator):
    def check_domain(self, x, t=None):
        super().check_domain(x, t)
        if x[0] > 0.5:
            raise ModelDomainError("hit the wall", time=t)


def open_loop_policy(feedforward, gains=None):
    feedforward = np.asarray(feedforward, dtype=float).reshape(N_STEPS, 1)
    return FeedbackPolicy(
        knots=PARTITION.knots,
        gains=np.zeros((N_STEPS, N_STEPS, 1, 2)) if gains is None else gains,
        feedforward=feedforward,
        reference_means=np.zeros((N_STEPS + 1, 2)),
        nominal_controls=feedforward.copy(),
    )


def context(policy, field=QUIET_FIELD, model=None, p0=None, record_dense=False, **mc):
    return TrialContext(
        policy=policy,
        model=model or DoubleIntegrator(),
        field=field,
        partition=PARTITION,
        x0_mean=np.array([0.1, 0.1]),
        p0=np.zeros((2, 2)) if p0 is None else p0,
        mc=McConfig(**{"trials": 20, "workers": 1, **mc}),
        record_dense=record_dense,
    )


class StatisticsTestCase(unittest.TestCase):
    def test_wilson_interval(self):
        low, high = wilson_interval(0, 100)
        self.assertEqual(0.0, low)
        self.assertAlmostEqual(0.0370, high, places=4)
        low, high = wilson_interval(100, 100)
        self.assertEqual(1.0, high)
        self.assertAlmostEqual(0.9630, low, places=4)
        low, high = wilson_interval(50, 100)
        self.assertAlmostEqual(1.0 - high, low, places=12)
        self.assertLess(low, 0.5)
        self.assertEqual((0.0, 1.0), wilson_interval(0, 0))
        low, high = wilson_interval(7, 5000)
        self.assertLess(low, 7 / 5000)
        self.assertGreater(high, 7 / 5000)

    def test_summarize(self):
        summary = summarize(np.arange(101, dtype=float))
        self.assertEqual({"50": 50.0, "90": 90.0, "99": 99.0}, summary.percentiles)
        self.assertAlmostEqual(50.0, summary.mean)
        self.assertAlmostEqual(np.std(np.arange(101), ddof=1), summary.std)
        self.assertEqual(0.0, summarize(np.array([3.0])).std)
        self.assertAlmostEqual(99.01, summarize(np.arange(1.0, 101.0)).percentiles["99"], places=10)
        self.assertEqual("linear", summary.method)

    def test_trial_streams_are_reproducible_and_distinct(self):
        np.testing.assert_array_equal(trial_rng(4, 2).standard_normal(5), trial_rng(4, 2).standard_normal(5))
        self.assertFalse(np.allclose(trial_rng(4, 2).standard_normal(5), trial_rng(4, 3).standard_normal(5)))
        self.assertFalse(np.allclose(trial_rng(4, 2).standard_normal(5), trial_rng(5, 2).standard_normal(5)))


class SimulateTrialTestCase(unittest.TestCase):
    def test_deterministic_trial_matches_nominal_propagation(self):
        controls = np.array([0.2, -0.1, 0.0, 0.3])
        result = simulate_trial(context(open_loop_policy(controls)), trial_rng(0, 0))
        nominal = propagate_nominal(DoubleIntegrator(), QUIET_FIELD, [0.1, 0.1], controls[:, None], PARTITION)
        self.assertFalse(result.failed)
        np.testing.assert_allclose(nominal.knot_states, result.knot_states, atol=1e-12)
        np.testing.assert_array_equal(controls[:, None], result.commanded_controls)
        np.testing.assert_allclose(0.3, result.knot_field_values)
        self.assertIsNone(result.terminal_value)
        self.assertIsNone(result.times)

    def test_feedback_uses_state_history(self):
        gains = np.zeros((N_STEPS, N_STEPS, 1, 2))
        gains[2, 0] = [[-1.0, 0.0]]
        policy = open_loop_policy(np.zeros(N_STEPS), gains=gains)
        result = simulate_trial(context(policy), trial_rng(0, 0))
        self.assertAlmostEqual(-0.1, result.commanded_controls[2, 0], places=12)

    def test_saturation_applies_to_dynamics_not_to_record(self):
        policy = open_loop_policy(np.full(N_STEPS, 5.0))
        result = simulate_trial(context(policy, control_bounds=(-1.0, 1.0)), trial_rng(0, 0))
        np.testing.assert_array_equal(5.0, result.commanded_controls)
        # velocity gains (u + psi) per unit segment
        self.assertAlmostEqual(0.1 + 4 * 1.3, result.knot_states[-1, 1], places=10)

    def test_dense_record(self):
        result = simulate_trial(context(open_loop_policy(np.zeros(N_STEPS)), record_dense=True), trial_rng(0, 0))
        self.assertEqual((N_STEPS * 8 + 1,), result.times.shape)
        self.assertEqual((N_STEPS * 8 + 1, 2), result.states.shape)
        self.assertTrue(np.all(np.isnan(result.controls[-1])))
        np.testing.assert_allclose(result.knot_states[-1], result.states[-1])

    def test_domain_failure_is_recorded(self):
        policy = open_loop_policy(np.full(N_STEPS, 1.0))
        result = simulate_trial(context(policy, model=WalledIntegrator()), trial_rng(0, 0), index=7)
        self.assertTrue(result.failed)
        self.assertEqual(7, result.index)
        self.assertIn("hit the wall", result.failure)
        self.assertIsNone(result.knot_states)

    def test_field_realisation_is_consistent_within_a_trial(self):
        ctx = context(open_loop_policy(np.zeros(N_STEPS)), field=PERIODIC_FIELD, record_dense=True)
        result = simulate_trial(ctx, trial_rng(3, 0))
        again = simulate_trial(ctx, trial_rng(3, 0))
        np.testing.assert_array_equal(result.knot_states, again.knot_states)
        # knot draws coincide with the dense draws at the same points
        np.testing.assert_allclose(result.knot_field_values[:-1], result.field_values[:-1:8], atol=1e-6)
        other = simulate_trial(ctx, trial_rng(3, 1))
        self.assertFalse(np.allclose(result.knot_field_values, other.knot_field_values))


class RunTrialsTestCase(unittest.TestCase):
    def test_results_are_ordered_and_reproducible(self):
        ctx = context(open_loop_policy(np.zeros(N_STEPS)), field=PERIODIC_FIELD, p0=1e-4 * np.eye(2), trials=6)
        first, second = run_trials(ctx), run_trials(ctx)
        self.assertEqual(list(range(6)), [r.index for r in first])
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.knot_states, b.knot_states)

    def test_worker_processes_give_the_same_trials(self):
        serial = run_trials(context(open_loop_policy(np.zeros(N_STEPS)), field=PERIODIC_FIELD, trials=6))
        parallel = run_trials(context(open_loop_policy(np.zeros(N_STEPS)), field=PERIODIC_FIELD, trials=6, workers=2))
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.knot_states, b.knot_states)

    def test_open_loop_covariance_matches_linear_prediction(self):
        p0 = np.diag([2.777777777777778e-4, 1.111111111111111e-5])
        results = run_trials(context(open_loop_policy(np.zeros(N_STEPS)), p0=p0, trials=4000, seed=1))
        report = aggregate(results, open_loop_policy(np.zeros(N_STEPS)), DoubleIntegrator(), QUIET_FIELD)
        transition = np.array([[1.0, 4.0], [0.0, 1.0]])
        expected = transition @ p0 @ transition.T
        np.testing.assert_allclose(expected, report.state_cov[-1], rtol=0.1)


class AggregateTestCase(unittest.TestCase):
    def setUp(self):
        self.policy = open_loop_policy(np.array([0.5, 0.0, -0.5, 0.0]))
        self.results = run_trials(context(self.policy, p0=1e-2 * np.eye(2), trials=200, seed=2))

    def test_report_shapes_and_predictions(self):
        report = aggregate(self.results, self.policy, DoubleIntegrator(), QUIET_FIELD, seed=2)
        self.assertEqual(200, report.successful)
        self.assertEqual(0, report.failed)
        self.assertEqual(2, report.seed)
        self.assertEqual(["r", "v"], report.state_names)
        self.assertEqual((N_STEPS + 1, 2), np.shape(report.state_mean))
        self.assertEqual((N_STEPS + 1, 2, 2), np.shape(report.state_cov))
        self.assertEqual((N_STEPS, 1), np.shape(report.control_mean))
        self.assertEqual([[0.5], [0.0], [-0.5], [0.0]], report.predicted_control_mean)
        self.assertIsNone(report.predicted_state_cov)
        self.assertIsNone(report.terminal_summary)
        self.assertIsNone(report.dynamic_pressure)
        self.assertEqual([0.0] * (N_STEPS + 1), report.field_envelope.predicted_std)

    def test_violations_are_counted_on_states_and_commanded_controls(self):
        chance = [
            ChanceConstraintSpec(target="state", step=N_STEPS, direction=(1.0, 0.0), bound=-10.0, probability=0.01),
            ChanceConstraintSpec(target="state", step=N_STEPS, direction=(1.0, 0.0), bound=10.0, probability=0.01),
            ChanceConstraintSpec(target="control", step=0, direction=(1.0,), bound=0.4, probability=0.01),
        ]
        report = aggregate(self.results, self.policy, DoubleIntegrator(), QUIET_FIELD, chance=chance)
        self.assertEqual([200, 0, 200], [v.violations for v in report.violations])
        self.assertEqual(1.0, report.violations[0].rate)
        self.assertEqual(0.0, report.violations[1].ci_low)
        self.assertEqual("chance_control[k=0]", report.violations[2].name)

    def test_failed_trials(self):
        policy = open_loop_policy(np.full(N_STEPS, 1.0))
        results = run_trials(context(policy, model=WalledIntegrator(), trials=3))
        with self.assertRaises(NumericalError):
            aggregate(results, policy, WalledIntegrator(), QUIET_FIELD)
        mixed = self.results[:5] + results
        report = aggregate(mixed, self.policy, DoubleIntegrator(), QUIET_FIELD)
        self.assertEqual((8, 5, 3), (report.trials, report.successful, report.failed))
        self.assertEqual(3, len(report.failures))


if __name__ == "__main__":
    unittest.main()
