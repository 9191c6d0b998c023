import csv
import tempfile
import unittest
from pathlib import Path

import cvxpy as cp
import numpy as np
import pytest

from dependencies import get_steering_service
from errors import ConfigError
from models import load_scenario
from monte_carlo import wilson_interval
from solvers import CvxpyConicAdapter

SCENARIOS = Path(__file__).resolve().parents[2] / "scenarios"
HAS_CLARABEL = "CLARABEL" in cp.installed_solvers()


def read_table(path: Path):
    with path.open(newline="") as handle:
        return list(csv.DictReader(handle))


@unittest.skipUnless(HAS_CLARABEL, "Clarabel is not installed")
class DoubleIntegratorPipelineTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.tmp = tempfile.TemporaryDirectory()
        cls.out = Path(cls.tmp.name)
        cls.scenario = load_scenario(SCENARIOS / "double_integrator.toml")
        cls.service = get_steering_service(cls.out, adapter=CvxpyConicAdapter("CLARABEL"))
        cls.result = cls.service.solve(cls.scenario, dump_program=True)

    @classmethod
    def tearDownClass(cls) -> None:
        cls.tmp.cleanup()

    def test_solve_writes_policy_and_iterations(self):
        policy = self.result.policy
        self.assertEqual(5, policy.n_steps)
        self.assertEqual((5, 5, 1, 2), policy.gains.shape)
        for name in ("policy.json", "policy_iter0.json", "policy_iter1.json", "iterations.jsonl",
                     "program_iter1.txt"):
            self.assertTrue((self.out / name).exists(), name)
        self.assertEqual(1, len((self.out / "iterations.jsonl").read_text().splitlines()))
        self.assertLess(self.result.records[0].worst_violation, 1e-6)
        np.testing.assert_allclose([0.6, 0.1], policy.reference_means[-1], atol=1e-6)
        # the terminal covariance bound holds in the linear-covariance prediction
        gap = np.asarray(self.scenario.terminal.covariance) - policy.predicted_state_covariances[-1]
        self.assertGreaterEqual(np.linalg.eigvalsh(gap).min(), -1e-8)

    def test_saved_policy_reproduces_the_solved_one(self):
        loaded = self.service.repository.load_policy(self.out / "policy.json")
        np.testing.assert_allclose(self.result.policy.gains, loaded.gains)
        np.testing.assert_allclose(self.result.policy.feedforward, loaded.feedforward)

    def test_simulate_and_report(self):
        # 1. closed-loop trials with dense trajectories
        report = self.service.simulate(self.scenario, self.result.policy, trials=200, seed=3, trajectories=True)
        self.assertEqual(200, report.successful)
        self.assertEqual(12, len(report.violations))
        for stat in report.violations:
            self.assertLessEqual(stat.ci_low, 0.0027)
        self.assertTrue((self.out / "report.json").exists())
        rows = read_table(self.out / "trajectories.csv")
        self.assertEqual(["trial", "t", "r", "v", "u", "psi"], list(rows[0].keys()))
        self.assertEqual(200 * (5 * 10 + 1), len(rows))

        # 2. plot-ready tables
        written = {path.name for path in self.service.report(report, prefix="di_")}
        self.assertEqual({"di_state_envelopes.csv", "di_control_fan.csv", "di_violations.csv",
                          "di_field_envelope.csv"}, written)
        envelopes = read_table(self.out / "di_state_envelopes.csv")
        self.assertEqual({"monte_carlo", "linear_covariance"}, {row["source"] for row in envelopes})
        self.assertEqual(2 * 6 * 2, len(envelopes))
        fan = read_table(self.out / "di_control_fan.csv")
        self.assertEqual(2 * 5, len(fan))

    def test_open_loop_simulation(self):
        report = self.service.simulate(self.scenario, self.result.policy, trials=50, open_loop=True)
        self.assertTrue((self.out / "report_open_loop.json").exists())
        self.assertIsNone(report.predicted_state_cov)
        np.testing.assert_array_equal(0.0, np.asarray(report.control_cov))

    def test_policy_must_match_partition(self):
        other = load_scenario(SCENARIOS / "aerocapture.toml")
        with self.assertRaises(ConfigError):
            self.service.simulate(other, self.result.policy, trials=1)

    def test_sample_field(self):
        path = self.service.sample_field(self.scenario, 0.0, 1.0, n_points=25, n_paths=3, seed=1)
        rows = read_table(path)
        self.assertEqual(25, len(rows))
        self.assertEqual(["z", "mean", "lower_2sigma", "upper_2sigma", "path_0", "path_1", "path_2"],
                         list(rows[0].keys()))
        sigma = (float(rows[0]["upper_2sigma"]) - float(rows[0]["mean"])) / 2.0
        self.assertAlmostEqual(np.sqrt(2e-6), sigma, places=10)
        with self.assertRaises(ConfigError):
            self.service.sample_field(self.scenario, 1.0, 0.0)


@pytest.mark.slow
@unittest.skipUnless(HAS_CLARABEL, "Clarabel is not installed")
class DoubleIntegratorAcceptanceTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.tmp = tempfile.TemporaryDirectory()
        cls.scenario = load_scenario(SCENARIOS / "double_integrator.toml")
        cls.service = get_steering_service(Path(cls.tmp.name), adapter=CvxpyConicAdapter("CLARABEL"))
        cls.result = cls.service.solve(cls.scenario)

    @classmethod
    def tearDownClass(cls) -> None:
        cls.tmp.cleanup()

    def test_closed_loop_meets_constraints(self):
        report = self.service.simulate(self.scenario, self.result.policy)
        trials = report.successful
        self.assertEqual(5000, trials)
        # each half-plane alone is allowed 0.00135; the wedge as a whole 0.0027
        for stat in report.violations:
            self.assertLessEqual(stat.ci_low, 0.0027, stat.name)
        terminal_cov = np.asarray(report.state_cov[-1])
        standard_error = np.sqrt(np.diag(terminal_cov) / trials)
        np.testing.assert_array_less(np.abs(np.asarray(report.state_mean[-1]) - [0.6, 0.1]), 3 * standard_error)
        p_f = np.asarray(self.scenario.terminal.covariance)
        slack = 3.0 * np.sqrt(2.0 / trials) * np.linalg.norm(p_f, 2)
        self.assertGreaterEqual(np.linalg.eigvalsh(p_f - terminal_cov).min(), -slack)

    def test_wedge_violations_within_budget(self):
        report = self.service.simulate(self.scenario, self.result.policy, seed=1, report_name="report_seed1.json")
        by_step = {}
        for stat in report.violations:
            by_step[stat.step] = by_step.get(stat.step, 0) + stat.violations
        for step, count in by_step.items():
            low, _ = wilson_interval(count, report.successful)
            self.assertLessEqual(low, 0.0027, f"step {step}")

    def test_open_loop_matches_linear_covariance(self):
        report = self.service.simulate(self.scenario, self.result.history[0], report_name="report_zero_gain.json")
        predicted = np.asarray(report.predicted_state_cov[-1])
        sampled = np.asarray(report.state_cov[-1])
        self.assertLess(np.linalg.norm(sampled - predicted) / np.linalg.norm(predicted), 0.07)


@pytest.mark.slow
@unittest.skipUnless(HAS_CLARABEL, "Clarabel is not installed")
class AerocaptureAcceptanceTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.tmp = tempfile.TemporaryDirectory()
        cls.scenario = load_scenario(SCENARIOS / "aerocapture.toml")
        cls.service = get_steering_service(Path(cls.tmp.name), adapter=CvxpyConicAdapter("CLARABEL"))
        cls.result = cls.service.solve(cls.scenario)

    @classmethod
    def tearDownClass(cls) -> None:
        cls.tmp.cleanup()

    def test_trust_region_is_respected(self):
        radius = self.scenario.scp.trust.control_radius
        for policy in self.result.history[1:]:
            self.assertLessEqual(np.max(np.abs(policy.feedforward - policy.nominal_controls)), radius + 1e-6)

    def test_nominal_gap_does_not_grow(self):
        gaps = [r.nominal_gap for r in self.result.records if r.nominal_gap is not None]
        self.assertTrue(gaps)
        self.assertLessEqual(gaps[-1], max(gaps[0], 1e-3))

    def test_feedback_lowers_the_delta_v_tail(self):
        closed = self.service.simulate(self.scenario, self.result.policy)
        open_loop = self.service.simulate(self.scenario, self.result.policy, open_loop=True)
        self.assertIsNotNone(closed.terminal_summary)
        self.assertIsNotNone(closed.predicted_terminal)
        self.assertEqual("normal", closed.predicted_terminal.method)
        self.assertLess(closed.terminal_summary.percentiles["99"], open_loop.terminal_summary.percentiles["99"])
        written = {path.name for path in self.service.report(closed)}
        self.assertIn("terminal_histogram.csv", written)
        self.assertIn("dynamic_pressure.csv", written)


if __name__ == "__main__":
    unittest.main()
