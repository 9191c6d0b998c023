import copy
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from block_assembly import FeedbackPolicy
from enums import ConstraintTarget, KernelKind, ModelKind
from errors import ArtifactIOError, ConfigError
from models import GainBlock, PolicyDocument, dump_scenario, load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parents[2] / "scenarios"


def minimal_scenario():
    return {
        "schema_version": 1,
        "name": "unit",
        "model": {"kind": "double_integrator"},
        "field": {"kernel": {"kind": "squared_exponential", "parameters": {"variance": 1e-4, "length_scale": 0.5}}},
        "partition": {"knots": [0.0, 1.0, 2.0]},
        "initial": {"mean": [0.0, 0.0], "covariance": [[1e-3, 0.0], [0.0, 1e-3]]},
    }


class BundledScenarioTestCase(unittest.TestCase):
    def test_double_integrator(self):
        scenario = load_scenario(SCENARIOS / "double_integrator.toml")
        self.assertEqual(ModelKind.double_integrator, scenario.model.kind)
        self.assertEqual(KernelKind.locally_periodic, scenario.field.kernel.kind)
        self.assertEqual(5, scenario.partition.n_steps)
        self.assertEqual(SCENARIOS, scenario.source_dir)
        specs = scenario.chance_specs()
        self.assertEqual(12, len(specs))
        self.assertEqual(list(range(6)) * 2, [s.step for s in specs])
        terminal = scenario.terminal_constraint()
        np.testing.assert_array_equal([0.6, 0.1], terminal.mean)
        self.assertEqual((2, 2), terminal.covariance.shape)
        self.assertEqual(1, scenario.scp.max_iterations)
        self.assertEqual(5000, scenario.monte_carlo.trials)

    def test_aerocapture(self):
        scenario = load_scenario(SCENARIOS / "aerocapture.toml")
        self.assertEqual(14, scenario.partition.n_steps)
        self.assertEqual(3, scenario.state_dim)
        self.assertEqual(0.00765, scenario.model.aerocapture.density.surface_density)
        specs = scenario.chance_specs()
        self.assertEqual(28, len(specs))
        self.assertTrue(all(s.target == ConstraintTarget.control for s in specs))
        self.assertEqual(13, max(s.step for s in specs))
        self.assertIsNone(scenario.terminal_constraint())
        self.assertEqual((-1.0, 1.0), scenario.monte_carlo.control_bounds)
        self.assertEqual(0.1, scenario.scp.trust.control_radius)

    def test_dump_is_json_that_parses_back(self):
        scenario = load_scenario(SCENARIOS / "aerocapture.toml")
        reparsed = parse_scenario(json.loads(dump_scenario(scenario)))
        self.assertEqual(scenario.model_dump(), reparsed.model_dump())


class ScenarioValidationTestCase(unittest.TestCase):
    def assertRejected(self, data):
        with self.assertRaises(ConfigError):
            parse_scenario(data)

    def test_minimal_scenario_gets_defaults(self):
        scenario = parse_scenario(minimal_scenario())
        self.assertEqual([], scenario.chance_specs())
        self.assertIsNone(scenario.terminal_constraint())
        self.assertEqual(3, scenario.scp.max_iterations)
        self.assertIsNone(scenario.source_dir)

    def test_aerocapture_defaults(self):
        data = minimal_scenario()
        data["model"] = {"kind": "aerocapture"}
        data["field"] = {"kernel": {"kind": "constant", "parameters": {"variance": 0.0}}}
        data["initial"] = {"mean": [3522.0, 6.1, -0.17], "covariance": np.zeros((3, 3)).tolist()}
        scenario = parse_scenario(data)
        self.assertEqual(150.0, scenario.model.aerocapture.ballistic_coefficient)

    def test_unknown_keys_are_rejected(self):
        data = minimal_scenario()
        data["solver"] = "clarabel"
        self.assertRejected(data)

    def test_wrong_schema_version(self):
        data = minimal_scenario()
        data["schema_version"] = 2
        self.assertRejected(data)

    def test_initial_state_must_match_model(self):
        data = minimal_scenario()
        data["initial"]["mean"] = [0.0, 0.0, 0.0]
        self.assertRejected(data)
        data = minimal_scenario()
        data["initial"]["covariance"] = [[1.0, 0.0], [0.0, -1.0]]
        self.assertRejected(data)
        data = minimal_scenario()
        data["initial"]["covariance"] = [[1.0, 0.5], [0.0, 1.0]]
        self.assertRejected(data)

    def test_chance_groups_are_checked(self):
        group = {"target": "control", "direction": [1.0], "bound": 1.0, "probability": 0.01}
        data = minimal_scenario()
        data["chance"] = [{**group, "steps": [2]}]
        self.assertRejected(data)
        data["chance"] = [{**group, "direction": [1.0, 0.0]}]
        self.assertRejected(data)
        data["chance"] = [{**group, "probability": 0.5}]
        self.assertRejected(data)
        data["chance"] = [{**group, "steps": [1]}]
        self.assertEqual([1], [s.step for s in parse_scenario(data).chance_specs()])

    def test_terminal_covariance_must_be_positive_definite(self):
        data = minimal_scenario()
        data["terminal"] = {"covariance": [[1.0, 0.0], [0.0, 0.0]]}
        self.assertRejected(data)
        data["terminal"] = {"mean": [1.0]}
        self.assertRejected(data)

    def test_initial_controls_shape(self):
        data = minimal_scenario()
        data["scp"] = {"initial_controls": [[0.0]]}
        self.assertRejected(data)

    def test_weights_are_checked(self):
        data = minimal_scenario()
        data["objective"] = {"control_weight": [[1.0, 0.0], [0.0, 1.0]]}
        self.assertRejected(data)
        data["objective"] = {"state_weight": [[1.0, 0.0], [0.0, -1.0]]}
        self.assertRejected(data)
        data["objective"] = {}
        data["scp"] = {"trust": {"state_weight": [[1.0]]}}
        self.assertRejected(data)

    def test_kernel_parameters(self):
        data = minimal_scenario()
        data["field"]["kernel"]["parameters"]["period"] = 1.0
        self.assertRejected(data)

    def test_file_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ArtifactIOError):
                load_scenario(Path(tmp) / "missing.toml")
            broken = Path(tmp) / "broken.toml"
            broken.write_text("name = [unterminated\n")
            with self.assertRaises(ConfigError):
                load_scenario(broken)


class PolicyDocumentTestCase(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(11)
        gains = rng.standard_normal((3, 3, 1, 2)) * np.tril(np.ones((3, 3)))[:, :, None, None]
        self.policy = FeedbackPolicy(
            knots=(0.0, 1.0, 2.5, 4.0),
            gains=gains,
            feedforward=rng.standard_normal((3, 1)),
            reference_means=rng.standard_normal((4, 2)),
            nominal_controls=rng.standard_normal((3, 1)),
            predicted_state_covariances=np.tile(np.eye(2), (4, 1, 1)),
        )

    def test_policy_survives_the_document(self):
        document = PolicyDocument.from_policy(self.policy)
        self.assertEqual(6, len(document.gains))
        restored = PolicyDocument.model_validate_json(document.model_dump_json()).to_policy()
        self.assertEqual(self.policy.knots, restored.knots)
        np.testing.assert_array_equal(self.policy.gains, restored.gains)
        np.testing.assert_array_equal(self.policy.reference_means, restored.reference_means)
        np.testing.assert_array_equal(self.policy.predicted_state_covariances, restored.predicted_state_covariances)
        self.assertIsNone(restored.predicted_control_covariances)

    def test_upper_triangular_gain_is_rejected(self):
        document = PolicyDocument.from_policy(self.policy)
        broken = copy.deepcopy(document)
        broken.gains.append(GainBlock(k=0, l=2, matrix=[[1.0, 0.0]]))
        with self.assertRaises(ArtifactIOError):
            broken.to_policy()


if __name__ == "__main__":
    unittest.main()
