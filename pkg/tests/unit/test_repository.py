import csv
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from block_assembly import FeedbackPolicy
from errors import ArtifactIOError
from monte_carlo import McReport
from repository import FileArtifactRepository
from scp_driver import ScpIterationRecord


def small_policy():
    return FeedbackPolicy(
        knots=(0.0, 1.0, 2.0),
        gains=np.array([[[[0.5, -0.25]], [[0.0, 0.0]]], [[[0.1, 0.2]], [[0.3, 0.4]]]]),
        feedforward=np.array([[1.0], [2.0]]),
        reference_means=np.zeros((3, 2)),
        nominal_controls=np.zeros((2, 1)),
    )


def small_report():
    return McReport(
        trials=2, successful=2, failed=0, seed=0, knots=[0.0, 1.0], state_names=["r", "v"],
        state_mean=[[0.0, 0.0], [1.0, 0.0]], state_cov=[np.eye(2).tolist()] * 2,
        control_mean=[[0.0]], control_cov=[[[0.0]]],
        predicted_state_mean=[[0.0, 0.0], [1.0, 0.0]], predicted_control_mean=[[0.0]],
    )


class FileArtifactRepositoryTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.repository = FileArtifactRepository(Path(self.tmp.name) / "nested" / "out")

    def test_policy_roundtrip(self):
        path = self.repository.save_policy(small_policy())
        self.assertEqual("policy.json", path.name)
        loaded = self.repository.load_policy(path)
        np.testing.assert_array_equal(small_policy().gains, loaded.gains)
        np.testing.assert_array_equal([[1.0], [2.0]], loaded.feedforward)

    def test_malformed_policy(self):
        path = self.repository.save_text("policy.json", json.dumps({"knots": [0.0, 1.0]}))
        with self.assertRaises(ArtifactIOError):
            self.repository.load_policy(path)
        with self.assertRaises(ArtifactIOError):
            self.repository.load_policy(Path(self.tmp.name) / "missing.json")

    def test_mismatched_policy_arrays(self):
        path = self.repository.save_policy(small_policy())
        document = json.loads(path.read_text())
        document["feedforward"] = [[1.0]]
        path.write_text(json.dumps(document))
        with self.assertRaises(ArtifactIOError):
            self.repository.load_policy(path)

    def test_iterations_are_json_lines(self):
        records = [ScpIterationRecord(iteration=i, status="optimal", objective=float(i), j1=float(i),
                                      worst_violation=0.0, control_change=0.1, solve_time=0.01) for i in (1, 2)]
        path = self.repository.save_iterations(records)
        lines = path.read_text().splitlines()
        self.assertEqual(2, len(lines))
        self.assertEqual(2, json.loads(lines[1])["iteration"])
        self.assertIsNone(json.loads(lines[0])["j2"])

    def test_report_roundtrip(self):
        path = self.repository.save_report(small_report())
        self.assertEqual(small_report(), self.repository.load_report(path))
        path.write_text("{}")
        with self.assertRaises(ArtifactIOError):
            self.repository.load_report(path)

    def test_table(self):
        path = self.repository.save_table("knots.csv", ["t", "r"], [(0.0, 1.5), (1.0, 2.5)])
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual([["t", "r"], ["0.0", "1.5"], ["1.0", "2.5"]], rows)

    def test_unwritable_directory(self):
        blocker = Path(self.tmp.name) / "blocker"
        blocker.write_text("")
        repository = FileArtifactRepository(blocker / "out")
        with self.assertRaises(ArtifactIOError):
            repository.save_text("note.txt", "text")


if __name__ == "__main__":
    unittest.main()
