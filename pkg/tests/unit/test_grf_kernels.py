import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from pydantic import ValidationError

from enums import KernelKind
from errors import KernelRepairError
from grf_kernels import (KernelSpec, MarsDensityKernel, conditional_sample_next, eval_cov, field_band,
                         field_from_spec, gram_matrix, new_sampler_state, psd_sqrt, repair_psd, sample_joint,
                         sample_paths, sample_sequential)


def locally_periodic_field():
    spec = KernelSpec(kind=KernelKind.locally_periodic,
                      parameters={"variance": 2e-6, "period": 0.35, "periodic_length": 0.8, "length_scale": 1.0})
    return field_from_spec(spec)


def squared_exponential_field(variance=1.0, length_scale=0.5, mean=0.0):
    spec = KernelSpec(kind=KernelKind.squared_exponential,
                      parameters={"variance": variance, "length_scale": length_scale})
    return field_from_spec(spec, mean=mean)


class KernelSpecTestCase(unittest.TestCase):
    def test_missing_parameter_is_rejected(self):
        with self.assertRaises(ValidationError):
            KernelSpec(kind=KernelKind.locally_periodic, parameters={"variance": 1.0})

    def test_unknown_parameter_is_rejected(self):
        with self.assertRaises(ValidationError):
            KernelSpec(kind=KernelKind.constant, parameters={"variance": 1.0, "period": 2.0})

    def test_nonpositive_parameter_is_rejected(self):
        with self.assertRaises(ValidationError):
            KernelSpec(kind=KernelKind.squared_exponential, parameters={"variance": 1.0, "length_scale": 0.0})

    def test_degenerate_constant_kernel_is_allowed(self):
        spec = KernelSpec(kind=KernelKind.constant, parameters={"variance": 0.0})
        field = field_from_spec(spec)
        self.assertEqual(0.0, eval_cov(field, 0.3, 4.0))

    def test_mars_density_kernel_needs_scalar_index(self):
        spec = KernelSpec(kind=KernelKind.mars_density,
                          parameters={"variance_max": 1480.0, "scale_height": 11.1,
                                      "transition_altitude": 120.0, "c_scale": 20.0})
        with self.assertRaises(ValueError):
            field_from_spec(spec, index_dim=2)


class KernelValuesTestCase(unittest.TestCase):
    def test_locally_periodic_variance_on_the_diagonal(self):
        field = locally_periodic_field()
        self.assertAlmostEqual(2e-6, eval_cov(field, 0.4, 0.4), places=15)

    def test_locally_periodic_kernel_recovers_after_one_period(self):
        field = locally_periodic_field()
        # periodic factor returns to one, only the envelope remains
        expected = 2e-6 * np.exp(-0.35 ** 2 / 2.0)
        self.assertAlmostEqual(expected, eval_cov(field, 0.0, 0.35), places=15)

    def test_mars_density_variance_saturates_above_transition(self):
        kernel = MarsDensityKernel(1480.0, 11.1, 120.0, 20.0, variance_scale=1e-4)
        high = kernel(np.array([[200.0]]), np.array([[200.0]]))[0, 0]
        low = kernel(np.array([[100.0]]), np.array([[100.0]]))[0, 0]
        self.assertAlmostEqual(0.148, high, places=12)
        self.assertAlmostEqual(0.148 * np.exp(-1.0), low, places=12)

    def test_mars_density_correlation_decays_with_altitude_gap(self):
        kernel = MarsDensityKernel(1480.0, 11.1, 120.0, 20.0)
        value = kernel(np.array([[130.0]]), np.array([[141.1]]))[0, 0]
        self.assertAlmostEqual(1480.0 * np.exp(-1.0), value, places=9)

    def test_wrong_index_dimension_is_rejected(self):
        field = squared_exponential_field()
        with self.assertRaises(ValueError):
            eval_cov(field, [0.0, 1.0], 0.0)


class RepairTestCase(unittest.TestCase):
    def test_duplicated_point_gives_rank_one_psd_matrix(self):
        field = squared_exponential_field()
        gram = gram_matrix(field, [0.3, 0.3])
        eigenvalues = np.linalg.eigvalsh(gram)
        self.assertGreaterEqual(eigenvalues[0], 0.0)
        self.assertLess(eigenvalues[0], 1e-10)
        self.assertAlmostEqual(2.0, eigenvalues[1], places=10)

    def test_locally_periodic_gram_is_psd(self):
        rng = np.random.default_rng(3)
        field = locally_periodic_field()
        gram = gram_matrix(field, rng.uniform(0.0, 1.0, 5))
        eigenvalues = np.linalg.eigvalsh(gram)
        self.assertGreaterEqual(eigenvalues[0], -1e-12 * eigenvalues[-1])
        np.testing.assert_allclose(gram, gram.T, rtol=0.0, atol=0.0)

    def test_strongly_indefinite_matrix_is_refused(self):
        with self.assertRaises(KernelRepairError):
            repair_psd(np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_psd_matrix_is_left_alone(self):
        matrix = np.array([[2.0, 0.5], [0.5, 1.0]])
        repaired, removed = repair_psd(matrix)
        np.testing.assert_array_equal(matrix, repaired)
        self.assertEqual(0.0, removed)

    def test_psd_sqrt_reconstructs_matrix(self):
        matrix = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
        root = psd_sqrt(matrix)
        np.testing.assert_allclose(matrix, root.T @ root, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-3.0, 3.0)))
    def test_gram_matrix_is_symmetric_and_psd(self, points):
        gram = gram_matrix(squared_exponential_field(), points)
        np.testing.assert_array_equal(gram, gram.T)
        eigenvalues = np.linalg.eigvalsh(gram)
        self.assertGreaterEqual(eigenvalues[0], -1e-12 * max(eigenvalues[-1], 1.0))


class SamplingTestCase(unittest.TestCase):
    def test_sample_paths_shape(self):
        paths = sample_paths(squared_exponential_field(), np.linspace(0.0, 1.0, 7), 4, np.random.default_rng(0))
        self.assertEqual((4, 7), paths.shape)

    def test_constant_kernel_paths_are_flat(self):
        spec = KernelSpec(kind=KernelKind.constant, parameters={"variance": 4.0})
        field = field_from_spec(spec, mean=1.0)
        paths = sample_paths(field, np.linspace(0.0, 1.0, 5), 3, np.random.default_rng(1))
        np.testing.assert_allclose(paths, np.repeat(paths[:, :1], 5, axis=1), atol=1e-5)

    def test_sample_joint_empirical_moments(self):
        field = squared_exponential_field(mean=0.5)
        points = np.array([0.0, 0.3, 0.9])
        rng = np.random.default_rng(2)
        draws = np.array([sample_joint(field, points, rng) for _ in range(4000)])
        np.testing.assert_allclose(np.full(3, 0.5), draws.mean(axis=0), atol=0.06)
        np.testing.assert_allclose(gram_matrix(field, points), np.cov(draws.T), atol=0.08)

    def test_sequential_sampling_matches_joint_distribution(self):
        field = squared_exponential_field()
        points = np.array([0.0, 0.2, 0.4, 0.7, 1.0])
        rng = np.random.default_rng(4)
        draws = np.array([sample_sequential(field, points, rng) for _ in range(10_000)])
        np.testing.assert_allclose(np.zeros(5), draws.mean(axis=0), atol=0.05)
        np.testing.assert_allclose(gram_matrix(field, points), np.cov(draws.T), atol=0.06)

    def test_revisited_point_reuses_its_draw(self):
        field = squared_exponential_field()
        state = new_sampler_state(field)
        rng = np.random.default_rng(5)
        first = conditional_sample_next(state, field, 0.25, rng)
        conditional_sample_next(state, field, 0.8, rng)
        self.assertEqual(first, conditional_sample_next(state, field, 0.25, rng))
        self.assertEqual(2, len(state))

    def test_points_inside_thin_radius_reuse_nearest_draw(self):
        field = squared_exponential_field()
        state = new_sampler_state(field, thin_radius=1e-3)
        rng = np.random.default_rng(6)
        value = conditional_sample_next(state, field, 0.5, rng)
        self.assertEqual(value, conditional_sample_next(state, field, 0.5005, rng))
        self.assertEqual(1, len(state))

    def test_nearby_point_is_nearly_equal(self):
        field = squared_exponential_field(length_scale=1.0)
        state = new_sampler_state(field)
        rng = np.random.default_rng(7)
        value = conditional_sample_next(state, field, 0.0, rng)
        self.assertAlmostEqual(value, conditional_sample_next(state, field, 1e-4, rng), delta=1e-2)

    def test_sampler_grows_past_initial_capacity(self):
        field = squared_exponential_field(length_scale=0.2)
        values = sample_sequential(field, np.linspace(0.0, 10.0, 40), np.random.default_rng(8))
        self.assertEqual(40, values.shape[0])
        self.assertTrue(np.all(np.isfinite(values)))

    def test_field_band_is_two_sigma_wide(self):
        field = squared_exponential_field(variance=4.0, mean=1.0)
        mean, low, high = field_band(field, [0.0, 1.0], width=2.0)
        np.testing.assert_allclose([1.0, 1.0], mean)
        np.testing.assert_allclose([-3.0, -3.0], low)
        np.testing.assert_allclose([5.0, 5.0], high)


if __name__ == "__main__":
    unittest.main()
