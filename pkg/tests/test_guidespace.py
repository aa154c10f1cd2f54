import os
import sys
import math
import unittest
import tempfile

import numpy as np

# Allow direct execution
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))  # noqa


from guided_dg.guidespace import (
    GuideSpace,
    analytic_theta_ij,
    angles_between,
    pairwise_angles,
    separation_objective,
    solve_guide_space
)
from guided_dg.errors import (
    DimensionTooSmall,
    InvalidGuideSpace,
    InvalidParameter
)


# theta0 -> mean pairwise angle of four forgery embeddings in 16 dimensions
REFERENCE_ANGLES = {
    90: 109.47,
    100: 107.05,
    110: 100.19,
    120: 90.00,
    130: 77.43,
    140: 63.26,
    150: 48.19
}


def off_diagonal(matrix):
    return matrix[~np.eye(matrix.shape[0], dtype=bool)]


class TestGuideSpace(unittest.TestCase):
    """
    Class used to run unit tests for the guide-space solver.
    """

    def assertValidSpace(self, gs, report=None):
        norms = np.linalg.norm(gs.guides, axis=1)
        self.assertLess(np.max(np.abs(norms - 1)), 1e-9)
        residual = np.max(np.abs(gs.g_f @ gs.g_r - math.cos(math.radians(gs.theta0))))
        self.assertLess(residual, 1e-6)
        if report is not None:
            self.assertLess(report.max_constraint_residual, 1e-6)

    def test_analytic_values(self):
        for theta0, expected in REFERENCE_ANGLES.items():
            self.assertAlmostEqual(analytic_theta_ij(theta0, 4), expected, places=2)

        self.assertAlmostEqual(analytic_theta_ij(120, 2), 180.0, places=6)
        self.assertRaises(InvalidParameter, analytic_theta_ij, 120, 1)

    def test_analytic_oracle(self):
        rng = np.random.default_rng(1234)
        for _ in range(50):
            N = int(rng.integers(2, 9))
            d = int(rng.integers(N, 33))
            theta0 = float(rng.uniform(60, 160))

            gs, report = solve_guide_space(d, N, theta0, seed=int(rng.integers(1000)))
            self.assertValidSpace(gs, report)

            expected = analytic_theta_ij(theta0, N)
            error = np.max(np.abs(off_diagonal(report.pairwise_angles_deg) - expected))
            self.assertLess(error, 0.1, f'd={d}, N={N}, theta0={theta0}')

    def test_two_domains_on_a_plane(self):
        gs, report = solve_guide_space(2, 2, 120)
        self.assertValidSpace(gs, report)
        self.assertAlmostEqual(report.pairwise_angles_deg[0, 1], 120.0, places=6)
        self.assertEqual(report.iterations, 0)

    def test_single_domain(self):
        gs, report = solve_guide_space(4, 1, 100)
        self.assertValidSpace(gs, report)
        self.assertEqual(report.pairwise_angles_deg.shape, (1, 1))

    def test_errors(self):
        self.assertRaises(DimensionTooSmall, solve_guide_space, 3, 4, 120)
        self.assertRaises(DimensionTooSmall, solve_guide_space, 1, 1, 120)
        self.assertRaises(InvalidParameter, solve_guide_space, 8, 0, 120)
        self.assertRaises(InvalidParameter, solve_guide_space, 8, 4, 0)
        self.assertRaises(InvalidParameter, solve_guide_space, 8, 4, 180)
        self.assertRaises(InvalidParameter, solve_guide_space, 8, 4, 120, tau=0)

        # a too-small dimension is a usage error
        self.assertTrue(issubclass(DimensionTooSmall, InvalidParameter))

    def test_deterministic(self):
        first, _ = solve_guide_space(16, 4, 120, seed=7)
        second, _ = solve_guide_space(16, 4, 120, seed=7)
        np.testing.assert_array_equal(first.g_f, second.g_f)
        np.testing.assert_array_equal(first.g_r, second.g_r)

    def test_angles_agree_across_seeds(self):
        for d, N, theta0 in ((16, 4, 120), (6, 5, 100), (32, 3, 140)):
            reference = None
            for seed in range(5):
                gs, _ = solve_guide_space(d, N, theta0, seed=seed)
                angles = np.sort(off_diagonal(pairwise_angles(gs)))
                if reference is None:
                    reference = angles
                    continue
                self.assertLess(np.max(np.abs(angles - reference)), 0.1,
                                f'd={d}, N={N}, theta0={theta0}, seed={seed}')

    def test_solution_beats_random_layouts(self):
        gs, report = solve_guide_space(16, 4, 120, seed=3)
        rng = np.random.default_rng(0)
        c, s = math.cos(math.radians(120)), math.sin(math.radians(120))
        complement = np.linalg.svd(gs.g_r[np.newaxis, :])[2][1:]
        for _ in range(20):
            w = rng.standard_normal((4, 15))
            w /= np.linalg.norm(w, axis=1, keepdims=True)
            g_f = c * gs.g_r + s * (w @ complement)
            self.assertGreaterEqual(separation_objective(g_f) + 1e-9, report.final_objective)

    def test_json(self):
        gs, _ = solve_guide_space(8, 3, 110, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'space.json')
            gs.save(path)
            loaded = GuideSpace.load(path)

        self.assertEqual((loaded.d, loaded.N, loaded.theta0), (8, 3, 110.0))
        np.testing.assert_array_equal(loaded.g_f, gs.g_f)

    def test_invalid_documents(self):
        gs, _ = solve_guide_space(8, 3, 110, seed=2)

        wrong_angle = gs.json()
        wrong_angle['theta0_deg'] = 100
        self.assertRaises(InvalidGuideSpace, GuideSpace.from_json, wrong_angle)

        not_unit = gs.json()
        not_unit['g_r'] = [2 * value for value in not_unit['g_r']]
        self.assertRaises(InvalidGuideSpace, GuideSpace.from_json, not_unit)

        missing = gs.json()
        del missing['g_f']
        self.assertRaises(InvalidGuideSpace, GuideSpace.from_json, missing)

    def test_guides_are_read_only(self):
        gs, _ = solve_guide_space(8, 3, 120)
        with self.assertRaises(ValueError):
            gs.g_f[0, 0] = 1.0

    def test_angles_between(self):
        angles = angles_between(np.eye(3))
        np.testing.assert_allclose(off_diagonal(angles), 90.0)
        np.testing.assert_array_equal(np.diag(angles), 0.0)

        gs, report = solve_guide_space(6, 3, 130, seed=4)
        np.testing.assert_array_equal(pairwise_angles(gs), report.pairwise_angles_deg)


def generator(theta0, expected):

    def test_template(self):
        gs, report = solve_guide_space(16, 4, theta0, seed=0)
        self.assertValidSpace(gs, report)
        mean_angle = float(np.mean(off_diagonal(report.pairwise_angles_deg)))
        self.assertLess(abs(mean_angle - expected), 0.5)

    return test_template


for theta0, expected in REFERENCE_ANGLES.items():
    _method = generator(theta0, expected)
    _method.__name__ = f'test_reference_angle_{theta0}'
    setattr(TestGuideSpace, _method.__name__, _method)


if __name__ == '__main__':
    unittest.main()
