import os
import sys
import itertools
import unittest

import numpy as np
import torch

# Allow direct execution
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))  # noqa


from guided_dg.assignment import (
    domain_means,
    hungarian,
    match_domains
)
from guided_dg.guidespace import solve_guide_space
from guided_dg.losses import FeatureBatch
from guided_dg.errors import (
    DegenerateMean,
    EmptyBatch,
    NonSquareCost
)


def exhaustive(cost):
    """Lexicographically smallest permutation of minimum total cost."""
    n = cost.shape[0]
    best, best_cost = None, np.inf
    for permutation in itertools.permutations(range(n)):
        total = sum(cost[i, permutation[i]] for i in range(n))
        if total < best_cost - 1e-12:
            best, best_cost = permutation, total
    return best, best_cost


class TestAssignment(unittest.TestCase):
    """
    Class used to run unit tests for domain matching.
    """

    def test_hungarian_examples(self):
        permutation, total = hungarian(np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]]))
        self.assertEqual(permutation, (1, 0, 2))
        self.assertEqual(total, 5.0)

        permutation, total = hungarian(np.ones((3, 3)))
        self.assertEqual(permutation, (0, 1, 2))
        self.assertEqual(total, 3.0)

        self.assertEqual(hungarian(np.zeros((0, 0))), ((), 0.0))
        self.assertRaises(NonSquareCost, hungarian, np.ones((2, 3)))

    def test_hungarian_exhaustive(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 8))
            # small integer costs produce plenty of ties
            cost = rng.integers(0, 4, size=(n, n)).astype(np.float64)
            expected, expected_cost = exhaustive(cost)
            permutation, total = hungarian(cost)
            self.assertAlmostEqual(total, expected_cost, delta=1e-9)
            self.assertEqual(permutation, expected)

    def test_domain_means(self):
        batch = FeatureBatch(
            v=torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.6, 0.8]],
                           dtype=torch.float64),
            y=torch.tensor([1, 1, 0, 1]),
            t=torch.tensor([1, 1, 0, 3]),
            rho=torch.zeros(4, dtype=torch.long)
        )
        means = domain_means(batch, 3)
        self.assertEqual(sorted(means), [1, 3])
        np.testing.assert_allclose(means[1], [2 ** -0.5, 2 ** -0.5])
        np.testing.assert_allclose(means[3], [0.6, 0.8])

        self.assertRaises(EmptyBatch, domain_means, FeatureBatch.empty(2), 3)

        opposite = FeatureBatch(
            v=torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=torch.float64),
            y=torch.tensor([1, 1]), t=torch.tensor([2, 2]), rho=torch.tensor([0, 0]))
        self.assertRaises(DegenerateMean, domain_means, opposite, 3)

    def test_match_domains(self):
        gs, _ = solve_guide_space(8, 3, 120, seed=1)
        means = {1: gs.g_f[2], 2: gs.g_f[0], 3: gs.g_f[1]}
        match = match_domains(means, gs)
        self.assertEqual(match.mapping, {1: 3, 2: 1, 3: 2})
        self.assertAlmostEqual(match.cost, 0.0, places=9)
        self.assertEqual(match.json(), {'1': 3, '2': 1, '3': 2})

    def test_match_missing_domains(self):
        gs, _ = solve_guide_space(8, 3, 120, seed=1)

        # absent domain keeps its previous guide when it is still free
        match = match_domains({1: gs.g_f[2]}, gs, previous={1: 1, 2: 2, 3: 3})
        self.assertEqual(match.mapping[1], 3)
        self.assertEqual(match.mapping[2], 2)
        self.assertEqual(match.mapping[3], 1)
        self.assertEqual(sorted(match.mapping.values()), [1, 2, 3])

        match = match_domains({}, gs, previous={1: 2, 2: 3, 3: 1})
        self.assertEqual(match.mapping, {1: 2, 2: 3, 3: 1})

        match = match_domains({}, gs)
        self.assertEqual(match.mapping, {1: 1, 2: 2, 3: 3})

    def test_match_single_domain(self):
        gs, _ = solve_guide_space(8, 4, 120, seed=2)
        rng = np.random.default_rng(1)
        for _ in range(10):
            mean = rng.standard_normal(8)
            mean /= np.linalg.norm(mean)
            domain = int(rng.integers(1, 5))
            match = match_domains({domain: mean}, gs)
            self.assertEqual(match.mapping[domain], int(np.argmax(gs.g_f @ mean)) + 1)

    def test_match_four_domains_exhaustive(self):
        gs, _ = solve_guide_space(10, 4, 120, seed=3)
        rng = np.random.default_rng(2)
        for _ in range(20):
            means = {}
            for domain in range(1, 5):
                mean = rng.standard_normal(10)
                means[domain] = mean / np.linalg.norm(mean)
            cost = np.array([1 - gs.g_f @ means[domain] for domain in range(1, 5)])
            expected, expected_cost = exhaustive(cost)

            match = match_domains(means, gs)
            self.assertEqual(match.mapping, {domain: expected[domain - 1] + 1 for domain in range(1, 5)})
            self.assertAlmostEqual(match.cost, expected_cost, delta=1e-9)

    def test_match_scale_invariance(self):
        gs, _ = solve_guide_space(8, 3, 120, seed=1)
        rng = np.random.default_rng(3)
        for _ in range(20):
            means = {}
            for domain in range(1, 4):
                mean = rng.standard_normal(8)
                means[domain] = mean / np.linalg.norm(mean)
            expected = match_domains(means, gs)
            for scale in (0.01, 3.0, 250.0):
                scaled = {domain: scale * mean for domain, mean in means.items()}
                match = match_domains(scaled, gs)
                self.assertEqual(match.mapping, expected.mapping)
                self.assertAlmostEqual(match.cost, expected.cost, places=9)

        self.assertRaises(DegenerateMean, match_domains, {1: np.zeros(8)}, gs)

    def test_match_idempotence(self):
        gs, _ = solve_guide_space(8, 3, 120, seed=1)
        rng = np.random.default_rng(4)
        for _ in range(10):
            means = {}
            for domain in range(1, 4):
                mean = rng.standard_normal(8)
                means[domain] = mean / np.linalg.norm(mean)
            mapping = match_domains(means, gs).mapping

            at_guides = {domain: gs.g_f[guide - 1] for domain, guide in mapping.items()}
            again = match_domains(at_guides, gs, previous=mapping)
            self.assertEqual(again.mapping, mapping)
            self.assertAlmostEqual(again.cost, 0.0, places=9)


if __name__ == '__main__':
    unittest.main()
