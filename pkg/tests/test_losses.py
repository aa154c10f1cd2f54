import os
import sys
import math
import unittest
import warnings

import numpy as np
import torch

# Allow direct execution
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))  # noqa


from guided_dg.decoupling import FeatureQueue
from guided_dg.guidespace import solve_guide_space
from guided_dg.losses import (
    FeatureBatch,
    LabeledFeature,
    ce_loss,
    guide_loss,
    multiclass_ce_loss,
    pull_loss,
    push_loss,
    total_loss
)
from guided_dg.errors import (
    EmptyBatch,
    InvalidParameter,
    InvalidWeights,
    LengthMismatch,
    UnassignedDomain
)


def unit(vector):
    vector = np.asarray(vector, dtype=np.float64)
    return vector / np.linalg.norm(vector)


def orthogonal_to(*vectors):
    """A unit vector orthogonal to every given vector."""
    basis = np.linalg.svd(np.vstack(vectors))[2]
    return basis[len(vectors)]


def random_instance(rng, B=None, Q=None, d=None, N=3):
    B = B or int(rng.integers(1, 9))
    Q = Q or int(rng.integers(1, 65))
    d = d or int(rng.integers(N, 9))
    gs, _ = solve_guide_space(d, N, float(rng.uniform(90, 150)), seed=int(rng.integers(100)))

    def features(n):
        t = rng.integers(0, N + 1, size=n)
        return FeatureBatch(
            v=torch.tensor(np.stack([unit(rng.standard_normal(d)) for _ in range(n)])),
            y=torch.tensor((t > 0).astype(np.int64)),
            t=torch.tensor(t),
            rho=torch.tensor(rng.integers(0, 4, size=n))
        )

    batch, queue = features(B), features(Q)
    assignments = {domain: guide for domain, guide in
                   zip(range(1, N + 1), rng.permutation(N) + 1)}
    weights = torch.tensor(rng.dirichlet(np.ones(B)))
    tau = float(rng.uniform(0.1, 2.0))
    return gs, batch, queue, assignments, weights, tau


def brute_force_log_ratio(v, other, queue_v, guides, tau):
    denominator = 0.0
    for q in queue_v:
        denominator += math.exp(float(np.dot(v, q)) / tau)
    for g in guides:
        denominator += math.exp(float(np.dot(v, g)) / tau)
    return float(np.dot(v, other)) / tau - math.log(denominator)


def brute_force_guide(gs, batch, queue, assignments, weights, tau):
    total = 0.0
    for i in range(len(batch)):
        v = batch.v[i].numpy()
        t = int(batch.t[i])
        target = gs.g_r if t == 0 else gs.g_f[assignments[t] - 1]
        total -= float(weights[i]) * brute_force_log_ratio(
            v, target, queue.v.numpy(), gs.guides, tau)
    return total


def brute_force_sampled(gs, batch, samples, queue, weights, tau, n):
    total = 0.0
    for i in range(len(batch)):
        v = batch.v[i].numpy()
        for s in samples[i]:
            total += float(weights[i]) * brute_force_log_ratio(
                v, queue.v[s].numpy(), queue.v.numpy(), gs.guides, tau) / (1 + n)
    return total


def random_samples(rng, B, Q, n):
    samples = []
    for _ in range(B):
        size = int(rng.integers(0, min(n, Q) + 1))
        samples.append(rng.choice(Q, size=size, replace=False))
    return samples


class TestLosses(unittest.TestCase):
    """
    Class used to run unit tests for the training losses.
    """

    def setUp(self):
        self.plane, _ = solve_guide_space(2, 1, 120)
        self.space, _ = solve_guide_space(3, 1, 120, seed=5)

    def test_guide_loss_examples(self):
        real = LabeledFeature(torch.tensor(self.plane.g_r), 0, 0, 0)
        loss = guide_loss([real], {1: 1}, self.plane, None, [1.0])
        self.assertAlmostEqual(float(loss), math.log(1 + math.exp(-1.5)), places=5)
        self.assertAlmostEqual(float(loss), 0.20141, places=5)

        v = orthogonal_to(self.space.g_r, self.space.g_f[0])
        orthogonal = LabeledFeature(torch.tensor(v), 0, 0, 0)
        loss = guide_loss([orthogonal], {1: 1}, self.space, [], [1.0])
        self.assertAlmostEqual(float(loss), math.log(2), places=9)

    def test_guide_loss_empty_queue(self):
        real = LabeledFeature(torch.tensor(self.plane.g_r), 0, 0, 0)
        expected = float(guide_loss([real], {1: 1}, self.plane, [], [1.0]))
        actual = float(guide_loss([real], {1: 1}, self.plane, FeatureQueue(4), [1.0]))
        self.assertAlmostEqual(actual, expected, places=12)
        self.assertAlmostEqual(actual, 0.20141, places=5)

    def test_guide_loss_errors(self):
        fake = LabeledFeature(torch.tensor(self.plane.g_r), 1, 1, 0)
        self.assertRaises(UnassignedDomain, guide_loss, [fake], {}, self.plane, None, [1.0])
        self.assertRaises(EmptyBatch, guide_loss, FeatureBatch.empty(2), {1: 1},
                          self.plane, None, [])
        self.assertRaises(InvalidWeights, guide_loss, [fake], {1: 1}, self.plane, None, [0.5])
        self.assertRaises(LengthMismatch, guide_loss, [fake], {1: 1}, self.plane, None,
                          [0.5, 0.5])
        self.assertRaises(InvalidParameter, guide_loss, [fake], {1: 1}, self.plane, None,
                          [1.0], tau=0)

    def test_guide_loss_permutation(self):
        rng = np.random.default_rng(0)
        gs, batch, queue, assignments, weights, tau = random_instance(rng, B=6, Q=20)
        order = torch.tensor(rng.permutation(6))
        permuted = FeatureBatch(batch.v[order], batch.y[order], batch.t[order], batch.rho[order])

        expected = guide_loss(batch, assignments, gs, queue, weights, tau)
        actual = guide_loss(permuted, assignments, gs, queue, weights[order], tau)
        self.assertAlmostEqual(float(expected), float(actual), places=12)

    def test_guide_loss_rotation_towards_guide(self):
        gs, _ = solve_guide_space(6, 3, 120, seed=1)
        # rotate inside the plane of g_f2 and a direction orthogonal to every guide
        outside = np.linalg.svd(gs.guides)[2][4:]
        target, direction = gs.g_f[1], outside[0]
        queue = [LabeledFeature(torch.tensor(sign * outside[1]), 0, 0, 0) for sign in (1, -1)]

        previous = None
        for step in range(11):
            phi = math.radians(80) * (1 - step / 10)
            v = torch.tensor(math.cos(phi) * target + math.sin(phi) * direction)
            value = float(guide_loss([LabeledFeature(v, 1, 2, 0)], {1: 1, 2: 2, 3: 3},
                                     gs, queue, [1.0], tau=0.5))
            if previous is not None:
                self.assertLess(value, previous)
            previous = value

    def test_guide_loss_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            gs, batch, queue, assignments, weights, tau = random_instance(rng)
            expected = brute_force_guide(gs, batch, queue, assignments, weights, tau)
            actual = float(guide_loss(batch, assignments, gs, queue, weights, tau))
            self.assertAlmostEqual(actual, expected, delta=1e-9)

    def test_ce_loss(self):
        self.assertAlmostEqual(float(ce_loss([0.5], [1], [1.0])), math.log(2), places=9)
        self.assertAlmostEqual(float(ce_loss([1 - 1e-12], [1], [1.0])), 0.0, places=9)
        self.assertAlmostEqual(float(ce_loss([0.5, 0.5], [1, 0], [0.5, 0.5])), math.log(2),
                               places=9)
        self.assertTrue(math.isfinite(float(ce_loss([0.0, 1.0], [1, 0], [0.5, 0.5]))))
        self.assertRaises(LengthMismatch, ce_loss, [0.5, 0.5], [1], [1.0])

    def test_multiclass_ce_loss(self):
        logits = torch.zeros((2, 3), dtype=torch.float64)
        loss = multiclass_ce_loss(logits, [0, 2], [0.5, 0.5])
        self.assertAlmostEqual(float(loss), math.log(3), places=9)
        self.assertRaises(LengthMismatch, multiclass_ce_loss, logits, [0], [1.0])

    def test_push_loss_example(self):
        v = torch.tensor(orthogonal_to(self.space.g_r, self.space.g_f[0]))
        anchor = LabeledFeature(v, 1, 1, 0)
        negative = LabeledFeature(v.clone(), 0, 0, 0)
        loss = push_loss([anchor], [[0]], [negative], self.space, [1.0], tau=1.0, n_neg=10)
        expected = math.log(math.e / (math.e + 2)) / 11
        self.assertAlmostEqual(float(loss), expected, places=9)
        self.assertAlmostEqual(float(loss), -0.0501, places=4)

    def test_empty_sample_sets(self):
        rng = np.random.default_rng(3)
        gs, batch, queue, _, weights, tau = random_instance(rng, B=5, Q=10)
        empty = [[] for _ in range(5)]
        self.assertEqual(float(push_loss(batch, empty, queue, gs, weights, tau)), 0.0)
        self.assertEqual(float(pull_loss(batch, empty, queue, gs, weights, tau)), 0.0)
        self.assertRaises(LengthMismatch, push_loss, batch, empty[:2], queue, gs, weights, tau)
        self.assertRaises(InvalidParameter, pull_loss, batch, [list(range(10))] * 5,
                          queue, gs, weights, tau, n_pos=3)

    def test_push_pull_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            gs, batch, queue, _, weights, tau = random_instance(rng)
            n = int(rng.integers(1, 11))
            samples = random_samples(rng, len(batch), len(queue), n)
            expected = brute_force_sampled(gs, batch, samples, queue, weights, tau, n)

            push = float(push_loss(batch, samples, queue, gs, weights, tau, n_neg=n))
            pull = float(pull_loss(batch, samples, queue, gs, weights, tau, n_pos=n))
            self.assertAlmostEqual(push, expected, delta=1e-9)
            self.assertAlmostEqual(pull, -expected, delta=1e-9)

    def test_temperature_changes_value(self):
        rng = np.random.default_rng(5)
        gs, batch, queue, _, weights, _ = random_instance(rng, B=5, Q=12)
        samples = random_samples(rng, 5, 12, 4)
        samples[0] = np.array([0])
        first = float(push_loss(batch, samples, queue, gs, weights, 1.0, n_neg=4))
        second = float(push_loss(batch, samples, queue, gs, weights, 2.0, n_neg=4))
        self.assertNotAlmostEqual(first, second, places=9)

    def test_total_loss(self):
        breakdown = total_loss(1.0, 1.0, 1.0, 1.0, (1, 0.5, 0.01, 0.005))
        self.assertAlmostEqual(breakdown.total, 1.515, places=12)
        self.assertEqual(total_loss(2.0, 3.0, 4.0, 5.0, (0, 0, 0, 0)).total, 0.0)
        self.assertEqual(total_loss(2.0, 3.0, 4.0, 5.0, (1, 0, 0, 0)).total, 2.0)
        self.assertRaises(InvalidParameter, total_loss, 1.0, 1.0, 1.0, 1.0, (1, -1, 0, 0))
        self.assertTrue(breakdown.is_finite())

    def test_breakdown_json_on_tracked_tensors(self):
        value = torch.tensor(0.25, dtype=torch.float64, requires_grad=True)
        breakdown = total_loss(value, 2 * value, value, value, (1, 0.5, 0.01, 0.005))
        with warnings.catch_warnings():
            warnings.simplefilter('error')
            numbers = breakdown.json()
        self.assertAlmostEqual(numbers['total'], 0.25 + 0.25 + 0.0025 + 0.00125, places=12)
        self.assertTrue(all(isinstance(number, float) for number in numbers.values()))
        self.assertTrue(breakdown.total.requires_grad)

    def test_queue_receives_no_gradient(self):
        rng = np.random.default_rng(6)
        gs, batch, queue, assignments, weights, tau = random_instance(rng, B=3, Q=8)
        queue_v = queue.v.clone().requires_grad_(True)
        tracked = FeatureBatch(queue_v, queue.y, queue.t, queue.rho)
        v = batch.v.clone().requires_grad_(True)
        anchors = FeatureBatch(v, batch.y, batch.t, batch.rho)

        guide_loss(anchors, assignments, gs, tracked, weights, tau).backward()
        self.assertIsNone(queue_v.grad)
        self.assertIsNotNone(v.grad)

    def test_feature_gradients(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            gs, batch, queue, assignments, weights, tau = random_instance(rng, B=4, Q=12)
            positives = random_samples(rng, 4, 12, 3)
            negatives = random_samples(rng, 4, 12, 3)
            p = torch.tensor(rng.uniform(0.1, 0.9, size=4))

            def objective(v, p):
                anchors = FeatureBatch(v, batch.y, batch.t, batch.rho)
                return total_loss(
                    guide_loss(anchors, assignments, gs, queue, weights, tau),
                    ce_loss(p, batch.y, weights),
                    pull_loss(anchors, positives, queue, gs, weights, tau, n_pos=3),
                    push_loss(anchors, negatives, queue, gs, weights, tau, n_neg=3),
                    (1, 0.5, 0.01, 0.005)
                ).total

            inputs = (batch.v.clone().requires_grad_(True), p.requires_grad_(True))
            self.assertTrue(torch.autograd.gradcheck(
                objective, inputs, eps=1e-5, atol=1e-8, rtol=1e-4))


if __name__ == '__main__':
    unittest.main()
