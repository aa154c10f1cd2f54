"""Feature queue, cluster labels and the pull/push candidate sets used to
decouple forgery-irrelevant correlations."""

import collections
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial.distance import cdist

from .errors import (
    BatchTooLarge,
    EmptyBatch,
    InvalidParameter,
    NotEnoughSamples
)
from .losses import (
    FeatureBatch,
    as_feature_batch
)
from .output.continuous_write import ContinuousWriter


MAX_KMEANS_ITERATIONS = 300


class FeatureQueue:
    """FIFO store of labelled features from past batches. Eviction removes
    whole batches, oldest first, until the queue fits its capacity."""

    def __init__(self, capacity, d=None):
        """Create a FeatureQueue object.

        :param capacity: Maximum number of stored features (Q)
        :type capacity: int
        :param d: Feature dimension, defaults to None (taken from the first batch)
        :type d: int, optional
        """
        if capacity < 1:
            raise InvalidParameter(f'Queue capacity must be positive, got {capacity}.')
        self.capacity = capacity
        self.d = d
        self.total_enqueued = 0
        self.total_evicted = 0
        self._batches = collections.deque()
        self._size = 0
        self._features = None

    def __len__(self):
        return self._size

    def enqueue(self, batch):
        """Append a batch (stored detached) and evict the oldest batches on overflow.

        :raises EmptyBatch: if the batch is empty
        :raises BatchTooLarge: if the batch alone exceeds the capacity
        """
        batch = as_feature_batch(batch, d=self.d)
        if len(batch) == 0:
            raise EmptyBatch('Cannot enqueue an empty batch.')
        if len(batch) > self.capacity:
            raise BatchTooLarge(
                f'Batch of {len(batch)} features does not fit a queue of capacity {self.capacity}.')

        self.d = batch.v.shape[1]
        self._batches.append(batch.detach())
        self._size += len(batch)
        self.total_enqueued += len(batch)

        while self._size > self.capacity:
            evicted = self._batches.popleft()
            self._size -= len(evicted)
            self.total_evicted += len(evicted)

        self._features = None
        return self

    @property
    def features(self):
        if self._features is None:
            self._features = FeatureBatch.concatenate(self._batches, self.d or 0)
        return self._features

    @property
    def entries(self):
        return list(self.features)


def enqueue_batch(queue, batch):
    """Enqueue ``batch`` into ``queue`` and return the queue."""
    return queue.enqueue(batch)


@dataclass(frozen=True, eq=False)
class ClusterModel:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list = field(default_factory=list)
    iterations: int = 0

    @property
    def K(self):
        return self.centroids.shape[0]

    @property
    def inertia(self):
        return self.inertia_history[-1] if self.inertia_history else 0.0

    def predict(self, features):
        distances = cdist(np.asarray(features, dtype=np.float64), self.centroids, 'sqeuclidean')
        return np.argmin(distances, axis=1)


def _kmeans_plus_plus(features, K, rng):
    n = features.shape[0]
    chosen = [int(rng.integers(n))]
    closest = cdist(features, features[chosen], 'sqeuclidean').min(axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(n, p=closest / total))
        else:  # every point coincides with a centroid already
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(rng.choice(remaining))
        chosen.append(index)
        closest = np.minimum(
            closest, cdist(features, features[[index]], 'sqeuclidean')[:, 0])
    return features[chosen].copy()


def kmeans_cluster(features, K, seed=0, max_iterations=MAX_KMEANS_ITERATIONS):
    """Lloyd's k-means with k-means++ seeding.

    Empty clusters are reseeded with the point farthest from its current
    centroid. Iterations stop when the assignment no longer changes or after
    ``max_iterations``.

    :param features: Points, shape (n, m)
    :type features: numpy.ndarray
    :param K: Number of clusters
    :type K: int
    :param seed: Seed for the initial centroids
    :type seed: int
    :raises NotEnoughSamples: if there are fewer points than clusters
    :return: The fitted model
    :rtype: ClusterModel
    """
    features = np.asarray(features, dtype=np.float64)
    if K < 1:
        raise InvalidParameter(f'Need at least one cluster, got K={K}.')
    if features.shape[0] < K:
        raise NotEnoughSamples(
            f'Cannot form {K} clusters from {features.shape[0]} points.')

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(features, K, rng)

    labels = None
    history = []
    iterations = 0
    while iterations < max_iterations:
        distances = cdist(features, centroids, 'sqeuclidean')
        new_labels = np.argmin(distances, axis=1)

        counts = np.bincount(new_labels, minlength=K)
        for empty in np.flatnonzero(counts == 0):
            own = distances[np.arange(len(features)), new_labels]
            # only take points from clusters that keep at least one member
            own[counts[new_labels] <= 1] = -1
            farthest = int(np.argmax(own))
            counts[new_labels[farthest]] -= 1
            new_labels[farthest] = empty
            counts[empty] = 1
            centroids[empty] = features[farthest]
            distances[farthest, empty] = 0.0

        history.append(float(distances[np.arange(len(features)), new_labels].sum()))
        iterations += 1

        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels

        for cluster in range(K):
            centroids[cluster] = features[labels == cluster].mean(axis=0)

    return ClusterModel(centroids=centroids, labels=labels,
                        inertia_history=history, iterations=iterations)


def decoupling_masks(t, rho, queue_t, queue_rho):
    """Membership masks of the pull set (same domain, different cluster) and
    the push set (different domain, same cluster), shape (B, Q)."""
    same_domain = t.unsqueeze(1) == queue_t.unsqueeze(0)
    same_cluster = rho.unsqueeze(1) == queue_rho.unsqueeze(0)
    return same_domain & ~same_cluster, ~same_domain & same_cluster


def build_decoupling_sets(anchor, queue):
    """Queue indices of the pull set V+ and push set V- of one anchor.

    :param anchor: The anchor feature, with domain and cluster labels
    :type anchor: LabeledFeature
    :param queue: Feature queue V
    :return: Index arrays (V+, V-), each in ascending queue order
    :rtype: tuple[numpy.ndarray, numpy.ndarray]
    """
    queue = as_feature_batch(queue, d=len(anchor.v))
    positive, negative = decoupling_masks(
        torch.tensor([anchor.t]), torch.tensor([anchor.rho]), queue.t, queue.rho)
    return (positive[0].nonzero().flatten().numpy(),
            negative[0].nonzero().flatten().numpy())


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_sets(positives, negatives, n_pos, n_neg, seed=0):
    """Uniformly sample at most ``n_pos`` / ``n_neg`` indices without
    replacement; a set smaller than its quota is taken whole.

    :param seed: Seed or numpy Generator
    :return: (sampled positives, sampled negatives)
    :rtype: tuple[numpy.ndarray, numpy.ndarray]
    """
    if n_pos < 0 or n_neg < 0:
        raise InvalidParameter(
            f'Sample quotas must be non-negative, got n+={n_pos}, n-={n_neg}.')
    rng = _as_rng(seed)

    def draw(candidates, quota):
        candidates = np.asarray(candidates, dtype=np.int64)
        if len(candidates) <= quota:
            return candidates.copy()
        return rng.choice(candidates, size=quota, replace=False)

    return draw(positives, n_pos), draw(negatives, n_neg)


def sample_from_mask(mask, quota, seed=0):
    """Row-wise uniform sampling without replacement of at most ``quota``
    members of a boolean (B, Q) mask.

    :return: One index array per row
    :rtype: list[numpy.ndarray]
    """
    rng = _as_rng(seed)
    mask = np.asarray(mask, dtype=bool)
    samples = []
    for row in mask:
        members = np.flatnonzero(row)
        if len(members) > quota:
            members = rng.choice(members, size=quota, replace=False)
        samples.append(members.astype(np.int64))
    return samples


def export_cluster_assignments(file_name, t, rho, sample_ids=None):
    """Write (sample_id, t, rho) rows as CSV."""
    t = np.asarray(t)
    rho = np.asarray(rho)
    if sample_ids is None:
        sample_ids = np.arange(len(t))
    with ContinuousWriter(file_name, columns=['sample_id', 't', 'rho']) as writer:
        writer.write_all(
            {'sample_id': int(i), 't': int(a), 'rho': int(b)}
            for i, a, b in zip(sample_ids, t, rho))
