"""Adjustment of the decision boundary manifold.

Each batch feature gets a confidence from the domain agreement of its k
nearest queue features, and low-confidence samples get larger weights.
"""

from dataclasses import dataclass

import torch

from .errors import (
    EmptyBatch,
    EmptyQueue,
    InvalidParameter
)
from .losses import as_feature_batch

# Penalty for a fake anchor whose neighbour is a different forgery domain.
OTHER_FORGERY_MU = 0.5


@dataclass(frozen=True, eq=False)
class ConfidenceReport:
    c: torch.Tensor
    neighbor_indices: torch.Tensor


def nearest_queue_neighbors(v, queue_v, k):
    """Indices of the k most similar queue features per anchor, by descending
    similarity with ties broken by ascending queue index."""
    similarities = v @ queue_v.T
    k = min(k, queue_v.shape[0])
    threshold = torch.topk(similarities, k, dim=1).values[:, -1:]

    # everything above the k-th value, then the lowest-index ties to fill k
    above = similarities > threshold
    tied = similarities == threshold
    room = k - above.sum(dim=1, keepdim=True)
    selected = above | (tied & (torch.cumsum(tied.long(), dim=1) <= room))

    columns = selected.nonzero()[:, 1].reshape(-1, k)
    order = torch.sort(-similarities.gather(1, columns), dim=1, stable=True).indices
    return columns.gather(1, order), similarities


@torch.no_grad()
def confidence(batch, queue, k):
    """Confidence of every batch sample from its neighbourhood in the queue.

    :param batch: Batch features
    :type batch: FeatureBatch
    :param queue: Feature queue V
    :param k: Number of neighbours
    :type k: int
    :raises EmptyQueue: if the queue is empty
    :raises InvalidParameter: if k < 1
    :return: Confidences in [-1, 1] and the neighbour indices
    :rtype: ConfidenceReport
    """
    if k < 1:
        raise InvalidParameter(f'k must be at least 1, got {k}.')
    batch = as_feature_batch(batch)
    queue = as_feature_batch(queue, d=batch.v.shape[1])
    if len(queue) == 0:
        raise EmptyQueue('Confidence needs at least one queue feature.')

    v = batch.v.detach()
    neighbors, similarities = nearest_queue_neighbors(v, queue.v.to(v.dtype), k)

    epsilon = (1 + similarities.gather(1, neighbors)) / 2
    anchor_t = batch.t.unsqueeze(1)
    neighbor_t = queue.t[neighbors]

    same = neighbor_t == anchor_t
    mu = torch.where(
        (anchor_t != 0) & (neighbor_t != 0),
        torch.full_like(epsilon, OTHER_FORGERY_MU),
        torch.ones_like(epsilon)
    )
    coefficient = torch.where(same, torch.ones_like(epsilon), -mu)
    c = (coefficient * epsilon).mean(dim=1)
    return ConfidenceReport(c=c, neighbor_indices=neighbors)


def batch_weights(c):
    """Sample weights softmax(-c): the lower the confidence, the higher the weight.

    :raises EmptyBatch: if there are no confidences
    """
    c = torch.as_tensor(c, dtype=torch.float64)
    if c.numel() == 0:
        raise EmptyBatch('Batch weights need at least one confidence.')
    return torch.softmax(-c.detach(), dim=0)


def uniform_weights(size, dtype=torch.float64):
    if size < 1:
        raise EmptyBatch('Batch weights need at least one sample.')
    return torch.full((size,), 1.0 / size, dtype=dtype)
