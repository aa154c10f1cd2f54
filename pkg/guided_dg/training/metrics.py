"""Accuracy, AUC and per-epoch metric records."""

from dataclasses import dataclass, asdict

import numpy as np
import torch
from scipy.stats import rankdata

from ..errors import (
    EmptyBatch,
    LengthMismatch,
    SingleClassSplit
)


THRESHOLD = 0.5


def _scores_and_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise LengthMismatch(
            f'Got {len(scores)} scores for {len(labels)} labels.')
    if len(scores) == 0:
        raise EmptyBatch('Metrics need at least one sample.')
    return scores, labels.astype(np.int64)


def roc_auc(scores, labels):
    """Probability that a fake sample scores above a real one, ties counted
    as one half, from the Mann-Whitney rank statistic.

    :raises SingleClassSplit: if only one class is present
    """
    scores, labels = _scores_and_labels(scores, labels)
    positives = int(labels.sum())
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise SingleClassSplit('AUC is undefined for a split with a single class.')

    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels == 1].sum() - positives * (positives + 1) / 2
    return float(u / (positives * negatives))


def accuracy(scores, labels, threshold=THRESHOLD):
    """Share of samples where ``score >= threshold`` matches a fake label."""
    scores, labels = _scores_and_labels(scores, labels)
    return float(np.mean((scores >= threshold).astype(np.int64) == labels))


@torch.no_grad()
def predict(encoder, classifier, x):
    x = torch.as_tensor(np.asarray(x), dtype=torch.float64)
    return classifier.probability(classifier(encoder(x))).numpy()


def evaluate(encoder, classifier, split):
    """Accuracy at threshold 0.5 and AUC of the fake probability on a split.

    :return: (accuracy, auc)
    :rtype: tuple[float, float]
    """
    if len(split) == 0:
        raise EmptyBatch('Cannot evaluate on an empty split.')
    scores = predict(encoder, classifier, split.x)
    return accuracy(scores, split.y), roc_auc(scores, split.y)


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    losses: dict
    train_acc: float
    in_domain_acc: float
    in_domain_auc: float
    heldout_acc: float
    heldout_auc: float
    mapping: dict
    mean_confidence: float
    lr: float

    def json(self):
        return asdict(self)
