"""Training losses over unit-norm features.

All contrastive terms share the denominator

    sum over v_j in V u G of exp(v_i . v_j / tau)

where V is the feature queue and G holds every guide embedding (real and
forgery, assigned or not). Queue features are constants: no gradient flows
into stored features.
"""

from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np
import torch

from .errors import (
    EmptyBatch,
    InvalidParameter,
    InvalidWeights,
    LengthMismatch,
    UnassignedDomain
)


PROBABILITY_CLAMP = 1e-12
WEIGHT_TOLERANCE = 1e-6

DEFAULT_GAMMAS = (1.0, 0.5, 0.01, 0.005)


class LabeledFeature(NamedTuple):
    """A unit feature vector with its binary label, domain label and cluster label."""
    v: torch.Tensor
    y: int
    t: int
    rho: int

    def validate(self, tolerance=1e-6):
        norm = float(torch.linalg.norm(torch.as_tensor(self.v)))
        if abs(norm - 1) > tolerance:
            raise InvalidParameter(f'Feature must have unit norm, got {norm}.')
        if self.y not in (0, 1):
            raise InvalidParameter(f'Binary label must be 0 or 1, got {self.y}.')
        if (self.t == 0) != (self.y == 0):
            raise InvalidParameter(
                f'Domain 0 is reserved for real samples (y={self.y}, t={self.t}).')
        if self.rho < 0:
            raise InvalidParameter(f'Cluster label must be non-negative, got {self.rho}.')
        return self


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    """Column-wise storage of labelled features: ``v`` has shape (B, d) and
    ``y``, ``t``, ``rho`` have shape (B,)."""
    v: torch.Tensor
    y: torch.Tensor
    t: torch.Tensor
    rho: torch.Tensor

    @classmethod
    def from_features(cls, features, d=None):
        features = list(features)
        if not features:
            if d is None:
                raise EmptyBatch('Cannot infer the feature dimension of an empty batch.')
            return cls.empty(d)
        return cls(
            v=torch.stack([torch.as_tensor(f.v, dtype=torch.float64) for f in features]),
            y=torch.tensor([int(f.y) for f in features], dtype=torch.long),
            t=torch.tensor([int(f.t) for f in features], dtype=torch.long),
            rho=torch.tensor([int(f.rho) for f in features], dtype=torch.long)
        )

    @classmethod
    def empty(cls, d):
        return cls(
            v=torch.zeros((0, d), dtype=torch.float64),
            y=torch.zeros(0, dtype=torch.long),
            t=torch.zeros(0, dtype=torch.long),
            rho=torch.zeros(0, dtype=torch.long)
        )

    @classmethod
    def concatenate(cls, batches, d):
        batches = list(batches)
        if not batches:
            return cls.empty(d)
        return cls(
            v=torch.cat([b.v for b in batches]),
            y=torch.cat([b.y for b in batches]),
            t=torch.cat([b.t for b in batches]),
            rho=torch.cat([b.rho for b in batches])
        )

    def detach(self):
        return FeatureBatch(self.v.detach().clone(), self.y.clone(),
                            self.t.clone(), self.rho.clone())

    def __len__(self):
        return self.v.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, index):
        return LabeledFeature(self.v[index], int(self.y[index]),
                              int(self.t[index]), int(self.rho[index]))


def _as_float(value):
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


@dataclass(frozen=True)
class LossBreakdown:
    guide: Any
    ce: Any
    pull: Any
    push: Any
    total: Any

    def json(self):
        return {
            'guide': _as_float(self.guide),
            'ce': _as_float(self.ce),
            'pull': _as_float(self.pull),
            'push': _as_float(self.push),
            'total': _as_float(self.total)
        }

    def is_finite(self):
        return all(np.isfinite(value) for value in self.json().values())


def as_feature_batch(features, d=None):
    """Accept a FeatureBatch, an object exposing ``.features`` (such as a
    FeatureQueue), a sequence of LabeledFeature, or None."""
    if features is None:
        if d is None:
            raise InvalidParameter('Feature dimension needed for an empty feature set.')
        return FeatureBatch.empty(d)
    if isinstance(features, FeatureBatch):
        return features
    if hasattr(features, 'features'):
        stored = features.features
        if len(stored) == 0 and d is not None:
            return FeatureBatch.empty(d)
        return stored
    return FeatureBatch.from_features(features, d=d)


def _guide_matrix(gs, like):
    return torch.as_tensor(gs.guides, dtype=like.dtype, device=like.device)


def _check_weights(weights, size, like):
    weights = torch.as_tensor(weights, dtype=like.dtype, device=like.device)
    if weights.shape != (size,):
        raise LengthMismatch(
            f'Expected {size} sample weights, got shape {tuple(weights.shape)}.')
    total = float(weights.sum())
    if abs(total - 1) > WEIGHT_TOLERANCE:
        raise InvalidWeights(f'Sample weights must sum to 1, got {total}.')
    return weights


def _check_tau(tau):
    if tau <= 0:
        raise InvalidParameter(f'Temperature must be positive, got {tau}.')


def log_denominator(v, queue_v, guides, tau):
    """Per-anchor log of the shared denominator over the queue and all guides.

    :param v: Anchor features, shape (B, d)
    :param queue_v: Queue features, shape (Q, d); treated as constants
    :param guides: Guide embeddings, shape (N + 1, d)
    :return: Tensor of shape (B,)
    """
    logits = torch.cat([v @ queue_v.detach().T, v @ guides.T], dim=1) / tau
    return torch.logsumexp(logits, dim=1)


def guide_targets(t, assignments):
    """Guide index for every sample: 0 for real samples, the matched
    forgery guide index for fake samples."""
    targets = []
    for domain in t.tolist():
        if domain == 0:
            targets.append(0)
        elif domain in assignments:
            targets.append(int(assignments[domain]))
        else:
            raise UnassignedDomain(
                f'Forgery domain {domain} has no assigned guide embedding.')
    return torch.tensor(targets, dtype=torch.long, device=t.device)


def guide_loss(batch, assignments, gs, queue, weights, tau=1.0):
    """Weighted guide loss pulling every feature towards its guide embedding.

    :param batch: Batch features (gradients flow through ``batch.v``)
    :type batch: FeatureBatch
    :param assignments: Map from forgery domain to guide index in 1..N
    :type assignments: dict
    :param gs: The guide-space
    :type gs: GuideSpace
    :param queue: Feature queue V (may be empty)
    :param weights: Sample weights summing to 1
    :param tau: Temperature, defaults to 1
    :type tau: float, optional
    :raises EmptyBatch: if the batch is empty
    :raises UnassignedDomain: if a forgery domain in the batch has no guide
    :return: Scalar loss tensor
    :rtype: torch.Tensor
    """
    batch = as_feature_batch(batch)
    if len(batch) == 0:
        raise EmptyBatch('guide_loss needs a non-empty batch.')
    _check_tau(tau)

    v = batch.v
    weights = _check_weights(weights, len(batch), v)
    queue_v = as_feature_batch(queue, d=v.shape[1]).v.to(v.dtype)
    guides = _guide_matrix(gs, v)

    targets = guides[guide_targets(batch.t, assignments)]
    log_numerator = (v * targets).sum(dim=1) / tau
    return -(weights * (log_numerator - log_denominator(v, queue_v, guides, tau))).sum()


def ce_loss(p, y, weights):
    """Weighted binary cross-entropy with probabilities clamped away from 0 and 1.

    :raises LengthMismatch: if the inputs have different lengths
    """
    p = torch.as_tensor(p, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=p.dtype, device=p.device)
    if p.shape != y.shape:
        raise LengthMismatch(
            f'Predictions and labels differ in shape: {tuple(p.shape)} vs {tuple(y.shape)}.')
    weights = _check_weights(weights, p.shape[0], p)

    p = p.clamp(PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP)
    return -(weights * (y * torch.log(p) + (1 - y) * torch.log(1 - p))).sum()


def multiclass_ce_loss(logits, t, weights):
    """Weighted (1 + N)-way cross-entropy over domain labels."""
    t = torch.as_tensor(t, dtype=torch.long, device=logits.device)
    if logits.shape[0] != t.shape[0]:
        raise LengthMismatch(
            f'Logits and labels differ in length: {logits.shape[0]} vs {t.shape[0]}.')
    weights = _check_weights(weights, t.shape[0], logits)
    log_p = torch.log_softmax(logits, dim=1)
    return -(weights * log_p.gather(1, t.unsqueeze(1)).squeeze(1)).sum()


def pad_samples(samples, limit=None):
    """Convert per-anchor index lists into a padded index matrix and a mask."""
    samples = [np.asarray(s, dtype=np.int64).reshape(-1) for s in samples]
    width = max((len(s) for s in samples), default=0)
    if limit is not None and width > limit:
        raise InvalidParameter(
            f'At most {limit} sampled features per anchor are allowed, got {width}.')

    index = np.zeros((len(samples), width), dtype=np.int64)
    mask = np.zeros((len(samples), width), dtype=bool)
    for row, s in enumerate(samples):
        index[row, :len(s)] = s
        mask[row, :len(s)] = True
    return torch.from_numpy(index), torch.from_numpy(mask)


def _sampled_log_ratios(batch, samples, queue, gs, tau, limit):
    """Per-anchor sum over sampled queue features of
    log(exp(v_i . v_s / tau) / denominator_i)."""
    batch = as_feature_batch(batch)
    if len(batch) == 0:
        raise EmptyBatch('Contrastive losses need a non-empty batch.')
    if len(samples) != len(batch):
        raise LengthMismatch(
            f'Expected one sample set per anchor ({len(batch)}), got {len(samples)}.')
    _check_tau(tau)

    v = batch.v
    index, mask = pad_samples(samples, limit)
    if not mask.any():
        return v.new_zeros(len(batch))

    queue_v = as_feature_batch(queue, d=v.shape[1]).v.to(v.dtype).detach()
    guides = _guide_matrix(gs, v)
    selected = queue_v[index]  # (B, n, d)
    log_numerator = (v.unsqueeze(1) * selected).sum(dim=2) / tau
    log_ratio = log_numerator - log_denominator(v, queue_v, guides, tau).unsqueeze(1)
    return (log_ratio * mask.to(v.dtype)).sum(dim=1)


def push_loss(batch, negatives, queue, gs, weights, tau=1.0, n_neg=10):
    """Pushing loss over sampled negatives (different domain, same cluster).
    Positive sign: minimising it lowers the similarity to the negatives.
    Anchors without negatives contribute 0.
    """
    terms = _sampled_log_ratios(batch, negatives, queue, gs, tau, n_neg)
    weights = _check_weights(weights, terms.shape[0], terms)
    return (weights * terms).sum() / (1 + n_neg)


def pull_loss(batch, positives, queue, gs, weights, tau=1.0, n_pos=10):
    """Pulling loss over sampled positives (same domain, different cluster).
    Anchors without positives contribute 0.
    """
    terms = _sampled_log_ratios(batch, positives, queue, gs, tau, n_pos)
    weights = _check_weights(weights, terms.shape[0], terms)
    return -(weights * terms).sum() / (1 + n_pos)


def total_loss(guide, ce, pull, push, gammas=DEFAULT_GAMMAS):
    """Combine the four losses with non-negative scale factors.

    :param gammas: Scale factors (gamma1, gamma2, gamma3, gamma4)
    :type gammas: tuple
    :raises InvalidParameter: if a scale factor is negative
    :return: The breakdown; ``total`` keeps the type of the inputs (tensor or float)
    :rtype: LossBreakdown
    """
    gammas = tuple(float(g) for g in gammas)
    if len(gammas) != 4 or any(g < 0 for g in gammas):
        raise InvalidParameter(
            f'Expected four non-negative scale factors, got {gammas}.')
    g1, g2, g3, g4 = gammas
    total = g1 * guide + g2 * ce + g3 * pull + g4 * push
    return LossBreakdown(guide=guide, ce=ce, pull=pull, push=push, total=total)
