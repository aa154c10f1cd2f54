"""Training loop: guide-space objective with confidence weighting, queue
maintenance, per-iteration domain matching and per-epoch evaluation."""

from dataclasses import dataclass, field

import numpy as np
import torch

from ..adbm import (
    batch_weights,
    confidence,
    uniform_weights
)
from ..assignment import (
    domain_means,
    match_domains
)
from ..debugging import log
from ..decoupling import (
    FeatureQueue,
    decoupling_masks,
    kmeans_cluster,
    sample_from_mask
)
from ..errors import (
    DimensionMismatch,
    NonFiniteLoss
)
from ..losses import (
    FeatureBatch,
    ce_loss,
    guide_loss,
    multiclass_ce_loss,
    pull_loss,
    push_loss,
    total_loss
)
from ..output.continuous_write import ContinuousWriter
from ..utils.core import chunks
from .metrics import (
    MetricsRecord,
    accuracy,
    evaluate,
    predict
)
from .models import build_models, count_parameters


GRADIENT_CHECK_STEP = 1e-5
GRADIENT_CHECK_FLOOR = 1e-3
LOSS_NAMES = ('guide', 'ce', 'pull', 'push', 'total')


@dataclass
class BatchContext:
    """Everything the objective of one batch depends on besides the model
    parameters: domain matching, sample weights and sampled queue indices."""
    mapping: dict
    weights: torch.Tensor
    positives: list = field(default_factory=list)
    negatives: list = field(default_factory=list)
    queue_ready: bool = False
    confidences: torch.Tensor = None


def check_compatible(cfg, gs, input_dim=None, N=None, encoder=None):
    if gs.d != cfg.feature_dim:
        raise DimensionMismatch(
            f'Guide-space has d={gs.d} but the config asks for feature_dim={cfg.feature_dim}.')
    if abs(gs.theta0 - cfg.theta0) > 1e-9:
        raise DimensionMismatch(
            f'Guide-space was solved for theta0={gs.theta0}, config asks for {cfg.theta0}.')
    if N is not None and gs.N != N:
        raise DimensionMismatch(
            f'Guide-space has N={gs.N} forgery embeddings, the dataset has {N} forgery domains.')
    if encoder is not None and input_dim is not None and encoder.input_dim != input_dim:
        raise DimensionMismatch(
            f'Encoder expects inputs of length {encoder.input_dim}, got {input_dim}.')


def _as_tensors(x, y, t, rho):
    return (torch.as_tensor(np.asarray(x), dtype=torch.float64),
            torch.as_tensor(np.asarray(y), dtype=torch.long),
            torch.as_tensor(np.asarray(t), dtype=torch.long),
            torch.as_tensor(np.asarray(rho), dtype=torch.long))


def prepare_context(features, queue, cfg, gs, previous=None, adbm_active=False,
                    freeze_mapping=False, rng=None):
    """Fix the matching, weights and sampled sets for one batch.

    :param features: Detached batch features
    :type features: FeatureBatch
    :param queue: Feature queue (anything exposing ``features``) or a FeatureBatch
    :param previous: Mapping of the previous iteration, defaults to None
    :param adbm_active: Use confidence weights instead of uniform ones
    :param freeze_mapping: Reuse ``previous`` unchanged
    :param rng: numpy Generator or seed for sampling
    :rtype: BatchContext
    """
    if freeze_mapping and previous:
        mapping = dict(previous)
    else:
        mapping = match_domains(domain_means(features, gs.N), gs, previous).mapping

    queue_features = queue if isinstance(queue, FeatureBatch) else queue.features
    queue_ready = len(queue_features) >= max(1, min(cfg.batch_size, len(features)))
    weights = uniform_weights(len(features))
    context = BatchContext(mapping=mapping, weights=weights, queue_ready=queue_ready)
    if not queue_ready:
        return context

    context.confidences = confidence(features, queue_features, cfg.k).c
    if adbm_active:
        context.weights = batch_weights(context.confidences)

    positive_mask, negative_mask = decoupling_masks(
        features.t, features.rho, queue_features.t, queue_features.rho)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    context.positives = sample_from_mask(positive_mask.numpy(), cfg.n_pos, rng)
    context.negatives = sample_from_mask(negative_mask.numpy(), cfg.n_neg, rng)
    return context


def batch_objective(encoder, classifier, x, y, t, rho, context, queue, cfg, gs):
    """Scaled sum of the four losses on one batch, differentiable in the
    parameters of both modules.

    Losses that need the queue are zero until the context marks it ready.

    :rtype: LossBreakdown
    """
    v = encoder(x)
    batch = FeatureBatch(v=v, y=y, t=t, rho=rho)
    weights = context.weights.to(v.dtype)

    logits = classifier(v)
    if classifier.multiclass:
        ce = multiclass_ce_loss(logits, t, weights)
    else:
        ce = ce_loss(classifier.probability(logits), y, weights)

    if context.queue_ready:
        guide = guide_loss(batch, context.mapping, gs, queue, weights, cfg.tau)
        pull = pull_loss(batch, context.positives, queue, gs, weights, cfg.tau, cfg.n_pos)
        push = push_loss(batch, context.negatives, queue, gs, weights, cfg.tau, cfg.n_neg)
    else:
        guide = pull = push = v.new_zeros(())
    return total_loss(guide, ce, pull, push, cfg.gammas)


def _parameters(encoder, classifier):
    return [p for module in (encoder, classifier) for p in module.parameters()]


def loss_gradients(encoder, classifier, x, y, t, rho, context, queue, cfg, gs):
    """Autograd gradient of the batch objective, flattened over all parameters."""
    parameters = _parameters(encoder, classifier)
    for p in parameters:
        p.grad = None
    breakdown = batch_objective(encoder, classifier, x, y, t, rho, context, queue, cfg, gs)
    breakdown.total.backward()
    return torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in parameters
    ]).detach()


def gradient_check(encoder, classifier, batch, cfg, gs, queue=None, context=None,
                   h=GRADIENT_CHECK_STEP):
    """Compare the autograd gradient of the batch objective with central
    finite differences over every parameter.

    The matching, weights and sampled sets are computed once and held fixed.
    Without a queue the batch's own detached features serve as the queue.

    :param batch: Inputs and labels with ``x``, ``y``, ``t``, ``rho``
    :type batch: Split
    :param h: Finite difference step, defaults to 1e-5
    :return: Maximum relative error |a - n| / max(|a|, |n|, 1e-3)
    :rtype: float
    """
    x, y, t, rho = _as_tensors(batch.x, batch.y, batch.t, batch.rho)
    if count_parameters(encoder, classifier) > 2000:
        log('debug', 'Finite differences over more than 2000 parameters may be slow.')

    with torch.no_grad():
        features = FeatureBatch(v=encoder(x), y=y, t=t, rho=rho).detach()
    if queue is None:
        queue = features
    if context is None:
        context = prepare_context(features, queue, cfg, gs, adbm_active=cfg.use_adbm,
                                  rng=cfg.seed)

    analytic = loss_gradients(encoder, classifier, x, y, t, rho, context, queue, cfg, gs)

    numeric = []
    with torch.no_grad():
        for p in _parameters(encoder, classifier):
            flat = p.view(-1)
            for i in range(flat.numel()):
                original = float(flat[i])
                flat[i] = original + h
                upper = float(batch_objective(
                    encoder, classifier, x, y, t, rho, context, queue, cfg, gs).total)
                flat[i] = original - h
                lower = float(batch_objective(
                    encoder, classifier, x, y, t, rho, context, queue, cfg, gs).total)
                flat[i] = original
                numeric.append((upper - lower) / (2 * h))

    numeric = torch.tensor(numeric, dtype=torch.float64)
    scale = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=GRADIENT_CHECK_FLOOR)
    return float(((analytic - numeric).abs() / scale).max())


def domain_batches(t, batch_size, rng, balanced=True):
    """Index batches for one epoch. Balanced batches interleave per-domain
    permutations so every batch holds near-equal shares of each domain.
    A trailing partial batch is dropped unless it is the only batch."""
    t = np.asarray(t)
    if balanced:
        pools = [rng.permutation(np.flatnonzero(t == domain)) for domain in np.unique(t)]
        longest = max(len(pool) for pool in pools)
        order = np.array([pool[i] for i in range(longest) for pool in pools if i < len(pool)],
                         dtype=np.int64)
    else:
        order = rng.permutation(len(t))

    batches = list(chunks(order, batch_size))
    if len(batches) > 1 and len(batches[-1]) < batch_size:
        batches.pop()
    return batches


def dump_features(encoder, split, file_name, rho=None):
    """Write (sample_id, t, rho, f_0..f_{d-1}) rows for every sample of a split."""
    with torch.no_grad():
        features = encoder(torch.as_tensor(split.x, dtype=torch.float64)).numpy()
    rho = split.rho if rho is None else np.asarray(rho)
    columns = ['sample_id', 't', 'rho'] + [f'f_{i}' for i in range(features.shape[1])]

    def rows():
        for index, (t, r, f) in enumerate(zip(split.t, rho, features)):
            row = {'sample_id': index, 't': int(t), 'rho': int(r)}
            row.update({f'f_{i}': float(value) for i, value in enumerate(f)})
            yield row

    with ContinuousWriter(file_name, columns=columns) as writer:
        writer.write_all(rows())


class Trainer:
    """Owns the models, optimiser, queue and domain matching of one run."""

    def __init__(self, dataset, cfg, gs, metrics_writer=None, confidence_writer=None):
        """Create a Trainer object.

        :param dataset: The benchmark
        :type dataset: SyntheticDataset
        :param cfg: Training hyperparameters
        :type cfg: TrainConfig
        :param gs: Solved guide-space matching the config
        :type gs: GuideSpace
        :param metrics_writer: Receives one record per epoch, defaults to None
        :type metrics_writer: ContinuousWriter, optional
        :param confidence_writer: Receives per-sample confidences, defaults to None
        :type confidence_writer: ContinuousWriter, optional
        :raises DimensionMismatch: if config, guide-space and dataset disagree
        """
        cfg.validate()
        self.N = dataset.spec.n_train_forgery
        check_compatible(cfg, gs, N=self.N)

        self.dataset = dataset
        self.cfg = cfg
        self.gs = gs
        self.metrics_writer = metrics_writer
        self.confidence_writer = confidence_writer

        torch.manual_seed(cfg.seed)
        torch.set_num_threads(cfg.num_threads)
        self.rng = np.random.default_rng(cfg.seed)

        self.encoder, self.classifier = build_models(cfg, dataset.train.input_dim, self.N)
        self.optimizer = torch.optim.SGD(
            _parameters(self.encoder, self.classifier), lr=cfg.lr, momentum=cfg.momentum)
        self.scheduler = None
        if cfg.lr_schedule == 'cosine' and cfg.epochs > 0:
            self.scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
                self.optimizer, T_max=cfg.epochs)

        K = cfg.num_clusters or dataset.spec.nuisance_clusters
        self.clusters = kmeans_cluster(dataset.train.x, K, seed=cfg.seed)
        log('debug', f'Clustered the train split into {K} clusters '
            f'(inertia {self.clusters.inertia:.3f}, {self.clusters.iterations} iterations).')

        self.x, self.y, self.t, self.rho = _as_tensors(
            dataset.train.x, dataset.train.y, dataset.train.t, self.clusters.labels)
        self.queue = FeatureQueue(cfg.queue_size, cfg.feature_dim)
        self.mapping = {domain: domain for domain in range(1, self.N + 1)}
        self.records = []

    @property
    def current_lr(self):
        return float(self.optimizer.param_groups[0]['lr'])

    def step(self, epoch, iteration, indices):
        """One optimisation step on the given train indices.

        :raises NonFiniteLoss: if any loss is NaN or infinite
        :return: The loss breakdown and the confidences (None during warm-up)
        """
        cfg = self.cfg
        index = torch.as_tensor(indices, dtype=torch.long)
        x, y, t, rho = self.x[index], self.y[index], self.t[index], self.rho[index]

        self.encoder.train()
        with torch.no_grad():
            features = FeatureBatch(v=self.encoder(x), y=y, t=t, rho=rho)

        freeze = (cfg.freeze_matching_epoch is not None
                  and epoch > cfg.freeze_matching_epoch)
        adbm_active = cfg.use_adbm and epoch >= cfg.adbm_start_epoch
        context = prepare_context(features, self.queue, cfg, self.gs, self.mapping,
                                  adbm_active, freeze, self.rng)
        if context.mapping != self.mapping:
            log('debug', f'Epoch {epoch}, iteration {iteration}: domain matching '
                f'changed to {context.mapping}.')
        self.mapping = context.mapping

        self.optimizer.zero_grad()
        breakdown = batch_objective(self.encoder, self.classifier, x, y, t, rho,
                                    context, self.queue, cfg, self.gs)
        if not breakdown.is_finite():
            raise NonFiniteLoss(
                f'Non-finite loss at epoch {epoch}, iteration {iteration}: {breakdown.json()}')

        if breakdown.total.requires_grad:
            breakdown.total.backward()
            self.optimizer.step()

        self.queue.enqueue(features)

        if self.confidence_writer is not None and context.confidences is not None:
            self.confidence_writer.write_all(
                {'epoch': epoch, 'iteration': iteration, 'sample_index': int(i),
                 'confidence': float(c), 'weight': float(w)}
                for i, c, w in zip(indices, context.confidences, context.weights))

        return breakdown.json(), context.confidences

    def run_epoch(self, epoch):
        cfg = self.cfg
        lr = self.current_lr
        totals = dict.fromkeys(LOSS_NAMES, 0.0)
        confidences = []

        batches = domain_batches(self.dataset.train.t, cfg.batch_size, self.rng,
                                 cfg.balanced_batches)
        for iteration, indices in enumerate(batches):
            losses, c = self.step(epoch, iteration, indices)
            for name in LOSS_NAMES:
                totals[name] += losses[name]
            if c is not None:
                confidences.append(c)

        if self.scheduler is not None:
            self.scheduler.step()

        count = max(len(batches), 1)
        self.encoder.eval()
        train_scores = predict(self.encoder, self.classifier, self.dataset.train.x)
        in_acc, in_auc = evaluate(self.encoder, self.classifier, self.dataset.test)
        out_acc, out_auc = evaluate(self.encoder, self.classifier, self.dataset.heldout)

        record = MetricsRecord(
            epoch=epoch,
            losses={name: total / count for name, total in totals.items()},
            train_acc=accuracy(train_scores, self.dataset.train.y),
            in_domain_acc=in_acc,
            in_domain_auc=in_auc,
            heldout_acc=out_acc,
            heldout_auc=out_auc,
            mapping={str(k): v for k, v in sorted(self.mapping.items())},
            mean_confidence=float(torch.cat(confidences).mean()) if confidences else None,
            lr=lr
        )
        log('info', f'Epoch {epoch}/{cfg.epochs}: loss {record.losses["total"]:.4f}, '
            f'in-domain AUC {in_auc:.4f}, held-out AUC {out_auc:.4f}')
        return record

    def fit(self):
        """Run every epoch, numbered from 1.

        :return: One record per epoch
        :rtype: list[MetricsRecord]
        """
        for epoch in range(1, self.cfg.epochs + 1):
            record = self.run_epoch(epoch)
            self.records.append(record)
            if self.metrics_writer is not None:
                self.metrics_writer.write(record.json(), flush=True)
        return self.records


def train(dataset, cfg, gs, metrics_writer=None, confidence_writer=None):
    """Train an encoder and classifier on the benchmark.

    :return: (encoder, classifier, metrics records)
    :rtype: tuple[Encoder, Classifier, list[MetricsRecord]]
    """
    trainer = Trainer(dataset, cfg, gs, metrics_writer, confidence_writer)
    records = trainer.fit()
    return trainer.encoder, trainer.classifier, records
