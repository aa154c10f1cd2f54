"""Matching of forgery domains to forgery guide embeddings (the relation Phi)."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DegenerateMean,
    EmptyBatch,
    InvalidParameter,
    NonSquareCost
)
from .losses import as_feature_batch


DEGENERATE_NORM = 1e-9


@dataclass(frozen=True)
class DomainMatch:
    mapping: dict
    cost: float

    def json(self):
        return {str(domain): guide for domain, guide in sorted(self.mapping.items())}


def domain_means(batch, N):
    """Unit-normalised mean feature of every forgery domain present in the batch.

    :param batch: Batch features
    :type batch: FeatureBatch
    :param N: Number of forgery domains
    :type N: int
    :raises EmptyBatch: if the batch is empty
    :raises DegenerateMean: if a mean cancels out to (almost) zero
    :return: Map from domain label in 1..N to a unit vector
    :rtype: dict
    """
    batch = as_feature_batch(batch)
    if len(batch) == 0:
        raise EmptyBatch('Domain means need a non-empty batch.')

    v = batch.v.detach().cpu().numpy().astype(np.float64)
    t = batch.t.cpu().numpy()

    means = {}
    for domain in range(1, N + 1):
        members = v[t == domain]
        if len(members) == 0:
            continue
        mean = members.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < DEGENERATE_NORM:
            raise DegenerateMean(
                f'Mean feature of domain {domain} has norm {norm:.3e}.')
        means[domain] = mean / norm
    return means


def _assignment_cost(cost, rows, columns):
    return float(cost[rows, columns].sum())


def hungarian(cost):
    """Minimum-cost perfect assignment of a square cost matrix. Among optimal
    assignments the lexicographically smallest permutation is returned.

    :param cost: Square matrix of finite costs
    :type cost: numpy.ndarray
    :raises NonSquareCost: if the matrix is not square
    :return: (permutation as a tuple where row i goes to column perm[i], total cost)
    :rtype: tuple[tuple, float]
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise NonSquareCost(f'Cost matrix must be square, got shape {cost.shape}.')
    if not np.all(np.isfinite(cost)):
        raise InvalidParameter('Cost matrix entries must be finite.')

    n = cost.shape[0]
    if n == 0:
        return (), 0.0

    rows, columns = linear_sum_assignment(cost)
    best = _assignment_cost(cost, rows, columns)
    tolerance = 1e-12 * max(1.0, abs(best))

    # Fix rows in order to the smallest column that still admits an optimum
    permutation = []
    free_rows = list(range(n))
    free_columns = list(range(n))
    fixed_cost = 0.0
    for row in range(n):
        free_rows.remove(row)
        for column in sorted(free_columns):
            remaining_columns = [c for c in free_columns if c != column]
            rest = 0.0
            if free_rows:
                sub = cost[np.ix_(free_rows, remaining_columns)]
                sub_rows, sub_columns = linear_sum_assignment(sub)
                rest = _assignment_cost(sub, sub_rows, sub_columns)
            if fixed_cost + cost[row, column] + rest <= best + tolerance:
                permutation.append(column)
                fixed_cost += cost[row, column]
                free_columns.remove(column)
                break

    permutation = tuple(int(c) for c in permutation)
    return permutation, _assignment_cost(cost, np.arange(n), np.array(permutation))


def match_domains(means, gs, previous=None):
    """Match the present forgery domains to forgery guide embeddings by
    cosine distance; absent domains keep their previous guide when it is
    still free, otherwise they take the lowest free guide index.

    :param means: Map from domain label to mean feature, renormalised here
    :type means: dict
    :param gs: The guide-space
    :type gs: GuideSpace
    :param previous: Previous mapping, defaults to None
    :type previous: dict, optional
    :raises DegenerateMean: if a mean has (almost) zero norm
    :return: The bijective mapping domain -> guide index (both in 1..N)
    :rtype: DomainMatch
    """
    N = gs.N
    unknown = [domain for domain in means if not 1 <= domain <= N]
    if unknown:
        raise InvalidParameter(f'Unknown forgery domains: {unknown}.')

    present = sorted(means)
    mapping = {}
    total = 0.0
    if present:
        cost = np.zeros((N, N))
        for row, domain in enumerate(present):
            mean = np.asarray(means[domain], dtype=np.float64)
            norm = np.linalg.norm(mean)
            if norm < DEGENERATE_NORM:
                raise DegenerateMean(f'Mean feature of domain {domain} has norm {norm}.')
            cost[row] = 1 - gs.g_f @ (mean / norm)
        # rows beyond the present domains are zero padding
        permutation, _ = hungarian(cost)
        for row, domain in enumerate(present):
            mapping[domain] = permutation[row] + 1
            total += float(cost[row, permutation[row]])

    used = set(mapping.values())
    for domain in range(1, N + 1):
        if domain in mapping:
            continue
        guide = (previous or {}).get(domain)
        if guide is None or guide in used:
            guide = min(set(range(1, N + 1)) - used)
        mapping[domain] = guide
        used.add(guide)

    return DomainMatch(mapping=mapping, cost=total)
