"""Synthetic multi-domain benchmark.

A sample of domain ``t`` with nuisance cluster ``rho`` is

    x = signal_scale * (W_0 c + [t > 0] W_t a) + nuisance_scale * U_rho (1 + z) + noise_scale * n

``W_0`` is the real pattern and every sample carries it with sign-symmetric
amplitudes ``c``, forged or not. A forgery of domain ``t`` adds its own trace
``W_t a`` with positive amplitudes ``a = 1 + |s|``, so real and fake differ
only by the presence of a trace, and the trace of the held-out domain lives
in coordinates no training domain uses. ``U_rho`` is the basis of nuisance
cluster ``rho`` shared by every domain, and ``c``, ``s``, ``z``, ``n`` are
standard Gaussian draws. Nuisance clusters are balanced inside every domain,
so the cluster label carries no information about the domain.
"""

import os
from dataclasses import dataclass, asdict, fields

import numpy as np
from sklearn.metrics import normalized_mutual_info_score

from .errors import (
    DatasetNotFound,
    InvalidGenSpec
)
from .debugging import log
from .output.continuous_write import (
    ContinuousWriter,
    read_csv_rows,
    read_json_document,
    write_json_document
)


NMI_THRESHOLD = 0.05
SPLIT_NAMES = ('train', 'test', 'heldout')


@dataclass(frozen=True)
class GenSpec:
    """Parameters of the synthetic benchmark.

    :param input_dim: Dimension m of the input vectors
    :param n_train_forgery: Number N of forgery domains seen in training
    :param signal_dims: Coordinates reserved for the training signal blocks
    :param nuisance_dims: Coordinates reserved for the nuisance term
    :param nuisance_clusters: Number of nuisance clusters
    :param samples_per_domain: Samples generated for every domain
    :param test_fraction: Share of each training domain kept for the in-domain test split
    """
    input_dim: int = 32
    n_train_forgery: int = 4
    signal_dims: int = 8
    nuisance_dims: int = 16
    nuisance_clusters: int = 8
    signal_scale: float = 1.0
    nuisance_scale: float = 2.0
    noise_scale: float = 0.25
    samples_per_domain: int = 2000
    test_fraction: float = 0.2
    seed: int = 0

    @property
    def signal_rank(self):
        """Width of every domain's signal block."""
        return self.signal_dims // (self.n_train_forgery + 1)

    @property
    def spare_dims(self):
        return self.input_dim - self.signal_dims - self.nuisance_dims

    def validate(self):
        for name in ('input_dim', 'n_train_forgery', 'signal_dims',
                     'nuisance_dims', 'nuisance_clusters', 'samples_per_domain'):
            if getattr(self, name) < 1:
                raise InvalidGenSpec(f'{name} must be positive, got {getattr(self, name)}.')
        for name in ('signal_scale', 'nuisance_scale', 'noise_scale'):
            if getattr(self, name) < 0:
                raise InvalidGenSpec(f'{name} must be non-negative, got {getattr(self, name)}.')

        if self.signal_dims + self.nuisance_dims > self.input_dim:
            raise InvalidGenSpec(
                f'signal_dims + nuisance_dims = {self.signal_dims + self.nuisance_dims} '
                f'exceeds input_dim = {self.input_dim}.')
        if self.nuisance_scale != 0 and self.nuisance_scale < self.signal_scale:
            raise InvalidGenSpec(
                f'nuisance_scale ({self.nuisance_scale}) must be at least '
                f'signal_scale ({self.signal_scale}).')
        if self.signal_rank < 1:
            raise InvalidGenSpec(
                f'signal_dims={self.signal_dims} cannot give each of the '
                f'{self.n_train_forgery + 1} training domains its own block.')
        if self.spare_dims < self.signal_rank:
            raise InvalidGenSpec(
                f'The held-out domain needs {self.signal_rank} spare coordinates, '
                f'only {self.spare_dims} are left.')
        if not 0 < self.test_fraction < 1:
            raise InvalidGenSpec(
                f'test_fraction must lie strictly between 0 and 1, got {self.test_fraction}.')
        n_test = int(round(self.samples_per_domain * self.test_fraction))
        if n_test < 1 or n_test >= self.samples_per_domain:
            raise InvalidGenSpec(
                f'samples_per_domain={self.samples_per_domain} is too small to split '
                f'with test_fraction={self.test_fraction}.')
        return self

    def json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, document):
        names = {f.name for f in fields(cls)}
        unknown = set(document) - names
        if unknown:
            raise InvalidGenSpec(f'Unknown GenSpec fields: {sorted(unknown)}.')
        return cls(**document)


@dataclass(frozen=True, eq=False)
class Split:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    rho: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    @property
    def input_dim(self):
        return self.x.shape[1]

    def subset(self, indices):
        return Split(self.x[indices], self.y[indices], self.t[indices], self.rho[indices])

    @classmethod
    def concatenate(cls, splits):
        splits = list(splits)
        return cls(
            x=np.concatenate([s.x for s in splits]),
            y=np.concatenate([s.y for s in splits]),
            t=np.concatenate([s.t for s in splits]),
            rho=np.concatenate([s.rho for s in splits])
        )

    def rows(self):
        columns = [f'x_{i}' for i in range(self.input_dim)]
        for x, y, t, rho in zip(self.x, self.y, self.t, self.rho):
            row = {name: float(value) for name, value in zip(columns, x)}
            row.update({'y': int(y), 't': int(t), 'rho_true': int(rho)})
            yield row

    def save(self, file_name):
        columns = [f'x_{i}' for i in range(self.input_dim)] + ['y', 't', 'rho_true']
        with ContinuousWriter(file_name, columns=columns) as writer:
            writer.write_all(self.rows())

    @classmethod
    def load(cls, file_name):
        if not os.path.isfile(file_name):
            raise DatasetNotFound(f'Split file not found: {file_name}')
        rows = read_csv_rows(file_name)
        if not rows:
            raise DatasetNotFound(f'Split file is empty: {file_name}')
        columns = sorted((c for c in rows[0] if c.startswith('x_')),
                         key=lambda c: int(c[2:]))
        return cls(
            x=np.array([[float(row[c]) for c in columns] for row in rows]),
            y=np.array([int(row['y']) for row in rows], dtype=np.int64),
            t=np.array([int(row['t']) for row in rows], dtype=np.int64),
            rho=np.array([int(row['rho_true']) for row in rows], dtype=np.int64)
        )


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Train, in-domain test and held-out-domain test splits, together with
    the bases they were generated from (absent when loaded from disk)."""
    spec: GenSpec
    train: Split
    test: Split
    heldout: Split
    signal_bases: dict = None
    nuisance_bases: np.ndarray = None

    def split(self, name):
        if name not in SPLIT_NAMES:
            raise DatasetNotFound(f'Unknown split "{name}", expected one of {SPLIT_NAMES}.')
        return getattr(self, name)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for name in SPLIT_NAMES:
            self.split(name).save(os.path.join(directory, f'{name}.csv'))
        write_json_document(os.path.join(directory, 'genspec.json'), self.spec.json())

    @classmethod
    def load(cls, directory):
        spec_file = os.path.join(directory, 'genspec.json')
        if not os.path.isfile(spec_file):
            raise DatasetNotFound(f'No dataset found in {directory}')
        spec = GenSpec.from_json(read_json_document(spec_file))
        splits = {name: Split.load(os.path.join(directory, f'{name}.csv'))
                  for name in SPLIT_NAMES}
        return cls(spec=spec, **splits)


def _orthonormal(rng, rows, columns):
    q, r = np.linalg.qr(rng.standard_normal((rows, columns)))
    # fix column signs so the draw is a well-defined function of the rng state
    return q * np.sign(np.diag(r))


def _signal_bases(spec, rng):
    m, r, N = spec.input_dim, spec.signal_rank, spec.n_train_forgery
    heldout_start = spec.signal_dims + spec.nuisance_dims
    starts = [t * r for t in range(N + 1)] + [heldout_start]

    bases = {}
    for t, start in enumerate(starts):
        basis = np.zeros((m, r))
        basis[start:start + r] = _orthonormal(rng, r, r)
        bases[t] = basis
    return bases


def _nuisance_bases(spec, rng):
    m, start = spec.input_dim, spec.signal_dims
    bases = np.zeros((spec.nuisance_clusters, m, spec.nuisance_dims))
    for cluster in range(spec.nuisance_clusters):
        bases[cluster, start:start + spec.nuisance_dims] = _orthonormal(
            rng, spec.nuisance_dims, spec.nuisance_dims)
    return bases


def _balanced_clusters(n, K, rng):
    return rng.permutation(np.arange(n) % K)


def _draw(spec, t, rho, bases, nuisance_bases, rng):
    n = len(rho)
    c = rng.standard_normal((n, spec.signal_rank))
    a = 1 + np.abs(rng.standard_normal((n, spec.signal_rank)))
    z = rng.standard_normal((n, spec.nuisance_dims))
    noise = rng.standard_normal((n, spec.input_dim))

    x = spec.signal_scale * c @ bases[0].T
    if t != 0:
        x += spec.signal_scale * a @ bases[t].T
    if spec.nuisance_scale != 0:
        x += spec.nuisance_scale * np.einsum('nmk,nk->nm', nuisance_bases[rho], 1 + z)
    x += spec.noise_scale * noise

    y = np.full(n, int(t != 0), dtype=np.int64)
    return Split(x=x, y=y, t=np.full(n, t, dtype=np.int64), rho=rho.astype(np.int64))


def generate(spec):
    """Generate the train, in-domain test and held-out splits.

    :param spec: Benchmark parameters
    :type spec: GenSpec
    :raises InvalidGenSpec: if the parameters violate an invariant
    :return: The dataset; identical for identical specs
    :rtype: SyntheticDataset
    """
    spec.validate()
    N, K = spec.n_train_forgery, spec.nuisance_clusters
    n = spec.samples_per_domain
    n_test = int(round(n * spec.test_fraction))

    basis_seed, *domain_seeds = np.random.SeedSequence(spec.seed).spawn(N + 4)
    basis_rng = np.random.default_rng(basis_seed)
    signal_bases = _signal_bases(spec, basis_rng)
    nuisance_bases = _nuisance_bases(spec, basis_rng)

    train, test = [], []
    for t in range(N + 1):
        rng = np.random.default_rng(domain_seeds[t])
        rho = np.concatenate([_balanced_clusters(n - n_test, K, rng),
                              _balanced_clusters(n_test, K, rng)])
        samples = _draw(spec, t, rho, signal_bases, nuisance_bases, rng)
        train.append(samples.subset(slice(0, n - n_test)))
        test.append(samples.subset(slice(n - n_test, n)))

    heldout = []
    for t, seed in ((N + 1, domain_seeds[N + 1]), (0, domain_seeds[N + 2])):
        rng = np.random.default_rng(seed)
        rho = _balanced_clusters(n, K, rng)
        heldout.append(_draw(spec, t, rho, signal_bases, nuisance_bases, rng))

    dataset = SyntheticDataset(
        spec=spec,
        train=Split.concatenate(train),
        test=Split.concatenate(test),
        heldout=Split.concatenate(heldout),
        signal_bases=signal_bases,
        nuisance_bases=nuisance_bases
    )
    log('debug', f'Generated {len(dataset.train)} train, {len(dataset.test)} test '
        f'and {len(dataset.heldout)} held-out samples.')
    return dataset


def heldout_basis_overlap(dataset):
    """Largest absolute dot product between a held-out signal basis column
    and any training signal basis column."""
    bases = dataset.signal_bases
    heldout = bases[dataset.spec.n_train_forgery + 1]
    training = np.hstack([bases[t] for t in range(dataset.spec.n_train_forgery + 1)])
    return float(np.max(np.abs(heldout.T @ training)))


def nuisance_correlation_audit(dataset):
    """Normalised mutual information between domain and nuisance cluster
    labels over the train split (a Split or a pair of label arrays also works).

    :return: NMI in [0, 1]; values below NMI_THRESHOLD pass the audit
    :rtype: float
    """
    if isinstance(dataset, SyntheticDataset):
        t, rho = dataset.train.t, dataset.train.rho
    elif isinstance(dataset, Split):
        t, rho = dataset.t, dataset.rho
    else:
        t, rho = dataset

    nmi = float(normalized_mutual_info_score(np.asarray(t), np.asarray(rho)))
    if nmi >= NMI_THRESHOLD:
        log('warning', f'Nuisance clusters correlate with domains (NMI {nmi:.4f}).')
    return nmi
