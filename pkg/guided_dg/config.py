"""Training configuration, flat JSON config files and run manifests."""

import os
from dataclasses import dataclass, asdict, fields, replace

from .errors import (
    ConfigError,
    InvalidGenSpec
)
from .metadata import (
    __title__,
    __version__
)
from .output.continuous_write import (
    read_json_document,
    write_json_document
)
from .synthdata import GenSpec


LR_SCHEDULES = ('cosine', 'constant')


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run.

    :param tau: Temperature of the contrastive terms
    :param gamma1: Scale of the guide loss
    :param gamma2: Scale of the cross-entropy loss
    :param gamma3: Scale of the pulling loss
    :param gamma4: Scale of the pushing loss
    :param k: Number of queue neighbours used for confidences
    :param n_pos: Positives sampled per anchor
    :param n_neg: Negatives sampled per anchor
    :param batch_size: Batch size B
    :param queue_size: Queue capacity Q, a multiple of B
    :param epochs: Number of epochs
    :param adbm_start_epoch: First epoch (counted from 1) using confidence weights
    :param theta0: Real-forgery guide angle in degrees
    :param feature_dim: Feature dimension d
    :param lr: Initial learning rate
    :param momentum: SGD momentum
    :param lr_schedule: 'cosine' decay over the epochs or 'constant'
    :param hidden_width: Width of the encoder's hidden layers
    :param hidden_layers: Number of hidden layers
    :param num_clusters: Nuisance clusters K for k-means, None to use the dataset's count
    :param use_adbm: Weight samples by confidence once A-DBM is active
    :param multiclass: Train a (1 + N)-way head on domain labels instead of a binary head
    :param balanced_batches: Draw batches with equal shares of every domain
    :param freeze_matching_epoch: Epoch after which domain matching stops changing
    :param adbm_dump: Record per-sample confidences and weights
    :param num_threads: Torch intra-op threads
    :param seed: Seed of the model initialisation and batch order
    """
    tau: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 0.5
    gamma3: float = 0.01
    gamma4: float = 0.005
    k: int = 55
    n_pos: int = 10
    n_neg: int = 10
    batch_size: int = 256
    queue_size: int = 5120
    epochs: int = 60
    adbm_start_epoch: int = 10
    theta0: float = 120.0
    feature_dim: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    lr_schedule: str = 'cosine'
    hidden_width: int = 64
    hidden_layers: int = 2
    num_clusters: int = None
    use_adbm: bool = True
    multiclass: bool = False
    balanced_batches: bool = True
    freeze_matching_epoch: int = None
    adbm_dump: bool = False
    num_threads: int = 1
    seed: int = 0

    @property
    def gammas(self):
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4)

    def validate(self):
        for name in ('tau', 'k', 'n_pos', 'n_neg', 'batch_size', 'queue_size',
                     'feature_dim', 'hidden_width', 'adbm_start_epoch', 'num_threads'):
            if getattr(self, name) <= 0:
                raise ConfigError(f'{name} must be positive, got {getattr(self, name)}.')
        for name in ('gamma1', 'gamma2', 'gamma3', 'gamma4', 'epochs', 'lr',
                     'hidden_layers'):
            if getattr(self, name) < 0:
                raise ConfigError(f'{name} must be non-negative, got {getattr(self, name)}.')

        if self.queue_size % self.batch_size:
            raise ConfigError(
                f'queue_size ({self.queue_size}) must be a multiple of '
                f'batch_size ({self.batch_size}).')
        if not 0 < self.theta0 < 180:
            raise ConfigError(f'theta0 must lie strictly between 0 and 180, got {self.theta0}.')
        if not 0 <= self.momentum < 1:
            raise ConfigError(f'momentum must lie in [0, 1), got {self.momentum}.')
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(
                f'Unknown lr_schedule "{self.lr_schedule}", expected one of {LR_SCHEDULES}.')
        for name in ('num_clusters', 'freeze_matching_epoch'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f'{name} must be positive or unset, got {value}.')
        return self

    def json(self):
        return asdict(self)

    def override(self, **changes):
        return replace(self, **changes)


TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
GEN_KEYS = tuple(f.name for f in fields(GenSpec) if f.name != 'seed')
CONFIG_KEYS = frozenset(TRAIN_KEYS + GEN_KEYS + ('data_seed',))


def _flatten_manifest(document):
    values = dict(document.get('train_config', {}))
    gen_spec = dict(document.get('gen_spec', {}))
    if 'seed' in gen_spec:
        values['data_seed'] = gen_spec.pop('seed')
    values.update(gen_spec)
    return values


def load_config(file_name):
    """Read a flat JSON config file, or the manifest of an earlier run.

    :param file_name: Path of the JSON file
    :type file_name: str
    :raises ConfigError: if the file is unreadable or has unknown keys
    :return: Flat map of config keys to values
    :rtype: dict
    """
    try:
        document = read_json_document(file_name)
    except (OSError, ValueError) as e:
        raise ConfigError(f'Unable to read config file "{file_name}": {e}')

    if not isinstance(document, dict):
        raise ConfigError(f'Config file "{file_name}" must hold a JSON object.')

    if 'train_config' in document or 'gen_spec' in document:
        document = _flatten_manifest(document)

    unknown = set(document) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f'Unknown config keys: {sorted(unknown)}.')
    return document


def resolve(file_values=None, overrides=None):
    """Merge defaults, config file values and explicit overrides (highest
    precedence). Overrides set to None count as unset.

    ``seed`` seeds both training and data generation unless ``data_seed``
    is given.

    :return: The validated training config and benchmark spec
    :rtype: tuple[TrainConfig, GenSpec]
    """
    values = dict(file_values or {})
    values.update({key: value for key, value in (overrides or {}).items()
                   if value is not None and key in CONFIG_KEYS})

    train_values = {key: values[key] for key in TRAIN_KEYS if key in values}
    gen_values = {key: values[key] for key in GEN_KEYS if key in values}
    data_seed = values.get('data_seed', values.get('seed'))
    if data_seed is not None:
        gen_values['seed'] = data_seed

    try:
        cfg = TrainConfig(**train_values).validate()
        spec = GenSpec(**gen_values).validate()
    except InvalidGenSpec as e:
        raise ConfigError(str(e))
    except TypeError as e:
        raise ConfigError(f'Invalid config values: {e}')
    return cfg, spec


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run."""
    config_path: str
    train_config: dict
    gen_spec: dict
    seed: int
    output_dir: str
    version: str = f'{__title__} {__version__}'

    FILE_NAME = 'manifest.json'

    @classmethod
    def create(cls, cfg, spec, output_dir, config_path=None):
        return cls(config_path=config_path, train_config=cfg.json(),
                   gen_spec=spec.json(), seed=cfg.seed, output_dir=output_dir)

    def json(self):
        return asdict(self)

    def save(self, directory=None):
        file_name = os.path.join(directory or self.output_dir, self.FILE_NAME)
        write_json_document(file_name, self.json())
        return file_name

    @classmethod
    def load(cls, file_name):
        if os.path.isdir(file_name):
            file_name = os.path.join(file_name, cls.FILE_NAME)
        try:
            return cls(**read_json_document(file_name))
        except (OSError, ValueError, TypeError) as e:
            raise ConfigError(f'Unable to read run manifest "{file_name}": {e}')

    def resolve(self):
        return resolve(_flatten_manifest(self.json()))
