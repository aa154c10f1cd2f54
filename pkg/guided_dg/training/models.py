"""Feature encoder and classifier heads."""

import torch
from torch import nn
import torch.nn.functional as F

from ..errors import (
    ConfigError,
    DimensionMismatch
)
from ..output.continuous_write import (
    read_json_document,
    write_json_document
)


class Encoder(nn.Module):
    """Multilayer perceptron whose output is renormalised to unit length."""

    def __init__(self, input_dim, feature_dim, hidden_width=64, hidden_layers=2):
        super().__init__()
        self.input_dim = input_dim
        self.feature_dim = feature_dim

        layers = []
        width = input_dim
        for _ in range(hidden_layers):
            layers += [nn.Linear(width, hidden_width, dtype=torch.float64), nn.Tanh()]
            width = hidden_width
        layers.append(nn.Linear(width, feature_dim, dtype=torch.float64))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return F.normalize(self.net(x), dim=1)


class Classifier(nn.Module):
    """Affine head on the features. With ``num_classes`` > 1 the head scores
    every domain and the fake probability is one minus the real class share."""

    def __init__(self, feature_dim, num_classes=1):
        super().__init__()
        self.num_classes = num_classes
        self.linear = nn.Linear(feature_dim, num_classes, dtype=torch.float64)

    @property
    def multiclass(self):
        return self.num_classes > 1

    def forward(self, v):
        return self.linear(v)

    def probability(self, logits):
        """Probability of the fake class, in (0, 1)."""
        if self.multiclass:
            return 1 - torch.softmax(logits, dim=1)[:, 0]
        return torch.sigmoid(logits[:, 0])


def build_models(cfg, input_dim, N):
    encoder = Encoder(input_dim, cfg.feature_dim, cfg.hidden_width, cfg.hidden_layers)
    classifier = Classifier(cfg.feature_dim, N + 1 if cfg.multiclass else 1)
    return encoder, classifier


def count_parameters(*modules):
    return sum(p.numel() for module in modules for p in module.parameters())


def _named_arrays(prefix, module):
    return {f'{prefix}.{name}': tensor.detach().cpu().tolist()
            for name, tensor in module.state_dict().items()}


def model_document(encoder, classifier):
    return {
        'input_dim': encoder.input_dim,
        'feature_dim': encoder.feature_dim,
        'num_classes': classifier.num_classes,
        'parameters': {**_named_arrays('encoder', encoder),
                       **_named_arrays('classifier', classifier)}
    }


def save_models(file_name, encoder, classifier):
    """Write the parameters of both modules as one JSON document of named arrays."""
    write_json_document(file_name, model_document(encoder, classifier))


def load_models(file_name, cfg):
    """Rebuild the encoder and classifier saved by :func:`save_models`."""
    try:
        document = read_json_document(file_name)
        parameters = document['parameters']
        input_dim = int(document['input_dim'])
        num_classes = int(document['num_classes'])
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f'Unable to read model file "{file_name}": {e}')

    if int(document['feature_dim']) != cfg.feature_dim:
        raise DimensionMismatch(
            f'Model has feature dimension {document["feature_dim"]}, '
            f'config asks for {cfg.feature_dim}.')

    encoder = Encoder(input_dim, cfg.feature_dim, cfg.hidden_width, cfg.hidden_layers)
    classifier = Classifier(cfg.feature_dim, num_classes)
    for prefix, module in (('encoder', encoder), ('classifier', classifier)):
        try:
            module.load_state_dict({
                name: torch.tensor(parameters[f'{prefix}.{name}'], dtype=torch.float64)
                for name in module.state_dict()})
        except (KeyError, RuntimeError) as e:
            raise DimensionMismatch(f'Model file does not match the config: {e}')
    return encoder, classifier
