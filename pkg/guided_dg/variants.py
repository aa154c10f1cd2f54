"""Ablation variants of the training objective"""

from .errors import InvalidParameter


class Variant:
    """Base class of an ablation variant. Subclasses set ``_NAME`` and the
    config fields to override in ``_OVERRIDES``."""

    _NAME = None
    _DESCRIPTION = None
    _OVERRIDES = {}

    @classmethod
    def name(cls):
        return cls._NAME

    @classmethod
    def apply(cls, cfg):
        """Return ``cfg`` with the variant's overrides."""
        return cfg.override(**cls._OVERRIDES)


class FullMethod(Variant):
    _NAME = 'full'
    _DESCRIPTION = 'All four losses with confidence weighting'


class WithoutGuide(Variant):
    _NAME = 'no-guide'
    _DESCRIPTION = 'Guide loss removed'
    _OVERRIDES = {'gamma1': 0.0}


class WithoutDecoupling(Variant):
    _NAME = 'no-decouple'
    _DESCRIPTION = 'Pulling and pushing losses removed'
    _OVERRIDES = {'gamma3': 0.0, 'gamma4': 0.0}


class WithoutPull(Variant):
    _NAME = 'no-pull'
    _DESCRIPTION = 'Pulling loss removed'
    _OVERRIDES = {'gamma3': 0.0}


class WithoutPush(Variant):
    _NAME = 'no-push'
    _DESCRIPTION = 'Pushing loss removed'
    _OVERRIDES = {'gamma4': 0.0}


class WithoutADBM(Variant):
    _NAME = 'no-adbm'
    _DESCRIPTION = 'Uniform sample weights throughout'
    _OVERRIDES = {'use_adbm': False}


class BinaryBaseline(Variant):
    _NAME = 'ce-2'
    _DESCRIPTION = 'Binary cross-entropy only, uniform weights'
    _OVERRIDES = {'gamma1': 0.0, 'gamma2': 1.0, 'gamma3': 0.0, 'gamma4': 0.0,
                  'use_adbm': False}


class MulticlassBaseline(Variant):
    _NAME = 'ce-(1+N)'
    _DESCRIPTION = 'Cross-entropy over the real class and every forgery domain'
    _OVERRIDES = {'gamma1': 0.0, 'gamma2': 1.0, 'gamma3': 0.0, 'gamma4': 0.0,
                  'use_adbm': False, 'multiclass': True}


def get_all_variants(include_parent=False):
    """Get all ablation variants, in declaration order.

    :param include_parent: Whether to include the Variant base class, defaults to False
    :type include_parent: bool, optional
    :return: A list of Variant classes
    :rtype: list
    """
    return [
        value
        for value in globals().values()
        if isinstance(value, type) and issubclass(value, Variant) and (include_parent or value != Variant)
    ]


def get_variant(name):
    for variant in get_all_variants():
        if variant.name() == name:
            return variant
    names = [variant.name() for variant in get_all_variants()]
    raise InvalidParameter(f'Unknown variant "{name}", expected one of {names}.')
