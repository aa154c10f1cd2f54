"""Set metadata for guided-dg"""

__title__ = 'guided-dg'
__program__ = 'guided_dg'
__summary__ = 'Guide-space training for domain-generalizable binary classification, with a synthetic multi-domain benchmark.'
__author__ = 'guided-dg developers'
__email__ = 'guided-dg@users.noreply.github.com'
__copyright__ = '2024 guided-dg developers'
__url__ = 'https://github.com/guided-dg/guided-dg'
__version__ = '0.1.0'
