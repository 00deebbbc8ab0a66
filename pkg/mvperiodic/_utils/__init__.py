""" Internal helpers for use in mvperiodic """

from .reduction import tree_sum, tree_mean
from .pool import parallel_map, worker_count

__all__ = [
    'tree_sum',
    'tree_mean',
    'parallel_map',
    'worker_count',
]
