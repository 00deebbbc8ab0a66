""" A small ordered worker pool """
import os
from concurrent.futures import ThreadPoolExecutor

_ENV_VAR = 'MVP_WORKERS'


def worker_count(default=1):
    """ Pool size, taken from ``$MVP_WORKERS`` when set """
    value = os.environ.get(_ENV_VAR)
    if value is None or not value.strip():
        return max(1, int(default))
    try:
        n = int(value)
    except ValueError:
        raise ValueError('{}={!r} is not an integer'.format(_ENV_VAR, value))
    return max(1, n)


def parallel_map(func, items, workers=None):
    """
    ``list(map(func, items))``, optionally spread over a thread pool.

    Results are always returned in input order; callers must only combine
    them with order-fixed reductions.
    """
    items = list(items)
    if workers is None:
        workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(func, items))
