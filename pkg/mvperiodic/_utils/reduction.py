""" Reductions with a fixed association order """
import numpy as np


def tree_sum(a, axis=0):
    """
    Sum ``a`` along ``axis`` by repeated pairwise halving.

    The association order depends only on the length of the reduced axis,
    never on how the caller chunked the work, so results are bit-identical
    for any worker count.
    """
    a = np.moveaxis(np.asarray(a, dtype=float), axis, 0)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    while a.shape[0] > 1:
        if a.shape[0] % 2:
            # adding an exact zero leaves the odd tail untouched
            a = np.concatenate([a, np.zeros_like(a[:1])], axis=0)
        a = a[0::2] + a[1::2]
    return a[0]


def tree_mean(a, axis=0):
    a = np.asarray(a, dtype=float)
    return tree_sum(a, axis=axis) / a.shape[axis]
