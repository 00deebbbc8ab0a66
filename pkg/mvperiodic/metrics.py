"""
Wasserstein distances between equal-weight empirical measures.

* :func:`wasserstein_1d` - exact on the real line, by sorting.
* :func:`wasserstein_assignment` - exact in any dimension via a minimal-cost
  assignment (:func:`scipy.optimize.linear_sum_assignment`), capped at
  :data:`ASSIGNMENT_CAP` atoms.
* :func:`sliced_wasserstein` - average over random one-dimensional
  projections, a lower bound of the exact distance.
* :func:`empirical_distance` - picks one of the above and reports which.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import CapExceeded, DimensionError, DomainError, SizeMismatch

__all__ = [
    'ASSIGNMENT_CAP',
    'EmpiricalMeasure',
    'DistanceEstimate',
    'wasserstein_1d',
    'wasserstein_assignment',
    'sliced_wasserstein',
    'empirical_distance',
    'coupling_bound_check',
    'paired_mean_square',
]

log = logging.getLogger(__name__)

ASSIGNMENT_CAP = 2048


@dataclass(frozen=True)
class EmpiricalMeasure:
    """ Equal-weight measure on the rows of an ``(N, d)`` sample array """
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise DomainError('an empirical measure needs at least one atom')
        if not np.all(np.isfinite(samples)):
            raise DomainError('empirical measure has non-finite atoms')
        object.__setattr__(self, 'samples', samples)

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def of(cls, value) -> 'EmpiricalMeasure':
        if isinstance(value, cls):
            return value
        return cls(getattr(value, 'states', value))


class DistanceEstimate(NamedTuple):
    value: float
    method: str


def _pair(p, q, same_dim=True):
    p, q = EmpiricalMeasure.of(p), EmpiricalMeasure.of(q)
    if p.N != q.N:
        raise SizeMismatch('measures have {} and {} atoms'.format(p.N, q.N))
    if same_dim and p.d != q.d:
        raise DimensionError('measures live in dimensions {} and {}'.format(p.d, q.d))
    return p, q


def _check_order(order):
    if order not in (1, 2):
        raise DomainError('order must be 1 or 2, got {!r}'.format(order))


def wasserstein_1d(p, q, order=1) -> float:
    """ ``W_order`` between two equal-size measures on the real line """
    _check_order(order)
    p, q = _pair(p, q)
    if p.d != 1:
        raise DimensionError('wasserstein_1d needs d = 1, got d = {}'.format(p.d))
    gap = np.abs(np.sort(p.samples[:, 0]) - np.sort(q.samples[:, 0]))
    return float(np.mean(gap ** order) ** (1.0 / order))


def wasserstein_assignment(p, q, order=1) -> float:
    """ Exact ``W_order`` by solving the ``N x N`` assignment problem """
    _check_order(order)
    p, q = _pair(p, q)
    if p.N > ASSIGNMENT_CAP:
        raise CapExceeded('exact assignment is capped at {} atoms, got {}'.format(ASSIGNMENT_CAP, p.N))
    cost = cdist(p.samples, q.samples, 'euclidean') ** order
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]) ** (1.0 / order))


def _directions(d, n_projections, seed):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, d, 29])))
    u = rng.standard_normal((n_projections, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def sliced_wasserstein(p, q, order=1, n_projections=256, seed=0) -> float:
    """
    ``W_order`` averaged over random directions: the ``order``-th root of the
    mean of the projected ``W_order**order``.
    """
    _check_order(order)
    if n_projections < 1:
        raise DomainError('n_projections must be at least 1')
    p, q = _pair(p, q)
    if p.d == 1:
        return wasserstein_1d(p, q, order)
    u = _directions(p.d, n_projections, seed)
    xp = np.sort(p.samples @ u.T, axis=0)
    xq = np.sort(q.samples @ u.T, axis=0)
    per_direction = np.mean(np.abs(xp - xq) ** order, axis=0)
    return float(np.mean(per_direction) ** (1.0 / order))


def empirical_distance(p, q, order=1, mode='auto', seed=0, n_subsamples=8,
                       n_projections=256) -> DistanceEstimate:
    """
    ``W_order`` by the cheapest exact method, or an estimate above the cap.

    ``mode`` is ``'auto'``, ``'sorted'``, ``'assignment'``, ``'subsample'``
    or ``'sliced'``.  In ``auto`` mode one-dimensional measures are sorted,
    measures up to :data:`ASSIGNMENT_CAP` atoms are assigned exactly and
    larger ones are averaged over ``n_subsamples`` random subsamples of
    :data:`ASSIGNMENT_CAP` atoms each.
    """
    p, q = _pair(p, q)
    if mode == 'auto':
        if p.d == 1:
            mode = 'sorted'
        elif p.N <= ASSIGNMENT_CAP:
            mode = 'assignment'
        else:
            mode = 'subsample'
    if mode == 'sorted':
        return DistanceEstimate(wasserstein_1d(p, q, order), mode)
    if mode == 'assignment':
        return DistanceEstimate(wasserstein_assignment(p, q, order), mode)
    if mode == 'sliced':
        return DistanceEstimate(sliced_wasserstein(p, q, order, n_projections, seed), mode)
    if mode == 'subsample':
        if p.N <= ASSIGNMENT_CAP:
            return DistanceEstimate(wasserstein_assignment(p, q, order), 'assignment')
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 31])))
        values = []
        for _ in range(n_subsamples):
            i = rng.choice(p.N, ASSIGNMENT_CAP, replace=False)
            j = rng.choice(q.N, ASSIGNMENT_CAP, replace=False)
            values.append(wasserstein_assignment(p.samples[i], q.samples[j], order))
        log.debug('subsampled W%d over %d draws', order, n_subsamples)
        return DistanceEstimate(float(np.mean(values)), mode)
    raise DomainError('unknown distance mode {!r}'.format(mode))


def paired_mean_square(x, y) -> float:
    """ ``(1/N) sum_i |x_i - y_i|^2`` under the same-index pairing """
    x, y = _pair(x, y)
    return float(np.mean(np.sum((x.samples - y.samples) ** 2, axis=1)))


def coupling_bound_check(x_ensemble, y_ensemble, tol=1e-9) -> bool:
    """
    Whether the exact squared ``W_2`` is at most the same-index pairing cost.

    The same-index pairing is one feasible coupling of the two empirical
    measures, so this must always hold.
    """
    x, y = _pair(x_ensemble, y_ensemble)
    if x.samples.shape != y.samples.shape:
        raise SizeMismatch('ensembles have shapes {} and {}'.format(x.samples.shape, y.samples.shape))
    return wasserstein_assignment(x, y, 2) ** 2 <= paired_mean_square(x, y) + tol
