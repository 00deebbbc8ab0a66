"""
Coupled integration of two ensembles of the partially dissipative regime.

Particle ``i`` of one marginal is coupled to particle ``i`` of the other.
The additive noise is split by a cut-off ``phi_eps(|Z_i|)`` of the gap
``Z_i = a_i - b_i``: the ``phi`` share is reflected across the hyperplane
orthogonal to ``Z_i`` and the rest is shared, while the multiplicative noise
is always shared (synchronous).  The monitored quantity is the mean of the
concave distance ``f(|Z_i|)``.
"""
import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, NoAdmissibleK2, SizeMismatch, WrongRegime
from .ips import DIVERGENCE_GUARD, Ensemble, LawProxy, _guard
from .models import (
    DerivedConstants, ERGODICITY, POC, Regime, StatsRequirement,
    admissible_k2, compute_stats, derived_constants, lemma_constants,
)
from .noise import NoiseBundle, TimeGrid

__all__ = [
    'CouplingMode',
    'CouplingConfig',
    'CoupledPair',
    'COUPLING_DRIVERS',
    'cutoff_phi',
    'reflection_matrix',
    'reflect',
    'coupled_step',
    'concave_distance',
    'contraction_constants',
    'mean_f_distance',
    'monitored_functional',
    'coupling_diagnostics',
]

log = logging.getLogger(__name__)

#: drivers a coupled pair consumes per particle
COUPLING_DRIVERS = ('B_star', 'B_hat', 'W')


class CouplingMode(enum.Enum):
    REFLECTION_MIXED = 'ReflectionMixed'
    SYNCHRONOUS_ONLY = 'SynchronousOnly'


@dataclass(frozen=True)
class CouplingConfig:
    eps: float = 1e-2
    mode: CouplingMode = CouplingMode.REFLECTION_MIXED

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError('eps must be positive, got {!r}'.format(self.eps))
        object.__setattr__(self, 'mode', CouplingMode(self.mode))

    @classmethod
    def for_scenario(cls, scenario, mode=CouplingMode.REFLECTION_MIXED) -> 'CouplingConfig':
        """ ``eps = 0.01 * l0``, or ``0.01`` when ``l0 = 0`` """
        l0 = getattr(scenario, 'l0', 0.0)
        return cls(eps=1e-2 * l0 if l0 > 0 else 1e-2, mode=mode)


@dataclass(frozen=True)
class CoupledPair:
    a: Ensemble
    b: Ensemble

    def __post_init__(self):
        if self.a.states.shape != self.b.states.shape:
            raise SizeMismatch('coupled marginals have shapes {} and {}'.format(
                self.a.states.shape, self.b.states.shape))
        if self.a.time_index != self.b.time_index:
            raise DomainError('coupled marginals are at indices {} and {}'.format(
                self.a.time_index, self.b.time_index))

    @property
    def gap(self) -> np.ndarray:
        return self.a.states - self.b.states

    @property
    def time_index(self) -> int:
        return self.a.time_index


def cutoff_phi(eps, r):
    """
    The C^1 cut-off that vanishes below ``5 eps / 8`` and equals one above
    ``7 eps / 8``.
    """
    if not eps > 0:
        raise DomainError('eps must be positive, got {!r}'.format(eps))
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError('cut-off is defined for r >= 0')
    s = r - 7 * eps / 8
    middle = 1 - 384 / eps ** 3 * (s / 3 + eps / 8) * s * s
    value = np.where(r <= 5 * eps / 8, 0.0, np.where(r >= 7 * eps / 8, 1.0, middle))
    return float(value) if value.ndim == 0 else value


def reflection_matrix(z) -> np.ndarray:
    """ ``I - 2 n n^T`` with ``n = z / |z|``; the identity at ``z = 0`` """
    z = np.asarray(z, dtype=float).ravel()
    norm = np.linalg.norm(z)
    if norm == 0:
        return np.eye(z.size)
    n = z / norm
    return np.eye(z.size) - 2 * np.outer(n, n)


def reflect(z, v) -> np.ndarray:
    """ Row-wise ``reflection_matrix(z_i) @ v_i`` for ``(n, d)`` blocks """
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    n = np.divide(z, norms, out=np.zeros_like(z), where=norms > 0)
    return v - 2 * n * np.sum(n * v, axis=1, keepdims=True)


def _marginal_stats(scenario, ensemble, law):
    if law is not None:
        return law.stats(ensemble.time_index), np.zeros(ensemble.size, dtype=np.intp)
    if scenario.stats_requirement is StatsRequirement.NONE:
        return None, ensemble.group_index
    return compute_stats(ensemble, with_samples=scenario.needs_samples), ensemble.group_index


def coupled_step(scenario, grid: TimeGrid, pair: CoupledPair, noise: NoiseBundle, config: CouplingConfig,
                 law_a: Optional[LawProxy] = None, law_b: Optional[LawProxy] = None, guard=DIVERGENCE_GUARD,
                 workers=None) -> CoupledPair:
    """
    Advance both marginals by one step with the mixed reflection/synchronous
    coupling.

    Each marginal reads its measure argument from its own empirical measure
    or, when given, from ``law_a``/``law_b``.  The cut-off is evaluated on
    the pre-step gap.  A state leaving the ``guard`` box raises
    :class:`~mvperiodic.errors.DivergenceDetected`.
    """
    if scenario.regime is not Regime.PARTIALLY_DISSIPATIVE:
        raise WrongRegime('coupled_step needs a partially dissipative scenario')
    k = pair.time_index
    t = grid.phase_time(k)
    dt = grid.dt
    a, b = pair.a.states, pair.b.states
    z = a - b
    if config.mode is CouplingMode.SYNCHRONOUS_ONLY:
        phi = np.zeros(len(z))
    else:
        phi = cutoff_phi(config.eps, np.linalg.norm(z, axis=1))
        phi = np.atleast_1d(phi)
    root_phi = np.sqrt(phi)[:, None]
    root_rest = np.sqrt(1 - phi)[:, None]

    d_star = noise.increments('B_star', k)
    d_hat = noise.increments('B_hat', k)
    d_w = noise.increments('W', k)

    stats_a, groups_a = _marginal_stats(scenario, pair.a, law_a)
    stats_b, groups_b = _marginal_stats(scenario, pair.b, law_b)
    scale, sig_a = scenario.diffusion(t, a)
    _, sig_b = scenario.diffusion(t, b)

    shared = root_rest * d_hat
    new_a = (a + scenario.drift(t, a, stats_a, groups_a, workers) * dt
             + scale * (root_phi * d_star + shared)
             + np.einsum('nij,nj->ni', sig_a, d_w))
    new_b = (b + scenario.drift(t, b, stats_b, groups_b, workers) * dt
             + scale * (root_phi * reflect(z, d_star) + shared)
             + np.einsum('nij,nj->ni', sig_b, d_w))
    _guard(new_a, k, guard)
    _guard(new_b, k, guard)
    return CoupledPair(pair.a.advanced(new_a), pair.b.advanced(new_b))


def concave_distance(c1, c2, r):
    """ ``f(r) = c1 r + (1 - exp(-c2 r)) / c2`` """
    if not (c1 > 0 and c2 > 0):
        raise DomainError('c1 and c2 must be positive, got {!r}, {!r}'.format(c1, c2))
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError('concave distance is defined for r >= 0')
    value = c1 * r - np.expm1(-c2 * r) / c2
    return float(value) if value.ndim == 0 else value


def contraction_constants(scenario, lemma=ERGODICITY) -> DerivedConstants:
    """
    ``c1``, ``c2`` and ``c_star`` of the ergodicity (``'ergodicity'``) or the
    propagation-of-chaos (``'poc'``) contraction argument, with the
    admissible ``K2`` threshold.
    """
    if scenario.regime is not Regime.PARTIALLY_DISSIPATIVE:
        raise WrongRegime('contraction constants need a partially dissipative scenario')
    if lemma not in (ERGODICITY, POC):
        raise DomainError('unknown lemma {!r}; expected {!r} or {!r}'.format(lemma, ERGODICITY, POC))
    c1, c2, c_star = lemma_constants(scenario.K0, scenario.K1, scenario.K2, scenario.l0, lemma)
    try:
        k2_star = admissible_k2(scenario)
    except NoAdmissibleK2:
        k2_star = None
    return DerivedConstants(alpha_bar=derived_constants(scenario).alpha_bar,
                            c1=c1, c2=c2, c_star=c_star, K2_star=k2_star)


def mean_f_distance(pair: CoupledPair, c1, c2) -> float:
    """ ``(1/N) sum_i f(|a_i - b_i|)`` """
    r = np.linalg.norm(pair.gap, axis=1)
    if c2 == 0:
        return float(np.mean((c1 + 1) * r))
    return float(np.mean(concave_distance(c1, c2, r)))


def monitored_functional(pair: CoupledPair, c1, c2, c_star, alpha_integral) -> float:
    """
    ``exp(c_star int_s^t alpha) mean_f_distance``; non-increasing along a
    contracting coupled run.
    """
    return math.exp(c_star * alpha_integral) * mean_f_distance(pair, c1, c2)


def coupling_diagnostics(pair: CoupledPair, grid: TimeGrid, c1, c2, config: CouplingConfig,
                         c_star=None, alpha_integral=0.0) -> dict:
    """
    One row of the coupling diagnostic series.

    With ``c_star`` the row also carries ``monitored_functional``, for
    ``alpha_integral`` accumulated since the start of the run.
    """
    r = np.linalg.norm(pair.gap, axis=1)
    if config.mode is CouplingMode.SYNCHRONOUS_ONLY:
        reflecting = 0.0
    else:
        reflecting = float(np.mean(np.atleast_1d(cutoff_phi(config.eps, r)) > 0.5))
    row = {
        't': pair.time_index * grid.dt,
        'mean_f_distance': mean_f_distance(pair, c1, c2),
        'mean_abs_gap': float(np.mean(r)),
        'fraction_reflecting': reflecting,
    }
    if c_star is not None:
        row['monitored_functional'] = math.exp(c_star * alpha_integral) * row['mean_f_distance']
    return row
