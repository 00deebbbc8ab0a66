"""
Coefficients, regime constants and built-in scenarios.

A :class:`Scenario` bundles the coefficients of a time-periodic
McKean-Vlasov equation together with the constants of its dissipativity
assumption.  Two regimes are supported:

* fully dissipative, ``dX = b_t(X, mu) dt + sigma_t(X, mu) dW`` with
  tau-periodic functions ``K1(t), K2(t), K3(t)``;
* partially dissipative, ``dX = (b^_t(X) + (b~_t * mu)(X)) dt
  + sqrt(alpha_t) dB + sigma^_t(X) dW`` with constants
  ``K0, K1, K2, K3, l0``.

Coefficient evaluation is vectorized over an ``(n, d)`` block of states.
Measure arguments are passed as :class:`MeasureStats`, which may describe
several independent replica groups at once; ``groups`` maps every state to
the group whose measure it sees.
"""
import enum
import inspect
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import sympy
from scipy import integrate

from ._utils import tree_mean, parallel_map
from .errors import (
    AssumptionWarning, DomainError, EmptyEnsemble, MissingStats,
    NoAdmissibleK2, NotContractive, WrongRegime,
)

__all__ = [
    'Regime',
    'StatsRequirement',
    'MeasureStats',
    'DerivedConstants',
    'OUParams',
    'Scenario',
    'FullyDissipativeScenario',
    'PartiallyDissipativeScenario',
    'compute_stats',
    'eval_drift',
    'eval_diffusion',
    'oracle_periodic_mean',
    'oracle_mean_path',
    'oracle_stationary_variance',
    'lemma_constants',
    'k2_admissible',
    'admissible_k2',
    'derived_constants',
    'lambda_quad',
    'check_periodicity',
    'check_dissipativity',
    'check_interaction_lipschitz',
    'check_alpha',
    'mv_ou_periodic',
    'piecewise_k1',
    'double_well_partial',
    'truncated_ou',
    'SCENARIOS',
    'build_scenario',
    'scenario_parameters',
]

log = logging.getLogger(__name__)

#: composite Simpson panels per period for lambda and alpha_bar
QUAD_PANELS = 10 ** 4

# float budget of one (chunk, N, d) block in the pairwise convolution
_CONV_BUDGET = 2 ** 22


class Regime(enum.Enum):
    FULLY_DISSIPATIVE = 'FullyDissipative'
    PARTIALLY_DISSIPATIVE = 'PartiallyDissipative'


class StatsRequirement(enum.Enum):
    """ What a scenario reads from the measure argument """
    NONE = 'None'
    MEAN_ONLY = 'MeanOnly'
    ABS_MOMENT = 'AbsMoment'
    PAIRWISE = 'Pairwise'


@dataclass(frozen=True)
class MeasureStats:
    """
    Summary statistics of one or more empirical measures.

    Arrays carry a leading group axis of length ``G``; the scalar accessors
    :attr:`mean`, :attr:`abs_moment` and :attr:`second_moment` are only
    defined for a single group.
    """
    means: np.ndarray
    abs_moments: np.ndarray
    second_moments: np.ndarray
    samples: Optional[np.ndarray] = None

    @classmethod
    def from_values(cls, mean, abs_moment, second_moment, samples=None) -> 'MeasureStats':
        """ Single-group stats from plain values """
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if samples is not None:
            samples = np.asarray(samples, dtype=float)
            if samples.ndim == 1:
                samples = samples[:, None]
            samples = samples[None]
        return cls(mean[None], np.array([float(abs_moment)]),
                   np.array([float(second_moment)]), samples)

    @property
    def n_groups(self) -> int:
        return self.means.shape[0]

    @property
    def has_samples(self) -> bool:
        return self.samples is not None

    def _single(self, values):
        if self.n_groups != 1:
            raise DomainError('stats describe {} groups; index a group explicitly'.format(self.n_groups))
        return values[0]

    @property
    def mean(self) -> np.ndarray:
        return self._single(self.means)

    @property
    def abs_moment(self) -> float:
        return float(self._single(self.abs_moments))

    @property
    def second_moment(self) -> float:
        return float(self._single(self.second_moments))


@dataclass(frozen=True)
class DerivedConstants:
    """
    Quantities derived from a scenario's dissipativity data.

    ``lambda_`` is set for the fully dissipative regime, the coupling
    constants for the partially dissipative one.
    """
    lambda_: Optional[float] = None
    alpha_bar: Optional[float] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    c_star: Optional[float] = None
    K2_star: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            'lambda': self.lambda_, 'alpha_bar': self.alpha_bar, 'c1': self.c1,
            'c2': self.c2, 'c_star': self.c_star, 'K2_star': self.K2_star,
        }


@dataclass(frozen=True)
class OUParams:
    """ Parameters of the periodically forced mean-field Ornstein-Uhlenbeck model """
    a: float = 1.0
    b: float = 0.25
    A: float = 1.0
    sigma0: float = 0.2
    tau: float = 1.0

    @property
    def omega(self) -> float:
        return 2 * math.pi / self.tau


def compute_stats(ensemble, with_samples=False) -> MeasureStats:
    """
    Per-group mean, ``mu(|.|)`` and ``mu(|.|^2)`` of an ensemble.

    Sums use a fixed pairwise tree so the result does not depend on how the
    work was scheduled.
    """
    states = np.asarray(ensemble.states, dtype=float)
    n_groups = getattr(ensemble, 'n_groups', 1)
    if states.size == 0 or states.shape[0] == 0:
        raise EmptyEnsemble('cannot compute stats of an empty ensemble')
    grouped = states.reshape(n_groups, -1, states.shape[-1])
    norms = np.sqrt(np.einsum('gnd,gnd->gn', grouped, grouped))
    means = tree_mean(grouped, axis=1)
    abs_moments = tree_mean(norms, axis=1)
    second_moments = tree_mean(norms * norms, axis=1)
    return MeasureStats(means, abs_moments, second_moments,
                        grouped if with_samples else None)


def _group_index(groups, n):
    if groups is None:
        return np.zeros(n, dtype=np.intp)
    return np.asarray(groups, dtype=np.intp)


def _as_states(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim < 2
    x = x.reshape(-1, dim)
    return x, single


class Scenario:
    """
    Common behaviour of both regimes.

    Subclasses implement :meth:`drift` and :meth:`diffusion` on ``(n, d)``
    blocks; time is reduced modulo :attr:`tau` before any coefficient is
    evaluated.
    """
    regime: Regime

    def __init__(self, name, tau, dim, stats_requirement, params=None, breakpoints=()):
        if not tau > 0:
            raise DomainError('tau must be positive, got {!r}'.format(tau))
        if dim < 1:
            raise DomainError('dim must be at least 1, got {!r}'.format(dim))
        self.name = name
        self.tau = float(tau)
        self.dim = int(dim)
        self.stats_requirement = StatsRequirement(stats_requirement)
        self.params = dict(params or {})
        self.breakpoints = tuple(sorted(b for b in breakpoints if 0 < b < tau))

    def __repr__(self):
        args = ', '.join('{}={!r}'.format(k, v) for k, v in self.params.items())
        return '{}({})'.format(self.name, args)

    def phase(self, t):
        """ ``t`` reduced into ``[0, tau)`` """
        return np.mod(t, self.tau)

    @property
    def needs_samples(self) -> bool:
        return self.stats_requirement is StatsRequirement.PAIRWISE

    def check_stats(self, stats):
        if self.stats_requirement is StatsRequirement.NONE:
            return
        if stats is None:
            raise MissingStats('{} needs measure statistics'.format(self.name))
        if self.needs_samples and not stats.has_samples:
            raise MissingStats('{} has a pairwise kernel; summary statistics are not enough'.format(self.name))

    def drift(self, t, x, stats=None, groups=None, workers=None) -> np.ndarray:
        raise NotImplementedError

    def diffusion(self, t, x, stats=None, groups=None):
        raise NotImplementedError

    def quad_nodes(self, panels=QUAD_PANELS):
        """ Simpson nodes on ``[0, tau]`` that fall on every breakpoint """
        edges = (0.0,) + self.breakpoints + (self.tau,)
        pieces = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            n = max(2, 2 * int(round(panels * (hi - lo) / self.tau / 2)))
            pieces.append(np.linspace(lo, hi, n + 1))
        return pieces

    def manifest(self) -> dict:
        return dict(name=self.name, regime=self.regime.value, params=dict(self.params))


class FullyDissipativeScenario(Scenario):
    """
    Scenario of the fully dissipative regime.

    Parameters
    ----------
    drift, diffusion : callable
        ``f(t, x, stats, groups)`` with ``t`` already reduced into
        ``[0, tau)``; ``drift`` returns ``(n, d)``, ``diffusion`` returns
        ``(n, d, d)``
    k1, k2, k3 : callable
        vectorized tau-periodic dissipativity functions of ``t``
    """
    regime = Regime.FULLY_DISSIPATIVE

    def __init__(self, name, tau, dim, drift, diffusion, k1, k2, k3,
                 stats_requirement=StatsRequirement.NONE, params=None, breakpoints=()):
        super().__init__(name, tau, dim, stats_requirement, params, breakpoints)
        self._drift = drift
        self._diffusion = diffusion
        self.k1 = k1
        self.k2 = k2
        self.k3 = k3

    def drift(self, t, x, stats=None, groups=None, workers=None) -> np.ndarray:
        self.check_stats(stats)
        x = np.asarray(x, dtype=float)
        return self._drift(self.phase(t), x, stats, _group_index(groups, x.shape[0]))

    def diffusion(self, t, x, stats=None, groups=None) -> np.ndarray:
        self.check_stats(stats)
        x = np.asarray(x, dtype=float)
        return self._diffusion(self.phase(t), x, stats, _group_index(groups, x.shape[0]))


class PartiallyDissipativeScenario(Scenario):
    """
    Scenario of the partially dissipative, split-noise regime.

    Parameters
    ----------
    b_hat : callable
        ``b_hat(t, x)`` on ``(n, d)`` states
    b_tilde : callable or None
        interaction kernel ``b_tilde(t, x, y)``, broadcasting over leading
        axes; ``None`` means no interaction
    alpha : callable
        vectorized non-negative tau-periodic function of ``t``
    sigma_hat : callable
        ``sigma_hat(t, x)`` returning ``(n, d, d)``
    K0, K1, K2, K3, l0 : float
        constants of the partial dissipativity assumption
    """
    regime = Regime.PARTIALLY_DISSIPATIVE

    def __init__(self, name, tau, dim, b_hat, b_tilde, alpha, sigma_hat,
                 K0, K1, K2, K3, l0, params=None, breakpoints=()):
        requirement = StatsRequirement.PAIRWISE if b_tilde is not None else StatsRequirement.NONE
        super().__init__(name, tau, dim, requirement, params, breakpoints)
        self.b_hat = b_hat
        self.b_tilde = b_tilde
        self.alpha = alpha
        self.sigma_hat = sigma_hat
        self.K0 = float(K0)
        self.K1 = float(K1)
        self.K2 = float(K2)
        self.K3 = float(K3)
        self.l0 = float(l0)
        if self.K0 < 0 or self.l0 < 0:
            raise DomainError('K0 and l0 must be non-negative')
        check_alpha(self)

    def interaction(self, t, x, samples, groups, workers=None) -> np.ndarray:
        """ ``(b~_t * mu)(x_i)`` as the sample average over the group of ``x_i`` """
        out = np.zeros_like(x)
        if self.b_tilde is None:
            return out
        for g in range(samples.shape[0]):
            idx = np.flatnonzero(groups == g)
            if not len(idx):
                continue
            y = samples[g]
            chunk = max(1, _CONV_BUDGET // max(1, y.size))
            pieces = [idx[i:i + chunk] for i in range(0, len(idx), chunk)]

            def convolve(ids, y=y):
                kernel = self.b_tilde(t, x[ids, None, :], y[None, :, :])
                return tree_mean(kernel, axis=1)

            for ids, value in zip(pieces, parallel_map(convolve, pieces, workers)):
                out[ids] = value
        return out

    def drift(self, t, x, stats=None, groups=None, workers=None) -> np.ndarray:
        self.check_stats(stats)
        x = np.asarray(x, dtype=float)
        t = self.phase(t)
        value = self.b_hat(t, x)
        if self.b_tilde is not None:
            value = value + self.interaction(
                t, x, stats.samples, _group_index(groups, x.shape[0]), workers)
        return value

    def diffusion(self, t, x, stats=None, groups=None):
        """ The pair ``(sqrt(alpha_t), sigma^_t(x))`` acting on ``B`` and ``W`` """
        x = np.asarray(x, dtype=float)
        t = self.phase(t)
        return math.sqrt(float(self.alpha(t))), self.sigma_hat(t, x)


def eval_drift(scenario: Scenario, t, x, stats=None) -> np.ndarray:
    """
    The drift at time ``t`` and state(s) ``x``.

    ``x`` may be a single ``d``-vector or an ``(n, d)`` block; the result has
    the same shape.
    """
    states, single = _as_states(x, scenario.dim)
    value = scenario.drift(t, states, stats)
    return value[0] if single else value


def eval_diffusion(scenario: Scenario, t, x, stats=None):
    """
    The diffusion coefficient at time ``t`` and state(s) ``x``.

    Fully dissipative scenarios give a ``d x d`` matrix per state; partially
    dissipative ones give ``(sqrt(alpha_t), sigma^_t(x))``.
    """
    states, single = _as_states(x, scenario.dim)
    if scenario.regime is Regime.PARTIALLY_DISSIPATIVE:
        scale, matrix = scenario.diffusion(t, states, stats)
        return scale, (matrix[0] if single else matrix)
    matrix = scenario.diffusion(t, states, stats)
    return matrix[0] if single else matrix


# closed-form oracle of the forced mean-field OU model

def _ou(ou) -> OUParams:
    if isinstance(ou, OUParams):
        return ou
    try:
        return ou.ou
    except AttributeError:
        raise DomainError('{!r} carries no OU parameters'.format(ou)) from None


def oracle_periodic_mean(ou, t):
    """
    The tau-periodic solution of ``m' = (b - a) m + A sin(omega t)``.
    """
    ou = _ou(ou)
    if not ou.a > ou.b:
        raise NotContractive('mean dynamics need a > b, got a={!r}, b={!r}'.format(ou.a, ou.b))
    k = ou.a - ou.b
    w = ou.omega
    value = ou.A * (k * np.sin(w * np.asarray(t)) - w * np.cos(w * np.asarray(t))) / (k * k + w * w)
    return float(value) if np.ndim(value) == 0 else value


def oracle_mean_path(ou, t, m0, s=0.0):
    """ The solution of the mean ODE through ``m0`` at time ``s``, evaluated at ``t >= s`` """
    ou = _ou(ou)
    star_s = oracle_periodic_mean(ou, s)
    return oracle_periodic_mean(ou, t) + (m0 - star_s) * np.exp((ou.b - ou.a) * (np.asarray(t) - s))


def oracle_stationary_variance(ou, dt=None) -> float:
    """
    Per-component stationary variance ``sigma0**2 / (2 a)``.

    With ``dt`` the stationary variance of the Euler recursion is returned
    instead.
    """
    ou = _ou(ou)
    if dt is None:
        return ou.sigma0 ** 2 / (2 * ou.a)
    return ou.sigma0 ** 2 * dt / (1 - (1 - ou.a * dt) ** 2)


# contraction constants of the partially dissipative regime

ERGODICITY = 'ergodicity'
POC = 'poc'


def lemma_constants(K0, K1, K2, l0, lemma=ERGODICITY):
    """
    ``(c1, c2, c_star)`` of the concave-distance contraction argument.

    ``lemma`` selects the ergodicity constants (``c2 = 2 (K0 + K2) l0``) or
    the propagation-of-chaos ones (``c2 = 2 (K0 + K1) l0``).  Works
    elementwise on arrays of ``K2``.
    """
    K2 = np.asarray(K2, dtype=float)
    if lemma == ERGODICITY:
        c2 = 2 * (K0 + K2) * l0
        c1 = np.exp(-c2 * l0)
        if l0 > 0:
            inner = np.minimum(2 * (K0 + K2), K1 - K2)
        else:
            # no inner region, only the far-field rate remains
            inner = K1 - K2
        c_star = c1 * inner / (1 + c1)
    elif lemma == POC:
        c2 = np.broadcast_to(2.0 * (K0 + K1) * l0, K2.shape)
        c1 = np.exp(-c2 * l0)
        c_star = K1 * c1 / (1 + c1)
    else:
        raise DomainError('unknown lemma {!r}; expected {!r} or {!r}'.format(lemma, ERGODICITY, POC))
    if K2.ndim == 0:
        return float(c1), float(c2), float(c_star)
    return c1, c2, c_star


def k2_admissible(K2, K0, K1, l0):
    """ Whether ``K2`` satisfies both contraction predicates (elementwise) """
    c1, _, c_star = lemma_constants(K0, K1, K2, l0, ERGODICITY)
    ok = np.asarray(c_star > K2 * (1 + c1))
    pc1, _, pc_star = lemma_constants(K0, K1, K2, l0, POC)
    ok = ok & np.asarray(pc_star > 2 * np.asarray(K2) / pc1)
    return ok & (np.asarray(K2) > 0) & (np.asarray(K2) < K1 / 2)


def admissible_k2(scenario=None, *, K0=None, K1=None, l0=None, rtol=1e-6) -> float:
    """
    The largest interaction constant ``K2`` in ``(0, K1/2)`` for which both
    contraction predicates hold, located by bisection.

    The constants are read from ``scenario`` unless given explicitly.
    """
    if scenario is not None:
        if scenario.regime is not Regime.PARTIALLY_DISSIPATIVE:
            raise WrongRegime('admissible_k2 needs a partially dissipative scenario')
        K0 = scenario.K0 if K0 is None else K0
        K1 = scenario.K1 if K1 is None else K1
        l0 = scenario.l0 if l0 is None else l0
    if K0 is None or K1 is None or l0 is None:
        raise DomainError('K0, K1 and l0 are all required')

    def ok(k2):
        return bool(k2_admissible(k2, K0, K1, l0))

    lo = 1e-12
    if K1 <= 0 or not ok(lo):
        raise NoAdmissibleK2('no admissible K2 for K0={!r}, K1={!r}, l0={!r}'.format(K0, K1, l0))
    hi = K1 / 2
    top = hi * (1 - rtol)
    if ok(top):
        return top
    while hi - lo > rtol * lo:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _simpson(f, scenario, panels=QUAD_PANELS) -> float:
    return sum(integrate.simpson(f(nodes), x=nodes) for nodes in scenario.quad_nodes(panels))


def derived_constants(scenario, panels=QUAD_PANELS) -> DerivedConstants:
    """ lambda, alpha_bar and the ergodicity coupling constants of ``scenario`` """
    if scenario.regime is Regime.FULLY_DISSIPATIVE:
        lam = -_simpson(lambda t: scenario.k1(t) + scenario.k2(t), scenario, panels)
        return DerivedConstants(lambda_=lam)
    alpha_bar = _simpson(scenario.alpha, scenario, panels) / scenario.tau
    c1, c2, c_star = lemma_constants(scenario.K0, scenario.K1, scenario.K2, scenario.l0, ERGODICITY)
    try:
        k2_star = admissible_k2(scenario)
    except NoAdmissibleK2:
        k2_star = None
    return DerivedConstants(alpha_bar=alpha_bar, c1=c1, c2=c2, c_star=c_star, K2_star=k2_star)


def lambda_quad(scenario) -> float:
    """ ``-int_0^tau (K1 + K2)`` by adaptive quadrature """
    if scenario.regime is not Regime.FULLY_DISSIPATIVE:
        raise WrongRegime('lambda is only defined for fully dissipative scenarios')
    value, _ = integrate.quad(
        lambda t: float(scenario.k1(np.asarray(t)) + scenario.k2(np.asarray(t))),
        0.0, scenario.tau, points=scenario.breakpoints or None,
        epsabs=1e-13, epsrel=1e-12, limit=200)
    return -value


# randomized assumption checks

def _reference_stats(dim, n_groups=1):
    return MeasureStats(
        np.full((n_groups, dim), 0.3), np.full(n_groups, 0.8), np.full(n_groups, 1.0),
        np.tile(np.linspace(-1, 1, 5)[:, None] * np.ones(dim), (n_groups, 1, 1)))


def check_periodicity(scenario, n_times=100, n_states=10, seed=0, tol=1e-12) -> float:
    """
    Largest change of drift or diffusion when ``t`` is moved by one period.

    Emits :class:`AssumptionWarning` if it exceeds ``tol``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    times = np.linspace(0.0, scenario.tau, n_times, endpoint=False)
    states = rng.uniform(-3, 3, size=(n_states, scenario.dim))
    stats = _reference_stats(scenario.dim)
    worst = 0.0
    for t in times:
        for shift in (scenario.tau, -scenario.tau):
            drift_gap = np.max(np.abs(scenario.drift(t, states, stats) - scenario.drift(t + shift, states, stats)))
            d0, d1 = scenario.diffusion(t, states, stats), scenario.diffusion(t + shift, states, stats)
            if scenario.regime is Regime.PARTIALLY_DISSIPATIVE:
                diff_gap = max(abs(d0[0] - d1[0]), np.max(np.abs(d0[1] - d1[1])))
            else:
                diff_gap = np.max(np.abs(d0 - d1))
            worst = max(worst, float(drift_gap), float(diff_gap))
    if worst > tol:
        warnings.warn('{}: coefficients differ by {:.3g} across one period'.format(scenario.name, worst),
                      AssumptionWarning, stacklevel=2)
    return worst


def _two_point_w2sq(u, v):
    # u, v: (n, 2, d); optimal matching between two equal-weight atoms
    straight = np.sum((u - v) ** 2, axis=(1, 2))
    crossed = np.sum((u - v[:, ::-1]) ** 2, axis=(1, 2))
    return 0.5 * np.minimum(straight, crossed)


def _two_point_stats(pts):
    norms = np.linalg.norm(pts, axis=-1)
    return MeasureStats(pts.mean(axis=1), norms.mean(axis=1), (norms ** 2).mean(axis=1), pts)


def check_dissipativity(scenario, n_samples=10 ** 4, seed=0, tol=1e-9, box=3.0) -> List[dict]:
    """
    Randomized spot check of the one-sided dissipativity inequality.

    Fully dissipative scenarios are tested with pairs of two-point empirical
    measures; partially dissipative ones against the ``K0``/``K1``/``l0``
    bound.  Each violation is returned as a dict and announced with an
    :class:`AssumptionWarning`.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    d = scenario.dim
    t = rng.uniform(0, scenario.tau, n_samples)
    x = rng.uniform(-box, box, (n_samples, d))
    y = rng.uniform(-box, box, (n_samples, d))
    r2 = np.sum((x - y) ** 2, axis=1)
    groups = np.arange(n_samples)
    lhs = np.empty(n_samples)
    rhs = np.empty(n_samples)
    if scenario.regime is Regime.FULLY_DISSIPATIVE:
        mu_pts = rng.uniform(-box, box, (n_samples, 2, d))
        nu_pts = rng.uniform(-box, box, (n_samples, 2, d))
        mu, nu = _two_point_stats(mu_pts), _two_point_stats(nu_pts)
        w2sq = _two_point_w2sq(mu_pts, nu_pts)
        for i in range(n_samples):
            g = groups[i:i + 1]
            bx = scenario.drift(t[i], x[i:i + 1], mu, g)
            by = scenario.drift(t[i], y[i:i + 1], nu, g)
            sx = scenario.diffusion(t[i], x[i:i + 1], mu, g)
            sy = scenario.diffusion(t[i], y[i:i + 1], nu, g)
            lhs[i] = 2 * np.dot(x[i] - y[i], (bx - by)[0]) + np.sum((sx - sy) ** 2)
        tt = scenario.phase(t)
        rhs[:] = scenario.k1(tt) * r2 + scenario.k2(tt) * w2sq
    else:
        for i in range(n_samples):
            bx = scenario.b_hat(scenario.phase(t[i]), x[i:i + 1])
            by = scenario.b_hat(scenario.phase(t[i]), y[i:i + 1])
            sx = scenario.sigma_hat(scenario.phase(t[i]), x[i:i + 1])
            sy = scenario.sigma_hat(scenario.phase(t[i]), y[i:i + 1])
            lhs[i] = np.dot(x[i] - y[i], (bx - by)[0]) + 0.5 * np.sum((sx - sy) ** 2)
        a = scenario.alpha(scenario.phase(t))
        inside = np.sqrt(r2) <= scenario.l0
        rhs[:] = a * np.where(inside, scenario.K0 * r2, -scenario.K1 * r2)
    bad = np.flatnonzero(lhs > rhs + tol)
    violations = [dict(t=float(t[i]), x=x[i].tolist(), y=y[i].tolist(),
                       lhs=float(lhs[i]), rhs=float(rhs[i])) for i in bad]
    if violations:
        warnings.warn('{}: dissipativity bound violated at {} of {} samples'.format(
            scenario.name, len(violations), n_samples), AssumptionWarning, stacklevel=2)
    return violations


def check_interaction_lipschitz(scenario, n_samples=10 ** 4, seed=0, tol=1e-9, box=3.0) -> List[dict]:
    """ Spot check of the Lipschitz bounds on ``b~`` and ``sigma^`` """
    if scenario.regime is not Regime.PARTIALLY_DISSIPATIVE:
        raise WrongRegime('interaction Lipschitz check needs a partially dissipative scenario')
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    d = scenario.dim
    t = rng.uniform(0, scenario.tau, n_samples)
    x, y, xt, yt = (rng.uniform(-box, box, (n_samples, d)) for _ in range(4))
    a = scenario.alpha(t)
    violations = []
    if scenario.b_tilde is not None:
        kernel = np.stack([
            scenario.b_tilde(ti, xi, yi) - scenario.b_tilde(ti, xti, yti)
            for ti, xi, yi, xti, yti in zip(t, x, y, xt, yt)])
        lhs = np.linalg.norm(kernel, axis=1)
        rhs = scenario.K2 * a * (np.linalg.norm(x - xt, axis=1) + np.linalg.norm(y - yt, axis=1))
        violations += [dict(kind='b_tilde', t=float(t[i]), lhs=float(lhs[i]), rhs=float(rhs[i]))
                       for i in np.flatnonzero(lhs > rhs + tol)]
    sig = np.stack([
        np.sum((scenario.sigma_hat(ti, xi[None]) - scenario.sigma_hat(ti, yi[None])) ** 2)
        for ti, xi, yi in zip(t, x, y)])
    bound = scenario.K3 * a * np.sum((x - y) ** 2, axis=1)
    violations += [dict(kind='sigma_hat', t=float(t[i]), lhs=float(sig[i]), rhs=float(bound[i]))
                   for i in np.flatnonzero(sig > bound + tol)]
    if violations:
        warnings.warn('{}: interaction Lipschitz bound violated at {} samples'.format(
            scenario.name, len(violations)), AssumptionWarning, stacklevel=2)
    return violations


def check_alpha(scenario, n_times=1000) -> bool:
    """ ``alpha_t >= 0`` on a grid and ``int_0^tau alpha > 0``; raises :class:`DomainError` otherwise """
    t = np.linspace(0.0, scenario.tau, n_times, endpoint=False)
    values = np.asarray(scenario.alpha(t), dtype=float)
    if np.any(values < 0):
        raise DomainError('{}: alpha_t is negative at t={!r}'.format(scenario.name, float(t[np.argmin(values)])))
    if not _simpson(scenario.alpha, scenario, 2 * 500) > 0:
        raise DomainError('{}: alpha_t integrates to zero over a period'.format(scenario.name))
    return True


# built-in scenarios

def _lambdify_t(expr, t):
    f = sympy.lambdify(t, expr, 'numpy')

    def evaluate(s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.asarray(f(s), dtype=float), s.shape) + 0.0
    return evaluate


def _constant(value):
    def evaluate(t):
        return np.full(np.shape(t), float(value))
    return evaluate


def mv_ou_periodic(a=1.0, b=0.25, A=1.0, sigma0=0.2, tau=1.0, dim=1) -> FullyDissipativeScenario:
    """
    Periodically forced mean-field Ornstein-Uhlenbeck model.

    ``b_t(x, mu) = -a x + b mu(id) + A sin(2 pi t / tau)`` with additive
    noise ``sigma0 I``.  The law mean follows a linear ODE with closed-form
    periodic solution, see :func:`oracle_periodic_mean`.
    """
    ou = OUParams(a=float(a), b=float(b), A=float(A), sigma0=float(sigma0), tau=float(tau))
    w = ou.omega
    sigma = sigma0 * np.eye(dim)

    def drift(t, x, stats, groups):
        return -a * x + b * stats.means[groups] + A * math.sin(w * t)

    def diffusion(t, x, stats, groups):
        return np.broadcast_to(sigma, (x.shape[0], dim, dim))

    scenario = FullyDissipativeScenario(
        'mv_ou_periodic', tau, dim, drift, diffusion,
        k1=_constant(-2 * a + b), k2=_constant(b), k3=_constant(0.0),
        stats_requirement=StatsRequirement.MEAN_ONLY,
        params=dict(a=a, b=b, A=A, sigma0=sigma0, tau=tau, dim=dim))
    scenario.ou = ou
    return scenario


_t = sympy.Symbol('t', real=True)
_x = sympy.Symbol('x', real=True)

_K1_EXPR = sympy.Piecewise(
    (-2 * _t, _t <= sympy.Rational(1, 2)),
    (6 * _t - 4, _t <= sympy.Rational(3, 4)),
    (-2 * (_t - 1), True),
)


def piecewise_k1(kappa=0.1, variant='clamped') -> FullyDissipativeScenario:
    """
    One-dimensional example with a sign-changing, 1-periodic ``K1(t)``.

    ``b_t(x, mu) = K1(t) (x^3 + x)`` while the cubic is active and
    ``K1(t) x`` otherwise, plus ``kappa/2 * mu(|.|)``; the diffusion is
    ``kappa/2 * mu(|.|)``.  In the ``as_written`` variant the cubic is active
    on ``[0, 3/4]``; ``clamped`` additionally switches it off where
    ``K1(t) > 0``.

    The declared dissipativity functions are the bounds the coefficients
    actually satisfy: ``2 K1 + kappa/2`` where ``K1 > 0`` and
    ``K1 + kappa/2`` elsewhere, with ``K2 = kappa/2 + kappa**2/4`` and
    ``K3 = kappa**2/4``.
    """
    if variant not in ('clamped', 'as_written'):
        raise DomainError("variant must be 'clamped' or 'as_written', got {!r}".format(variant))
    k1 = _lambdify_t(_K1_EXPR, _t)
    half = 0.5 * kappa

    def cubic_active(t):
        active = t <= 0.75
        if variant == 'clamped':
            active = active and k1(t) <= 0
        return bool(active)

    def drift(t, x, stats, groups):
        k = float(k1(t))
        shape = x ** 3 + x if cubic_active(t) else x
        return k * shape + half * stats.abs_moments[groups][:, None]

    def diffusion(t, x, stats, groups):
        return (half * stats.abs_moments[groups])[:, None, None]

    def k1_eff(t):
        k = k1(t)
        return np.where(k > 0, 2 * k, k) + half

    return FullyDissipativeScenario(
        'piecewise_k1', 1.0, 1, drift, diffusion,
        k1=k1_eff, k2=_constant(half + kappa ** 2 / 4), k3=_constant(kappa ** 2 / 4),
        stats_requirement=StatsRequirement.ABS_MOMENT,
        params=dict(kappa=kappa, variant=variant),
        breakpoints=(0.5, 2.0 / 3.0, 0.75))


def _alpha_fn(alpha_amplitude, tau):
    return _lambdify_t(1 + alpha_amplitude * sympy.sin(2 * sympy.pi * _t / tau), _t)


def _tanh_kernel(K2, alpha):
    def b_tilde(t, x, y):
        return K2 * float(alpha(t)) * np.tanh(y - x)
    return b_tilde


def _gradient(potential, symbols):
    grads = [sympy.lambdify(symbols, sympy.diff(potential, s), 'numpy') for s in symbols]

    def evaluate(x):
        cols = x.T
        return np.stack([np.broadcast_to(g(*cols), cols[0].shape) for g in grads], axis=-1)
    return evaluate


def double_well_partial(depth=0.25, K1=0.25, K2=None, K3=1.0, alpha_amplitude=0.5,
                        sigma_hat=0.1, multiplicative=False, tau=1.0, dim=1) -> PartiallyDissipativeScenario:
    """
    Double-well potential ``U(x) = |x|^4/4 - depth |x|^2/2`` in the partially
    dissipative regime.

    ``b^_t = -alpha_t grad U`` and ``b~_t(x, y) = K2 alpha_t tanh(y - x)``.
    ``sigma^`` is ``sigma_hat * I`` or, with ``multiplicative``,
    ``0.1 sqrt(K3 alpha_t) diag(sin x)``.  ``K0 = depth`` and
    ``l0 = 2 sqrt(depth + K1)``, each raised by the ``sigma^`` share when
    the noise is multiplicative.  Without an explicit ``K2`` the scenario
    uses half of :func:`admissible_k2`.
    """
    xs = sympy.symbols('x0:{}'.format(dim), real=True)
    r2 = sum(s ** 2 for s in xs)
    grad_u = _gradient(r2 ** 2 / 4 - depth * r2 / 2, xs)
    alpha = _alpha_fn(alpha_amplitude, tau)

    spread = 0.005 * K3 if multiplicative else 0.0
    K0 = depth + spread
    l0 = 2 * math.sqrt(depth + K1 + spread)
    if K2 is None:
        K2 = 0.5 * admissible_k2(K0=K0, K1=K1, l0=l0)

    def b_hat(t, x):
        return -float(alpha(t)) * grad_u(x)

    if multiplicative:
        def sig(t, x):
            scale = 0.1 * math.sqrt(K3 * float(alpha(t)))
            out = np.zeros(x.shape + (dim,))
            idx = np.arange(dim)
            out[:, idx, idx] = scale * np.sin(x)
            return out
    else:
        const = sigma_hat * np.eye(dim)

        def sig(t, x):
            return np.broadcast_to(const, (x.shape[0], dim, dim))

    return PartiallyDissipativeScenario(
        'double_well_partial', tau, dim, b_hat, _tanh_kernel(K2, alpha), alpha, sig,
        K0=K0, K1=K1, K2=K2, K3=K3, l0=l0,
        params=dict(depth=depth, K1=K1, K2=K2, K3=K3, alpha_amplitude=alpha_amplitude,
                    sigma_hat=sigma_hat, multiplicative=multiplicative, tau=tau, dim=dim))


def truncated_ou(n=2, a=1.0, K2=0.0, alpha_amplitude=0.0, tau=1.0, dim=1) -> PartiallyDissipativeScenario:
    """
    Potential ``U(x) = x^2 g_n(x)^2 + a^2 - 2 a x g_n(x)`` with the
    truncation ``g_n(x) = max(-n, min(x, n))``, applied per component.

    ``U'`` jumps at ``|x| = n``, so the inner constant ``K0 = 4a`` only
    bounds the smooth pieces and :func:`check_dissipativity` reports pairs
    straddling the jump.  ``K1 = n**2``; ``l0`` follows from the far-field
    slope ``2 n**2`` and the largest deviation of ``U'`` from it.
    """
    g = sympy.Piecewise((-n, _x < -n), (_x, _x <= n), (n, True))
    potential = _x ** 2 * g ** 2 + a ** 2 - 2 * a * _x * g
    du = sympy.lambdify(_x, sympy.diff(potential, _x), 'numpy')
    alpha = _alpha_fn(alpha_amplitude, tau)

    probe = np.linspace(-n, n, 20001)
    deviation = max(float(np.max(np.abs(du(probe) - 2 * n * n * probe))), 2 * a * n)
    K1 = float(n * n)
    l0 = 2 * deviation / K1

    def b_hat(t, x):
        return -float(alpha(t)) * du(x)

    def sig(t, x):
        return np.zeros((x.shape[0], dim, dim))

    scenario = PartiallyDissipativeScenario(
        'truncated_ou', tau, dim, b_hat, _tanh_kernel(K2, alpha) if K2 else None, alpha, sig,
        K0=4 * a, K1=K1, K2=K2, K3=1.0, l0=l0,
        params=dict(n=n, a=a, K2=K2, alpha_amplitude=alpha_amplitude, tau=tau, dim=dim))
    scenario.potential_derivative = du
    return scenario


SCENARIOS: Dict[str, Callable[..., Scenario]] = {
    'mv_ou_periodic': mv_ou_periodic,
    'piecewise_k1': piecewise_k1,
    'double_well_partial': double_well_partial,
    'truncated_ou': truncated_ou,
}


def scenario_parameters(name) -> Dict[str, object]:
    """ Overridable parameters of a built-in scenario with their defaults """
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise DomainError('unknown scenario {!r}; expected one of {}'.format(name, sorted(SCENARIOS))) from None
    return {p.name: p.default for p in inspect.signature(factory).parameters.values()}


def build_scenario(name, **overrides) -> Scenario:
    known = scenario_parameters(name)
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise DomainError('{} has no parameter(s) {}'.format(name, ', '.join(unknown)))
    log.debug('building scenario %s with %r', name, overrides)
    return SCENARIOS[name](**overrides)
