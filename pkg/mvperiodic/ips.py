"""
Euler-Maruyama integration of interacting and non-interacting particle
systems, and the pull-back construction of the random periodic solution.

An :class:`Ensemble` may hold ``G`` independent replica groups of ``N``
particles each; particles interact only with their own group.  When a
:class:`LawProxy` is passed to :func:`em_step`, the particles stop
interacting and all read the proxy's statistics instead, which is how the
auxiliary non-interacting system is integrated.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats as _stats

from .errors import DivergenceDetected, DomainError, GridNotAligned
from .models import (
    MeasureStats, Regime, StatsRequirement, compute_stats, oracle_mean_path,
)
from .noise import NoiseBundle, TimeGrid

__all__ = [
    'DIVERGENCE_GUARD',
    'Ensemble',
    'InitLaw',
    'PullbackRun',
    'LawProxy',
    'ExactOULaw',
    'ReferenceLaw',
    'drivers_for',
    'em_step',
    'simulate',
    'pullback_run',
    'reference_law',
    'law_proxy',
    'moment_series',
]

log = logging.getLogger(__name__)

DIVERGENCE_GUARD = 1e8


@dataclass(frozen=True)
class Ensemble:
    """
    Particle states at one absolute grid index.

    Attributes
    ----------
    states : ndarray
        ``(G * N, d)`` states, group by group
    time_index : int
        absolute grid step the states belong to
    n_groups : int
        number of independent replica groups ``G``
    """
    states: np.ndarray
    time_index: int
    n_groups: int = 1

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1:
            raise DomainError('an ensemble needs at least one particle')
        if self.n_groups < 1 or states.shape[0] % self.n_groups:
            raise DomainError('{} particles do not split into {} groups'.format(states.shape[0], self.n_groups))
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'time_index', int(self.time_index))

    @property
    def N(self) -> int:
        """ particles per group """
        return self.states.shape[0] // self.n_groups

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def group_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_groups), self.N)

    def group(self, g) -> np.ndarray:
        return self.states[g * self.N:(g + 1) * self.N]

    def advanced(self, states) -> 'Ensemble':
        return Ensemble(states, self.time_index + 1, self.n_groups)


@dataclass(frozen=True)
class InitLaw:
    """
    Initial law of every particle: a point mass at ``loc`` or a Gaussian
    ``N(loc, scale**2 I)``.

    Draws are keyed, so the same key always yields the same sample.
    """
    kind: str = 'normal'
    loc: float = 0.0
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ('point', 'normal'):
            raise DomainError("init kind must be 'point' or 'normal', got {!r}".format(self.kind))

    def sample(self, n, d, key=0) -> np.ndarray:
        loc = np.broadcast_to(np.asarray(self.loc, dtype=float), (d,))
        if self.kind == 'point':
            return np.tile(loc, (n, 1))
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, 37, int(key)])))
        return loc + self.scale * rng.standard_normal((n, d))

    def __call__(self, key, n, d) -> np.ndarray:
        return self.sample(n, d, key)

    def manifest(self) -> dict:
        return dict(kind=self.kind, loc=self.loc, scale=self.scale, seed=self.seed)


@dataclass
class PullbackRun:
    t_target: float
    horizons: List[int]
    endpoints: List[Ensemble] = field(default_factory=list)
    gaps: List[float] = field(default_factory=list)
    group_gaps: List[np.ndarray] = field(default_factory=list)


def drivers_for(scenario):
    """ Noise drivers an ensemble of ``scenario`` consumes """
    if scenario.regime is Regime.PARTIALLY_DISSIPATIVE:
        return ('B', 'W')
    return ('W',)


def _gaussian_stats(mean, var) -> MeasureStats:
    mean = np.asarray(mean, dtype=float)
    d = mean.shape[0]
    second = float(mean @ mean + d * var)
    if d == 1:
        s = math.sqrt(var)
        absm = abs(float(mean[0])) if s == 0 else float(_stats.foldnorm.mean(abs(float(mean[0])) / s, scale=s))
    else:
        # upper bound; mean-only scenarios never read it
        absm = math.sqrt(second)
    return MeasureStats(mean[None], np.array([absm]), np.array([second]))


class LawProxy:
    """
    Forward-only stream of the measure argument of the non-interacting
    system, queried by absolute grid index.
    """

    def stats(self, k) -> MeasureStats:
        raise NotImplementedError

    def manifest(self) -> dict:
        return dict(kind=type(self).__name__)


class ExactOULaw(LawProxy):
    """
    Gaussian law of the forced mean-field OU model started from
    ``N(m0, v0 I)`` at the first index of ``grid``.

    ``mode='euler'`` follows the Euler recursion of the mean and variance,
    matching the discretized particles; ``mode='exact'`` uses the ODE
    solution.
    """

    def __init__(self, scenario, grid: TimeGrid, m0=0.0, v0=0.0, mode='euler'):
        if mode not in ('euler', 'exact'):
            raise DomainError("mode must be 'euler' or 'exact', got {!r}".format(mode))
        self.ou = scenario.ou
        self.grid = grid
        self.mode = mode
        self.d = scenario.dim
        self.m0 = np.broadcast_to(np.asarray(m0, dtype=float), (self.d,)).copy()
        self.v0 = float(v0)
        self._k = grid.start_index
        self._m = self.m0.copy()
        self._v = self.v0

    def stats(self, k) -> MeasureStats:
        if self.mode == 'exact':
            ou, dt = self.ou, self.grid.dt
            s = self.grid.start_index * dt
            t = k * dt
            m = oracle_mean_path(ou, t, self.m0, s)
            v_inf = ou.sigma0 ** 2 / (2 * ou.a)
            v = v_inf + (self.v0 - v_inf) * math.exp(-2 * ou.a * (t - s))
            return _gaussian_stats(m, v)
        if k < self._k:
            raise DomainError('law stream is at index {}, cannot go back to {}'.format(self._k, k))
        ou, dt = self.ou, self.grid.dt
        while self._k < k:
            forcing = ou.A * math.sin(ou.omega * self.grid.phase_time(self._k))
            self._m = self._m + ((ou.b - ou.a) * self._m + forcing) * dt
            self._v = (1 - ou.a * dt) ** 2 * self._v + ou.sigma0 ** 2 * dt
            self._k += 1
        return _gaussian_stats(self._m, self._v)

    def manifest(self) -> dict:
        return dict(kind='exact_ou', mode=self.mode, m0=self.m0.tolist(), v0=self.v0)


class ReferenceLaw(LawProxy):
    """ Empirical measure of an ``M``-particle system stepped in lock-step with its consumers """

    def __init__(self, scenario, grid: TimeGrid, M, seed, init: InitLaw, workers=None):
        self.scenario = scenario
        self.grid = grid
        self.M = int(M)
        self.seed = int(seed)
        self.workers = workers
        self.noise = NoiseBundle(seed, scenario.dim, grid.dt, self.M,
                                 drivers_for(scenario), workers=workers)
        self.ensemble = Ensemble(init.sample(self.M, scenario.dim, key=seed), grid.start_index)
        self._stats = None

    def stats(self, k) -> MeasureStats:
        if k < self.ensemble.time_index:
            raise DomainError('reference law is at index {}, cannot go back to {}'.format(
                self.ensemble.time_index, k))
        while self.ensemble.time_index < k:
            self.ensemble = em_step(self.scenario, self.grid, self.ensemble, self.noise,
                                    workers=self.workers)
            self._stats = None
        if self._stats is None:
            self._stats = compute_stats(self.ensemble, with_samples=self.scenario.needs_samples)
        return self._stats

    def manifest(self) -> dict:
        return dict(kind='reference', M=self.M, seed=self.seed)


def _check_noise(grid, ensemble, noise):
    if abs(noise.dt - grid.dt) > 1e-12 * grid.dt:
        raise DomainError('noise dt {!r} differs from grid dt {!r}'.format(noise.dt, grid.dt))
    if noise.n_particles != ensemble.size:
        raise DomainError('noise serves {} particles, ensemble has {}'.format(noise.n_particles, ensemble.size))


def _guard(states, k, guard):
    norms = np.linalg.norm(states, axis=1)
    bad = ~np.isfinite(norms) | (norms > guard)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DivergenceDetected(k, i, float(norms[i]))


def em_step(scenario, grid: TimeGrid, ensemble: Ensemble, noise: NoiseBundle, law: Optional[LawProxy] = None,
            guard=DIVERGENCE_GUARD, workers=None) -> Ensemble:
    """
    One explicit Euler-Maruyama step from ``ensemble.time_index``.

    The measure argument is taken from the pre-step ensemble (each group
    sees its own empirical measure) or, with ``law``, from the proxy.
    """
    k = ensemble.time_index
    t = grid.phase_time(k)
    dt = grid.dt
    x = ensemble.states
    if law is not None:
        stats = law.stats(k)
        groups = np.zeros(ensemble.size, dtype=np.intp)
    else:
        groups = ensemble.group_index
        if scenario.stats_requirement is StatsRequirement.NONE:
            stats = None
        else:
            stats = compute_stats(ensemble, with_samples=scenario.needs_samples)

    drift = scenario.drift(t, x, stats, groups, workers)
    dW = noise.increments('W', k)
    if scenario.regime is Regime.PARTIALLY_DISSIPATIVE:
        scale, sigma_hat = scenario.diffusion(t, x, stats, groups)
        new = x + drift * dt + scale * noise.increments('B', k) + np.einsum('nij,nj->ni', sigma_hat, dW)
    else:
        sigma = scenario.diffusion(t, x, stats, groups)
        new = x + drift * dt + np.einsum('nij,nj->ni', sigma, dW)
    _guard(new, k, guard)
    return ensemble.advanced(new)


def simulate(scenario, grid: TimeGrid, init: Ensemble, noise: NoiseBundle, snapshot_steps=None,
             law: Optional[LawProxy] = None, guard=DIVERGENCE_GUARD, workers=None) -> List[Ensemble]:
    """
    Integrate ``grid.n_steps`` steps and return the ensembles at the
    requested steps, counted from the start of ``grid``.
    """
    if snapshot_steps is None:
        snapshot_steps = [grid.n_steps]
    snapshot_steps = [int(s) for s in snapshot_steps]
    if any(s < 0 or s > grid.n_steps for s in snapshot_steps):
        raise DomainError('snapshot steps must lie in [0, {}]'.format(grid.n_steps))
    if init.time_index != grid.start_index:
        raise DomainError('ensemble is at index {}, grid starts at {}'.format(init.time_index, grid.start_index))
    _check_noise(grid, init, noise)

    wanted = set(snapshot_steps)
    last = max(snapshot_steps)
    taken = {}
    ensemble = init
    for j in range(last + 1):
        if j in wanted:
            taken[j] = ensemble
        if j == last:
            break
        ensemble = em_step(scenario, grid, ensemble, noise, law, guard, workers)
    log.debug('%s: integrated %d steps from index %d', scenario.name, last, init.time_index)
    return [taken[s] for s in snapshot_steps]


def pullback_run(scenario, t_target, k_list: Sequence[int], init_sampler, noise: NoiseBundle,
                 n_groups=1, guard=DIVERGENCE_GUARD, workers=None) -> PullbackRun:
    """
    Solve from ``t_target - k tau`` to ``t_target`` for every horizon ``k``.

    All runs read the same absolute-indexed noise, so overlapping steps see
    identical increments.  ``init_sampler(k, n, d)`` supplies the initial
    states of horizon ``k``; successive endpoints are compared by particle
    index.
    """
    k_list = [int(k) for k in k_list]
    if not k_list or k_list[0] < 1 or any(b < a for a, b in zip(k_list, k_list[1:])):
        raise DomainError('horizons must be positive and non-decreasing, got {!r}'.format(k_list))
    base = TimeGrid.aligned(scenario.tau, noise.dt)
    m = base.period_steps
    target = t_target / base.dt
    if abs(target - round(target)) > 1e-9 * max(1.0, abs(target)):
        raise GridNotAligned('t_target={!r} is not on the grid'.format(t_target))
    target = int(round(target))

    run = PullbackRun(t_target=float(t_target), horizons=k_list)
    for k in k_list:
        start = target - k * m
        grid = TimeGrid(dt=base.dt, n_steps=k * m, period_steps=m, t0=start * base.dt)
        init = Ensemble(init_sampler(k, noise.n_particles, scenario.dim), start, n_groups)
        run.endpoints.append(simulate(scenario, grid, init, noise, guard=guard, workers=workers)[0])
        log.info('%s: pull-back horizon %d periods done', scenario.name, k)

    for prev, nxt in zip(run.endpoints, run.endpoints[1:]):
        sq = np.sum((nxt.states - prev.states) ** 2, axis=1).reshape(n_groups, -1)
        group = sq.mean(axis=1)
        run.group_gaps.append(group)
        run.gaps.append(float(sq.mean()))
    return run


def reference_law(scenario, grid: TimeGrid, M, seed, snapshot_steps=None, init: Optional[InitLaw] = None,
                  workers=None) -> List[Ensemble]:
    """
    Snapshots of an ``M``-particle system used as a proxy of the law.

    The run is exactly :func:`simulate` with a bundle of ``M`` particles on
    ``seed``, so ``M = N`` reproduces an interacting run bit for bit.
    """
    if M < 1024 and not hasattr(scenario, 'ou'):
        raise DomainError('a sampled reference law needs M >= 1024, got {}'.format(M))
    init = init or InitLaw()
    noise = NoiseBundle(seed, scenario.dim, grid.dt, M, drivers_for(scenario), workers=workers)
    ensemble = Ensemble(init.sample(M, scenario.dim), grid.start_index)
    return simulate(scenario, grid, ensemble, noise, snapshot_steps, workers=workers)


def law_proxy(scenario, grid: TimeGrid, init: InitLaw, M=None, seed=0, mode='euler', workers=None) -> LawProxy:
    """
    The law stream for the non-interacting system started from ``init``.

    Scenarios with a closed-form law get :class:`ExactOULaw`; all others a
    :class:`ReferenceLaw` of ``M`` particles.
    """
    if hasattr(scenario, 'ou') and M is None:
        v0 = 0.0 if init.kind == 'point' else init.scale ** 2
        return ExactOULaw(scenario, grid, m0=init.loc, v0=v0, mode=mode)
    if M is None:
        raise DomainError('{} has no closed-form law; a reference size M is required'.format(scenario.name))
    return ReferenceLaw(scenario, grid, M, seed, init, workers)


def moment_series(scenario, grid: TimeGrid, init: Ensemble, noise: NoiseBundle, every=None,
                  guard=DIVERGENCE_GUARD, workers=None):
    """
    Per-group second moments sampled every ``every`` steps (one period by
    default).

    Returns ``(times, moments)`` with ``moments`` of shape
    ``(n_samples, n_groups)``.
    """
    every = every or grid.period_steps
    steps = list(range(0, grid.n_steps + 1, every))
    snaps = simulate(scenario, grid, init, noise, steps, guard=guard, workers=workers)
    times = np.array([s.time_index * grid.dt for s in snaps])
    moments = np.stack([compute_stats(s).second_moments for s in snaps])
    return times, moments
