"""
Two-sided Brownian increments indexed by absolute grid step.

Every increment is a pure function of ``(seed, driver, particle, k, dt)``:
the standard normals behind it come from a Philox counter stream whose key
is derived from ``(seed, driver, particle)`` and whose counter is the block
of steps containing ``k``.  Because nothing is drawn sequentially, a run
may start arbitrarily far in the past (negative ``k``) and the Wiener shift
:math:`\\theta_{m\\tau}` is an exact re-indexing rather than a resampling.

Normals are produced by Box-Muller on the Philox uniforms; the scheme name
:data:`RNG_SCHEME` is written into every run manifest.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import DomainError, GridNotAligned
from ._utils import parallel_map

__all__ = [
    'RNG_SCHEME',
    'BLOCK_STEPS',
    'DRIVERS',
    'TimeGrid',
    'NoiseBundle',
    'gaussian_increment',
    'increment_range',
    'wiener_shift',
    'brownian_value',
]

RNG_SCHEME = 'philox4x64-boxmuller'

#: number of consecutive steps sharing one Philox counter block
BLOCK_STEPS = 256

#: driver identifiers and the integers mixed into the Philox key
DRIVERS: Dict[str, int] = {
    'W': 0,
    'B': 1,
    'B_star': 2,
    'B_hat': 3,
}

_U64 = 2 ** 64

# relative slack allowed when checking that a step divides the period
_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """
    A uniform, period-aligned time grid.

    Attributes
    ----------
    dt : float
        step size
    n_steps : int
        number of steps integrated from :attr:`t0`
    period_steps : int
        ``m`` with ``m * dt`` equal to the scenario period; :attr:`tau` is
        *defined* as this product
    t0 : float
        start time, a whole number of steps
    """
    dt: float
    n_steps: int
    period_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError('dt must be positive, got {!r}'.format(self.dt))
        if self.n_steps < 1:
            raise DomainError('n_steps must be at least 1, got {!r}'.format(self.n_steps))
        if self.period_steps < 1:
            raise DomainError('period_steps must be at least 1, got {!r}'.format(self.period_steps))
        k0 = self.t0 / self.dt
        if abs(k0 - round(k0)) > _ALIGN_RTOL * max(1.0, abs(k0)):
            raise GridNotAligned('t0={!r} is not a whole number of steps of {!r}'.format(self.t0, self.dt))

    @classmethod
    def aligned(cls, tau, dt, n_periods=None, n_steps=None, t0=0.0) -> 'TimeGrid':
        """
        Build a grid whose step divides ``tau`` exactly.

        ``dt`` is snapped to ``tau / m``; if it is not within roundoff of such
        a value, :class:`GridNotAligned` is raised.
        """
        if not tau > 0:
            raise DomainError('tau must be positive, got {!r}'.format(tau))
        if not dt > 0:
            raise DomainError('dt must be positive, got {!r}'.format(dt))
        m = int(round(tau / dt))
        if m < 1 or abs(m * dt - tau) > _ALIGN_RTOL * tau:
            raise GridNotAligned(
                'grid not period-aligned: dt={!r} does not divide tau={!r}'.format(dt, tau))
        dt = tau / m
        if n_steps is None:
            if n_periods is None:
                n_periods = 1
            n_steps = int(round(n_periods * m))
        k0 = int(round(t0 / dt))
        return cls(dt=dt, n_steps=n_steps, period_steps=m, t0=k0 * dt)

    @property
    def tau(self) -> float:
        return self.period_steps * self.dt

    @property
    def start_index(self) -> int:
        return int(round(self.t0 / self.dt))

    @property
    def end_index(self) -> int:
        return self.start_index + self.n_steps

    def time(self, k) -> float:
        """ Absolute time of grid index ``k`` """
        return k * self.dt

    def phase_time(self, k) -> float:
        """ Time of index ``k`` reduced into ``[0, tau)`` through the integer phase """
        return (k % self.period_steps) * self.dt

    def starting_at(self, index, n_steps=None) -> 'TimeGrid':
        """ The same grid restarted at absolute step ``index`` """
        if n_steps is None:
            n_steps = self.n_steps
        return replace(self, t0=index * self.dt, n_steps=n_steps)

    def shifted(self, m_periods) -> 'TimeGrid':
        """ The grid translated by ``m_periods`` whole periods """
        return self.starting_at(self.start_index + m_periods * self.period_steps)

    def manifest(self) -> dict:
        return dict(t0=self.t0, dt=self.dt, n_steps=self.n_steps, period_steps=self.period_steps)


def _driver_id(driver) -> int:
    try:
        return DRIVERS[driver]
    except KeyError:
        pass
    if isinstance(driver, int) and driver >= 0:
        return driver
    raise DomainError('unknown driver {!r}; expected one of {}'.format(driver, sorted(DRIVERS)))


@lru_cache(maxsize=65536)
def _philox_key(seed: int, driver_id: int, particle: int) -> Tuple[int, int]:
    ss = np.random.SeedSequence([seed % _U64, driver_id, particle])
    return tuple(int(v) for v in ss.generate_state(2, np.uint64))


@lru_cache(maxsize=2048)
def _standard_block(seed: int, driver_id: int, particle: int, block: int, d: int) -> np.ndarray:
    # the block index lives in the most significant counter word, so the
    # draws of one block never run into the counters of the next
    key = np.array(_philox_key(seed, driver_id, particle), dtype=np.uint64)
    counter = np.array([0, 0, 0, block % _U64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    n = BLOCK_STEPS * d
    half = (n + 1) // 2
    u = gen.random(2 * half)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps the log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
    z = z.reshape(BLOCK_STEPS, d)
    z.flags.writeable = False
    return z


def gaussian_increment(seed, driver, particle, k, dt, d) -> np.ndarray:
    """
    The Brownian increment of ``driver`` for ``particle`` over step ``k``.

    Returns ``sqrt(dt) * z`` with ``z`` a standard normal ``d``-vector that
    depends only on the arguments.
    """
    if not dt > 0:
        raise DomainError('dt must be positive, got {!r}'.format(dt))
    block, offset = divmod(int(k), BLOCK_STEPS)
    z = _standard_block(int(seed), _driver_id(driver), int(particle), block, int(d))
    return math.sqrt(dt) * z[offset]


def increment_range(seed, driver, particle, k_start, k_stop, dt, d) -> np.ndarray:
    """ Increments for steps ``k_start <= k < k_stop`` stacked into a ``(k_stop - k_start, d)`` array """
    if not dt > 0:
        raise DomainError('dt must be positive, got {!r}'.format(dt))
    k_start, k_stop = int(k_start), int(k_stop)
    if k_stop <= k_start:
        return np.zeros((0, d))
    first = k_start // BLOCK_STEPS
    last = (k_stop - 1) // BLOCK_STEPS
    driver_id = _driver_id(driver)
    z = np.concatenate([
        _standard_block(int(seed), driver_id, int(particle), b, int(d))
        for b in range(first, last + 1)
    ])
    lo = k_start - first * BLOCK_STEPS
    return math.sqrt(dt) * z[lo:lo + (k_stop - k_start)]


class NoiseBundle:
    """
    The driving noise of a particle system: independent Brownian motions per
    (driver, particle), indexed by absolute step.

    Parameters
    ----------
    seed : int
        64-bit master seed
    d : int
        state dimension
    dt : float
        step size the increments are scaled to
    n_particles : int
        number of particle slots served by :meth:`increments`
    drivers : sequence of str
        driver names, a subset of :data:`DRIVERS`
    shift : int
        read offset in steps; the view at ``k`` returns the source at
        ``k + shift``
    particle_ids : sequence of int, optional
        noise identity of each particle slot, ``range(n_particles)`` by default
    workers : int, optional
        pool size used when generating increment tables
    """

    _CACHE_BLOCKS = 3

    def __init__(self, seed, d, dt, n_particles, drivers=('W',), shift=0,
                 particle_ids=None, workers=None, _cache=None):
        if not dt > 0:
            raise DomainError('dt must be positive, got {!r}'.format(dt))
        if n_particles < 1:
            raise DomainError('n_particles must be at least 1, got {!r}'.format(n_particles))
        for driver in drivers:
            _driver_id(driver)
        self.seed = int(seed)
        self.d = int(d)
        self.dt = float(dt)
        self.n_particles = int(n_particles)
        self.drivers = tuple(drivers)
        self.shift = int(shift)
        if particle_ids is None:
            particle_ids = np.arange(self.n_particles)
        particle_ids = np.asarray(particle_ids, dtype=np.int64)
        if particle_ids.shape != (self.n_particles,):
            raise DomainError('particle_ids must have one entry per particle')
        self.particle_ids = particle_ids
        self.workers = workers
        self._cache = OrderedDict() if _cache is None else _cache

    def __repr__(self):
        return '{}(seed={}, d={}, dt={!r}, n_particles={}, drivers={!r}, shift={})'.format(
            type(self).__qualname__, self.seed, self.d, self.dt,
            self.n_particles, self.drivers, self.shift)

    def _check_driver(self, driver):
        if driver not in self.drivers:
            raise DomainError('driver {!r} is not part of this bundle {!r}'.format(driver, self.drivers))

    def _table(self, driver, block) -> np.ndarray:
        key = (driver, block)
        try:
            table = self._cache[key]
        except KeyError:
            pass
        else:
            self._cache.move_to_end(key)
            return table

        driver_id = _driver_id(driver)
        scale = math.sqrt(self.dt)
        chunks = np.array_split(self.particle_ids, max(1, min(len(self.particle_ids), 64)))

        def build(ids):
            return np.stack([
                _standard_block(self.seed, driver_id, int(p), block, self.d) for p in ids
            ]) if len(ids) else np.zeros((0, BLOCK_STEPS, self.d))

        table = scale * np.concatenate(parallel_map(build, chunks, self.workers))
        table.flags.writeable = False
        self._cache[key] = table
        while len(self._cache) > self._CACHE_BLOCKS * max(1, len(self.drivers)):
            self._cache.popitem(last=False)
        return table

    def increments(self, driver, k) -> np.ndarray:
        """ ``(n_particles, d)`` increments of ``driver`` over step ``k`` of this view """
        self._check_driver(driver)
        block, offset = divmod(int(k) + self.shift, BLOCK_STEPS)
        return self._table(driver, block)[:, offset]

    def increment(self, driver, particle, k) -> np.ndarray:
        self._check_driver(driver)
        return gaussian_increment(
            self.seed, driver, int(self.particle_ids[particle]), int(k) + self.shift, self.dt, self.d)

    def path_increments(self, driver, particle, k_start, k_stop) -> np.ndarray:
        self._check_driver(driver)
        return increment_range(
            self.seed, driver, int(self.particle_ids[particle]),
            int(k_start) + self.shift, int(k_stop) + self.shift, self.dt, self.d)

    def wiener_shift(self, m_periods, period_steps) -> 'NoiseBundle':
        """ The view :math:`\\theta_{m\\tau}\\omega`, sharing this bundle's increments """
        return NoiseBundle(
            self.seed, self.d, self.dt, self.n_particles, self.drivers,
            shift=self.shift + int(m_periods) * int(period_steps),
            particle_ids=self.particle_ids, workers=self.workers, _cache=self._cache)

    def with_particles(self, particle_ids) -> 'NoiseBundle':
        """ The same noise with particle slots re-labelled to ``particle_ids`` """
        particle_ids = np.asarray(particle_ids, dtype=np.int64)
        return NoiseBundle(
            self.seed, self.d, self.dt, len(particle_ids), self.drivers,
            shift=self.shift, particle_ids=particle_ids, workers=self.workers)

    def with_drivers(self, drivers: Sequence[str]) -> 'NoiseBundle':
        return NoiseBundle(
            self.seed, self.d, self.dt, self.n_particles, tuple(drivers),
            shift=self.shift, particle_ids=self.particle_ids, workers=self.workers)

    def manifest(self) -> dict:
        return dict(seed=self.seed, rng_scheme=RNG_SCHEME, dt=self.dt,
                    drivers=list(self.drivers), shift=self.shift,
                    block_steps=BLOCK_STEPS)


def wiener_shift(bundle: NoiseBundle, m_periods, period_steps) -> NoiseBundle:
    """ Shift ``bundle`` by ``m_periods`` periods of ``period_steps`` steps """
    return bundle.wiener_shift(m_periods, period_steps)


def brownian_value(bundle: NoiseBundle, driver, particle, k) -> np.ndarray:
    """
    The two-sided path value at index ``k``, pinned to zero at index 0.

    Sums run from the lowest index upwards so path identities are
    reproducible to roundoff.
    """
    k = int(k)
    if k == 0:
        return np.zeros(bundle.d)
    if k > 0:
        incr = bundle.path_increments(driver, particle, 0, k)
        return np.cumsum(incr, axis=0)[-1]
    incr = bundle.path_increments(driver, particle, k, 0)
    return -np.cumsum(incr, axis=0)[-1]
