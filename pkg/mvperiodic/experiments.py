"""
Experiment harness: each runner simulates a scenario, fits the rates the
theory predicts and condenses the outcome into a :class:`Report` with a
``PASS``/``FAIL``/``INCONCLUSIVE`` verdict.

Runners
-------
* :func:`run_pathwise_periodicity` - shifted interval versus shifted noise
* :func:`run_pullback` - convergence of solutions started ever earlier
* :func:`run_contraction` - decay of the gap between two initial laws
* :func:`run_poc` - uniform-in-time propagation of chaos
* :func:`run_law_periodicity` - periodicity of the law after burn-in
* :func:`run_oracle_mean` - ensemble mean against the closed-form OU mean
* :func:`run_moment_bound` - boundedness of the second moment

Standard errors come from independent replica groups, fits never
extrapolate beyond the sampled range, and a fit with ``r**2 < 0.5`` turns
the verdict into ``INCONCLUSIVE``.
"""
import dataclasses
import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from .coupling import (
    COUPLING_DRIVERS, CoupledPair, CouplingConfig, coupled_step,
    contraction_constants, coupling_diagnostics,
)
from .errors import (
    DomainError, GridNotAligned, NonPositiveValue, NotContractive, ValidationError,
)
from .ips import (
    Ensemble, ExactOULaw, InitLaw, drivers_for, em_step, law_proxy,
    moment_series, pullback_run, simulate,
)
from .metrics import empirical_distance
from .models import (
    ERGODICITY, Regime, compute_stats, derived_constants, lemma_constants,
    oracle_periodic_mean, oracle_stationary_variance,
)
from .noise import NoiseBundle, RNG_SCHEME, TimeGrid

__all__ = [
    'PASS', 'FAIL', 'INCONCLUSIVE',
    'RateFit',
    'RateModel',
    'ExperimentConfig',
    'Report',
    'phi_rate',
    'fit_exponential',
    'fit_power_law',
    'replica_se',
    'sign_test',
    'default_dt',
    'make_grid',
    'run_pathwise_periodicity',
    'run_pullback',
    'run_contraction',
    'run_poc',
    'run_law_periodicity',
    'run_oracle_mean',
    'run_moment_bound',
    'EXPERIMENTS',
    'run_experiment',
]

log = logging.getLogger(__name__)

PASS = 'PASS'
FAIL = 'FAIL'
INCONCLUSIVE = 'INCONCLUSIVE'

#: below this r**2 a fit cannot support a verdict
MIN_R_SQUARED = 0.5


@dataclass(frozen=True)
class RateFit:
    """
    A fitted exponential ``C exp(-rate t)`` or power law ``C N**(-rate)``.

    For power laws :attr:`slope` is the log-log slope.
    """
    C: float
    rate: float
    r_squared: float
    n_points: int
    kind: str = 'exponential'
    stderr: float = float('nan')

    def __post_init__(self):
        if self.n_points < 3:
            raise DomainError('a rate fit needs at least 3 points, got {}'.format(self.n_points))
        if not 0.0 <= self.r_squared <= 1.0:
            raise DomainError('r_squared outside [0, 1]: {!r}'.format(self.r_squared))

    @property
    def slope(self) -> float:
        return -self.rate

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RateModel:
    """ Theoretical propagation-of-chaos rate; ``eps0`` only shapes the overlay curve """
    eps0: float = 0.5
    d: int = 1

    def __post_init__(self):
        if not 0 < self.eps0 < 1:
            raise DomainError('eps0 must lie in (0, 1), got {!r}'.format(self.eps0))


def phi_rate(model: RateModel, N) -> float:
    """ The rate function ``phi(N)`` of the uniform-in-time chaos bound """
    if N < 1:
        raise DomainError('N must be at least 1, got {!r}'.format(N))
    tail = N ** (-model.eps0 / (2 + model.eps0))
    if model.d < 4:
        return N ** -0.5 + tail
    if model.d == 4:
        return N ** -0.5 * math.log(1 + N) + tail
    return N ** (-2.0 / model.d) + tail


def _linear_fit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise DomainError('a rate fit needs at least 3 points, got {}'.format(len(x)))
    if np.ptp(x) == 0:
        raise DomainError('fit abscissae are all equal')
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return res.slope, res.intercept, r2, res.stderr


def fit_exponential(times, values) -> RateFit:
    """ Least squares on ``(t, log v)``; ``rate = -slope``, ``C = exp(intercept)`` """
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise NonPositiveValue('exponential fits need positive values')
    slope, intercept, r2, se = _linear_fit(times, np.log(values))
    return RateFit(C=math.exp(intercept), rate=-slope, r_squared=r2, n_points=len(values),
                   kind='exponential', stderr=se)


def fit_power_law(ns, values) -> RateFit:
    """ Least squares on ``(log N, log v)``; ``rate = -slope`` """
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise NonPositiveValue('power-law fits need positive values')
    slope, intercept, r2, se = _linear_fit(np.log(np.asarray(ns, dtype=float)), np.log(values))
    return RateFit(C=math.exp(intercept), rate=-slope, r_squared=r2, n_points=len(values),
                   kind='power', stderr=se)


def replica_se(values) -> float:
    """ Standard error of the mean over independent replica values """
    values = np.asarray(values, dtype=float).ravel()
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def sign_test(residuals) -> float:
    """ Two-sided sign-test p-value of the non-zero residuals """
    residuals = np.asarray(residuals, dtype=float).ravel()
    nonzero = residuals[residuals != 0]
    if not len(nonzero):
        return 1.0
    return float(stats.binomtest(int(np.sum(nonzero > 0)), len(nonzero), 0.5).pvalue)


def _init_from(value) -> InitLaw:
    if isinstance(value, InitLaw):
        return value
    return InitLaw(**value)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Knobs of every runner; each runner reads the subset it needs.

    Periods and times are counted in periods of the scenario.
    """
    seed: int = 0
    N: int = 256
    n_groups: int = 16
    dt: Optional[float] = None
    t0: float = 0.0
    periods: int = 5
    horizons: Tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    N_list: Tuple[int, ...] = (8, 32, 128, 512)
    M_ref: Optional[int] = None
    R: int = 2000
    burn_in_periods: int = 20
    sample_periods: Tuple[int, ...] = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50)
    samples_per_period: int = 10
    n_splits: int = 16
    slope_ceiling: float = -0.45
    rate_floor: Optional[float] = None
    eps: Optional[float] = None
    eps0: float = 0.5
    init: InitLaw = InitLaw('normal', 0.0, 1.0)
    init_a: InitLaw = InitLaw('normal', 1.0, 0.1, seed=1)
    init_b: InitLaw = InitLaw('normal', -1.0, 0.1, seed=2)
    phase: Optional[float] = None
    distance_mode: str = 'auto'
    guard: float = 1e8
    workers: Optional[int] = None

    def __post_init__(self):
        for name in ('init', 'init_a', 'init_b'):
            object.__setattr__(self, name, _init_from(getattr(self, name)))
        for name in ('horizons', 'N_list', 'sample_periods'):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.N < 1 or self.n_groups < 1 or self.R < 1:
            raise ValidationError('N, n_groups and R must be positive')
        if self.dt is not None and not self.dt > 0:
            raise ValidationError('dt must be positive, got {!r}'.format(self.dt))
        if any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValidationError('N_list must be increasing, got {!r}'.format(self.N_list))

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, InitLaw):
                value = value.manifest()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        out.pop('workers')
        return out

    @classmethod
    def from_dict(cls, data) -> 'ExperimentConfig':
        return cls(**data)


@dataclass
class Report:
    experiment: str
    scenario: dict
    config: dict
    seeds: dict
    verdict: str = INCONCLUSIVE
    series: List[dict] = field(default_factory=list)
    fits: List[dict] = field(default_factory=list)
    checks: Dict[str, object] = field(default_factory=dict)
    runtime_s: float = 0.0

    def add_series(self, name, columns, rows):
        self.series.append(dict(name=name, columns=list(columns), rows=[list(r) for r in rows]))

    def add_fit(self, name, fit: Optional[RateFit]):
        if fit is not None:
            self.fits.append(dict(name=name, **fit.to_dict()))

    def to_dict(self) -> dict:
        return dict(experiment=self.experiment, scenario=self.scenario, config=self.config,
                    seeds=self.seeds, series=self.series, fits=self.fits, checks=self.checks,
                    verdict=self.verdict, runtime_s=self.runtime_s)


def _subseed(seed, *keys) -> int:
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1, np.uint64)[0])


def default_dt(scenario) -> float:
    """ ``1e-3 tau`` in the fully dissipative regime, ``2e-4 tau`` otherwise """
    if scenario.regime is Regime.FULLY_DISSIPATIVE:
        return 1e-3 * scenario.tau
    return 2e-4 * scenario.tau


def make_grid(scenario, config: ExperimentConfig, n_periods=None) -> TimeGrid:
    """ The period-aligned grid of ``config`` for ``scenario`` """
    dt = config.dt if config.dt is not None else default_dt(scenario)
    return TimeGrid.aligned(scenario.tau, dt, n_periods if n_periods is not None else config.periods, t0=config.t0)


def _verdict(ok, fits=()) -> str:
    if any(f is None or f.r_squared < MIN_R_SQUARED for f in fits):
        return INCONCLUSIVE
    return PASS if ok else FAIL


def _report(name, scenario, config, seeds) -> Report:
    seeds = dict(seeds)
    seeds.setdefault('rng_scheme', RNG_SCHEME)
    return Report(experiment=name, scenario=scenario.manifest(), config=config.to_dict(), seeds=seeds)


def _require_contractive(scenario):
    consts = derived_constants(scenario)
    if scenario.regime is Regime.FULLY_DISSIPATIVE:
        if not consts.lambda_ > 0:
            raise NotContractive('{}: lambda = {:.6g} is not positive'.format(scenario.name, consts.lambda_))
    elif consts.K2_star is None or scenario.K2 > consts.K2_star:
        raise NotContractive('{}: K2 = {!r} exceeds the admissible threshold {!r}'.format(
            scenario.name, scenario.K2, consts.K2_star))
    return consts


def _timed(runner):
    @functools.wraps(runner)
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        report = runner(*args, **kwargs)
        report.runtime_s = time.perf_counter() - start
        log.info('%s on %s: %s (%.1f s)', report.experiment, report.scenario['name'],
                 report.verdict, report.runtime_s)
        return report
    return wrapper


@_timed
def run_pathwise_periodicity(scenario, grid: TimeGrid, N, seed, config: Optional[ExperimentConfig] = None) -> Report:
    """
    Compare a run on ``[s + tau, t + tau]`` under ``omega`` with a run on
    ``[s, t]`` under the noise shifted by one period, from identical initial
    states.
    """
    config = config or ExperimentConfig(seed=seed, N=N)
    if abs(grid.tau - scenario.tau) > 1e-9 * scenario.tau:
        raise GridNotAligned('grid period {!r} does not match scenario period {!r}'.format(grid.tau, scenario.tau))
    noise = NoiseBundle(seed, scenario.dim, grid.dt, N, drivers_for(scenario), workers=config.workers)
    x0 = config.init.sample(N, scenario.dim, key=seed)

    later = grid.shifted(1)
    direct = simulate(scenario, later, Ensemble(x0, later.start_index), noise,
                      guard=config.guard, workers=config.workers)[0]
    shifted = simulate(scenario, grid, Ensemble(x0, grid.start_index), noise.wiener_shift(1, grid.period_steps),
                       guard=config.guard, workers=config.workers)[0]
    discrepancy = float(np.max(np.abs(direct.states - shifted.states)))
    scale = 1.0 + float(np.max(np.abs(direct.states)))

    report = _report('pathwise_periodicity', scenario, config, dict(seed=seed))
    report.config.update(N=N, grid=grid.manifest())
    report.add_series('discrepancy', ['t', 'max_discrepancy', 'max_abs_state'],
                      [[later.end_index * grid.dt, discrepancy, scale - 1.0]])
    report.checks = dict(discrepancy=discrepancy, tolerance=1e-9 * scale)
    report.verdict = PASS if discrepancy <= 1e-9 * scale else FAIL
    return report


def _monotone(values, ses):
    return all(b <= a + 2 * math.hypot(sa, sb)
               for a, b, sa, sb in zip(values, values[1:], ses, ses[1:]))


@_timed
def run_pullback(scenario, config: ExperimentConfig) -> Report:
    """
    Pull-back gaps over the horizons of ``config`` and their exponential
    decay rate in the look-back time.
    """
    _require_contractive(scenario)
    dt = config.dt if config.dt is not None else default_dt(scenario)
    n = config.N * config.n_groups
    noise = NoiseBundle(config.seed, scenario.dim, dt, n, drivers_for(scenario), workers=config.workers)
    init = dataclasses.replace(config.init, seed=_subseed(config.seed, 1))
    run = pullback_run(scenario, 0.0, config.horizons, init, noise, n_groups=config.n_groups,
                       guard=config.guard, workers=config.workers)

    ses = [replica_se(g) for g in run.group_gaps]
    report = _report('pullback', scenario, config, dict(seed=config.seed, init_seed=init.seed))
    rows = [[k * scenario.tau, k, gap, se] for k, gap, se in zip(run.horizons, run.gaps, ses)]
    report.add_series('pullback_gaps', ['lookback', 'horizon', 'gap', 'se'], rows)

    usable = [(k * scenario.tau, g) for k, g in zip(run.horizons, run.gaps) if g > 0]
    fit = fit_exponential(*zip(*usable)) if len(usable) >= 3 else None
    report.add_fit('gap_decay', fit)
    monotone = _monotone(run.gaps, ses)
    ok = monotone and fit is not None and fit.rate > 0 and fit.r_squared >= 0.8
    report.checks = dict(monotone=monotone)
    if hasattr(scenario, 'ou') and fit is not None:
        ou = scenario.ou
        expected = -2 * math.log(1 + (ou.b - ou.a) * dt) / dt
        report.checks.update(expected_rate=expected, rate_ratio=fit.rate / expected)
        ok = ok and abs(fit.rate / expected - 1) <= 0.25
    report.verdict = _verdict(ok, [fit])
    return report


def _default_rate_floor(scenario):
    if scenario.regime is Regime.FULLY_DISSIPATIVE:
        return 0.5 * derived_constants(scenario).lambda_ / scenario.tau
    c1, _, c_star = lemma_constants(scenario.K0, scenario.K1, scenario.K2, scenario.l0, ERGODICITY)
    return 0.5 * (c_star - scenario.K2 * (1 + c1)) * derived_constants(scenario).alpha_bar


def _sample_every(grid, config):
    return max(1, grid.period_steps // max(1, config.samples_per_period))


@_timed
def run_contraction(scenario, init_a: InitLaw, init_b: InitLaw, config: ExperimentConfig) -> Report:
    """
    Decay of the distance between solutions started from two initial laws.

    Fully dissipative scenarios share the noise (synchronous coupling) and
    track the mean squared paired gap; partially dissipative ones use the
    reflection coupling and track ``W1`` between the two marginals.
    """
    grid = make_grid(scenario, config)
    every = _sample_every(grid, config)
    n, d = config.N, scenario.dim
    report = _report('contraction', scenario, config, dict(seed=config.seed))
    floor = config.rate_floor if config.rate_floor is not None else _default_rate_floor(scenario)
    xa = init_a.sample(n, d, key=_subseed(config.seed, 2))
    xb = init_b.sample(n, d, key=_subseed(config.seed, 3))

    if scenario.regime is Regime.FULLY_DISSIPATIVE:
        noise = NoiseBundle(config.seed, d, grid.dt, n, drivers_for(scenario), workers=config.workers)
        a, b = Ensemble(xa, grid.start_index), Ensemble(xb, grid.start_index)
        rows = []
        for j in range(grid.n_steps + 1):
            if j % every == 0:
                rows.append([a.time_index * grid.dt, float(np.mean(np.sum((a.states - b.states) ** 2, axis=1)))])
            if j == grid.n_steps:
                break
            a = em_step(scenario, grid, a, noise, guard=config.guard, workers=config.workers)
            b = em_step(scenario, grid, b, noise, guard=config.guard, workers=config.workers)
        report.add_series('paired_gap', ['t', 'mean_sq_gap'], rows)
        usable = [(t, v) for t, v in rows if v > 0]
        cut = None
    else:
        config_c = CouplingConfig(eps=config.eps) if config.eps else CouplingConfig.for_scenario(scenario)
        consts = contraction_constants(scenario, ERGODICITY)
        rows, diag, method, coupled = _coupled_gap_series(scenario, grid, xa, xb, config_c, consts, config, every)
        report.add_series('w1_gap', ['t', 'w1'], rows)
        report.add_series('coupling', list(diag[0]), [list(r.values()) for r in diag])
        report.checks.update(distance_method=method, eps=config_c.eps, c1=consts.c1, c2=consts.c2,
                             c_star=consts.c_star)
        # the coupled pair settles at the cut-off scale; fit only the decay above it
        cut = 4 * config_c.eps
        usable = []
        for t, v in rows:
            if v <= cut:
                break
            usable.append((t, v))
        window = len(usable)
        report.checks['functional_non_increasing'] = _non_increasing_trend(
            [r['t'] for r in diag[:window]], [r['monitored_functional'] for r in diag[:window]])

        halved = dataclasses.replace(config_c, eps=config_c.eps / 2)
        _, diag_half, _, _ = _coupled_gap_series(scenario, grid, xa, xb, halved, consts, config, every)
        report.checks['eps_sensitivity'] = _eps_sensitivity(diag[:window], diag_half[:window])
        report.checks['marginal_fidelity'] = _marginal_fidelity(scenario, grid, coupled, xa, config)

    if not usable:
        report.checks.update(rate_floor=floor, coalesced=True)
        report.verdict = PASS
        return report
    fit = fit_exponential(*zip(*usable)) if len(usable) >= 3 else None
    report.add_fit('gap_decay', fit)
    ok = fit is not None and fit.rate >= floor
    report.checks.update(rate_floor=floor, fit_cutoff=cut)
    if scenario.regime is Regime.PARTIALLY_DISSIPATIVE:
        ok = (ok and report.checks['marginal_fidelity']['ok']
              and report.checks['functional_non_increasing'] is not False
              and report.checks['eps_sensitivity']['ok'] is not False)
    report.verdict = _verdict(ok, [fit])
    return report


def _coupled_gap_series(scenario, grid, xa, xb, config_c, consts, config, every):
    """ W1 between the coupled marginals and the coupling diagnostics, every ``every`` steps """
    noise = NoiseBundle(config.seed, scenario.dim, grid.dt, len(xa), COUPLING_DRIVERS, workers=config.workers)
    pair = CoupledPair(Ensemble(xa, grid.start_index), Ensemble(xb, grid.start_index))
    rows, diag = [], []
    alpha_integral = 0.0
    method = None
    for j in range(grid.n_steps + 1):
        if j % every == 0:
            w1, method = empirical_distance(pair.a.states, pair.b.states, 1, config.distance_mode,
                                            seed=_subseed(config.seed, 4, j))
            rows.append([pair.time_index * grid.dt, w1])
            diag.append(coupling_diagnostics(pair, grid, consts.c1, consts.c2, config_c,
                                             c_star=consts.c_star, alpha_integral=alpha_integral))
        if j == grid.n_steps:
            break
        alpha_integral += float(scenario.alpha(grid.phase_time(pair.time_index))) * grid.dt
        pair = coupled_step(scenario, grid, pair, noise, config_c, guard=config.guard, workers=config.workers)
    return rows, diag, method, pair


def _non_increasing_trend(times, values):
    """ Fitted slope at most two standard errors above zero; ``None`` below three points """
    if len(values) < 3:
        return None
    fit = stats.linregress(times, values)
    return bool(fit.slope <= 2 * fit.stderr)


def _eps_sensitivity(diag, diag_half, tolerance=0.15):
    """ Relative change of the ``mean_f_distance`` decay rate when ``eps`` is halved """
    out = dict(rate=None, rate_half_eps=None, relative_change=None, tolerance=tolerance, ok=None)
    values = [r['mean_f_distance'] for r in diag]
    values_half = [r['mean_f_distance'] for r in diag_half]
    if len(diag) < 3 or min(values + values_half) <= 0:
        return out
    times = [r['t'] for r in diag]
    rate = fit_exponential(times, values).rate
    rate_half = fit_exponential(times, values_half).rate
    change = abs(rate_half - rate) / abs(rate) if rate else float('inf')
    out.update(rate=rate, rate_half_eps=rate_half, relative_change=change, ok=bool(change < tolerance))
    return out


def _marginal_fidelity(scenario, grid, coupled, x0, config):
    """ W1 between a coupled marginal and independent runs against the run-to-run floor """
    n, d = x0.shape
    finals = []
    for key in (5, 6):
        noise = NoiseBundle(_subseed(config.seed, key), d, grid.dt, n, drivers_for(scenario), workers=config.workers)
        finals.append(simulate(scenario, grid, Ensemble(x0, grid.start_index), noise,
                               guard=config.guard, workers=config.workers)[0])
    gap = empirical_distance(coupled.a.states, finals[0].states, 1, config.distance_mode, seed=config.seed).value
    floor = empirical_distance(finals[1].states, finals[0].states, 1, config.distance_mode, seed=config.seed).value
    return dict(w1=gap, floor=floor, ok=bool(gap <= 3 * floor))


def _per_group_sq_gap(x, y, n_groups):
    return np.sum((x - y) ** 2, axis=1).reshape(n_groups, -1).mean(axis=1)


def _per_group_w1(x, y, n_groups, mode, seed):
    xs = x.reshape(n_groups, -1, x.shape[-1])
    ys = y.reshape(n_groups, -1, y.shape[-1])
    return np.array([empirical_distance(a, b, 1, mode, seed=seed).value for a, b in zip(xs, ys)])


@_timed
def run_poc(scenario, N_list: Sequence[int], config: ExperimentConfig) -> Report:
    """
    Propagation of chaos: the non-interacting system driven by the law
    proxy against the interacting system, with shared drivers per particle
    index, for every ``N`` in ``N_list``.
    """
    N_list = [int(v) for v in N_list]
    if not N_list or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise DomainError('N_list must be increasing, got {!r}'.format(N_list))
    if scenario.regime is Regime.PARTIALLY_DISSIPATIVE:
        return _run_poc_partial(scenario, N_list, config)

    times = [p for p in config.sample_periods if p >= 1]
    grid = make_grid(scenario, config, n_periods=max(times))
    m = grid.period_steps
    G, d = config.n_groups, scenario.dim
    if config.M_ref is not None:
        M = config.M_ref
    elif hasattr(scenario, 'ou'):
        M = None
    else:
        M = 16 * max(N_list)
    report = _report('poc', scenario, config, dict(seed=config.seed))
    model = RateModel(eps0=config.eps0, d=d)

    rows, errors, uniform = [], [], {}
    for N in N_list:
        n = N * G
        noise = NoiseBundle(_subseed(config.seed, 7, N), d, grid.dt, n, drivers_for(scenario), workers=config.workers)
        x0 = config.init.sample(n, d, key=_subseed(config.seed, 8, N))
        law = law_proxy(scenario, grid, config.init, M=M, seed=_subseed(config.seed, 9, N), workers=config.workers)
        inter = Ensemble(x0, grid.start_index, G)
        free = Ensemble(x0, grid.start_index, G)
        wanted = {p * m for p in times}
        per_time = []
        for j in range(grid.n_steps + 1):
            if j in wanted:
                per_time.append(_per_group_sq_gap(free.states, inter.states, G))
            if j == grid.n_steps:
                break
            inter = em_step(scenario, grid, inter, noise, guard=config.guard, workers=config.workers)
            free = em_step(scenario, grid, free, noise, law=law, guard=config.guard, workers=config.workers)
        per_time = np.array(per_time)
        for p, g in zip(times, per_time):
            rows.append([N, p * scenario.tau, float(g.mean()), replica_se(g), phi_rate(model, N) ** 2])
        errors.append(float(per_time.mean()))
        first, last = per_time[0], per_time[-1]
        band = 2 * math.hypot(replica_se(first), replica_se(last))
        uniform[N] = dict(first=float(first.mean()), last=float(last.mean()), band=band,
                          ok=bool(abs(last.mean() - first.mean()) <= band))
        log.info('poc N=%d: mean squared gap %.4g', N, errors[-1])

    report.add_series('poc_error', ['N', 't', 'mean_sq_gap', 'se', 'phi_squared'], rows)
    fit = fit_power_law(N_list, errors) if len(N_list) >= 3 and min(errors) > 0 else None
    report.add_fit('error_vs_N', fit)
    uniform_ok = all(u['ok'] for u in uniform.values())
    report.checks = dict(slope_ceiling=config.slope_ceiling, uniform_in_time={str(k): v for k, v in uniform.items()},
                         law_proxy=law.manifest())
    ok = fit is not None and fit.slope <= config.slope_ceiling and uniform_ok
    report.verdict = _verdict(ok, [fit])
    return report


def _l4_template(params, t, n, g0):
    c1, lam, c2 = params
    return c1 * np.exp(-lam * t) * g0 + c2 / np.sqrt(n)


def _run_poc_partial(scenario, N_list, config):
    grid = make_grid(scenario, config)
    every = _sample_every(grid, config)
    G, d = config.n_groups, scenario.dim
    M = config.M_ref or 16 * max(N_list)
    coupling = CouplingConfig(eps=config.eps) if config.eps else CouplingConfig.for_scenario(scenario)
    report = _report('poc', scenario, config, dict(seed=config.seed))

    rows, ts, ns, gaps, g0s = [], [], [], [], []
    for N in N_list:
        n = N * G
        noise = NoiseBundle(_subseed(config.seed, 7, N), d, grid.dt, n, COUPLING_DRIVERS, workers=config.workers)
        xa = config.init_a.sample(n, d, key=_subseed(config.seed, 8, N))
        xb = config.init_b.sample(n, d, key=_subseed(config.seed, 10, N))
        law = law_proxy(scenario, grid, config.init_a, M=M, seed=_subseed(config.seed, 9, N),
                        workers=config.workers)
        pair = CoupledPair(Ensemble(xa, grid.start_index, G), Ensemble(xb, grid.start_index, G))
        g0 = None
        for j in range(grid.n_steps + 1):
            if j % every == 0:
                w1 = _per_group_w1(pair.a.states, pair.b.states, G, config.distance_mode, config.seed)
                t = j * grid.dt
                if g0 is None:
                    g0 = float(w1.mean())
                rows.append([N, t, float(w1.mean()), replica_se(w1)])
                ts.append(t)
                ns.append(N)
                gaps.append(float(w1.mean()))
                g0s.append(g0)
            if j == grid.n_steps:
                break
            pair = coupled_step(scenario, grid, pair, noise, coupling, law_a=law, guard=config.guard,
                                workers=config.workers)
        log.info('poc N=%d: final W1 %.4g', N, gaps[-1])

    report.add_series('poc_w1', ['N', 't', 'w1', 'se'], rows)
    ts, ns, gaps, g0s = map(np.asarray, (ts, ns, gaps, g0s))
    fit = optimize.least_squares(
        lambda p: _l4_template(p, ts, ns, g0s) - gaps,
        x0=[1.0, 1.0, max(1e-6, float(gaps[-1]) * math.sqrt(N_list[-1]))],
        bounds=([0.0, 0.0, 0.0], [np.inf, np.inf, np.inf]))
    c1, lam, c2 = (float(v) for v in fit.x)
    resid = gaps - _l4_template(fit.x, ts, ns, g0s)
    p_value = sign_test(resid)
    t_end = float(ts.max())
    transient = c1 * math.exp(-lam * t_end) * float(np.max(g0s))
    dominant = c2 / math.sqrt(N_list[-1]) >= transient
    report.checks = dict(C1=c1, lambda_hat=lam, C2=c2, sign_test_p=p_value,
                         c2_dominates=bool(dominant), M_ref=M, eps=coupling.eps)
    report.add_series('template_residuals', ['N', 't', 'residual'],
                      [[int(n), float(t), float(r)] for n, t, r in zip(ns, ts, resid)])
    report.verdict = PASS if (p_value > 0.01 and dominant) else FAIL
    return report


def _coefficients_vary(scenario, t0, t1):
    probe = np.linspace(-2, 2, 7)[:, None] * np.ones(scenario.dim)
    ref = _probe_stats(scenario)
    return float(np.max(np.abs(scenario.drift(t0, probe, ref) - scenario.drift(t1, probe, ref)))) > 1e-12


def _probe_stats(scenario):
    probe = np.linspace(-1, 1, 5)[:, None] * np.ones(scenario.dim)
    return compute_stats(Ensemble(probe, 0), with_samples=scenario.needs_samples)


def _default_phase(scenario, grid):
    if hasattr(scenario, 'ou'):
        phases = np.arange(grid.period_steps) * grid.dt
        return float(phases[np.argmax(np.abs(oracle_periodic_mean(scenario.ou, phases)))])
    return 0.0


@_timed
def run_law_periodicity(scenario, config: ExperimentConfig) -> Report:
    """
    After burn-in, compare the law at ``t`` with the law one period and half
    a period later against the sampling floor between two independent
    same-time ensembles.  All three distances are medians over
    ``n_splits`` half-sample splits.
    """
    _require_contractive(scenario)
    R, d = config.R, scenario.dim
    probe = make_grid(scenario, config, n_periods=1)
    m = probe.period_steps
    phase = config.phase if config.phase is not None else _default_phase(scenario, probe)
    k_phase = int(round(phase / probe.dt)) % m
    k_t = config.burn_in_periods * m + k_phase
    grid = TimeGrid(dt=probe.dt, n_steps=k_t + m, period_steps=m)

    noise = NoiseBundle(config.seed, d, grid.dt, 2 * R, drivers_for(scenario), workers=config.workers)
    x0 = config.init.sample(2 * R, d, key=_subseed(config.seed, 11))
    if hasattr(scenario, 'ou'):
        law = ExactOULaw(scenario, grid, m0=config.init.loc,
                         v0=0.0 if config.init.kind == 'point' else config.init.scale ** 2)
        init, method = Ensemble(x0, 0, 2), 'exact law proxy'
    else:
        law = None
        init, method = Ensemble(x0, 0, 2), 'interacting marginal'
    snaps = simulate(scenario, grid, init, noise, [k_t, k_t + m // 2, k_t + m], law=law,
                     guard=config.guard, workers=config.workers)
    e_t, e_half, e_full = snaps
    half = max(1, R // 2)

    def w1(x, y, key):
        return empirical_distance(x, y, 1, config.distance_mode, seed=_subseed(config.seed, 12, key)).value

    # each split pairs half of group 0 at t with half of group 1 at t, t + tau/2 and t + tau
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 13])))
    floors, matches, mismatches = [], [], []
    for s in range(config.n_splits):
        ref = e_t.group(0)[rng.permutation(R)[:half]]
        pick = rng.permutation(R)[:half]
        floors.append(w1(ref, e_t.group(1)[pick], 3 * s))
        matches.append(w1(ref, e_full.group(1)[pick], 3 * s + 1))
        mismatches.append(w1(ref, e_half.group(1)[pick], 3 * s + 2))
    floor = float(np.median(floors))
    d_match = float(np.median(matches))
    d_mismatch = float(np.median(mismatches))

    varies = _coefficients_vary(scenario, grid.phase_time(k_t), grid.phase_time(k_t + m // 2))
    ok = d_match <= 1.5 * floor and (d_mismatch > 3 * floor or not varies)
    report = _report('law_periodicity', scenario, config, dict(seed=config.seed))
    report.add_series('law_distances', ['t', 'd_match', 'd_mismatch', 'floor'],
                      [[k_t * grid.dt, d_match, d_mismatch, floor]])
    report.checks = dict(d_match=d_match, d_mismatch=d_mismatch, floor=floor, phase=k_phase * grid.dt,
                         coefficients_vary=varies, ensemble=method)
    report.verdict = PASS if ok else FAIL
    return report


@_timed
def run_oracle_mean(scenario, config: ExperimentConfig) -> Report:
    """
    Ensemble mean of the forced OU model at eight phases of the last period
    against :func:`oracle_periodic_mean`.
    """
    if not hasattr(scenario, 'ou'):
        raise DomainError('{} has no closed-form mean'.format(scenario.name))
    ou = scenario.ou
    grid = make_grid(scenario, config)
    m = grid.period_steps
    G, N, d = config.n_groups, config.N, scenario.dim
    noise = NoiseBundle(config.seed, d, grid.dt, N * G, drivers_for(scenario), workers=config.workers)
    x0 = config.init.sample(N * G, d, key=_subseed(config.seed, 14))
    steps = [grid.n_steps - m + (j * m) // 8 for j in range(8)]
    snaps = simulate(scenario, grid, Ensemble(x0, grid.start_index, G), noise, steps,
                     guard=config.guard, workers=config.workers)
    k_mag = math.hypot(ou.a - ou.b, ou.omega)
    tol_bias = 5 * grid.dt * ou.A * ou.omega ** 2 / k_mag

    rows, ok = [], True
    for snap in snaps:
        t = snap.time_index * grid.dt
        means = snap.states.reshape(G, N, d).mean(axis=1)[:, 0]
        mean, se = float(means.mean()), replica_se(means)
        target = oracle_periodic_mean(ou, t)
        within = abs(mean - target) <= 3 * se + tol_bias
        ok = ok and within
        rows.append([t, mean, se, target, bool(within)])
    report = _report('oracle_mean', scenario, config, dict(seed=config.seed))
    report.add_series('oracle_mean', ['t', 'mean', 'se', 'oracle', 'within'], rows)
    report.checks = dict(bias_tolerance=tol_bias)
    report.verdict = PASS if ok else FAIL
    return report


def _moment_bound(scenario, init: InitLaw, d):
    init_second = float(np.sum(np.broadcast_to(np.asarray(init.loc, dtype=float), (d,)) ** 2))
    if init.kind == 'normal':
        init_second += d * init.scale ** 2
    if hasattr(scenario, 'ou'):
        ou = scenario.ou
        amplitude = ou.A / math.hypot(ou.a - ou.b, ou.omega)
        stationary = amplitude ** 2 + d * oracle_stationary_variance(ou)
        return 1.5 * max(init_second, stationary) + 1e-12
    return 10 * max(1.0, init_second)


@_timed
def run_moment_bound(scenario, config: ExperimentConfig) -> Report:
    """
    Second moment per period over ``config.periods`` periods: it must stay
    below a scenario bound and show no growth trend over the second half.
    """
    grid = make_grid(scenario, config)
    G, N, d = config.n_groups, config.N, scenario.dim
    noise = NoiseBundle(config.seed, d, grid.dt, N * G, drivers_for(scenario), workers=config.workers)
    x0 = config.init.sample(N * G, d, key=_subseed(config.seed, 15))
    times, moments = moment_series(scenario, grid, Ensemble(x0, grid.start_index, G), noise,
                                   guard=config.guard, workers=config.workers)
    mean = moments.mean(axis=1)
    bound = _moment_bound(scenario, config.init, d)
    half = len(times) // 2
    trend = stats.linregress(times[half:], mean[half:]) if len(times) - half >= 3 else None
    flat = trend is None or abs(trend.slope) <= 2 * trend.stderr
    bounded = bool(np.all(mean <= bound))

    report = _report('moment_bound', scenario, config, dict(seed=config.seed))
    report.add_series('second_moment', ['t', 'second_moment', 'se'],
                      [[float(t), float(v), replica_se(g)] for t, v, g in zip(times, mean, moments)])
    report.checks = dict(bound=bound, bounded=bounded, trend_slope=None if trend is None else float(trend.slope),
                         trend_se=None if trend is None else float(trend.stderr), flat=bool(flat))
    report.verdict = PASS if (bounded and flat) else FAIL
    return report


def _pathwise(scenario, config):
    return run_pathwise_periodicity(scenario, make_grid(scenario, config), config.N, config.seed, config)


EXPERIMENTS: Dict[str, Callable[..., Report]] = {
    'pathwise_periodicity': _pathwise,
    'pullback': run_pullback,
    'contraction': lambda scenario, config: run_contraction(scenario, config.init_a, config.init_b, config),
    'poc': lambda scenario, config: run_poc(scenario, config.N_list, config),
    'law_periodicity': run_law_periodicity,
    'oracle_mean': run_oracle_mean,
    'moment_bound': run_moment_bound,
}


def run_experiment(name, scenario, config: ExperimentConfig) -> Report:
    try:
        runner = EXPERIMENTS[name]
    except KeyError:
        raise DomainError('unknown experiment {!r}; expected one of {}'.format(name, sorted(EXPERIMENTS))) from None
    return runner(scenario, config)
