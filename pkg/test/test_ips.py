import numpy as np
import pytest

from mvperiodic.errors import DivergenceDetected, DomainError, GridNotAligned
from mvperiodic.ips import (
    Ensemble, ExactOULaw, InitLaw, ReferenceLaw, drivers_for, em_step, law_proxy,
    moment_series, pullback_run, reference_law, simulate,
)
from mvperiodic.models import (
    FullyDissipativeScenario, PartiallyDissipativeScenario, double_well_partial,
    mv_ou_periodic, oracle_mean_path, piecewise_k1,
)
from mvperiodic.noise import NoiseBundle, TimeGrid


class _SilentNoise:
    """ Noise that is identically zero """

    def __init__(self, n, d, dt):
        self.n_particles = n
        self.d = d
        self.dt = dt

    def increments(self, driver, k):
        return np.zeros((self.n_particles, self.d))


def _frozen_scenario():
    def zero_drift(t, x, stats, groups):
        return np.zeros_like(x)

    def zero_diffusion(t, x, stats, groups):
        return np.zeros((x.shape[0], x.shape[1], x.shape[1]))

    def zero_k(t):
        return np.zeros(np.shape(t))

    return FullyDissipativeScenario('frozen', 1.0, 2, zero_drift, zero_diffusion, zero_k, zero_k, zero_k)


class TestEnsemble:

    def test_groups(self):
        e = Ensemble(np.arange(6.0), 4, n_groups=3)
        assert e.N == 2
        assert e.d == 1
        assert list(e.group_index) == [0, 0, 1, 1, 2, 2]
        assert list(e.group(1)[:, 0]) == [2.0, 3.0]
        assert e.advanced(e.states).time_index == 5

    def test_bad_split(self):
        with pytest.raises(DomainError):
            Ensemble(np.zeros(5), 0, n_groups=2)


class TestInitLaw:

    def test_point(self):
        assert np.array_equal(InitLaw('point', 1.5).sample(3, 2), np.full((3, 2), 1.5))

    def test_keyed(self):
        law = InitLaw('normal', 0.0, 1.0, seed=4)
        assert np.array_equal(law.sample(5, 1, key=2), law(2, 5, 1))
        assert not np.array_equal(law.sample(5, 1, key=2), law.sample(5, 1, key=3))

    def test_kind(self):
        with pytest.raises(DomainError):
            InitLaw('uniform')


class TestEmStep:

    def test_frozen(self):
        s = _frozen_scenario()
        grid = TimeGrid.aligned(1.0, 0.1, n_steps=5)
        x0 = np.random.default_rng(0).standard_normal((4, 2))
        noise = NoiseBundle(0, 2, 0.1, 4)
        out = simulate(s, grid, Ensemble(x0, 0), noise)[0]
        assert np.array_equal(out.states, x0)
        assert out.time_index == 5

    def test_geometric_recursion(self):
        s = mv_ou_periodic(a=1.25, b=0.25, A=0.0, sigma0=0.0)
        grid = TimeGrid.aligned(1.0, 0.1, n_steps=10)
        noise = NoiseBundle(0, 1, 0.1, 1)
        out = simulate(s, grid, Ensemble(np.array([1.0]), 0), noise)[0]
        assert out.states[0, 0] == pytest.approx(0.9 ** 10, rel=1e-12)

    def test_pairwise_mean_field(self):
        one = lambda t: np.ones(np.shape(t))  # noqa: E731
        s = PartiallyDissipativeScenario(
            'pairwise', 1.0, 1,
            b_hat=lambda t, x: np.zeros_like(x),
            b_tilde=lambda t, x, y: y - x,
            alpha=one,
            sigma_hat=lambda t, x: np.zeros((x.shape[0], 1, 1)),
            K0=0.0, K1=1.0, K2=1.0, K3=0.0, l0=0.0)
        grid = TimeGrid.aligned(1.0, 0.1, n_steps=1)
        out = em_step(s, grid, Ensemble(np.array([0.0, 2.0]), 0), _SilentNoise(2, 1, 0.1))
        assert out.states[:, 0] == pytest.approx([0.1, 1.9])

    def test_groups_do_not_interact(self):
        s = mv_ou_periodic(A=0.0, sigma0=0.0)
        grid = TimeGrid.aligned(1.0, 0.1, n_steps=1)
        noise = _SilentNoise(4, 1, 0.1)
        both = em_step(s, grid, Ensemble(np.array([1.0, 3.0, -5.0, 7.0]), 0, n_groups=2), noise)
        first = em_step(s, grid, Ensemble(np.array([1.0, 3.0]), 0), _SilentNoise(2, 1, 0.1))
        assert np.array_equal(both.states[:2], first.states)

    def test_divergence(self):
        s = mv_ou_periodic(A=0.0, sigma0=0.0)
        grid = TimeGrid.aligned(1.0, 0.1, n_steps=1)
        with pytest.raises(DivergenceDetected) as info:
            em_step(s, grid, Ensemble(np.array([0.0, 5.0]), 3), _SilentNoise(2, 1, 0.1), guard=1.0)
        assert info.value.step == 3
        assert info.value.particle == 1

    def test_drivers(self):
        assert drivers_for(mv_ou_periodic()) == ('W',)
        assert drivers_for(double_well_partial()) == ('B', 'W')


class TestSimulate:

    def test_snapshot_zero(self):
        s = mv_ou_periodic()
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=10)
        init = Ensemble(np.zeros(3), 0)
        snaps = simulate(s, grid, init, NoiseBundle(1, 1, 0.01, 3), snapshot_steps=[0])
        assert len(snaps) == 1
        assert snaps[0] is init

    def test_snapshot_range(self):
        s = mv_ou_periodic()
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=10)
        with pytest.raises(DomainError):
            simulate(s, grid, Ensemble(np.zeros(3), 0), NoiseBundle(1, 1, 0.01, 3), snapshot_steps=[11])

    def test_start_index_checked(self):
        s = mv_ou_periodic()
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=10)
        with pytest.raises(DomainError):
            simulate(s, grid, Ensemble(np.zeros(3), 5), NoiseBundle(1, 1, 0.01, 3))

    def test_deterministic(self):
        s = piecewise_k1()
        grid = TimeGrid.aligned(1.0, 0.01, n_periods=1)
        x0 = InitLaw().sample(16, 1, key=1)
        runs = [simulate(s, grid, Ensemble(x0, 0), NoiseBundle(5, 1, 0.01, 16), [50, 100]) for _ in range(2)]
        for a, b in zip(*runs):
            assert np.array_equal(a.states, b.states)

    def test_worker_count_does_not_change_output(self):
        s = double_well_partial()
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=20)
        x0 = InitLaw().sample(64, 1, key=2)
        outs = [
            simulate(s, grid, Ensemble(x0, 0, n_groups=2),
                     NoiseBundle(6, 1, 0.01, 64, drivers_for(s), workers=w), workers=w)[0]
            for w in (1, 4)
        ]
        assert np.array_equal(outs[0].states, outs[1].states)

    @pytest.mark.parametrize('make', [mv_ou_periodic, piecewise_k1, double_well_partial])
    def test_period_shift_identity(self, make):
        s = make()
        grid = TimeGrid.aligned(1.0, 0.01, n_periods=2)
        x0 = InitLaw().sample(16, 1, key=3)
        noise = NoiseBundle(7, 1, 0.01, 16, drivers_for(s))
        later = grid.shifted(1)
        direct = simulate(s, later, Ensemble(x0, later.start_index), noise)[0]
        shifted = simulate(s, grid, Ensemble(x0, 0), noise.wiener_shift(1, grid.period_steps))[0]
        scale = 1 + np.max(np.abs(direct.states))
        assert np.max(np.abs(direct.states - shifted.states)) <= 1e-9 * scale

    def test_exchangeable(self):
        s = mv_ou_periodic()
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=50)
        x0 = InitLaw().sample(8, 1, key=4)
        perm = np.array([3, 7, 0, 1, 6, 2, 5, 4])
        noise = NoiseBundle(8, 1, 0.01, 8)
        out = simulate(s, grid, Ensemble(x0, 0), noise)[0]
        permuted = simulate(s, grid, Ensemble(x0[perm], 0), noise.with_particles(perm))[0]
        assert permuted.states == pytest.approx(out.states[perm], abs=1e-12)


class TestPullback:

    def test_duplicate_horizon(self):
        s = mv_ou_periodic()
        noise = NoiseBundle(1, 1, 0.01, 8)
        run = pullback_run(s, 0.0, [1, 1], InitLaw(seed=2), noise)
        assert run.gaps == [0.0]

    def test_geometric_endpoints(self):
        s = mv_ou_periodic(a=1.0, b=0.25, A=0.0, sigma0=0.0)
        dt = 0.01
        noise = NoiseBundle(1, 1, dt, 4)
        run = pullback_run(s, 0.0, [1, 2, 3], InitLaw('point', 1.0), noise)
        factor = 1 + (s.ou.b - s.ou.a) * dt
        for k, end in zip(run.horizons, run.endpoints):
            assert end.time_index == 0
            assert end.states[:, 0] == pytest.approx(factor ** (100 * k), rel=1e-10)
        assert run.gaps[1] / run.gaps[0] == pytest.approx(factor ** 200, rel=1e-8)

    def test_shared_noise_contracts(self):
        s = piecewise_k1()
        noise = NoiseBundle(3, 1, 0.01, 16)
        run = pullback_run(s, 0.0, [1, 2, 4], InitLaw(seed=5), noise, n_groups=2)
        assert len(run.gaps) == 2
        assert run.group_gaps[0].shape == (2,)
        assert run.gaps[1] < run.gaps[0]

    def test_bad_horizons(self):
        s = mv_ou_periodic()
        noise = NoiseBundle(1, 1, 0.01, 2)
        with pytest.raises(DomainError):
            pullback_run(s, 0.0, [2, 1], InitLaw(), noise)
        with pytest.raises(DomainError):
            pullback_run(s, 0.0, [0, 1], InitLaw(), noise)
        with pytest.raises(GridNotAligned):
            pullback_run(s, 0.005, [1], InitLaw(), noise)


class TestLawProxies:

    def test_exact_mode_follows_oracle(self):
        s = mv_ou_periodic()
        grid = TimeGrid.aligned(1.0, 0.01, n_periods=3)
        law = ExactOULaw(s, grid, m0=0.5, v0=0.0, mode='exact')
        for k in (0, 37, 250):
            assert law.stats(k).mean[0] == pytest.approx(oracle_mean_path(s.ou, k * 0.01, 0.5, 0.0), abs=1e-12)

    def test_euler_mode_matches_deterministic_particle(self):
        s = mv_ou_periodic(sigma0=0.0)
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=40)
        law = ExactOULaw(s, grid, m0=0.3, v0=0.0)
        out = simulate(s, grid, Ensemble(np.array([0.3]), 0), NoiseBundle(0, 1, 0.01, 1))[0]
        assert law.stats(40).mean[0] == pytest.approx(out.states[0, 0], abs=1e-14)

    def test_euler_mode_is_forward_only(self):
        s = mv_ou_periodic()
        law = ExactOULaw(s, TimeGrid.aligned(1.0, 0.01), mode='euler')
        law.stats(5)
        with pytest.raises(DomainError):
            law.stats(3)

    def test_reference_equals_interacting_run(self):
        s = mv_ou_periodic()
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=30)
        ref = reference_law(s, grid, 16, seed=3, snapshot_steps=[30])[0]
        x0 = InitLaw().sample(16, 1)
        run = simulate(s, grid, Ensemble(x0, 0), NoiseBundle(3, 1, 0.01, 16))[0]
        assert np.array_equal(ref.states, run.states)

    def test_reference_size(self):
        s = double_well_partial()
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=1)
        with pytest.raises(DomainError):
            reference_law(s, grid, 16, seed=0)

    def test_law_proxy_dispatch(self):
        grid = TimeGrid.aligned(1.0, 0.01, n_steps=10)
        assert isinstance(law_proxy(mv_ou_periodic(), grid, InitLaw()), ExactOULaw)
        assert isinstance(law_proxy(mv_ou_periodic(), grid, InitLaw(), M=64), ReferenceLaw)
        with pytest.raises(DomainError):
            law_proxy(piecewise_k1(), grid, InitLaw())

    def test_non_interacting_step(self):
        s = mv_ou_periodic(A=0.0, sigma0=0.0)
        grid = TimeGrid.aligned(1.0, 0.1, n_steps=1)
        law = ExactOULaw(s, grid, m0=2.0, v0=0.0)
        out = em_step(s, grid, Ensemble(np.array([0.0, 1.0]), 0), _SilentNoise(2, 1, 0.1), law=law)
        # both particles read the proxy mean 2 rather than their own mean
        assert out.states[:, 0] == pytest.approx([0.05, 1.0 - 0.1 + 0.05])


class TestMomentSeries:

    def test_shape(self):
        s = mv_ou_periodic()
        grid = TimeGrid.aligned(1.0, 0.01, n_periods=3)
        times, moments = moment_series(s, grid, Ensemble(np.zeros(8), 0, n_groups=2), NoiseBundle(1, 1, 0.01, 8))
        assert times == pytest.approx([0.0, 1.0, 2.0, 3.0])
        assert moments.shape == (4, 2)
        assert np.all(moments[0] == 0)
