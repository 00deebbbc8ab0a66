import numpy as np
import pytest

from mvperiodic.coupling import (
    COUPLING_DRIVERS, CoupledPair, CouplingConfig, CouplingMode, concave_distance,
    contraction_constants, coupled_step, coupling_diagnostics, cutoff_phi,
    mean_f_distance, monitored_functional, reflect, reflection_matrix,
)
from mvperiodic.errors import DivergenceDetected, DomainError, SizeMismatch, WrongRegime
from mvperiodic.ips import Ensemble
from mvperiodic.models import PartiallyDissipativeScenario, double_well_partial, mv_ou_periodic
from mvperiodic.noise import NoiseBundle, TimeGrid


def _free_scenario(dim=1):
    """ pure additive noise with unit alpha and nothing else """
    return PartiallyDissipativeScenario(
        'free', 1.0, dim,
        b_hat=lambda t, x: np.zeros_like(x),
        b_tilde=None,
        alpha=lambda t: np.ones(np.shape(t)),
        sigma_hat=lambda t, x: np.zeros((x.shape[0], dim, dim)),
        K0=0.0, K1=1.0, K2=0.0, K3=0.0, l0=0.0)


def _pair(a, b, k=0):
    return CoupledPair(Ensemble(np.asarray(a, dtype=float), k), Ensemble(np.asarray(b, dtype=float), k))


class TestCutoff:

    def test_knots(self):
        eps = 0.2
        assert cutoff_phi(eps, 0.0) == 0.0
        assert cutoff_phi(eps, 5 * eps / 8) == 0.0
        assert cutoff_phi(eps, 7 * eps / 8) == 1.0
        assert cutoff_phi(eps, 3 * eps / 4) == pytest.approx(0.5, abs=1e-12)
        assert cutoff_phi(eps, 10.0) == 1.0

    def test_monotone(self):
        r = np.linspace(0, 1, 1001)
        values = cutoff_phi(1.0, r)
        assert np.all(np.diff(values) >= -1e-15)
        assert values.min() == 0.0 and values.max() == 1.0

    @pytest.mark.parametrize('knot', [5 / 8, 7 / 8])
    def test_smooth_at_knots(self, knot):
        h = 1e-8
        slope = (cutoff_phi(1.0, knot + h) - cutoff_phi(1.0, knot - h)) / (2 * h)
        assert abs(slope) < 1e-6

    def test_domain(self):
        with pytest.raises(DomainError):
            cutoff_phi(0.0, 1.0)
        with pytest.raises(DomainError):
            cutoff_phi(1.0, -0.1)


class TestReflection:

    def test_identities(self):
        z = np.random.default_rng(0).standard_normal((1000, 3))
        for zi in z[:50]:
            m = reflection_matrix(zi)
            assert m @ zi == pytest.approx(-zi, abs=1e-12)
            assert m @ m.T == pytest.approx(np.eye(3), abs=1e-12)
            assert np.linalg.det(m) == pytest.approx(-1.0, abs=1e-12)
        v = np.random.default_rng(1).standard_normal((1000, 3))
        out = reflect(z, v)
        assert np.linalg.norm(out, axis=1) == pytest.approx(np.linalg.norm(v, axis=1), rel=1e-12)
        assert reflect(z, z) == pytest.approx(-z, abs=1e-12)

    def test_example(self):
        assert reflection_matrix([1.0, 1.0]) == pytest.approx(np.array([[0.0, -1.0], [-1.0, 0.0]]), abs=1e-15)

    def test_zero_gap(self):
        assert np.array_equal(reflection_matrix([0.0, 0.0]), np.eye(2))
        v = np.array([[1.0, 2.0]])
        assert np.array_equal(reflect(np.zeros((1, 2)), v), v)


class TestCoupledStep:

    def setup_method(self):
        self.scenario = _free_scenario()
        self.grid = TimeGrid.aligned(1.0, 0.01, n_steps=10)
        self.noise = NoiseBundle(4, 1, 0.01, 3, COUPLING_DRIVERS)

    def test_far_apart_reflects(self):
        pair = _pair([1.0, 2.0, -1.0], [0.0, 0.0, 0.0])
        out = coupled_step(self.scenario, self.grid, pair, self.noise, CouplingConfig(eps=0.1))
        d_star = self.noise.increments('B_star', 0)
        assert out.gap == pytest.approx(pair.gap + 2 * d_star, abs=1e-14)
        assert out.time_index == 1

    def test_close_pair_moves_together(self):
        pair = _pair([0.01, 0.0, -0.02], [0.0, 0.0, 0.0])
        out = coupled_step(self.scenario, self.grid, pair, self.noise, CouplingConfig(eps=0.1))
        assert out.gap == pytest.approx(pair.gap, abs=1e-15)

    def test_coalesced_stays_coalesced(self):
        pair = _pair([0.3, 0.0, -2.0], [0.3, 0.0, -2.0])
        for _ in range(5):
            pair = coupled_step(self.scenario, self.grid, pair, self.noise, CouplingConfig(eps=0.1))
        assert np.array_equal(pair.gap, np.zeros((3, 1)))

    def test_synchronous_only(self):
        pair = _pair([1.0, 2.0, -1.0], [0.0, 0.0, 0.0])
        config = CouplingConfig(eps=0.1, mode=CouplingMode.SYNCHRONOUS_ONLY)
        out = coupled_step(self.scenario, self.grid, pair, self.noise, config)
        assert out.gap == pytest.approx(pair.gap, abs=1e-15)

    def test_marginals_keep_their_variance(self):
        n, d, dt = 20000, 5, 0.01
        scenario = _free_scenario(d)
        grid = TimeGrid.aligned(1.0, dt, n_steps=1)
        noise = NoiseBundle(9, d, dt, n, COUPLING_DRIVERS)
        a = np.zeros((n, d))
        b = np.zeros((n, d))
        b[:, 0] = 0.075  # phi = 1/2 at eps = 0.1
        out = coupled_step(scenario, grid, _pair(a, b), noise, CouplingConfig(eps=0.1))
        moved_a = out.a.states - a
        moved_b = out.b.states - b
        assert moved_a.var() == pytest.approx(dt, rel=0.02)
        assert moved_b.var() == pytest.approx(dt, rel=0.02)

    def test_divergence_guard(self):
        pair = _pair([5.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        with pytest.raises(DivergenceDetected) as info:
            coupled_step(self.scenario, self.grid, pair, self.noise, CouplingConfig(eps=0.1), guard=1.0)
        assert info.value.step == 0
        assert info.value.particle == 0

    def test_wrong_regime(self):
        pair = _pair([1.0], [0.0])
        with pytest.raises(WrongRegime):
            coupled_step(mv_ou_periodic(), self.grid, pair, self.noise, CouplingConfig())

    def test_mismatched_pair(self):
        with pytest.raises(SizeMismatch):
            _pair([1.0, 2.0], [0.0])
        with pytest.raises(DomainError):
            CoupledPair(Ensemble(np.zeros(2), 0), Ensemble(np.zeros(2), 1))


class TestConcaveDistance:

    def test_values(self):
        c1, c2 = 0.5, 2.0
        assert concave_distance(c1, c2, 0.0) == 0.0
        r = np.linspace(0, 10, 101)
        f = concave_distance(c1, c2, r)
        assert np.all(c1 * r <= f + 1e-15)
        assert np.all(f <= (c1 + 1) * r + 1e-15)
        assert np.all(np.diff(f, 2) <= 1e-12)
        slope = (concave_distance(c1, c2, 101.0) - concave_distance(c1, c2, 100.0))
        assert slope == pytest.approx(c1, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            concave_distance(0.0, 1.0, 1.0)
        with pytest.raises(DomainError):
            concave_distance(1.0, 1.0, -1.0)

    def test_mean_f_distance(self):
        pair = _pair([1.0], [0.0])
        assert mean_f_distance(pair, 1.0, 1.0) == pytest.approx(2 - np.exp(-1.0), abs=1e-12)
        assert mean_f_distance(pair, 1.0, 0.0) == 2.0

    def test_monitored_functional(self):
        pair = _pair([1.0], [0.0])
        base = 2 - np.exp(-1.0)
        assert monitored_functional(pair, 1.0, 1.0, 0.5, 0.0) == pytest.approx(base, abs=1e-12)
        assert monitored_functional(pair, 1.0, 1.0, 0.5, 2.0) == pytest.approx(np.e * base, rel=1e-12)


class TestConstants:

    def test_for_scenario(self):
        assert CouplingConfig.for_scenario(_free_scenario()).eps == 0.01
        dw = double_well_partial()
        assert CouplingConfig.for_scenario(dw).eps == pytest.approx(0.01 * dw.l0)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            CouplingConfig(eps=0.0)
        assert CouplingConfig(mode='SynchronousOnly').mode is CouplingMode.SYNCHRONOUS_ONLY

    def test_contraction_constants(self):
        dw = double_well_partial()
        for lemma in ('ergodicity', 'poc'):
            c = contraction_constants(dw, lemma)
            assert c.c1 > 0 and c.c2 > 0 and c.c_star > 0
        assert contraction_constants(dw).K2_star == pytest.approx(2 * dw.K2, rel=1e-5)
        with pytest.raises(DomainError):
            contraction_constants(dw, 'other')
        with pytest.raises(WrongRegime):
            contraction_constants(mv_ou_periodic())

    def test_diagnostics(self):
        grid = TimeGrid.aligned(1.0, 0.01)
        row = coupling_diagnostics(_pair([1.0, 0.0], [0.0, 0.0], k=3), grid, 1.0, 1.0, CouplingConfig(eps=0.1))
        assert set(row) == {'t', 'mean_f_distance', 'mean_abs_gap', 'fraction_reflecting'}
        assert row['t'] == pytest.approx(0.03)
        assert row['mean_abs_gap'] == 0.5
        assert row['fraction_reflecting'] == 0.5

    def test_diagnostics_with_monitored_functional(self):
        grid = TimeGrid.aligned(1.0, 0.01)
        pair = _pair([1.0, 0.0], [0.0, 0.0], k=3)
        row = coupling_diagnostics(pair, grid, 1.0, 1.0, CouplingConfig(eps=0.1), c_star=0.5, alpha_integral=2.0)
        assert list(row) == ['t', 'mean_f_distance', 'mean_abs_gap', 'fraction_reflecting',
                             'monitored_functional']
        assert row['monitored_functional'] == pytest.approx(np.e * row['mean_f_distance'], rel=1e-12)
