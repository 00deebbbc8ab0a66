import itertools
import math

import numpy as np
import pytest

from mvperiodic.errors import CapExceeded, DimensionError, DomainError, SizeMismatch
from mvperiodic.ips import Ensemble
from mvperiodic.metrics import (
    ASSIGNMENT_CAP, EmpiricalMeasure, coupling_bound_check, empirical_distance,
    paired_mean_square, sliced_wasserstein, wasserstein_1d, wasserstein_assignment,
)


def _brute_force(p, q, order):
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    best = min(
        np.mean(np.linalg.norm(p - q[list(perm)], axis=1) ** order)
        for perm in itertools.permutations(range(len(p))))
    return best ** (1.0 / order)


class TestEmpiricalMeasure:

    def test_shapes(self):
        assert EmpiricalMeasure(np.arange(4.0)).samples.shape == (4, 1)
        assert EmpiricalMeasure.of(Ensemble(np.zeros((3, 2)), 0)).d == 2

    def test_invalid(self):
        with pytest.raises(DomainError):
            EmpiricalMeasure(np.zeros((0, 1)))
        with pytest.raises(DomainError):
            EmpiricalMeasure(np.array([0.0, np.nan]))


class TestWasserstein1d:

    def test_diracs(self):
        assert wasserstein_1d([0.0], [3.0], 1) == 3.0
        assert wasserstein_1d([0.0], [3.0], 2) == 3.0

    def test_two_points(self):
        assert wasserstein_1d([0.0, 1.0], [1.0, 2.0], 1) == pytest.approx(1.0)

    def test_identity(self):
        x = np.random.default_rng(1).standard_normal(50)
        assert wasserstein_1d(x, x[::-1], 2) == 0.0

    def test_errors(self):
        with pytest.raises(SizeMismatch):
            wasserstein_1d([0.0, 1.0], [0.0], 1)
        with pytest.raises(DimensionError):
            wasserstein_1d(np.zeros((2, 2)), np.zeros((2, 2)), 1)
        with pytest.raises(DomainError):
            wasserstein_1d([0.0], [1.0], 3)


class TestAssignment:

    def test_example(self):
        p = [[0.0, 0.0], [1.0, 0.0]]
        q = [[0.0, 1.0], [1.0, 1.0]]
        assert wasserstein_assignment(p, q, 2) == pytest.approx(1.0)

    def test_agrees_with_sorting(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x, y = rng.standard_normal((2, 40))
            for order in (1, 2):
                assert wasserstein_assignment(x, y, order) == pytest.approx(wasserstein_1d(x, y, order), abs=1e-12)

    def test_permutation(self):
        x = np.random.default_rng(3).standard_normal((10, 3))
        assert wasserstein_assignment(x, x[::-1], 1) == pytest.approx(0.0, abs=1e-15)

    def test_brute_force(self):
        rng = np.random.default_rng(4)
        for n in (2, 3, 5):
            p, q = rng.standard_normal((2, n, 2))
            for order in (1, 2):
                assert wasserstein_assignment(p, q, order) == pytest.approx(_brute_force(p, q, order), rel=1e-12)

    def test_cap(self):
        x = np.zeros((ASSIGNMENT_CAP + 1, 2))
        with pytest.raises(CapExceeded):
            wasserstein_assignment(x, x, 1)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            wasserstein_assignment(np.zeros((2, 2)), np.zeros((2, 3)), 1)

    def test_metric_axioms(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = rng.integers(1, 9)
            p, q, r = rng.standard_normal((3, n, 2))
            for order in (1, 2):
                pq = wasserstein_assignment(p, q, order)
                assert pq == pytest.approx(wasserstein_assignment(q, p, order), abs=1e-12)
                assert pq <= wasserstein_assignment(p, r, order) + wasserstein_assignment(r, q, order) + 1e-9
            assert wasserstein_assignment(p, p, 1) == 0.0

    def test_order_monotone(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            p, q = rng.standard_normal((2, 6, 2))
            assert wasserstein_assignment(p, q, 2) >= wasserstein_assignment(p, q, 1) - 1e-12


class TestSliced:

    def test_one_dimensional(self):
        x, y = np.random.default_rng(7).standard_normal((2, 30))
        assert sliced_wasserstein(x, y, 1) == wasserstein_1d(x, y, 1)

    def test_identity(self):
        x = np.random.default_rng(8).standard_normal((30, 3))
        assert sliced_wasserstein(x, x, 2) == 0.0

    def test_shift(self):
        x = np.random.default_rng(9).standard_normal((200, 2))
        v = np.array([0.6, -0.8])
        value = sliced_wasserstein(x, x + v, 1, n_projections=512)
        assert 0 <= value <= 1.0 + 1e-12
        assert value == pytest.approx(2 / math.pi, rel=0.1)

    def test_lower_bound(self):
        rng = np.random.default_rng(10)
        for order in (1, 2):
            p, q = rng.standard_normal((2, 64, 3))
            q[:, 0] += 1.0
            assert sliced_wasserstein(p, q, order) <= wasserstein_assignment(p, q, order) + 1e-9

    def test_deterministic(self):
        p, q = np.random.default_rng(11).standard_normal((2, 16, 2))
        assert sliced_wasserstein(p, q, seed=3) == sliced_wasserstein(p, q, seed=3)


class TestEmpiricalDistance:

    def test_auto(self):
        rng = np.random.default_rng(12)
        x, y = rng.standard_normal((2, 20, 1))
        assert empirical_distance(x, y).method == 'sorted'
        x, y = rng.standard_normal((2, 20, 2))
        estimate = empirical_distance(x, y, 2)
        assert estimate.method == 'assignment'
        assert estimate.value == wasserstein_assignment(x, y, 2)

    def test_subsample_below_cap(self):
        x, y = np.random.default_rng(13).standard_normal((2, 20, 2))
        assert empirical_distance(x, y, mode='subsample').method == 'assignment'

    def test_sliced_mode(self):
        x, y = np.random.default_rng(14).standard_normal((2, 20, 2))
        assert empirical_distance(x, y, mode='sliced').method == 'sliced'

    def test_unknown_mode(self):
        with pytest.raises(DomainError):
            empirical_distance([0.0], [1.0], mode='exact')


class TestCouplingBound:

    def test_identical(self):
        x = np.random.default_rng(15).standard_normal((10, 2))
        assert paired_mean_square(x, x) == 0.0
        assert coupling_bound_check(x, x)

    def test_random_clouds(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            x, y = rng.standard_normal((2, 64, 2))
            assert coupling_bound_check(x, y)

    def test_reversed(self):
        x = np.sort(np.random.default_rng(17).standard_normal(32))
        y = x[::-1] + 0.1
        assert wasserstein_1d(x, y, 2) ** 2 <= paired_mean_square(x, y)
        assert coupling_bound_check(x, y)
