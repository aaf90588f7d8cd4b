"""Population bookkeeping: selection/transmission split and its sufficient statistics."""

import numpy as np
import pytest

from fmblab import (
    FmbDecomposition,
    Population,
    expected_gain,
    fmb_decompose,
    lande_step,
    normalize_fitness,
    price_update,
)
from conftest import random_population


class TestNormalizeFitness:
    def test_uniform_performance(self):
        np.testing.assert_allclose(
            normalize_fitness([2.0, 2.0], [0.5, 0.5]), [1.0, 1.0]
        )

    def test_direct_normalization(self):
        np.testing.assert_allclose(
            normalize_fitness([1.0, 3.0], [0.5, 0.5]), [0.5, 1.5]
        )
        np.testing.assert_allclose(
            normalize_fitness([1.0, 1.0, 4.0], [0.25, 0.25, 0.5]), [0.4, 0.4, 1.6]
        )

    def test_degenerate_fitness_raises(self):
        with pytest.raises(ValueError, match="degenerate fitness"):
            normalize_fitness([0.0, 0.0], [0.5, 0.5])
        # positive performance only on zero-weight variants is still degenerate
        with pytest.raises(ValueError, match="degenerate fitness"):
            normalize_fitness([0.0, 5.0], [1.0, 0.0])

    def test_mean_one(self, rng):
        for _ in range(50):
            m = int(rng.integers(2, 30))
            q = rng.random(m)
            q /= q.sum()
            w = normalize_fitness(rng.random(m) + 1e-3, q)
            assert abs(float(q @ w) - 1.0) < 1e-12


class TestPopulation:
    def test_normalizes_fitness_at_construction(self):
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[2.0, 6.0])
        np.testing.assert_allclose(pop.w, [0.5, 1.5])
        assert abs(float(pop.q @ pop.w) - 1.0) < 1e-12

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            Population(q=[0.5, 0.4], theta=[0.0, 1.0], w=[1.0, 1.0])
        with pytest.raises(ValueError):
            Population(q=[-0.1, 1.1], theta=[0.0, 1.0], w=[1.0, 1.0])

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            Population(q=[0.5, 0.5], theta=[[0.0], [1.0], [2.0]], w=[1.0, 1.0])

    def test_zero_weight_variants_are_kept(self):
        pop = Population(q=[0.5, 0.5, 0.0], theta=[0.0, 1.0, 99.0], w=[1.0, 1.0, 7.0])
        assert pop.size == 3
        dec = price_update(pop)
        np.testing.assert_allclose(dec.delta_mean, [0.0], atol=1e-15)

    def test_json_round_trip(self, rng):
        pop = random_population(rng, m=5, n=2)
        clone = Population.from_dict(pop.to_dict())
        np.testing.assert_array_equal(clone.q, pop.q)
        np.testing.assert_array_equal(clone.theta, pop.theta)
        np.testing.assert_array_equal(clone.w, pop.w)
        np.testing.assert_array_equal(clone.dtheta, pop.dtheta)


class TestPriceUpdate:
    def test_no_selection_no_transmission(self):
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[1.0, 1.0])
        dec = price_update(pop)
        np.testing.assert_allclose(dec.delta_mean, [0.0], atol=1e-15)

    def test_pure_selection_two_point(self):
        """Mean moves 0.5 -> 0.75 under updated weights (0.25, 0.75)."""
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[0.5, 1.5])
        dec = price_update(pop)
        np.testing.assert_allclose(dec.selection_term, [0.25])
        np.testing.assert_allclose(dec.delta_mean, [0.25])
        qp = pop.updated_weights()
        np.testing.assert_allclose(qp, [0.25, 0.75])
        np.testing.assert_allclose(qp @ pop.theta - pop.q @ pop.theta, [0.25])

    def test_pure_transmission(self):
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[1.0, 1.0], dtheta=[0.2, 0.4])
        dec = price_update(pop)
        np.testing.assert_allclose(dec.transmission_term, [0.3])
        np.testing.assert_allclose(dec.delta_mean, [0.3])

    def test_identity_on_random_populations(self, rng):
        """Sum of the two terms is the exact change of the weighted mean."""
        for _ in range(300):
            pop = random_population(rng, allow_zero_weight=True)
            dec = price_update(pop)
            qp = pop.updated_weights()
            direct = qp @ (pop.theta + pop.dtheta) - pop.q @ pop.theta
            np.testing.assert_allclose(dec.delta_mean, direct, atol=1e-12, rtol=0)
            np.testing.assert_allclose(
                dec.delta_mean,
                dec.selection_term + dec.transmission_term,
                atol=1e-12,
                rtol=0,
            )

    def test_scale_equivariance(self, rng):
        """Scaling parameter columns scales the mean change the same way."""
        pop = random_population(rng, m=12, n=3)
        scale = np.array([2.0, -0.5, 3.0])
        scaled = Population(
            q=pop.q, theta=pop.theta * scale, w=pop.w, dtheta=pop.dtheta * scale
        )
        np.testing.assert_allclose(
            price_update(scaled).delta_mean,
            scale * price_update(pop).delta_mean,
            atol=1e-12,
        )


class TestFmbDecompose:
    def test_constant_parameters_zero_metric(self):
        pop = Population(
            q=[0.5, 0.5], theta=[2.0, 2.0], w=[0.5, 1.5], dtheta=[0.1, 0.3]
        )
        dec = fmb_decompose(pop)
        np.testing.assert_allclose(dec.M, [[0.0]], atol=1e-15)
        np.testing.assert_allclose(dec.f, [0.0], atol=1e-15)
        np.testing.assert_allclose(
            dec.reconstruct(), price_update(pop).delta_mean, atol=1e-10
        )

    def test_two_point_regression(self):
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[0.5, 1.5])
        dec = fmb_decompose(pop)
        np.testing.assert_allclose(dec.M, [[0.25]])
        np.testing.assert_allclose(dec.f, [1.0])
        np.testing.assert_allclose(dec.M @ dec.f, [0.25])

    def test_reconstruction_matches_price(self, rng):
        for _ in range(100):
            pop = random_population(rng, m=int(rng.integers(4, 12)), n=2)
            dec = fmb_decompose(pop)
            np.testing.assert_allclose(
                dec.reconstruct(), price_update(pop).delta_mean, atol=1e-10
            )

    def test_rank_deficient_metric_still_reconstructs(self, rng):
        for _ in range(50):
            pop = random_population(rng, m=8, n=3)
            theta = pop.theta.copy()
            theta[:, 2] = 2.0 * theta[:, 0] - theta[:, 1]  # dependent column
            pop = Population(q=pop.q, theta=theta, w=pop.w, dtheta=pop.dtheta)
            dec = fmb_decompose(pop)
            # the selection drive stays in the range of the metric
            np.testing.assert_allclose(
                dec.M @ dec.f, price_update(pop).selection_term, atol=1e-8
            )
            np.testing.assert_allclose(
                dec.reconstruct(), price_update(pop).delta_mean, atol=1e-8
            )

    def test_metric_is_centered_weighted_gram(self, rng):
        """M equals J' diag(q) J for the matrix of deviations from the mean."""
        pop = random_population(rng, m=9, n=3)
        dev = pop.theta - pop.q @ pop.theta
        np.testing.assert_allclose(
            fmb_decompose(pop).M, dev.T @ (pop.q[:, None] * dev), atol=1e-12
        )

    def test_psd_validation_rejects_indefinite(self):
        with pytest.raises(ValueError, match="positive semidefinite"):
            FmbDecomposition(
                M=np.array([[-1.0]]),
                f=np.zeros(1),
                C=np.zeros((1, 1)),
                beta=np.zeros(1),
                gamma=np.zeros(1),
                xi=np.zeros(1),
            )


class TestLandeStep:
    def test_uniform_fitness_zero(self):
        pop = Population(q=[0.25, 0.25, 0.5], theta=[0.0, 1.0, 2.0], w=[1.0, 1.0, 1.0])
        np.testing.assert_allclose(lande_step(pop), [0.0], atol=1e-15)

    def test_two_point_value(self):
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[0.5, 1.5])
        np.testing.assert_allclose(lande_step(pop), [0.25])

    def test_independent_coordinates(self, rng):
        """Per-coordinate response is variance times regression slope."""
        m = 40
        theta = rng.standard_normal((m, 2))
        q = np.full(m, 1.0 / m)
        slopes = np.array([0.7, -0.4])
        w = 1.0 + (theta - q @ theta) @ slopes
        w -= w.min() - 0.1  # keep positive
        pop = Population(q=q, theta=theta, w=w)
        dec = fmb_decompose(pop)
        expected = dec.M @ dec.f
        np.testing.assert_allclose(lande_step(pop), expected, atol=1e-10)

    def test_rejects_transmission(self):
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[1.0, 1.0], dtheta=[0.1, 0.0])
        with pytest.raises(ValueError, match="dtheta"):
            lande_step(pop)


class TestExpectedGain:
    def test_zero_force(self):
        dec = FmbDecomposition(
            M=np.eye(2),
            f=np.zeros(2),
            C=np.zeros((2, 2)),
            beta=np.zeros(2),
            gamma=np.zeros(2),
            xi=np.zeros(2),
        )
        assert expected_gain(dec) == 0.0

    def test_euclidean_norm_squared(self):
        dec = FmbDecomposition(
            M=np.eye(2),
            f=np.array([3.0, 4.0]),
            C=np.zeros((2, 2)),
            beta=np.zeros(2),
            gamma=np.zeros(2),
            xi=np.zeros(2),
        )
        assert expected_gain(dec) == pytest.approx(25.0)

    def test_two_point_equals_fitness_variance(self):
        pop = Population(q=[0.5, 0.5], theta=[0.0, 1.0], w=[0.5, 1.5])
        var_w = float(pop.q @ (pop.w**2) - 1.0)
        assert expected_gain(fmb_decompose(pop)) == pytest.approx(0.25)
        assert expected_gain(fmb_decompose(pop)) == pytest.approx(var_w)

    def test_fitness_as_its_own_trait(self, rng):
        """Using fitness as the parameter makes the gain its variance."""
        for _ in range(20):
            m = int(rng.integers(3, 20))
            q = rng.random(m)
            q /= q.sum()
            w = normalize_fitness(rng.random(m) + 0.1, q)
            pop = Population(q=q, theta=w.reshape(-1, 1), w=w, normalize=False)
            var_w = float(q @ (w**2) - 1.0)
            assert expected_gain(fmb_decompose(pop)) == pytest.approx(var_w, abs=1e-10)

    def test_nonnegative_on_random_populations(self, rng):
        for _ in range(50):
            dec = fmb_decompose(random_population(rng, m=10, n=3))
            assert expected_gain(dec) >= -1e-12
