"""Multilevel decompositions and the two-loop experiments."""

import numpy as np
import pytest

from fmblab import (
    BaldwinConfig,
    GroupedPopulation,
    baldwin_experiment,
    hierarchical_fmb,
    hierarchical_price,
    lookahead_meta,
    price_update,
)
from fmblab.hierarchy import largest_remainder_counts
from fmblab.objectives import LinregSynthetic, QuadraticObjective
from fmblab import optim


def random_grouped(rng, n_groups=None, n=None):
    n_groups = n_groups if n_groups is not None else int(rng.integers(2, 6))
    n = n if n is not None else int(rng.integers(1, 4))
    qg = rng.random(n_groups) + 0.1
    qg /= qg.sum()
    member_q, thetas, raws, dthetas = [], [], [], []
    for _ in range(n_groups):
        m = int(rng.integers(2, 7))
        q = rng.random(m) + 0.1
        member_q.append(q / q.sum())
        thetas.append(rng.standard_normal((m, n)))
        raws.append(rng.random(m) + 0.1)
        dthetas.append(0.2 * rng.standard_normal((m, n)))
    return GroupedPopulation.from_raw(qg, member_q, thetas, raws, dthetas)


class TestGroupedPopulation:
    def test_group_fitness_mean_one(self, rng):
        gpop = random_grouped(rng)
        assert abs(float(gpop.group_weights @ gpop.group_fitness) - 1.0) < 1e-12

    def test_flatten_is_valid_population(self, rng):
        gpop = random_grouped(rng)
        flat = gpop.flatten()
        assert abs(flat.q.sum() - 1.0) < 1e-12
        assert abs(float(flat.q @ flat.w) - 1.0) < 1e-12
        assert flat.size == sum(g.size for g in gpop.groups)

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="at least one group"):
            GroupedPopulation(groups=(), group_weights=np.array([]), group_fitness=np.array([]))


class TestHierarchicalPrice:
    def test_single_group_total_is_within(self, rng):
        gpop = random_grouped(rng, n_groups=1)
        between, within, total = hierarchical_price(gpop)
        np.testing.assert_allclose(between.selection_term, 0.0, atol=1e-12)
        np.testing.assert_allclose(total, within[0].delta_mean, atol=1e-12)

    def test_pure_between_group_change(self):
        """Groups with no internal variation put all change between groups."""
        qg = np.array([0.5, 0.5])
        member_q = [np.array([0.5, 0.5])] * 2
        thetas = [np.zeros((2, 1)), np.ones((2, 1))]   # constant within group
        raws = [np.array([1.0, 1.0]), np.array([3.0, 3.0])]
        gpop = GroupedPopulation.from_raw(qg, member_q, thetas, raws)
        between, within, total = hierarchical_price(gpop)
        for dec in within:
            np.testing.assert_allclose(dec.selection_term, [0.0], atol=1e-15)
        np.testing.assert_allclose(between.selection_term, total, atol=1e-15)
        np.testing.assert_allclose(total, [0.25])  # same arithmetic as flat two-point
        stats = hierarchical_fmb(gpop)
        for m, f in zip(stats.M_within, stats.f_within):
            np.testing.assert_allclose(m @ f, [0.0], atol=1e-15)
        np.testing.assert_allclose(stats.M_between @ stats.f_between, total, atol=1e-12)

    def test_total_equals_flat_price(self, rng):
        for _ in range(100):
            gpop = random_grouped(rng)
            _, _, total = hierarchical_price(gpop)
            flat = price_update(gpop.flatten()).delta_mean
            np.testing.assert_allclose(total, flat, atol=1e-10, rtol=0)


class TestHierarchicalFmb:
    def test_identical_groups_have_no_between_force(self, rng):
        q = np.array([0.3, 0.7])
        theta = np.array([[0.0], [1.0]])
        raw = np.array([1.0, 2.0])
        gpop = GroupedPopulation.from_raw(
            np.array([0.5, 0.5]), [q, q], [theta, theta], [raw, raw]
        )
        dec = hierarchical_fmb(gpop)
        np.testing.assert_allclose(dec.M_between, 0.0, atol=1e-14)
        np.testing.assert_allclose(dec.f_between, 0.0, atol=1e-12)

    def test_total_covariance_law(self, rng):
        for _ in range(100):
            gpop = random_grouped(rng)
            dec = hierarchical_fmb(gpop)
            law = dec.M_between + sum(
                w * m for w, m in zip(gpop.group_weights, dec.M_within)
            )
            np.testing.assert_allclose(dec.M_total, law, atol=1e-10, rtol=0)

    def test_reconstruction_matches_flat(self, rng):
        for _ in range(100):
            gpop = random_grouped(rng)
            dec = hierarchical_fmb(gpop)
            np.testing.assert_allclose(dec.reconstruct(), dec.delta_mean, atol=1e-8)

    def test_bias_residuals_average_to_zero(self, rng):
        gpop = random_grouped(rng)
        dec = hierarchical_fmb(gpop)
        resid_mean = sum(
            w * b for w, b in zip(gpop.group_weights, dec.b_within_resid)
        )
        np.testing.assert_allclose(resid_mean, 0.0, atol=1e-13)


class TestLargestRemainder:
    def test_exact_total(self, rng):
        for _ in range(50):
            m = int(rng.integers(2, 20))
            expected = rng.random(m) * 5
            expected *= 37 / expected.sum()
            counts = largest_remainder_counts(expected, 37)
            assert counts.sum() == 37
            assert np.all(counts >= np.floor(expected))

    def test_deterministic_tie_break(self):
        counts = largest_remainder_counts(np.array([1.5, 1.5, 1.0]), 4)
        np.testing.assert_array_equal(counts, [2, 1, 1])


class TestBaldwinExperiment:
    def test_tiny_genome_hits_immediately(self):
        cfg = BaldwinConfig(
            pop_size=8, learn_trials=5, generations=5,
            mutation_rate=0.1, seed=0, genome_len=1,
        )
        result = baldwin_experiment(cfg)
        assert result.success
        assert result.generations_to_target <= 2

    def test_no_learning_control_stays_lost(self):
        cfg = BaldwinConfig(
            pop_size=300, learn_trials=0, generations=60,
            mutation_rate=0.02, seed=3, genome_len=20,
        )
        result = baldwin_experiment(cfg)
        assert not result.success
        # needle-in-haystack fitness gives no sustained pull toward target
        assert abs(result.mean_hamming_trace[-1] - result.mean_hamming_trace[0]) < 1.0

    def test_learning_variant_succeeds(self):
        cfg = BaldwinConfig(
            pop_size=300, learn_trials=20, generations=60,
            mutation_rate=0.02, seed=3, genome_len=20,
        )
        result = baldwin_experiment(cfg)
        assert result.success
        assert result.mean_hamming_trace[-1] < result.mean_hamming_trace[0]

    def test_mean_fitness_monotone_without_mutation(self):
        """Selection alone cannot lower mean fitness on a fixed landscape."""
        for seed in (0, 5, 11):
            cfg = BaldwinConfig(
                pop_size=300, learn_trials=20, generations=40,
                mutation_rate=0.0, seed=seed, genome_len=12,
            )
            result = baldwin_experiment(cfg)
            diffs = np.diff(result.mean_fitness_trace)
            assert diffs.min() >= -1e-12

    def test_heritable_transmission_is_faster(self):
        """Passing on the best learned string beats reseeding, in the median."""

        def times(heritable):
            out = []
            for seed in range(20):
                cfg = BaldwinConfig(
                    pop_size=200, learn_trials=30, generations=150,
                    mutation_rate=0.02, seed=seed, genome_len=12,
                    heritable=heritable, simulate_learning=True,
                )
                res = baldwin_experiment(cfg)
                out.append(res.generations_to_target if res.success else 10**4)
            return out

        assert np.median(times(True)) < np.median(times(False))

    def test_simulation_mode_deterministic(self):
        cfg = BaldwinConfig(
            pop_size=50, learn_trials=10, generations=20,
            mutation_rate=0.05, seed=7, genome_len=8, simulate_learning=True,
        )
        a = baldwin_experiment(cfg)
        b = baldwin_experiment(cfg)
        np.testing.assert_array_equal(a.mean_hamming_trace, b.mean_hamming_trace)
        assert a.generations_to_target == b.generations_to_target

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BaldwinConfig(pop_size=0, learn_trials=1, generations=1, mutation_rate=0.1, seed=0)
        with pytest.raises(ValueError):
            BaldwinConfig(pop_size=1, learn_trials=1, generations=1, mutation_rate=1.5, seed=0)


class TestLookaheadMeta:
    def test_degenerate_blend_is_plain_inner(self):
        obj = QuadraticObjective(np.eye(2), np.array([1.0, -1.0]))
        trace = lookahead_meta(
            obj, "gd", inner_steps=1, alpha=1.0, outer_steps=10,
            seed=0, theta0=np.zeros(2), inner_eta=0.1,
        )
        state = optim.OptimizerState.initial(np.zeros(2))
        plain = [state.theta]
        for _ in range(10):
            state, _ = optim.step_gd(obj, state, 0.1)
            plain.append(state.theta)
        np.testing.assert_array_equal(trace.outer_thetas, np.vstack(plain))

    def test_zero_outer_steps(self):
        obj = QuadraticObjective(np.eye(2), np.zeros(2))
        trace = lookahead_meta(obj, "gd", 3, 0.5, 0, seed=1, theta0=np.ones(2))
        assert trace.outer_thetas.shape == (1, 2)
        assert trace.inner_thetas == []

    def test_outer_iterates_less_noisy_than_plain(self):
        """Blending halves the noise the outer iterate accumulates."""
        obj = LinregSynthetic(n_data=64, dim=2, noise=0.5, seed=3)
        look_final, plain_final = [], []
        for seed in range(50):
            trace = lookahead_meta(
                obj, "sgd", inner_steps=5, alpha=0.5, outer_steps=40,
                seed=seed, theta0=np.zeros(2), inner_eta=0.05, batch_size=4,
            )
            look_final.append(trace.outer_thetas[-1])
            gen = np.random.default_rng([seed, 999])
            state = optim.OptimizerState.initial(np.zeros(2))
            for _ in range(200):  # matched total inner-step count
                state, _ = optim.step_sgd(obj, state, 0.05, 4, gen)
            plain_final.append(state.theta)
        v_look = np.vstack(look_final).var(axis=0).sum()
        v_plain = np.vstack(plain_final).var(axis=0).sum()
        assert v_look < 0.8 * v_plain

    def test_unknown_inner_id(self):
        obj = QuadraticObjective(np.eye(1), np.zeros(1))
        with pytest.raises(ValueError, match="known ids"):
            lookahead_meta(obj, "sgdx", 1, 1.0, 1, seed=0, theta0=np.zeros(1))

    def test_records_both_loops(self):
        obj = QuadraticObjective(np.eye(2), np.ones(2))
        trace = lookahead_meta(obj, "gd", 4, 0.5, 3, seed=0, theta0=np.zeros(2))
        assert trace.outer_thetas.shape == (4, 2)
        assert len(trace.inner_thetas) == 3
        assert all(path.shape == (5, 2) for path in trace.inner_thetas)
        # each inner round starts from the then-current outer iterate
        for outer, path in zip(trace.outer_thetas[:-1], trace.inner_thetas):
            np.testing.assert_array_equal(path[0], outer)
