import math

import numpy as np
import pytest

from src import simulator
from src.errors import (
    BudgetExceededError,
    InvalidParameterError,
    InvalidThresholdError,
    NoiseTooLargeError,
)
from src.models import ObservationSet
from src.simulator import (
    add_noise,
    grow_tree,
    observe_path,
    simulate_forest,
    simulate_noisy,
    simulate_tree,
)


class TestTree:
    def test_children_conserve_mass(self, uniform_law):
        tree = grow_tree(uniform_law, 1e-3, seed=3)
        child_sum = np.bincount(tree.parent[1:], weights=tree.size[1:], minlength=len(tree))
        split = tree.split
        np.testing.assert_allclose(child_sum[split] + tree.dust[split], tree.size[split], rtol=1e-12)
        assert np.all(child_sum[~split] == 0.0)

    @pytest.mark.parametrize("law_name", ["uniform_law", "ternary_law", "beta22_law"])
    def test_frontier_is_a_cut(self, request, law_name):
        law = request.getfixturevalue(law_name)
        obs = simulate_tree(law, 1e-3, seed=11)
        assert obs.total_mass() + obs.mass_defect == pytest.approx(1.0, abs=1e-12)
        assert np.all(obs.true_size < 1e-3)
        assert np.all(obs.parent_size >= 1e-3)

    def test_dyadic_frontier(self, dyadic_law):
        obs = simulate_tree(dyadic_law, 0.3, seed=4)
        np.testing.assert_array_equal(obs.true_size, [0.25] * 4)
        noisy = simulate_noisy(dyadic_law, 0.3, 0.01, seed=4)
        np.testing.assert_array_equal(noisy.true_size, [0.25] * 4)
        assert np.all(np.abs(noisy.noisy_size - 0.25) <= 0.01)

    def test_ternary_frontier(self, ternary_law):
        for seed in range(20):
            obs = simulate_tree(ternary_law, 0.5, seed=seed)
            assert len(obs) >= 3
            assert np.all(obs.true_size < 0.5)
            assert np.all(obs.parent_size >= 0.5)
            assert obs.total_mass() == pytest.approx(1.0, abs=1e-12)

    def test_frontier_size_in_mean(self, uniform_law):
        # E[count] = E[1/chi(T_eps)] = 2/eps: single trees scatter on both sides
        counts = []
        for seed in range(400):
            obs = simulate_tree(uniform_law, 1e-2, seed=seed)
            assert abs(obs.total_mass() - 1.0) <= 1e-12
            counts.append(len(obs))
        counts = np.array(counts, dtype=float)
        se = np.std(counts, ddof=1) / math.sqrt(counts.size)
        assert abs(np.mean(counts) - 200.0) <= 4.0 * se

    def test_deterministic(self, uniform_law):
        a = simulate_tree(uniform_law, 1e-3, seed=5)
        b = simulate_tree(uniform_law, 1e-3, seed=5)
        c = simulate_tree(uniform_law, 1e-3, seed=6)
        np.testing.assert_array_equal(a.true_size, b.true_size)
        assert len(a) != len(c) or not np.array_equal(a.true_size, c.true_size)

    def test_common_part_shared_across_thresholds(self, uniform_law):
        deep = grow_tree(uniform_law, 1e-4, seed=5)
        idx, _ = deep.frontier(1e-3)
        shallow = simulate_tree(uniform_law, 1e-3, seed=5)
        np.testing.assert_array_equal(np.sort(deep.size[idx]), np.sort(shallow.true_size))

    def test_labels(self, uniform_law):
        obs = simulate_tree(uniform_law, 1e-2, seed=2)
        labels = obs.labels()
        assert len(labels) == len(obs)
        assert all(len(lab) >= 1 and set(lab) <= {0, 1} for lab in labels)
        assert len(set(labels)) == len(labels)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1])
    def test_invalid_threshold(self, uniform_law, eps):
        with pytest.raises(InvalidThresholdError):
            simulate_tree(uniform_law, eps)

    def test_invalid_alpha(self, uniform_law):
        with pytest.raises(InvalidParameterError):
            grow_tree(uniform_law, 1e-2, alpha=-1.0)

    def test_budget(self, uniform_law):
        with pytest.raises(BudgetExceededError):
            grow_tree(uniform_law, 1e-4, max_fragments=100)

    def test_machine_floor_dust(self, dyadic_law):
        obs = simulate_tree(dyadic_law, 0.4, machine_floor=0.3)
        assert len(obs) == 0
        assert obs.mass_defect == pytest.approx(1.0)


class TestTimes:
    def test_births_follow_parent_lifetimes(self, uniform_law):
        tree = grow_tree(uniform_law, 1e-2, alpha=1.0, seed=2, with_times=True)
        par = tree.parent[1:]
        assert tree.birth_time[0] == 0.0
        np.testing.assert_allclose(tree.birth_time[1:], tree.birth_time[par] + tree.lifetime[par], rtol=1e-12)
        assert np.all(tree.lifetime > 0.0)

    def test_rate_scales_with_size(self, uniform_law):
        slow = grow_tree(uniform_law, 1e-2, alpha=1.0, seed=2, with_times=True)
        plain = grow_tree(uniform_law, 1e-2, alpha=0.0, seed=2, with_times=True)
        np.testing.assert_allclose(slow.lifetime * slow.size, plain.lifetime, rtol=1e-12)

    def test_pairs(self, uniform_law):
        tree = grow_tree(uniform_law, 1e-2, seed=2, with_times=True)
        assert tree.pairs().shape == (len(tree), 2)
        with pytest.raises(InvalidParameterError):
            grow_tree(uniform_law, 1e-2, seed=2).pairs()

    def test_untimed_records(self, uniform_law):
        rec = simulate_tree(uniform_law, 1e-2, seed=2).records()[0]
        assert rec["birth_time"] is None and rec["lifetime"] is None
        assert rec["truncated"] is False


class TestNoise:
    def test_noise_is_bounded(self, uniform_law):
        obs = simulate_tree(uniform_law, 1e-2, seed=1, sigma_margin=1e-3)
        noisy = add_noise(obs, 1e-3, noise_seed=7)
        assert np.all(np.abs(noisy.noisy_size - noisy.true_size) <= 1e-3 + 1e-15)
        assert np.all(noisy.noisy_size < 1e-2)
        assert np.all(noisy.parent_noisy_size >= 1e-2)
        assert noisy.total_mass() + noisy.mass_defect == pytest.approx(1.0, abs=1e-12)

    def test_truncation_flag(self, uniform_law):
        noisy = simulate_noisy(uniform_law, 1e-2, 4e-3, seed=1)
        np.testing.assert_array_equal(noisy.truncated, noisy.noisy_size < 0.5e-2)

    def test_too_large(self, uniform_law):
        obs = simulate_tree(uniform_law, 1e-2, seed=1)
        with pytest.raises(NoiseTooLargeError):
            add_noise(obs, 5e-3, noise_seed=7)

    @pytest.mark.parametrize("sigma", [5e-3, 9e-3, 2e-2])
    def test_simulate_noisy_rejects_before_growing(self, uniform_law, sigma, monkeypatch):
        grown = []
        monkeypatch.setattr(simulator, "grow_tree", lambda *a, **k: grown.append(a))
        with pytest.raises(NoiseTooLargeError):
            simulate_noisy(uniform_law, 1e-2, sigma, seed=1)
        assert grown == []

    def test_negative_sigma(self, uniform_law):
        with pytest.raises(InvalidParameterError):
            simulate_noisy(uniform_law, 1e-2, -1e-3, seed=1)

    def test_regrow_keeps_budget(self, uniform_law):
        tree = grow_tree(uniform_law, 1e-2, seed=1)
        tight = grow_tree(uniform_law, 1e-2, seed=1, max_fragments=len(tree))
        assert tight.max_fragments == len(tree)
        with pytest.raises(BudgetExceededError):
            add_noise(tight, 4e-3, noise_seed=2, epsilon=1e-2)
        assert len(add_noise(tree, 4e-3, noise_seed=2, epsilon=1e-2)) > 0

    def test_regrow_keeps_machine_floor(self, dyadic_law):
        floored = grow_tree(dyadic_law, 0.4, machine_floor=0.3)
        obs = add_noise(floored, 0.01, noise_seed=1, epsilon=0.4)
        assert len(obs) == 0
        assert obs.mass_defect == pytest.approx(1.0)

    def test_regrows_when_needed(self, uniform_law):
        grown = add_noise(simulate_tree(uniform_law, 1e-2, seed=1, sigma_margin=1e-3), 1e-3, noise_seed=7)
        regrown = add_noise(simulate_tree(uniform_law, 1e-2, seed=1), 1e-3, noise_seed=7)
        np.testing.assert_array_equal(grown.noisy_size, regrown.noisy_size)
        np.testing.assert_array_equal(grown.true_size, regrown.true_size)

    def test_simulate_noisy_matches(self, uniform_law):
        direct = simulate_noisy(uniform_law, 1e-2, 1e-3, seed=1, noise_seed=7)
        staged = add_noise(simulate_tree(uniform_law, 1e-2, seed=1, sigma_margin=1e-3), 1e-3, noise_seed=7)
        np.testing.assert_array_equal(direct.noisy_size, staged.noisy_size)

    def test_noise_seed_leaves_true_sizes(self, uniform_law):
        a = simulate_noisy(uniform_law, 1e-2, 1e-3, seed=3, noise_seed=1)
        b = simulate_noisy(uniform_law, 1e-2, 1e-3, seed=3, noise_seed=2)
        np.testing.assert_array_equal(a.tree.size, b.tree.size)
        np.testing.assert_array_equal(a.true_size, a.tree.size[a.node_index])
        np.testing.assert_array_equal(b.true_size, b.tree.size[b.node_index])
        assert not np.array_equal(a.noisy_size, b.noisy_size)

    def test_zero_sigma_is_exact(self, uniform_law):
        obs = simulate_tree(uniform_law, 1e-2, seed=1)
        same = add_noise(obs, 0.0, noise_seed=7)
        np.testing.assert_array_equal(same.noisy_size, obs.true_size)

    def test_needs_a_tree(self, uniform_law):
        with pytest.raises(InvalidParameterError):
            add_noise(ObservationSet.from_sizes(0.1, [0.05]), 0.01, noise_seed=1)
        with pytest.raises(InvalidParameterError):
            add_noise(grow_tree(uniform_law, 1e-2), 1e-3, noise_seed=1)


class TestForest:
    def test_matches_single_trees(self, ternary_law):
        seeds = [1, 2, 3]
        owner, sizes = simulate_forest(ternary_law, 1e-2, seeds)
        for i, seed in enumerate(seeds):
            single = simulate_tree(ternary_law, 1e-2, seed=seed)
            np.testing.assert_array_equal(np.sort(sizes[owner == i]), np.sort(single.true_size))


class TestPath:
    def test_censoring(self, uniform_law):
        path = observe_path(uniform_law, alpha=1.0, horizon=2.0, seed=4)
        ends = path.birth_time + path.lifetime
        assert np.all(path.lifetime >= 0.0)
        assert np.all(ends <= 2.0 + 1e-12)
        np.testing.assert_allclose(ends[path.censored], 2.0)
        splits = int(np.sum(~path.censored))
        assert len(path.offspring) == splits
        assert len(path.sizes) == 1 + 2 * splits
        for row in path.offspring:
            assert float(np.sum(row)) == pytest.approx(1.0)

    def test_invalid_horizon(self, uniform_law):
        with pytest.raises(InvalidParameterError):
            observe_path(uniform_law, alpha=1.0, horizon=0.0)
