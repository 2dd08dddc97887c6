import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedleak.infotheory import (
    MIEstimate,
    SampleMatrix,
    analytic_mi_cfl_sa,
    analytic_mi_dfl_sa,
    gaussian_entropy,
    knn_cmi,
    knn_mi,
)
from fedleak.topology import Graph, generate_graph, metropolis_weights


class TestGaussianEntropy:
    def test_unit_variance(self):
        # 0.5 * ln(2*pi*e) evaluated once and frozen
        assert gaussian_entropy(1.0) == pytest.approx(1.4189385332, abs=1e-9)

    def test_zero_point(self):
        assert gaussian_entropy(1.0 / (2.0 * math.pi * math.e)) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_doubling_adds_half_log_two(self):
        for var in (0.1, 1.0, 7.5):
            delta = gaussian_entropy(2 * var) - gaussian_entropy(var)
            assert delta == pytest.approx(0.5 * math.log(2.0), abs=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_nonpositive_variance_rejected(self, bad):
        with pytest.raises(ValueError):
            gaussian_entropy(bad)


class TestAnalyticAverageLeakage:
    def test_ten_nodes_frozen_value(self):
        # 0.5 * ln(9/8)
        assert analytic_mi_cfl_sa(10) == pytest.approx(0.0588915178, abs=1e-9)

    def test_three_nodes_half_log_two(self):
        assert analytic_mi_cfl_sa(3) == pytest.approx(0.5 * math.log(2.0), abs=1e-12)

    def test_strictly_decreasing_and_positive(self):
        values = [analytic_mi_cfl_sa(n) for n in range(3, 200)]
        assert all(v > 0 for v in values)
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_small_n_rejected(self):
        with pytest.raises(ValueError):
            analytic_mi_cfl_sa(2)

    def test_matches_estimator_on_fresh_draws(self):
        # large-sample estimator run on direct draws of the two variables
        rng = np.random.default_rng(42)
        g = rng.standard_normal((100_000, 10))
        est = knn_mi(g[:, 1:].sum(axis=1), g[:, 1], k=3)
        assert est.value == pytest.approx(analytic_mi_cfl_sa(10), abs=0.005)


class TestAnalyticAggregateLeakage:
    def test_absent_target_leaks_nothing(self):
        g = generate_graph(8, 0.4, seed=2)
        w = metropolis_weights(g)
        for k in range(8):
            for i in range(8):
                if i != k and not g.adjacency[k, i]:
                    assert analytic_mi_dfl_sa(w, k, i) == 0.0

    @pytest.mark.parametrize("n", [3, 5, 10, 25])
    def test_complete_graph_equals_average_case(self, n):
        g = generate_graph(n, 1.0, seed=0)
        w = metropolis_weights(g)
        for i in range(1, n):
            assert analytic_mi_dfl_sa(w, 0, i) == pytest.approx(
                analytic_mi_cfl_sa(n), abs=1e-12
            )

    def test_corrupt_leaf_with_single_neighbor_diverges(self):
        star = Graph(n=5, edges=((0, 1), (0, 2), (0, 3), (0, 4)))
        w = metropolis_weights(star)
        # leaf node 3 observes a*G_0 + known own term: hub fully exposed
        assert analytic_mi_dfl_sa(w, 3, 0) == math.inf

    def test_same_node_rejected(self):
        w = metropolis_weights(generate_graph(4, 1.0, seed=0))
        with pytest.raises(ValueError):
            analytic_mi_dfl_sa(w, 2, 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_average_dominates_complete_graph_value(self, seed):
        # geometric-mean vs harmonic-mean step: non-complete connected
        # graphs leak at least as much through the aggregate, on average
        # over (corrupt, target) pairs, as the complete graph does.
        n = 9
        g = generate_graph(n, 0.5, seed=seed)
        assert g.m < n * (n - 1) // 2
        w = metropolis_weights(g)
        values = [
            analytic_mi_dfl_sa(w, k, i)
            for k in range(n)
            for i in range(n)
            if i != k
        ]
        assert np.mean(values) > analytic_mi_cfl_sa(n)


class TestSampleMatrix:
    def test_label_count_must_match(self):
        with pytest.raises(ValueError, match="labels"):
            SampleMatrix(data=np.zeros((5, 2)), labels=("a",))

    def test_non_finite_rejected(self):
        data = np.zeros((5, 2))
        data[0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            SampleMatrix(data=data, labels=("a", "b"))

    def test_column_access(self):
        m = SampleMatrix(data=np.arange(6.0).reshape(3, 2), labels=("a", "b"))
        assert list(m.column(1)) == [1.0, 3.0, 5.0]
        assert m.n_samples == 3 and m.n_variables == 2


def gaussian_pair(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = rho * x + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    return x, y


class TestKnnMi:
    def test_independent_variables_near_zero(self):
        rng = np.random.default_rng(0)
        est = knn_mi(rng.standard_normal(1000), rng.standard_normal(1000))
        assert abs(est.value) < 0.05

    def test_additive_noise_channel(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(1000)
        y = x + rng.standard_normal(1000)
        # Gaussian channel closed form: 0.5 * ln(1 + 1) nats
        assert knn_mi(x, y).value == pytest.approx(0.5 * math.log(2.0), abs=0.05)

    @pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
    def test_bivariate_gaussian_oracle(self, rho):
        x, y = gaussian_pair(rho, 1000, seed=11)
        expected = -0.5 * math.log(1.0 - rho * rho) if rho else 0.0
        assert knn_mi(x, y, k=3).value == pytest.approx(expected, abs=0.05)

    def test_self_information_grows_with_samples_and_tops_noisy_pairs(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(2000)
        small = knn_mi(x[:500], x[:500]).value
        large = knn_mi(x, x).value
        noisy = knn_mi(x, x + 0.1 * rng.standard_normal(2000)).value
        assert large > small > 0
        assert small > noisy

    def test_estimator_metadata(self):
        x, y = gaussian_pair(0.5, 200, seed=5)
        est = knn_mi(x, y, k=4)
        assert isinstance(est, MIEstimate)
        assert est.estimator == "knn" and est.k == 4
        assert float(est) == est.value

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=15, deadline=None)
    def test_joint_shuffle_leaves_estimate_unchanged(self, seed):
        x, y = gaussian_pair(0.6, 300, seed=seed)
        perm = np.random.default_rng(seed + 1).permutation(300)
        base = knn_mi(x, y).value
        shuffled = knn_mi(x[perm], y[perm]).value
        assert shuffled == pytest.approx(base, abs=1e-9)

    def test_monotone_rescaling_stable(self):
        x, y = gaussian_pair(0.7, 1000, seed=8)
        assert knn_mi(2.0 * x, y).value == pytest.approx(
            knn_mi(x, y).value, abs=0.05
        )

    def test_k_at_least_sample_count_rejected(self):
        x = np.arange(5.0)
        with pytest.raises(ValueError, match="more than k"):
            knn_mi(x, x, k=5)

    def test_degenerate_data_rejected(self):
        x = np.ones(50)
        with pytest.raises(ValueError, match="degenerate"):
            knn_mi(x, x)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError, match="same number"):
            knn_mi(np.arange(5.0), np.arange(6.0))


class TestKnnCmi:
    def test_independent_conditioner_matches_unconditional(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal(1000)
        y = x + rng.standard_normal(1000)
        z = rng.standard_normal(1000)
        assert knn_cmi(x, y, z).value == pytest.approx(
            knn_mi(x, y).value, abs=0.05
        )

    def test_conditioning_on_y_itself_gives_zero(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal(500)
        y = x + 0.5 * rng.standard_normal(500)
        assert knn_cmi(x, y, y).value == pytest.approx(0.0, abs=1e-12)

    def test_all_independent_near_zero(self):
        rng = np.random.default_rng(15)
        est = knn_cmi(
            rng.standard_normal(1000),
            rng.standard_normal(1000),
            rng.standard_normal(1000),
        )
        assert abs(est.value) < 0.05

    def test_errors_match_knn_mi(self):
        x = np.ones(20)
        with pytest.raises(ValueError, match="degenerate"):
            knn_cmi(x, x, x)
