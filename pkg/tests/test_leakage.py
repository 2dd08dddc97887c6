import math

import numpy as np
import pytest

from fedleak.infotheory import analytic_mi_cfl_sa, analytic_mi_dfl_sa, knn_mi
from fedleak.leakage import (
    CellSummary,
    ExperimentConfig,
    LeakageReport,
    cell_seed_sequences,
    draw_gradient_samples,
    estimate_mode_leakage,
    run_experiment,
    verify_proposition1,
)
from fedleak.protocol import ALL_MODES, Mode
from fedleak.topology import generate_graph, graph_density, metropolis_weights


class TestConfigValidation:
    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="samples"):
            ExperimentConfig(samples=50)

    def test_infeasible_density_rejected(self):
        with pytest.raises(ValueError, match="infeasible"):
            ExperimentConfig(n_values=(4,), densities=(0.2,))

    def test_density_only_matters_for_decentralized_modes(self):
        ExperimentConfig(n_values=(4,), densities=(0.2,), modes=(Mode.CFL, Mode.CFL_SA))

    def test_mode_strings_accepted(self):
        config = ExperimentConfig(modes=("cfl", "dfl_sa"))
        assert config.modes == (Mode.CFL, Mode.DFL_SA)

    def test_empty_modes_rejected(self):
        with pytest.raises(ValueError, match="modes"):
            ExperimentConfig(modes=())


class TestDrawGradientSamples:
    def test_moments_and_independence(self):
        m = draw_gradient_samples(6, 1000, seed=0)
        assert np.abs(m.data.mean(axis=0)).max() < 0.1
        assert np.abs(m.data.var(axis=0) - 1.0).max() < 0.1
        corr = np.corrcoef(m.data.T)
        off = corr[~np.eye(6, dtype=bool)]
        assert np.abs(off).max() < 0.1

    def test_seed_reproducible(self):
        a = draw_gradient_samples(4, 200, seed=7)
        b = draw_gradient_samples(4, 200, seed=7)
        assert np.array_equal(a.data, b.data)

    def test_labels(self):
        assert draw_gradient_samples(3, 100, seed=0).labels == ("g0", "g1", "g2")


@pytest.fixture(scope="module")
def small_cell():
    n = 8
    samples = draw_gradient_samples(n, 1000, seed=21)
    graph = generate_graph(n, 0.5, seed=3)
    weights = metropolis_weights(graph)
    return n, samples, graph, weights


class TestEstimateModeLeakage:
    def test_cfl_terms_are_self_information(self, small_cell):
        n, samples, _, _ = small_cell
        result = estimate_mode_leakage(Mode.CFL, samples)
        assert len(result.pairs) == n
        for corrupt, target, value in result.pairs:
            assert corrupt == -1
            assert value == pytest.approx(
                knn_mi(samples.column(target), samples.column(target)).value
            )

    def test_dfl_on_complete_graph_equals_cfl_average(self, small_cell):
        n, samples, _, _ = small_cell
        complete = generate_graph(n, 1.0, seed=0)
        w = metropolis_weights(complete)
        cfl = estimate_mode_leakage(Mode.CFL, samples)
        dfl = estimate_mode_leakage(Mode.DFL, samples, graph=complete, weights=w)
        # identical estimator calls, just averaged over (k, i) pairs
        assert dfl.average == pytest.approx(cfl.average, abs=1e-12)

    def test_dfl_relative_leakage_tracks_density(self, small_cell):
        n, samples, graph, weights = small_cell
        cfl = estimate_mode_leakage(Mode.CFL, samples)
        dfl = estimate_mode_leakage(Mode.DFL, samples, graph=graph, weights=weights)
        assert dfl.average / cfl.average == pytest.approx(
            graph_density(graph), abs=0.05
        )

    def test_cfl_sa_average_matches_closed_form(self):
        samples = draw_gradient_samples(10, 1000, seed=5)
        result = estimate_mode_leakage(Mode.CFL_SA, samples)
        assert len(result.pairs) == 90
        assert result.average == pytest.approx(analytic_mi_cfl_sa(10), abs=0.01)

    def test_dfl_sa_non_neighbor_pairs_near_zero(self, small_cell):
        n, samples, graph, weights = small_cell
        result = estimate_mode_leakage(Mode.DFL_SA, samples, graph=graph, weights=weights)
        for corrupt, target, value in result.pairs:
            if not graph.adjacency[corrupt, target]:
                assert abs(value) < 0.05

    def test_conditioned_estimates_match_fast_path(self, small_cell):
        n, samples, graph, weights = small_cell
        for mode in (Mode.CFL_SA, Mode.DFL_SA):
            fast = estimate_mode_leakage(mode, samples, graph=graph, weights=weights)
            cond = estimate_mode_leakage(
                mode, samples, graph=graph, weights=weights, condition_on_own=True
            )
            assert cond.average == pytest.approx(fast.average, abs=0.05)

    def test_corrupt_subsample_restricts_enumeration(self, small_cell):
        n, samples, graph, weights = small_cell
        result = estimate_mode_leakage(
            Mode.CFL_SA, samples, corrupt_nodes=[1, 4]
        )
        assert {p[0] for p in result.pairs} == {1, 4}
        assert len(result.pairs) == 2 * (n - 1)

    def test_missing_topology_rejected(self, small_cell):
        _, samples, graph, _ = small_cell
        with pytest.raises(ValueError, match="requires a graph"):
            estimate_mode_leakage(Mode.DFL, samples)
        with pytest.raises(ValueError, match="weight matrix"):
            estimate_mode_leakage(Mode.DFL_SA, samples, graph=graph)

    @pytest.mark.slow
    def test_sa_averages_match_closed_forms_at_ten_thousand_samples(self):
        n = 10
        graph = generate_graph(n, 0.5, seed=1)
        weights = metropolis_weights(graph)
        samples = draw_gradient_samples(n, 10_000, seed=17)
        cfl_sa = estimate_mode_leakage(Mode.CFL_SA, samples)
        assert cfl_sa.average == pytest.approx(analytic_mi_cfl_sa(n), abs=0.02)
        dfl_sa = estimate_mode_leakage(Mode.DFL_SA, samples, graph=graph, weights=weights)
        expected = np.mean(
            [
                analytic_mi_dfl_sa(weights, k, i)
                for k in range(n)
                for i in range(n)
                if i != k
            ]
        )
        assert dfl_sa.average == pytest.approx(expected, abs=0.02)


class TestRunExperiment:
    @pytest.fixture(scope="class")
    def small_report(self):
        config = ExperimentConfig(
            n_values=(6,), densities=(0.6, 1.0), samples=400, seed=9
        )
        return run_experiment(config)

    def test_cell_structure(self, small_report):
        assert small_report.cells() == [(6, 0.6), (6, 1.0)]
        # per cell: n CFL rows + 3 modes with n(n-1) rows each
        assert len(small_report.pairs) == 2 * (6 + 3 * 30)

    def test_relative_cfl_is_one(self, small_report):
        for density in (0.6, 1.0):
            assert small_report.cell(Mode.CFL, 6, density).relative == 1.0

    def test_relative_values_bounded(self, small_report):
        for row in small_report.summary:
            assert -0.05 <= row.relative <= 1.05

    def test_actual_density_recorded(self, small_report):
        cell = small_report.cell(Mode.DFL, 6, 0.6)
        graph = small_report.graphs[(6, 0.6)]
        assert cell.actual_density == pytest.approx(graph_density(graph))

    def test_deterministic_per_seed(self, small_report):
        config = ExperimentConfig(
            n_values=(6,), densities=(0.6, 1.0), samples=400, seed=9
        )
        again = run_experiment(config)
        assert again.pairs == small_report.pairs
        assert again.summary == small_report.summary

    def test_single_mode_config(self):
        config = ExperimentConfig(
            n_values=(5,), densities=(0.9,), samples=150, seed=2, modes=(Mode.CFL_SA,)
        )
        report = run_experiment(config)
        assert {row.mode for row in report.summary} == {Mode.CFL_SA}
        assert math.isnan(report.cell(Mode.CFL_SA, 5, 0.9).relative)

    def test_cell_seeds_are_coordinate_keyed(self):
        a = cell_seed_sequences(3, 10, 0.5)
        b = cell_seed_sequences(3, 10, 0.5)
        c = cell_seed_sequences(3, 10, 0.6)
        assert a[1] == b[1] != c[1]


def synthetic_report(cells):
    """Build a LeakageReport from {(n, density): {mode: value}}."""
    report = LeakageReport(config=None)
    for (n, density), values in cells.items():
        for mode, value in values.items():
            report.summary.append(
                CellSummary(
                    mode=mode,
                    n=n,
                    density=density,
                    actual_density=density,
                    leakage_nats=value,
                    analytic_nats=math.nan,
                    relative=math.nan,
                )
            )
    return report


HEALTHY = {Mode.CFL: 6.0, Mode.DFL: 3.0, Mode.DFL_SA: 0.40, Mode.CFL_SA: 0.10}


class TestVerifyProposition1:
    def test_strict_cell_passes(self):
        verdict = verify_proposition1(synthetic_report({(10, 0.5): HEALTHY}), tol=0.05)
        assert verdict.holds
        assert [r.name for r in verdict.cells[0].relations] == [
            "cfl_vs_dfl",
            "dfl_vs_dfl_sa",
            "dfl_sa_vs_cfl_sa",
        ]

    def test_complete_graph_requires_near_equality(self):
        equal = {Mode.CFL: 6.0, Mode.DFL: 6.0, Mode.DFL_SA: 0.1, Mode.CFL_SA: 0.1}
        assert verify_proposition1(synthetic_report({(10, 1.0): equal}), tol=0.05).holds
        # a clearly separated outer relation on a complete graph fails
        assert not verify_proposition1(
            synthetic_report({(10, 1.0): HEALTHY}), tol=0.05
        ).holds

    def test_inflated_cfl_sa_names_violated_relation(self):
        broken = dict(HEALTHY)
        broken[Mode.CFL_SA] = 2.0
        verdict = verify_proposition1(synthetic_report({(10, 0.5): broken}), tol=0.05)
        assert not verdict.holds
        failing = [
            r.name for c in verdict.cells for r in c.relations if not r.ok
        ]
        assert failing == ["dfl_sa_vs_cfl_sa"]

    def test_middle_relation_skipped_at_two_nodes(self):
        tied = {Mode.CFL: 6.0, Mode.DFL: 3.0, Mode.DFL_SA: 3.0, Mode.CFL_SA: 0.1}
        verdict = verify_proposition1(synthetic_report({(2, 0.5): tied}), tol=0.05)
        middle = verdict.cells[0].relations[1]
        assert not middle.checked
        assert middle.ok  # skipped relations never fail the cell

    def test_missing_mode_rejected(self):
        partial = {Mode.CFL: 6.0, Mode.DFL: 3.0, Mode.DFL_SA: 0.4}
        with pytest.raises(ValueError, match="lacks modes"):
            verify_proposition1(synthetic_report({(10, 0.5): partial}), tol=0.05)

    def test_estimated_small_cell_chain_direction_holds(self):
        config = ExperimentConfig(n_values=(8,), densities=(0.4,), samples=500, seed=4)
        verdict = verify_proposition1(run_experiment(config), tol=0.05)
        for rel in verdict.cells[0].relations:
            assert rel.direction_ok


class TestPairAnalytics:
    def test_sa_pairs_carry_closed_forms(self):
        config = ExperimentConfig(n_values=(6,), densities=(0.8,), samples=150, seed=1)
        report = run_experiment(config)
        weights = metropolis_weights(report.graphs[(6, 0.8)])
        for pair in report.pairs:
            if pair.mode is Mode.CFL_SA:
                assert pair.mi_analytic == pytest.approx(analytic_mi_cfl_sa(6))
            elif pair.mode is Mode.DFL_SA:
                assert pair.mi_analytic == pytest.approx(
                    analytic_mi_dfl_sa(weights, pair.corrupt, pair.target)
                )
            else:
                assert math.isnan(pair.mi_analytic)
