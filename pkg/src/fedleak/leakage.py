"""Monte-Carlo measurement of per-mode privacy leakage.

Per-node gradients are modeled as i.i.d. standard normal scalars. For
every corrupt node k and honest target i the estimator evaluates how
much the mode's observation reveals about G_i:

    CFL      I(G_i; G_i)                    (every gradient is visible)
    CFL_SA   I((1/n) sum_j G_j; G_i | G_k)
    DFL      I({neighbor gradients}; G_i | G_k)
    DFL_SA   I(sum_j a[k,j] G_j; G_i | G_k)

and averages over all (k, i) pairs. Because G_k is independent of the
rest, conditioning on it equals dropping the known term from the
aggregate; the fast path (default) exploits that identity and runs the
unconditional estimator on the reduced observation. Setting
condition_on_own=True keeps the conditional estimator instead; the two
agree within estimator noise (asserted by the test suite).

Self-information I(G_i; G_i) diverges for continuous variables: the
estimator reports its finite value at the given sample count, never a
symbolic infinity, so relative leakage depends on the pinned sample
size. A mode's average divided by the CFL average gives the relative
leakage that the topology/aggregation combination leaks per node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .infotheory import (
    SampleMatrix,
    _kth_neighbor_radius,
    _strict_counts,
    analytic_mi_cfl_sa,
    analytic_mi_dfl_sa,
    knn_cmi,
    knn_mi,
)
from .protocol import ALL_MODES, Mode
from .topology import (
    Graph,
    WeightMatrix,
    generate_graph,
    graph_density,
    metropolis_weights,
    min_connected_density,
)

__all__ = [
    "ExperimentConfig",
    "PairLeakage",
    "ModeLeakage",
    "CellSummary",
    "LeakageReport",
    "RelationVerdict",
    "CellVerdict",
    "Proposition1Verdict",
    "draw_gradient_samples",
    "estimate_mode_leakage",
    "verify_proposition1",
    "run_experiment",
    "analytic_cell_average",
    "cell_seed_sequences",
]

# Matrix-based estimator path allocates O(samples^2) floats; beyond this
# many samples fall back to per-pair tree queries.
_MATRIX_PATH_MAX_SAMPLES = 4000


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition for the leakage experiment."""

    n_values: tuple[int, ...] = (10, 20, 30, 40, 50)
    densities: tuple[float, ...] = (0.3, 0.6, 0.9)
    samples: int = 1000
    k_nn: int = 3
    seed: int = 0
    modes: tuple[Mode, ...] = ALL_MODES
    condition_on_own: bool = False
    corrupt_subsample: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(v) for v in self.n_values))
        object.__setattr__(self, "densities", tuple(float(d) for d in self.densities))
        object.__setattr__(
            self, "modes", tuple(Mode.parse(m) if isinstance(m, str) else m for m in self.modes)
        )
        if self.samples < 100:
            raise ValueError(f"samples must be >= 100, got {self.samples}")
        if self.k_nn < 1:
            raise ValueError(f"k_nn must be >= 1, got {self.k_nn}")
        if not self.n_values:
            raise ValueError("n_values is empty")
        if not self.modes:
            raise ValueError("modes is empty")
        needs_graph = any(m.decentralized for m in self.modes)
        for n in self.n_values:
            if n < 2:
                raise ValueError(f"node counts must be >= 2, got {n}")
            for d in self.densities:
                if not (0.0 < d <= 1.0):
                    raise ValueError(f"density {d} outside (0, 1]")
                if needs_graph and d < min_connected_density(n):
                    raise ValueError(
                        f"density {d} infeasible for a connected graph on "
                        f"{n} nodes (minimum {min_connected_density(n):.6g})"
                    )
        if not self.densities:
            raise ValueError("densities is empty")
        if self.corrupt_subsample is not None and self.corrupt_subsample < 1:
            raise ValueError("corrupt_subsample must be >= 1 when set")


@dataclass(frozen=True)
class PairLeakage:
    """One (corrupt node, honest target) estimator evaluation.

    corrupt is -1 for CFL, whose per-target term does not involve a
    corrupt-node index. mi_analytic is NaN where no closed form exists
    (CFL / DFL involve the diverging self-information)."""

    mode: Mode
    n: int
    density: float
    corrupt: int
    target: int
    mi_nats: float
    mi_analytic: float


@dataclass(frozen=True)
class ModeLeakage:
    """Per-pair estimates plus their average for one mode on one cell."""

    mode: Mode
    pairs: tuple[tuple[int, int, float], ...]  # (corrupt, target, nats)
    average: float


@dataclass(frozen=True)
class CellSummary:
    mode: Mode
    n: int
    density: float
    actual_density: float  # realized 2m/(n(n-1)); NaN without a graph
    leakage_nats: float
    analytic_nats: float
    relative: float


@dataclass
class LeakageReport:
    config: ExperimentConfig | None
    pairs: list[PairLeakage] = field(default_factory=list)
    summary: list[CellSummary] = field(default_factory=list)
    graphs: dict[tuple[int, float], Graph] = field(default_factory=dict)

    def cell(self, mode: Mode, n: int, density: float) -> CellSummary:
        for row in self.summary:
            if row.mode is mode and row.n == n and row.density == density:
                return row
        raise KeyError(f"no cell ({mode.value}, n={n}, density={density})")

    def cells(self) -> list[tuple[int, float]]:
        seen: list[tuple[int, float]] = []
        for row in self.summary:
            key = (row.n, row.density)
            if key not in seen:
                seen.append(key)
        return seen


def draw_gradient_samples(n: int, samples: int, seed) -> SampleMatrix:
    """n independent standard-normal columns, reproducible per seed."""
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((samples, n))
    return SampleMatrix(data=data, labels=tuple(f"g{i}" for i in range(n)))


class _CellEstimator:
    """Scratch-sharing KSG evaluator for the many estimates in one cell.

    Produces values identical to knn_mi / knn_cmi (same radii, same
    strict counts) while reusing distance-matrix buffers and per-column
    kd-trees across the O(n^2) pair evaluations.
    """

    def __init__(self, data: np.ndarray, k: int):
        self.data = data
        self.k = k
        n_samples = data.shape[0]
        self._psi_k = float(digamma(k))
        self._psi_n = float(digamma(n_samples))
        self._column_trees: dict[int, cKDTree] = {}
        self._tmp = np.empty((n_samples, n_samples))
        self._joint = np.empty((n_samples, n_samples))

    def column_tree(self, idx: int) -> cKDTree:
        if idx not in self._column_trees:
            self._column_trees[idx] = cKDTree(self.data[:, idx, None])
        return self._column_trees[idx]

    def mi_1d(self, x: np.ndarray, y_idx: int, tree_x: cKDTree) -> float:
        """I(x; column y_idx) with both marginals one-dimensional."""
        y = self.data[:, y_idx]
        radii = _kth_neighbor_radius(np.column_stack([x, y]), self.k)
        cx = _strict_counts(x[:, None], radii, tree=tree_x)
        cy = _strict_counts(y[:, None], radii, tree=self.column_tree(y_idx))
        return self._psi_k + self._psi_n - float(np.mean(digamma(cx) + digamma(cy)))

    def chebyshev_matrix(self, columns: np.ndarray) -> np.ndarray:
        """Pairwise max-norm distances for points given as (N, d) columns."""
        dm = np.zeros_like(self._tmp)
        for c in range(columns.shape[1]):
            col = columns[:, c]
            np.subtract.outer(col, col, out=self._tmp)
            np.abs(self._tmp, out=self._tmp)
            np.maximum(dm, self._tmp, out=dm)
        return dm

    def mi_fixed_set(self, dx: np.ndarray, y_idx: int) -> float:
        """I(X; column y_idx) from X's precomputed distance matrix."""
        y = self.data[:, y_idx]
        dy = self._tmp
        np.subtract.outer(y, y, out=dy)
        np.abs(dy, out=dy)
        np.maximum(dx, dy, out=self._joint)
        self._joint.partition(self.k, axis=1)
        strict = np.nextafter(self._joint[:, self.k], 0.0)[:, None]
        cx = np.count_nonzero(dx <= strict, axis=1)
        cy = np.count_nonzero(dy <= strict, axis=1)
        return self._psi_k + self._psi_n - float(np.mean(digamma(cx) + digamma(cy)))


def estimate_mode_leakage(
    mode: Mode,
    samples: SampleMatrix,
    graph: Graph | None = None,
    weights: WeightMatrix | None = None,
    k_nn: int = 3,
    condition_on_own: bool = False,
    corrupt_nodes: Sequence[int] | None = None,
) -> ModeLeakage:
    """Estimate one mode's leakage table over (corrupt, target) pairs.

    Observation scalars are built exactly as the adversary would see
    them (average, neighbor set, or weighted aggregate); targets whose
    own gradient is part of the observation contribute the self term
    I(G_i; G_i). corrupt_nodes restricts the enumeration of k (an
    unbiased subsample of the same average); None enumerates all nodes.
    """
    data = samples.data
    n = samples.n_variables
    if mode.decentralized and graph is None:
        raise ValueError(f"mode {mode.value} requires a graph")
    if mode is Mode.DFL_SA and weights is None:
        raise ValueError("mode dfl_sa requires a weight matrix")
    if graph is not None and graph.n != n:
        raise ValueError(f"graph has n={graph.n} but samples have {n} columns")

    est = _CellEstimator(data, k_nn)
    self_mi_cache: dict[int, float] = {}

    def self_mi(i: int) -> float:
        if i not in self_mi_cache:
            self_mi_cache[i] = knn_mi(data[:, i], data[:, i], k=k_nn).value
        return self_mi_cache[i]

    pairs: list[tuple[int, int, float]] = []

    if mode is Mode.CFL:
        # Every gradient is visible, so the term for target i is its
        # self-information; no corrupt-node enumeration is involved.
        for i in range(n):
            pairs.append((-1, i, self_mi(i)))
    else:
        corrupt_iter = range(n) if corrupt_nodes is None else sorted(corrupt_nodes)
        column_sum = data.sum(axis=1)
        mean_all = column_sum / n
        for k in corrupt_iter:
            own = data[:, k]
            if mode is Mode.CFL_SA:
                reduced = column_sum - own
                tree_x = None if condition_on_own else cKDTree(reduced[:, None])
                for i in range(n):
                    if i == k:
                        continue
                    if condition_on_own:
                        v = knn_cmi(mean_all, data[:, i], own, k=k_nn).value
                    else:
                        v = est.mi_1d(reduced, i, tree_x)
                    pairs.append((k, i, v))
            elif mode is Mode.DFL:
                nbrs = graph.neighbors(k)
                nbr_data = data[:, nbrs]
                use_matrix = (
                    not condition_on_own
                    and len(nbrs) > 0
                    and samples.n_samples <= _MATRIX_PATH_MAX_SAMPLES
                )
                dx = est.chebyshev_matrix(nbr_data) if use_matrix else None
                nbr_set = set(int(j) for j in nbrs)
                for i in range(n):
                    if i == k:
                        continue
                    if i in nbr_set:
                        if condition_on_own:
                            v = knn_cmi(data[:, i], data[:, i], own, k=k_nn).value
                        else:
                            v = self_mi(i)
                    elif condition_on_own:
                        v = knn_cmi(nbr_data, data[:, i], own, k=k_nn).value
                    elif dx is not None:
                        v = est.mi_fixed_set(dx, i)
                    else:
                        v = knn_mi(nbr_data, data[:, i], k=k_nn).value
                    pairs.append((k, i, v))
            else:  # DFL_SA
                row = weights.row(k)
                aggregate = data @ row
                reduced = aggregate - row[k] * own
                tree_x = None if condition_on_own else cKDTree(reduced[:, None])
                for i in range(n):
                    if i == k:
                        continue
                    if condition_on_own:
                        v = knn_cmi(aggregate, data[:, i], own, k=k_nn).value
                    else:
                        v = est.mi_1d(reduced, i, tree_x)
                    pairs.append((k, i, v))

    average = float(np.mean([p[2] for p in pairs]))
    return ModeLeakage(mode=mode, pairs=tuple(pairs), average=average)


def _pair_analytic(
    mode: Mode, n: int, corrupt: int, target: int, weights: WeightMatrix | None
) -> float:
    if mode is Mode.CFL_SA and n >= 3:
        return analytic_mi_cfl_sa(n)
    if mode is Mode.DFL_SA and weights is not None:
        return analytic_mi_dfl_sa(weights, corrupt, target)
    return math.nan


def cell_seed_sequences(seed: int, n: int, density: float):
    """Independent RNG material for one sweep cell, keyed by its
    coordinates so cells can be recomputed in isolation.

    Returns (sample seed sequence, graph seed int, subsample seed
    sequence)."""
    cell = np.random.SeedSequence(
        entropy=(int(seed), int(n), int(round(density * 1_000_000)))
    )
    sample_ss, graph_ss, subsample_ss = cell.spawn(3)
    graph_seed = int(graph_ss.generate_state(1)[0])
    return sample_ss, graph_seed, subsample_ss


def analytic_cell_average(
    mode: Mode, n: int, density: float, seed: int
) -> tuple[float, float]:
    """Closed-form cell average and the realized graph density.

    Only the secure-aggregation modes have closed forms. The graph for
    DFL_SA is derived from (seed, n, density) exactly as run_experiment
    derives it, so analytic values line up with estimated cells.
    """
    if mode is Mode.CFL_SA:
        return analytic_mi_cfl_sa(n), math.nan
    if mode is not Mode.DFL_SA:
        raise ValueError(f"no closed form for mode {mode.value}")
    _, graph_seed, _ = cell_seed_sequences(seed, n, density)
    graph = generate_graph(n, density, graph_seed)
    w = metropolis_weights(graph)
    values = [
        analytic_mi_dfl_sa(w, k, i)
        for k in range(n)
        for i in range(n)
        if i != k
    ]
    return float(np.mean(values)), graph_density(graph)


def run_experiment(config: ExperimentConfig) -> LeakageReport:
    """Full sweep over n_values x densities x modes; deterministic per seed.

    Each cell derives its own RNG streams from (seed, n, density), so
    cells are independent of sweep order and may be recomputed in
    isolation."""
    report = LeakageReport(config=config)
    needs_graph = any(m.decentralized for m in config.modes)
    for n in config.n_values:
        for density in config.densities:
            sample_ss, graph_seed, subsample_ss = cell_seed_sequences(
                config.seed, n, density
            )
            samples = draw_gradient_samples(n, config.samples, sample_ss)
            graph = w = None
            actual_density = math.nan
            if needs_graph:
                graph = generate_graph(n, density, graph_seed)
                w = metropolis_weights(graph)
                actual_density = graph_density(graph)
                report.graphs[(n, density)] = graph
            corrupt_nodes = None
            if config.corrupt_subsample is not None and config.corrupt_subsample < n:
                rng = np.random.default_rng(subsample_ss)
                corrupt_nodes = sorted(
                    int(v)
                    for v in rng.choice(n, size=config.corrupt_subsample, replace=False)
                )
            averages: dict[Mode, float] = {}
            for mode in config.modes:
                result = estimate_mode_leakage(
                    mode,
                    samples,
                    graph=graph,
                    weights=w,
                    k_nn=config.k_nn,
                    condition_on_own=config.condition_on_own,
                    corrupt_nodes=corrupt_nodes,
                )
                averages[mode] = result.average
                for corrupt, target, value in result.pairs:
                    report.pairs.append(
                        PairLeakage(
                            mode=mode,
                            n=n,
                            density=density,
                            corrupt=corrupt,
                            target=target,
                            mi_nats=value,
                            mi_analytic=_pair_analytic(mode, n, corrupt, target, w),
                        )
                    )
            cfl_avg = averages.get(Mode.CFL, math.nan)
            for mode in config.modes:
                analytic = math.nan
                if mode is Mode.CFL_SA and n >= 3:
                    analytic = analytic_mi_cfl_sa(n)
                elif mode is Mode.DFL_SA and w is not None:
                    vals = [
                        analytic_mi_dfl_sa(w, k, i)
                        for k in range(n)
                        for i in range(n)
                        if i != k
                    ]
                    analytic = float(np.mean(vals))
                report.summary.append(
                    CellSummary(
                        mode=mode,
                        n=n,
                        density=density,
                        actual_density=actual_density if mode.decentralized else math.nan,
                        leakage_nats=averages[mode],
                        analytic_nats=analytic,
                        relative=averages[mode] / cfl_avg if cfl_avg else math.nan,
                    )
                )
    return report


@dataclass(frozen=True)
class RelationVerdict:
    """One inequality of the ordering chain on one cell."""

    name: str
    gap: float
    checked: bool
    direction_ok: bool  # lhs >= rhs within the tolerance cushion
    margin_ok: bool  # strict gap > tol (density < 1) or |gap| <= tol (density 1)

    @property
    def ok(self) -> bool:
        return not self.checked or (self.direction_ok and self.margin_ok)


@dataclass(frozen=True)
class CellVerdict:
    n: int
    density: float
    leakage: dict
    relations: tuple[RelationVerdict, ...]

    @property
    def holds(self) -> bool:
        return all(r.ok for r in self.relations)


@dataclass(frozen=True)
class Proposition1Verdict:
    tol: float
    cells: tuple[CellVerdict, ...]

    @property
    def holds(self) -> bool:
        return all(c.holds for c in self.cells)


def verify_proposition1(report: LeakageReport, tol: float) -> Proposition1Verdict:
    """Check I_CFL >= I_DFL > I_DFL_SA >= I_CFL_SA on every cell.

    The outer relations hold with equality exactly on the complete
    graph, so for density < 1 their gaps must exceed tol and at density
    1 they must vanish within tol. The middle relation is strict for
    any connected graph on more than two nodes and is skipped at n = 2.
    All three also get a direction check with a tol cushion for
    estimator noise. Returns a verdict object; never raises.
    """
    cells = []
    for n, density in report.cells():
        values = {}
        for mode in ALL_MODES:
            try:
                values[mode] = report.cell(mode, n, density).leakage_nats
            except KeyError:
                pass
        missing = [m for m in ALL_MODES if m not in values]
        if missing:
            raise ValueError(
                f"cell (n={n}, density={density}) lacks modes "
                f"{[m.value for m in missing]}; all four are needed"
            )
        complete = density >= 1.0
        relations = []
        for name, lhs, rhs, outer in (
            ("cfl_vs_dfl", Mode.CFL, Mode.DFL, True),
            ("dfl_vs_dfl_sa", Mode.DFL, Mode.DFL_SA, False),
            ("dfl_sa_vs_cfl_sa", Mode.DFL_SA, Mode.CFL_SA, True),
        ):
            gap = values[lhs] - values[rhs]
            checked = outer or n > 2
            direction_ok = gap >= -tol
            if outer:
                margin_ok = abs(gap) <= tol if complete else gap > tol
            else:
                margin_ok = gap > tol
            relations.append(
                RelationVerdict(
                    name=name,
                    gap=gap,
                    checked=checked,
                    direction_ok=direction_ok,
                    margin_ok=margin_ok,
                )
            )
        cells.append(
            CellVerdict(
                n=n,
                density=density,
                leakage={m.value: v for m, v in values.items()},
                relations=tuple(relations),
            )
        )
    return Proposition1Verdict(tol=tol, cells=tuple(cells))
