"""Command-line front end.

Subcommands: simulate (leakage sweep), attack (gradient inversion),
verify (ordering-chain check on a summary CSV), analytic (closed forms
only). Option precedence is flag > FEDLEAK_* environment variable >
key=value config file > built-in default; every run writes a manifest
that can be passed back via --config to reproduce outputs byte for
byte.

Exit codes: 0 success, 1 verification failure, 2 usage error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attack import attack_experiment
from .leakage import (
    CellSummary,
    ExperimentConfig,
    LeakageReport,
    analytic_cell_average,
    cell_seed_sequences,
    run_experiment,
    verify_proposition1,
)
from .protocol import ALL_MODES, Mode
from .reporting import (
    Series,
    read_csv,
    read_keyvalue,
    svg_line_chart,
    atomic_write_text,
    write_csv,
    write_manifest,
    write_pgm,
)
from .topology import generate_graph, metropolis_weights, read_edge_list, write_edge_list

ENV_PREFIX = "FEDLEAK_"

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _parse_modes(text: str) -> tuple[Mode, ...]:
    return tuple(Mode.parse(tok) for tok in text.split(",") if tok.strip())


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


class _Options:
    """Layered option lookup: CLI flag, then env, then config file."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        config_path = self.args.get("config")
        self.config = read_keyvalue(config_path) if config_path else {}

    def get(self, key: str, default, cast):
        flag = self.args.get(key)
        if flag is not None:
            return cast(flag) if isinstance(flag, str) else flag
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            return cast(env)
        if key in self.config:
            return cast(self.config[key])
        return default


def _density_token(density: float) -> str:
    return f"{density:g}".replace(".", "p")


def _mode_values(modes) -> str:
    return ",".join(m.value for m in modes)


def _manifest_base(command: str, out_dir: Path) -> dict[str, str]:
    return {
        "command": command,
        "out_dir": str(out_dir),
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "version": __version__,
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    opts = _Options(args)
    seed = opts.get("seed", 0, int)
    samples = opts.get("samples", 1000, int)
    k_nn = opts.get("knn_k", 3, int)
    n_values = opts.get("n", (10, 20, 30, 40, 50), _parse_int_list)
    densities = opts.get("densities", (0.3, 0.6, 0.9), _parse_float_list)
    modes = opts.get("modes", ALL_MODES, _parse_modes)
    condition = opts.get("condition", False, _parse_bool)
    analytic_only = opts.get("analytic_only", False, _parse_bool)
    out_dir = Path(opts.get("out_dir", "out/simulate", str))

    manifest = _manifest_base("simulate", out_dir)
    manifest.update(
        seed=str(seed),
        samples=str(samples),
        knn_k=str(k_nn),
        n=",".join(str(v) for v in n_values),
        densities=",".join(f"{d:g}" for d in densities),
        modes=_mode_values(modes),
        condition=str(condition).lower(),
        analytic_only=str(analytic_only).lower(),
    )

    if analytic_only:
        bad = [m.value for m in modes if not m.secure_aggregation]
        if bad:
            raise UsageError(
                f"--analytic-only has closed forms only for cfl_sa/dfl_sa, "
                f"got {','.join(bad)}"
            )
        rows = []
        for n in n_values:
            for density in densities:
                for mode in modes:
                    value, actual = analytic_cell_average(mode, n, density, seed)
                    rows.append(
                        (mode.value, n, density, actual, value, value, math.nan)
                    )
        summary_path = out_dir / "leakage_summary.csv"
        write_csv(
            summary_path,
            ["mode", "n", "density", "actual_density", "leakage_nats",
             "analytic_nats", "relative"],
            rows,
        )
        series = _summary_series(rows, value_idx=4)
        svg_path = out_dir / "leakage_analytic.svg"
        atomic_write_text(
            svg_path,
            svg_line_chart(series, "Closed-form leakage", "nodes n", "leakage (nats)"),
        )
        manifest["output_summary"] = summary_path.name
        manifest["output_svg"] = svg_path.name
        write_manifest(out_dir / "manifest.txt", manifest)
        print(f"analytic summary written to {out_dir}", file=sys.stderr)
        return EXIT_OK

    config = ExperimentConfig(
        n_values=n_values,
        densities=densities,
        samples=samples,
        k_nn=k_nn,
        seed=seed,
        modes=modes,
        condition_on_own=condition,
    )
    print(
        f"[simulate] {len(n_values)} node counts x {len(densities)} densities "
        f"x {len(modes)} modes, {samples} samples",
        file=sys.stderr,
    )
    report = run_experiment(config)

    pairs_path = out_dir / "leakage_pairs.csv"
    cfl_by_cell = {
        (row.n, row.density): row.leakage_nats
        for row in report.summary
        if row.mode is Mode.CFL
    }
    pair_rows = []
    for pair in report.pairs:
        cfl = cfl_by_cell.get((pair.n, pair.density), math.nan)
        pair_rows.append(
            (
                pair.mode.value,
                pair.n,
                pair.density,
                pair.corrupt,
                pair.target,
                pair.mi_nats,
                pair.mi_analytic,
                pair.mi_nats / cfl if cfl else math.nan,
            )
        )
    write_csv(
        pairs_path,
        ["mode", "n", "density", "k", "i", "mi_nats", "mi_analytic", "relative"],
        pair_rows,
    )

    summary_path = out_dir / "leakage_summary.csv"
    summary_rows = [
        (
            row.mode.value,
            row.n,
            row.density,
            row.actual_density,
            row.leakage_nats,
            row.analytic_nats,
            row.relative,
        )
        for row in report.summary
    ]
    write_csv(
        summary_path,
        ["mode", "n", "density", "actual_density", "leakage_nats",
         "analytic_nats", "relative"],
        summary_rows,
    )

    graph_names = []
    for (n, density), graph in sorted(report.graphs.items()):
        name = f"graphs/graph_n{n}_d{_density_token(density)}.txt"
        write_edge_list(graph, out_dir / name)
        graph_names.append(name)

    svg_path = out_dir / "leakage_relative.svg"
    series = _summary_series(summary_rows, value_idx=6)
    atomic_write_text(
        svg_path,
        svg_line_chart(
            series,
            "Relative leakage by mode",
            "nodes n",
            "relative mutual information (mode / cfl)",
        ),
    )

    manifest["output_pairs"] = pairs_path.name
    manifest["output_summary"] = summary_path.name
    manifest["output_svg"] = svg_path.name
    for idx, name in enumerate(graph_names):
        manifest[f"output_graph_{idx}"] = name
    write_manifest(out_dir / "manifest.txt", manifest)
    print(f"[simulate] report written to {out_dir}", file=sys.stderr)
    return EXIT_OK


def _summary_series(summary_rows, value_idx: int) -> list[Series]:
    """One series per (mode, density) over n, ordered as encountered."""
    keys = []
    for row in summary_rows:
        key = (row[0], row[2])
        if key not in keys:
            keys.append(key)
    series = []
    for mode_value, density in keys:
        points = [
            (row[1], row[value_idx])
            for row in summary_rows
            if row[0] == mode_value and row[2] == density
        ]
        series.append(
            Series(
                label=f"{mode_value} d={density:g}",
                xs=tuple(float(p[0]) for p in points),
                ys=tuple(float(p[1]) for p in points),
            )
        )
    return series


def cmd_attack(args: argparse.Namespace) -> int:
    opts = _Options(args)
    seed = opts.get("seed", 0, int)
    n = opts.get("n", 10, int)
    modes = opts.get("modes", ALL_MODES, _parse_modes)
    densities = opts.get("densities", (0.4, 0.8, 1.0), _parse_float_list)
    n_seeds = opts.get("seeds", 1, int)
    iters = opts.get("iters", 1000, int)
    lr = opts.get("lr", 0.1, float)
    corrupt = opts.get("corrupt", 0, int)
    graph_file = opts.get("graph_file", None, str)
    out_dir = Path(opts.get("out_dir", "out/attack", str))

    needs_topology = any(m.decentralized for m in modes)
    fixed_graph = None
    if graph_file:
        fixed_graph = read_edge_list(graph_file)
        n = fixed_graph.n
        densities = (fixed_graph.density,)
    if needs_topology and not densities:
        raise UsageError(
            "modes dfl/dfl_sa need a topology: pass --densities or --graph-file"
        )
    if not densities:
        densities = (math.nan,)  # centralized only; density is a label

    manifest = _manifest_base("attack", out_dir)
    manifest.update(
        seed=str(seed),
        n=str(n),
        modes=_mode_values(modes),
        densities=",".join(f"{d:g}" for d in densities),
        seeds=str(n_seeds),
        iters=str(iters),
        lr=repr(float(lr)),
        corrupt=str(corrupt),
    )
    if graph_file:
        manifest["graph_file"] = str(graph_file)

    detail_rows = []
    summary = {}
    for density in densities:
        graph = weights = None
        if needs_topology:
            if fixed_graph is not None:
                graph = fixed_graph
            else:
                _, graph_seed, _ = cell_seed_sequences(seed, n, density)
                graph = generate_graph(n, density, graph_seed)
            weights = metropolis_weights(graph)
        for mode in modes:
            ssims = []
            for offset in range(n_seeds):
                result = attack_experiment(
                    mode,
                    n=n,
                    graph=graph if mode.decentralized else None,
                    weights=weights if mode.decentralized else None,
                    seed=seed + offset,
                    corrupt_node=corrupt,
                    iters=iters,
                    lr=lr,
                )
                ssims.append(result.average_ssim)
                for target in result.targets:
                    detail_rows.append(
                        (
                            mode.value,
                            density,
                            target.node,
                            target.is_neighbor,
                            target.ssim,
                        )
                    )
                if offset == 0:
                    for target in result.targets:
                        name = (
                            f"recon/{mode.value}_d{_density_token(density)}"
                            f"_node{target.node:02d}.pgm"
                        )
                        write_pgm(out_dir / name, target.image.pixels)
            summary[(mode, density)] = float(np.mean(ssims))
            print(
                f"[attack] {mode.value} density={density:g}: "
                f"avg ssim {summary[(mode, density)]:.3f} over {n_seeds} seed(s)",
                file=sys.stderr,
            )

    detail_path = out_dir / "attack_ssim.csv"
    write_csv(
        detail_path,
        ["mode", "density", "node", "neighbor_flag", "ssim"],
        detail_rows,
    )
    summary_path = out_dir / "attack_summary.csv"
    write_csv(
        summary_path,
        ["mode", "density", "average_ssim"],
        [(m.value, d, v) for (m, d), v in summary.items()],
    )
    series = []
    for mode in modes:
        xs = tuple(float(d) for d in densities)
        ys = tuple(summary[(mode, d)] for d in densities)
        series.append(Series(label=mode.value, xs=xs, ys=ys))
    svg_path = out_dir / "attack_ssim.svg"
    atomic_write_text(
        svg_path,
        svg_line_chart(
            series, "Reconstruction quality by mode", "graph density", "average SSIM"
        ),
    )
    manifest["output_detail"] = detail_path.name
    manifest["output_summary"] = summary_path.name
    manifest["output_svg"] = svg_path.name
    write_manifest(out_dir / "manifest.txt", manifest)
    print(f"[attack] results written to {out_dir}", file=sys.stderr)
    return EXIT_OK


def _report_from_summary_csv(path: str) -> LeakageReport:
    header, rows, numbers = read_csv(path)
    needed = {"mode", "n", "density", "leakage_nats"}
    if not needed.issubset(header):
        raise ValueError(
            f"{path}:1: summary header must contain {sorted(needed)}, got {header}"
        )
    report = LeakageReport(config=None)
    for row, lineno in zip(rows, numbers):
        try:
            report.summary.append(
                CellSummary(
                    mode=Mode.parse(row["mode"]),
                    n=int(row["n"]),
                    density=float(row["density"]),
                    actual_density=float(row.get("actual_density") or "nan"),
                    leakage_nats=float(row["leakage_nats"]),
                    analytic_nats=float(row.get("analytic_nats") or "nan"),
                    relative=float(row.get("relative") or "nan"),
                )
            )
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return report


def cmd_verify(args: argparse.Namespace) -> int:
    opts = _Options(args)
    tol = opts.get("tol", 0.05, float)
    report = _report_from_summary_csv(args.report)
    verdict = verify_proposition1(report, tol)
    failures = []
    for cell in verdict.cells:
        values = " ".join(f"{k}={v:.4f}" for k, v in cell.leakage.items())
        print(f"cell n={cell.n} density={cell.density:g}: {values}")
        for rel in cell.relations:
            if not rel.checked:
                status = "SKIPPED"
            elif rel.ok:
                status = "OK"
            else:
                status = "FAIL"
                failures.append((cell, rel))
            print(f"  {rel.name:<18} gap={rel.gap:+.4f}  {status}")
    if failures:
        names = ", ".join(
            f"{rel.name} at (n={cell.n}, density={cell.density:g})"
            for cell, rel in failures
        )
        print(f"CHAIN VIOLATED: {names}")
        return EXIT_VERIFY_FAILED
    print(f"CHAIN HOLDS ({len(verdict.cells)} cells, tol={tol:g})")
    return EXIT_OK


def cmd_analytic(args: argparse.Namespace) -> int:
    opts = _Options(args)
    seed = opts.get("seed", 0, int)
    n_values = opts.get("n", (10, 20, 30, 40, 50), _parse_int_list)
    densities = opts.get("densities", (), _parse_float_list)
    out_dir = opts.get("out_dir", None, str)

    rows = []
    for n in n_values:
        value, _ = analytic_cell_average(Mode.CFL_SA, n, 1.0, seed)
        rows.append((Mode.CFL_SA.value, n, math.nan, value))
        print(f"cfl_sa n={n}: {value:.6f} nats")
        for density in densities:
            value, actual = analytic_cell_average(Mode.DFL_SA, n, density, seed)
            rows.append((Mode.DFL_SA.value, n, density, value))
            print(
                f"dfl_sa n={n} density={density:g} "
                f"(realized {actual:g}): {value:.6f} nats"
            )
    if out_dir:
        path = Path(out_dir) / "analytic.csv"
        write_csv(path, ["mode", "n", "density", "analytic_nats"], rows)
        manifest = _manifest_base("analytic", Path(out_dir))
        manifest.update(
            seed=str(seed),
            n=",".join(str(v) for v in n_values),
            densities=",".join(f"{d:g}" for d in densities),
            output_csv=path.name,
        )
        write_manifest(Path(out_dir) / "manifest.txt", manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedleak",
        description="Privacy-leakage simulation for federated learning topologies",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file (a manifest works)")
        p.add_argument("--seed", help="root RNG seed")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.add_argument("--n", help="comma-separated node counts (or one count)")
        p.add_argument("--densities", help="comma-separated target densities")
        p.add_argument("--modes", help="comma-separated subset of cfl,cfl_sa,dfl,dfl_sa")
        p.add_argument("--tol", help="tolerance for chain verification")

    sim = sub.add_parser("simulate", help="run the leakage sweep")
    add_common(sim)
    sim.add_argument("--samples", help="Monte-Carlo draws per variable")
    sim.add_argument("--knn-k", dest="knn_k", help="kNN estimator neighbor count")
    sim.add_argument(
        "--condition",
        action="store_const",
        const=True,
        help="condition estimates on the adversary's own gradient",
    )
    sim.add_argument(
        "--analytic-only",
        dest="analytic_only",
        action="store_const",
        const=True,
        help="emit closed-form values only (no sampling)",
    )
    sim.set_defaults(func=cmd_simulate)

    atk = sub.add_parser("attack", help="run the gradient-inversion attack grid")
    add_common(atk)
    atk.add_argument("--seeds", help="number of seeds to average over")
    atk.add_argument("--iters", help="attack iterations")
    atk.add_argument("--lr", help="attack learning rate")
    atk.add_argument("--corrupt", help="corrupt node index")
    atk.add_argument("--graph-file", dest="graph_file", help="edge-list topology file")
    atk.set_defaults(func=cmd_attack)

    ver = sub.add_parser("verify", help="check the leakage ordering chain")
    ver.add_argument("report", help="path to a leakage summary CSV")
    ver.add_argument("--config", help="key=value config file")
    ver.add_argument("--tol", help="gap tolerance in nats")
    ver.set_defaults(func=cmd_verify)

    ana = sub.add_parser("analytic", help="print closed-form leakage values")
    add_common(ana)
    ana.set_defaults(func=cmd_analytic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
