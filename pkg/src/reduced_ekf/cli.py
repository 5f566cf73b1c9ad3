"""Command-line entry point: ``reduced-ekf {simulate,experiment,table}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .experiment import full_grid, simulate_realization
from .results_io import (
    MalformedResultsError,
    RunManifest,
    format_table,
    read_results_csv,
    write_results_csv,
    write_trace_csv,
)
from .scenario import write_scenario
from .sensors import write_measurement_log

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("reduced_ekf")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reduced-ekf", description="Planar SLAM filter comparison on simulated binocular data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run one realization and write its error traces")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--seed", type=int, help="overrides experiment.base_seed")
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    exp = sub.add_parser("experiment", help="run the Monte Carlo grid and write results.csv")
    exp.add_argument("--config", required=True, type=Path)
    exp.add_argument("--seed", type=int, help="overrides experiment.base_seed")
    exp.add_argument("--out", required=True, type=Path)
    exp.add_argument("--jobs", type=int, default=1)
    exp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    tab = sub.add_parser("table", help="print results.csv grouped per trajectory and density")
    tab.add_argument("path", type=Path)
    return parser


def _prepare_out(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_simulate(args) -> int:
    run = load_config(args.config)
    cell = run.single()
    if args.seed is not None:
        cell = replace(cell, base_seed=args.seed)
    out = _prepare_out(args.out)
    manifest = RunManifest("simulate", run.echo, cell.base_seed)

    scenario, stream, traces = simulate_realization(cell, 0)
    write_trace_csv(traces, out / "trace.csv")
    write_scenario(scenario, out / "scenario.txt")
    batches = [(0, stream.initial)] + [(k + 1, b) for k, b in enumerate(stream.batches)]
    write_measurement_log(batches, out / "measurements.csv")
    manifest.outputs += ["trace.csv", "scenario.txt", "measurements.csv"]
    manifest.add_cell(cell.cell_key, "ok", diverged=sorted(m for m, tr in traces.items() if tr.diverged))

    if not args.no_figures:
        from .plotting import plot_error_growth

        t = next(iter(traces.values())).t
        plot_error_growth(t, {m: (tr.dp, tr.dth) for m, tr in traces.items()}, out / "error_growth.png", cell.cell_key)
        manifest.outputs.append("error_growth.png")
    manifest.write(out / "manifest.json")
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    run = load_config(args.config)
    cells = run.cells()
    if args.seed is not None:
        cells = [replace(c, base_seed=args.seed) for c in cells]
    out = _prepare_out(args.out)
    seed = cells[0].base_seed if cells else 0
    manifest = RunManifest("experiment", run.echo, seed)

    rows = full_grid(cells, jobs=args.jobs)
    write_results_csv(rows, out / "results.csv")
    manifest.outputs.append("results.csv")
    for cell in cells:
        mine = [r for r in rows if (r.trajectory, r.density, r.freq_hz, r.qz) == (cell.trajectory, cell.density, cell.freq_hz, cell.qz)]
        diverged = {r.method: r.n_diverged for r in mine if r.n_diverged}
        manifest.add_cell(cell.cell_key, "ok" if not diverged else "partial", realizations=cell.realizations, diverged=diverged)

    if not args.no_figures:
        from .plotting import plot_results

        plot_results(rows, out / "results.png")
        manifest.outputs.append("results.png")
    manifest.write(out / "manifest.json")
    return EXIT_OK


def cmd_table(args) -> int:
    try:
        rows = read_results_csv(args.path)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.path}: {exc.strerror}") from None
    text = format_table(rows)
    if text:
        sys.stdout.write(text + "\n")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "experiment": cmd_experiment, "table": cmd_table}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MalformedResultsError) as exc:
        print(f"reduced-ekf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"reduced-ekf: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
