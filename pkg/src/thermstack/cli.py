"""Command line entry point: ``thermstack <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 input or validation error,
3 solver non-convergence.  ``THERMSTACK_THREADS`` is accepted for
compatibility; every computation here runs on a single thread.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import formats
from .analysis import build_report
from .model import FloorplanError, GridSpec, validate_floorplan
from .pipeline import ensure_filled, solve_stack
from .scenarios import SCENARIO_IDS, comparison_tables, run_scenario
from .solver import DEFAULT_REL_TOL, NonConvergence, SolverError

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> GridSpec:
    try:
        return GridSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thermstack", description="Steady-state thermal simulation of 2D and stacked 3D dies.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check the floorplans referenced by a stack config")
    s.add_argument("--stack", required=True, help="stack config file")

    s = sub.add_parser("solve", help="solve a stack config and write a report and thermal maps")
    s.add_argument("--stack", required=True, help="stack config file")
    s.add_argument("--grid", type=_grid, help="lateral grid NXxNY (default: [die] nx/ny, else 64x64)")
    s.add_argument("--report", help="report path; .json or .csv")
    s.add_argument("--map-dir", help="directory for layer<i>.ppm thermal maps")
    s.add_argument("--rel-tol", type=float, default=DEFAULT_REL_TOL, help="CG relative residual tolerance")
    s.add_argument("--max-iter", type=int, help="CG iteration cap (default 50*sqrt(N))")

    s = sub.add_parser("scenario", help="run one built-in experiment and compare with published values")
    s.add_argument("--id", required=True, choices=SCENARIO_IDS, help="scenario id")
    s.add_argument("--grid", type=_grid, help="lateral grid NXxNY (default 64x64)")
    s.add_argument("--report", help="report path; .json or .csv")
    s.add_argument("--map-dir", help="directory for layer<i>.ppm thermal maps")

    s = sub.add_parser("tables", help="run every scenario and print the comparison document")
    s.add_argument("--grid", type=_grid, help="lateral grid NXxNY (default 64x64)")
    s.add_argument("--json", help="also write the comparison as JSON to this path")

    s = sub.add_parser("optimize", help="search processor placements minimizing peak temperature")
    s.add_argument("--problem", required=True, help="stack config with an [optimize] section")
    s.add_argument("--method", choices=("exhaustive", "anneal"), help="override the problem's method")
    s.add_argument("--seed", type=int, help="override the problem's RNG seed")
    s.add_argument("--out-dir", default=".", help="where best_<layer>.flp/.ptrace and trace.csv go")

    s = sub.add_parser("render", help="re-render a layer map from a saved JSON report")
    s.add_argument("--report", required=True, help="report.json written by solve or scenario")
    s.add_argument("--layer", type=int, required=True, help="layer index, 0 = bottom")
    s.add_argument("--out", required=True, help="output .ppm path")
    s.add_argument("--t-min", type=float, help="lower end of the color range (default: map minimum)")
    s.add_argument("--t-max", type=float, help="upper end of the color range (default: map maximum)")
    return p


def _write_outputs(report, report_path, map_dir):
    if report_path:
        fmt = "csv" if report_path.lower().endswith(".csv") else "json"
        Path(report_path).write_text(formats.write_report(report, fmt))
    if map_dir:
        d = Path(map_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(report.layer_maps):
            (d / f"layer{i}.ppm").write_bytes(formats.render_ppm(m))


def _summary(report) -> str:
    lines = [f"grid {report.grid}  solver {report.solver['method']} "
             f"{report.solver['iterations']} it, residual {report.solver['residual']:.3e}"]
    pk, lo = report.peak, report.lowest
    lines.append(f"peak   {pk.value:.2f} K at {pk.layer} ({pk.x * 1e3:.3f}, {pk.y * 1e3:.3f}) mm")
    lines.append(f"lowest {lo.value:.2f} K at {lo.layer} ({lo.x * 1e3:.3f}, {lo.y * 1e3:.3f}) mm")
    for ls in report.layers:
        proc = "" if ls.proc_max is None else f"  processors max {ls.proc_max:.2f}"
        lines.append(f"  {ls.name:<10} min {ls.min:.2f}  max {ls.max:.2f}  avg {ls.avg:.2f}{proc}")
    for b in report.blocks:
        lines.append(f"  {b.layer}/{b.name:<12} min {b.min:.2f}  max {b.max:.2f}  avg {b.avg:.2f}")
    if report.references:
        lines.append("published values:")
        for r in report.references:
            comp = "n/a" if r.computed is None else f"{r.computed:.2f}"
            delta = "" if r.delta is None else f"  delta {r.delta:+.2f}"
            flag = "" if r.compare else "  (not compared: " + r.note + ")"
            lines.append(f"  {r.observable:<18} published {r.published:.2f}  computed {comp}{delta}  [{r.source}]{flag}")
    return "\n".join(lines)


def cmd_validate(args) -> int:
    stack, _ = formats.load_stack_config(args.stack, check=False)
    bad = 0
    for layer in stack.layers:
        for v in validate_floorplan(layer.floorplan):
            print(f"{layer.name}: {v}")
            bad += 1
    if bad:
        print(f"{bad} violation(s)")
        return EXIT_INPUT
    print("ok")
    return 0


def cmd_solve(args) -> int:
    stack, cfg_grid = formats.load_stack_config(args.stack)
    grid = args.grid or cfg_grid
    sol = solve_stack(ensure_filled(stack), grid, args.rel_tol, args.max_iter)
    report = build_report(sol.field, sol.mesh, scenario=None)
    _write_outputs(report, args.report, args.map_dir)
    print(_summary(report))
    return 0


def cmd_scenario(args) -> int:
    report = run_scenario(args.id, args.grid)
    _write_outputs(report, args.report, args.map_dir)
    print(f"scenario {args.id}")
    print(_summary(report))
    return 0


def cmd_tables(args) -> int:
    tables = comparison_tables(args.grid)
    sys.stdout.write(tables.to_text())
    if args.json:
        Path(args.json).write_text(tables.to_json())
    return 0


def cmd_optimize(args) -> int:
    from .placement import (
        floorplans_for, load_problem, optimize_anneal, optimize_exhaustive, start_placement,
    )

    cfg = load_problem(args.problem)
    problem = cfg.problem
    method = args.method or cfg.method
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if method == "exhaustive":
        result = optimize_exhaustive(problem)
        lines = ["index,objective_K," + ",".join(f"{b.name}_layer,{b.name}_x_m,{b.name}_y_m" for b in problem.blocks)]
        for i, (pl, obj) in enumerate(result.evaluated):
            cells = ",".join(f"{s.layer},{s.x:.17g},{s.y:.17g}" for s in pl)
            lines.append(f"{i},{obj:.9f},{cells}")
        (out / "trace.csv").write_text("\n".join(lines) + "\n")
    else:
        result = optimize_anneal(problem, seed, cfg.schedule, start=start_placement(problem))
        (out / "trace.csv").write_text(result.trace.to_csv())
    powers = {b.name: b.power for b in problem.blocks}
    for li, fp in floorplans_for(problem, result.best).items():
        name = problem.stack.layers[li].name
        (out / f"best_{name}.flp").write_text(formats.write_floorplan(fp))
        (out / f"best_{name}.ptrace").write_text(formats.write_power({b.name: powers[b.name] for b in fp.blocks}))
    print(f"method {method}" + (f" seed {seed}" if method == "anneal" else ""))
    print(f"best peak {result.objective:.4f} K (objective grid {result.coarse_objective:.4f} K)")
    for b, s in zip(problem.blocks, result.best):
        print(f"  {b.name:<12} layer {s.layer}  x {s.x * 1e3:.3f} mm  y {s.y * 1e3:.3f} mm")
    return 0


def cmd_render(args) -> int:
    try:
        data = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise formats.FormatError(f"cannot read report {args.report}: {exc}") from exc
    try:
        layers = data["field"]["layers"]
        nx, ny = data["grid"]["nx"], data["grid"]["ny"]
    except (KeyError, TypeError) as exc:
        raise formats.FormatError(f"report {args.report} has no field dump") from exc
    if not 0 <= args.layer < len(layers):
        raise formats.FormatError(f"layer {args.layer} not in report (has {len(layers)})")
    m = np.asarray(layers[args.layer], dtype=float).reshape(ny, nx)
    Path(args.out).write_bytes(formats.render_ppm(m, args.t_min, args.t_max))
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "scenario": cmd_scenario,
    "tables": cmd_tables,
    "optimize": cmd_optimize,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (NonConvergence, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (formats.FormatError, FloorplanError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
