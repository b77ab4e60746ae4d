"""Command-line front end: ``ensemble-pocs run|validate|list-examples|plotdata``.

Exit codes: 0 when the solver finished, 2 when the outcome is evidence that
the transfer is not achievable (converged to an infeasible point, diverged,
stalled, or a not_reachable verdict), 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bilinear import BilinearReport, OuterOptions, bloch_ensemble, solve_bilinear
from .ensemble_model import (
    BoundaryPair,
    LinearEnsembleModel,
    harmonic_oscillators,
    sample_parameters,
    simulate_linear,
    tabulated,
)
from .errors import MissingArtifactError, ScenarioError
from .function_space import ControlSignal, TimeGrid, legendre_basis, norm_l2
from .projections import AffineFamily, AmplitudeBox, EnergyBall
from .scenario import Scenario, load_shape, parse_scenario, shipped_examples
from .solvers import (
    Classification,
    SolveReport,
    SolverOptions,
    Verdict,
    assess_reachability,
    build_spectral,
    solve_constrained,
    solve_dykstra,
    solve_feasible,
    solve_min_energy,
    spectral_report,
)

log = logging.getLogger("ensemble_pocs")

INFEASIBLE = {Classification.CONVERGED_INFEASIBLE, Classification.DIVERGED, Classification.STALLED}


@dataclass
class RunArtifacts:
    directory: Path
    summary: dict
    files: dict[str, Path] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return int(self.summary["exit_code"])


# ------------------------------------------------------------- building


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([v if isinstance(v, (int, str)) else _fmt(v) for v in row])
    return path


def build_model(s: Scenario, grid: TimeGrid):
    params = sample_parameters(s.param_range[0], s.param_range[1], s.count)
    if s.family == "harmonic_oscillator_2in":
        return harmonic_oscillators(params, s.horizon, inputs=2)
    if s.family == "harmonic_oscillator_1in":
        return harmonic_oscillators(params, s.horizon, inputs=1)
    if s.family == "bloch":
        return bloch_ensemble(params, s.horizon)
    input_table = np.load(s.tables["input"])
    drift_table = np.load(s.tables["drift"]) if "drift" in s.tables else None
    return tabulated(params, grid, input_table, drift_table=drift_table)


def build_boundary(s: Scenario, n: int) -> BoundaryPair:
    b = s.boundary
    if b.kind == "identical":
        return BoundaryPair.identical(b.initial, b.target, s.count)
    if b.kind == "shapes":
        return BoundaryPair(load_shape(b.initial), load_shape(b.target))
    load = lambda name: np.atleast_2d(np.loadtxt(s.base_dir / name, delimiter=",", skiprows=1))
    pair = BoundaryPair(load(b.initial), load(b.target))
    pair.check(n=n, size=s.count)
    return pair


def solver_options(s: Scenario) -> SolverOptions:
    sv = s.solver
    return SolverOptions(
        max_iterations=sv.max_iterations,
        weights=sv.weights,
        residual_tol=sv.residual_tol,
        reach_tol=sv.reach_tol,
        initial=sv.initial,
        trace_every=sv.trace_every,
        checkpoints=tuple(sv.checkpoints),
        stall_window=sv.stall_window,
    )


# -------------------------------------------------------------- running


def _write_control(path: Path, u: ControlSignal) -> Path:
    header = ["t"] + [f"u{j + 1}" for j in range(u.channels)]
    return _write_csv(path, header, ([t, *row] for t, row in zip(u.grid.nodes, u.samples)))


def _write_errors(path: Path, params, steering, simulated) -> Path:
    rows = ([i, p, e, s] for i, (p, e, s) in enumerate(zip(params, steering, simulated)))
    return _write_csv(path, ["index", "param", "steering_error", "simulated_error"], rows)


def _write_states(path: Path, params, states) -> Path:
    header = ["index", "param"] + [f"x{j + 1}" for j in range(states.shape[1])]
    return _write_csv(path, header, ([i, p, *x] for i, (p, x) in enumerate(zip(params, states))))


def _write_trajectory(path: Path, params, grid: TimeGrid, states) -> Path:
    header = ["index", "param", "t"] + [f"x{j + 1}" for j in range(states.shape[2])]
    rows = ([i, p, t, *x] for i, p in enumerate(params) for t, x in zip(grid.nodes, states[i]))
    return _write_csv(path, header, rows)


def _linear_outcome(model: LinearEnsembleModel, boundary: BoundaryPair, report: SolveReport, out: Path, s: Scenario) -> dict:
    files = {}
    u = report.control
    traj = simulate_linear(model, u, boundary.initial)
    simulated = np.linalg.norm(traj.terminal - boundary.target, axis=1)
    files["control"] = _write_control(out / "control.csv", u)
    files["terminal_errors"] = _write_errors(out / "terminal_errors.csv", model.params, report.residuals, simulated)
    files["final_states"] = _write_states(out / "final_states.csv", model.params, traj.terminal)
    files["initial_states"] = _write_states(out / "initial_states.csv", model.params, boundary.initial)
    if report.trace is not None:
        report.trace.write_csv(out / "trace.csv")
        files["trace"] = out / "trace.csv"
    for k, cp in sorted(report.checkpoints.items()):
        cp_sim = np.linalg.norm(simulate_linear(model, cp.control, boundary.initial).terminal - boundary.target, axis=1)
        files[f"checkpoint_{k}"] = _write_errors(out / f"terminal_errors_iter{k}.csv", model.params, cp.residuals, cp_sim)
    if s.write_trajectory:
        files["trajectory"] = _write_trajectory(out / "trajectory.csv", model.params, u.grid, traj.states)
    return {
        "classification": report.classification.value,
        "iterations": report.iterations,
        "max_terminal_error": float(report.residuals.max()),
        "rms_terminal_error": float(np.sqrt(np.mean(report.residuals**2))),
        "max_simulated_error": float(simulated.max()),
        "energy": report.energy,
        "checkpoints": {str(k): float(cp.residuals.max()) for k, cp in sorted(report.checkpoints.items())},
        "files": {k: v.name for k, v in files.items()},
    }


def _run_linear(s: Scenario, grid: TimeGrid, out: Path) -> dict:
    model = build_model(s, grid)
    boundary = build_boundary(s, model.n)
    opts = solver_options(s)
    kind = s.solver.kind
    summary: dict = {}
    if kind in ("constrained_ball", "constrained_box"):
        sweep = []
        for bound in s.constraint.bounds:
            g = EnergyBall(bound, s.constraint.per_channel) if s.constraint.kind == "ball" else AmplitudeBox(bound)
            report = solve_constrained(model, boundary, grid, g, opts)
            sub = out / f"bound_{bound:g}" if s.is_sweep else out
            res = _linear_outcome(model, boundary, report, sub, s)
            res["bound"] = bound
            res["constraint_satisfied"] = bool(g.contains(report.control, 1e-12))
            sweep.append(res)
        if s.is_sweep:
            rows = ([r["bound"], r["max_terminal_error"], r["rms_terminal_error"]] for r in sweep)
            _write_csv(out / "sweep.csv", ["bound", "max_terminal_error", "rms_terminal_error"], rows)
            worst = max(sweep, key=lambda r: r["max_terminal_error"])
            summary.update(
                sweep=sweep,
                classification=worst["classification"],
                max_terminal_error=worst["max_terminal_error"],
                exit_code=2 if any(Classification(r["classification"]) in INFEASIBLE for r in sweep) else 0,
            )
            return summary
        summary.update(sweep[0])
    else:
        if kind == "feasible":
            report = solve_feasible(model, boundary, grid, opts)
        elif kind == "min_energy":
            report = solve_min_energy(model, boundary, grid, opts)
        elif kind == "spectral":
            op = build_spectral(model, boundary, legendre_basis(s.basis_order, grid), s.solver.weights)
            report = spectral_report(op, feasibility_tol=s.solver.reach_tol)
            summary["unit_eigenvalues"] = int(np.sum(np.abs(op.spectrum - 1.0) <= 1e-8))
        elif kind == "dykstra":
            fam = AffineFamily.from_model(model, boundary, grid)
            sets = list(fam.sets())
            if s.constraint is not None:
                bound = s.constraint.bounds[0]
                sets.append(EnergyBall(bound, s.constraint.per_channel) if s.constraint.kind == "ball" else AmplitudeBox(bound))
            u0 = ControlSignal.zeros(grid, model.m) if s.solver.initial is None else ControlSignal.constant(grid, s.solver.initial)
            report = solve_dykstra(sets, u0, opts)
        else:  # reachability
            basis = legendre_basis(s.basis_order, grid) if s.solver.method == "spectral" else None
            result = assess_reachability(model, boundary, grid, opts, s.solver.method, basis)
            report = result.report
            summary["verdict"] = result.verdict.value
        summary.update(_linear_outcome(model, boundary, report, out, s))
    bad = Classification(summary["classification"]) in INFEASIBLE or summary.get("verdict") == Verdict.NOT_REACHABLE.value
    summary["exit_code"] = 2 if bad else 0
    return summary


def _run_bilinear(s: Scenario, grid: TimeGrid, out: Path) -> dict:
    model = bloch_ensemble(sample_parameters(s.param_range[0], s.param_range[1], s.count), s.horizon)
    b = s.boundary
    if b.kind != "identical":
        raise ScenarioError("bilinear scenarios take identical boundary states")
    o = s.outer
    outer = OuterOptions(o.max_outer, o.tol, o.damping, o.warm_start, o.inner_iterations, o.initial)
    report: BilinearReport = solve_bilinear(model, b.initial, b.target, grid, solver_options(s), outer)
    target = np.tile(np.asarray(b.target, dtype=float), (model.size, 1))
    errors = report.terminal_errors(target)
    files = {
        "control": _write_control(out / "control.csv", report.control),
        "terminal_errors": _write_errors(out / "terminal_errors.csv", model.params, errors, errors),
        "final_states": _write_states(out / "final_states.csv", model.params, report.trajectory.terminal),
    }
    report.write_csv(out / "trace.csv")
    files["trace"] = out / "trace.csv"
    if s.write_trajectory:
        files["trajectory"] = _write_trajectory(out / "trajectory.csv", model.params, grid, report.trajectory.states)
    return {
        "converged": report.converged,
        "diverged": report.diverged,
        "outer_iterations": report.outer_iterations,
        "max_terminal_error": report.final_error,
        "energy": report.energies[-1],
        "max_norm_drift": max(report.norm_drift),
        "files": {k: v.name for k, v in files.items()},
        "exit_code": 2 if report.diverged else 0,
    }


def run_scenario(s: Scenario, output_dir: Path | None = None) -> RunArtifacts:
    out = Path(output_dir) if output_dir is not None else s.base_dir / s.output_dir
    out.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid(s.horizon, s.steps)
    log.info("running %s (%s, %s)", s.name, s.family, s.solver.kind)
    body = _run_bilinear(s, grid, out) if s.solver.kind == "bilinear" else _run_linear(s, grid, out)
    summary = {
        "name": s.name,
        "family": s.family,
        "solver": s.solver.kind,
        "count": s.count,
        "param_range": list(s.param_range),
        "horizon": s.horizon,
        "steps": s.steps,
        "boundary": {"kind": s.boundary.kind, "initial": s.boundary.initial, "target": s.boundary.target},
        **body,
    }
    if s.constraint is not None:
        summary["constraint"] = {"kind": s.constraint.kind, "bounds": s.constraint.bounds}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files = {k: out / v for k, v in body.get("files", {}).items()}
    files["summary"] = out / "summary.json"
    return RunArtifacts(out, summary, files)


# ------------------------------------------------------------- plotdata


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise MissingArtifactError(f"missing artifact {path}")
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def emit_plotdata(directory: str | Path) -> dict[str, Path]:
    """Reshape run artifacts into one CSV per figure under ``plotdata/``."""
    directory = Path(directory)
    summary_path = directory / "summary.json"
    if not summary_path.is_file():
        raise MissingArtifactError(f"no summary.json in {directory}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    dest = directory / "plotdata"
    dest.mkdir(exist_ok=True)
    written = {}

    if "sweep" in summary:
        header, rows = _read_rows(directory / "sweep.csv")
        written["error_vs_bound"] = _write_csv(dest / "error_vs_bound.csv", header, rows)
        for entry in summary["sweep"]:
            sub = directory / f"bound_{entry['bound']:g}"
            header, rows = _read_rows(sub / "control.csv")
            written[f"control_bound_{entry['bound']:g}"] = _write_csv(dest / f"control_bound_{entry['bound']:g}.csv", header, rows)
        return written

    header, rows = _read_rows(directory / "control.csv")
    written["control_vs_t"] = _write_csv(dest / "control_vs_t.csv", header, rows)
    header, rows = _read_rows(directory / "terminal_errors.csv")
    written["terminal_error_scatter"] = _write_csv(
        dest / "terminal_error_scatter.csv", ["param", "steering_error"], ([r[1], r[2]] for r in rows)
    )
    if summary.get("boundary", {}).get("kind") == "shapes":
        for name, src in (("shape_initial", "initial_states.csv"), ("shape_final", "final_states.csv")):
            _, rows = _read_rows(directory / src)
            written[name] = _write_csv(dest / f"{name}.csv", ["x1", "x2"], ([r[2], r[3]] for r in rows))
    if summary.get("solver") == "bilinear":
        traj = directory / "trajectory.csv"
        if traj.is_file():
            shutil.copyfile(traj, dest / "bloch_trajectories.csv")
            written["bloch_trajectories"] = dest / "bloch_trajectories.csv"
    trace = directory / "trace.csv"
    if trace.is_file():
        shutil.copyfile(trace, dest / "trace.csv")
        written["trace"] = dest / "trace.csv"
    return written


# ------------------------------------------------------------------ main


def _resolve(target: str) -> Path:
    path = Path(target)
    if path.is_file():
        return path
    examples = shipped_examples()
    if target in examples:
        return examples[target]
    raise ScenarioError(f"{target}: no such scenario file or shipped example")


def _parse_ints(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("checkpoint iterations must be non-negative")
    return vals


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemble-pocs", description="Ensemble control by weighted projections.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file or shipped example")
    run.add_argument("scenario")
    run.add_argument("--output-dir", type=Path)
    run.add_argument("--checkpoint-iters", type=_parse_ints)
    run.add_argument("--trace-every", type=_positive_int)
    run.add_argument("--no-plotdata", action="store_true", help="skip writing the plotdata/ bundle")
    val = sub.add_parser("validate", help="check a scenario file without running it")
    val.add_argument("scenario")
    sub.add_parser("list-examples", help="list shipped example scenarios")
    plot = sub.add_parser("plotdata", help="rebuild the plotdata/ bundle of a finished run")
    plot.add_argument("directory", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "list-examples":
            for name, path in shipped_examples().items():
                s = parse_scenario(path)
                print(f"{name}\t{s.family}\t{s.solver.kind}\tN={s.count}")
            return 0
        if args.command == "plotdata":
            for path in emit_plotdata(args.directory).values():
                print(path)
            return 0
        path = _resolve(args.scenario)
        shipped = not Path(args.scenario).is_file()
        scenario = parse_scenario(path)
        if args.command == "validate":
            print(f"{args.scenario}: ok ({scenario.family}, {scenario.solver.kind}, N={scenario.count})")
            return 0
        if args.checkpoint_iters is not None:
            scenario.solver = replace(scenario.solver, checkpoints=sorted(args.checkpoint_iters))
        if args.trace_every is not None:
            scenario.solver = replace(scenario.solver, trace_every=args.trace_every)
        out = args.output_dir
        if out is None and shipped:
            # shipped examples write relative to the working directory
            out = Path.cwd() / scenario.output_dir
        artifacts = run_scenario(scenario, out)
        if not args.no_plotdata:
            emit_plotdata(artifacts.directory)
        summary = artifacts.summary
        status = summary.get("verdict") or summary.get("classification") or ("converged" if summary.get("converged") else "not_converged")
        print(f"{scenario.name}: {status}, max terminal error {summary['max_terminal_error']:.3e} -> {artifacts.directory}")
        return artifacts.exit_code
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit code 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
