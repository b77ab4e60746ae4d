"""Declarative experiment files.

A scenario is a YAML mapping with a fixed set of keys; anything unknown is
rejected and every violation is reported at once.  Example::

    family: harmonic_oscillator_2in
    params: {range: [-1, 1], count: 21}
    horizon: 1.0
    grid: {steps: 1000}
    solver: {kind: feasible, max_iterations: 100000, initial: [1, 1]}
    boundary: {kind: identical, initial: [1, 0], target: [0, 1]}
    output: {dir: results/example1}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ScenarioError

FAMILIES = ("harmonic_oscillator_2in", "harmonic_oscillator_1in", "bloch", "custom_tabulated")
SOLVERS = (
    "feasible",
    "min_energy",
    "constrained_ball",
    "constrained_box",
    "dykstra",
    "spectral",
    "bilinear",
    "reachability",
)
SHAPES = ("star", "maple")
DIMENSIONS = {"harmonic_oscillator_2in": (2, 2), "harmonic_oscillator_1in": (2, 1), "bloch": (3, 2)}

KEYS = {
    None: {"name", "family", "params", "horizon", "grid", "solver", "constraint", "boundary", "basis", "outer", "output", "tables"},
    "params": {"range", "count"},
    "grid": {"steps"},
    "solver": {
        "kind", "max_iterations", "weights", "initial", "residual_tol", "reach_tol",
        "checkpoints", "trace_every", "method", "stall_window",
    },
    "constraint": {"kind", "bound", "per_channel"},
    "boundary": {"kind", "initial", "target"},
    "basis": {"order"},
    "outer": {"max_outer", "tol", "damping", "warm_start", "inner_iterations", "initial"},
    "output": {"dir", "trajectory"},
    "tables": {"input", "drift"},
}


@dataclass
class SolverSection:
    kind: str = "feasible"
    max_iterations: int = 100_000
    weights: list[float] | None = None
    initial: list[float] | None = None
    residual_tol: float = 1e-6
    reach_tol: float = 1e-3
    checkpoints: list[int] = field(default_factory=list)
    trace_every: int = 1
    method: str = "iterative"
    stall_window: int = 100


@dataclass
class ConstraintSection:
    kind: str
    bounds: list[float]
    per_channel: bool = True


@dataclass
class BoundarySection:
    kind: str
    initial: Any
    target: Any


@dataclass
class OuterSection:
    max_outer: int = 300
    tol: float = 5e-2
    damping: float = 1.0
    warm_start: bool = True
    inner_iterations: int = 1000
    initial: list[float] | None = None


@dataclass
class Scenario:
    name: str
    family: str
    param_range: tuple[float, float]
    count: int
    horizon: float
    steps: int
    solver: SolverSection
    boundary: BoundarySection
    constraint: ConstraintSection | None = None
    basis_order: int | None = None
    outer: OuterSection = field(default_factory=OuterSection)
    output_dir: Path = Path("results")
    write_trajectory: bool = False
    tables: dict[str, Path] = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def is_sweep(self) -> bool:
        return self.constraint is not None and len(self.constraint.bounds) > 1


# ------------------------------------------------------------ validation


class _Checker:
    def __init__(self):
        self.problems: list[str] = []

    def fail(self, key: str, msg: str):
        self.problems.append(f"{key}: {msg}")

    def number(self, data: dict, key: str, label: str, default=None, positive=False, integer=False, minimum=None):
        if key not in data:
            if default is None:
                self.fail(label, "missing")
            return default
        val = data[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            self.fail(label, f"expected a finite number, got {val!r}")
            return default
        if integer and int(val) != val:
            self.fail(label, f"expected an integer, got {val!r}")
            return default
        if positive and val <= 0:
            self.fail(label, f"must be positive, got {val!r}")
            return default
        if minimum is not None and val < minimum:
            self.fail(label, f"must be at least {minimum}, got {val!r}")
            return default
        return int(val) if integer else float(val)

    def vector(self, val, label: str, length: int | None = None):
        if not isinstance(val, (list, tuple)) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in val
        ):
            self.fail(label, f"expected a list of finite numbers, got {val!r}")
            return None
        if length is not None and len(val) != length:
            self.fail(label, f"expected {length} entries, got {len(val)}")
            return None
        return [float(v) for v in val]

    def choice(self, data: dict, key: str, label: str, options, default=None):
        val = data.get(key, default)
        if val is None:
            self.fail(label, "missing")
        elif val not in options:
            self.fail(label, f"must be one of {', '.join(options)}, got {val!r}")
            return default
        return val

    def flag(self, data: dict, key: str, label: str, default: bool):
        val = data.get(key, default)
        if not isinstance(val, bool):
            self.fail(label, f"expected true or false, got {val!r}")
            return default
        return val

    def section(self, data: dict, key: str) -> dict:
        val = data.get(key, {})
        if val is None:
            return {}
        if not isinstance(val, dict):
            self.fail(key, "expected a mapping")
            return {}
        unknown = sorted(set(val) - KEYS[key])
        for u in unknown:
            self.fail(f"{key}.{u}", "unknown key")
        return val


def _load_yaml(text: str, origin: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"{origin}: parse error{where}: {problem}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{origin}: top level must be a mapping")
    return data


def parse_scenario_text(text: str, origin: str = "<scenario>", base_dir: Path = Path(".")) -> Scenario:
    data = _load_yaml(text, origin)
    ck = _Checker()
    for u in sorted(set(data) - KEYS[None]):
        ck.fail(u, "unknown key")

    family = ck.choice(data, "family", "family", FAMILIES)
    params = ck.section(data, "params")
    lo_hi = params.get("range")
    rng = ck.vector(lo_hi, "params.range", 2) if lo_hi is not None else ck.fail("params.range", "missing")
    if rng is not None and not rng[0] < rng[1]:
        ck.fail("params.range", f"need lo < hi, got {rng}")
    count = ck.number(params, "count", "N (params.count)", integer=True, minimum=1)
    horizon = ck.number(data, "horizon", "horizon", positive=True)
    steps = ck.number(ck.section(data, "grid"), "steps", "grid.steps", integer=True, minimum=2)

    sv = ck.section(data, "solver")
    solver = SolverSection()
    solver.kind = ck.choice(sv, "kind", "solver.kind", SOLVERS)
    solver.max_iterations = ck.number(sv, "max_iterations", "solver.max_iterations", 100_000, integer=True, minimum=0)
    if sv.get("weights") is not None:
        solver.weights = ck.vector(sv["weights"], "solver.weights")
        if solver.weights and (min(solver.weights) <= 0 or abs(sum(solver.weights) - 1) > 1e-12):
            ck.fail("solver.weights", "weights must be positive and sum to 1")
    if sv.get("initial") is not None:
        solver.initial = ck.vector(sv["initial"], "solver.initial")
    solver.residual_tol = ck.number(sv, "residual_tol", "solver.residual_tol", 1e-6, positive=True)
    solver.reach_tol = ck.number(sv, "reach_tol", "solver.reach_tol", 1e-3, positive=True)
    if sv.get("checkpoints") is not None:
        cps = sv["checkpoints"]
        if not isinstance(cps, list) or not all(isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in cps):
            ck.fail("solver.checkpoints", f"expected a list of non-negative integers, got {cps!r}")
        else:
            solver.checkpoints = sorted(cps)
    solver.trace_every = ck.number(sv, "trace_every", "solver.trace_every", 1, integer=True, minimum=1)
    solver.stall_window = ck.number(sv, "stall_window", "solver.stall_window", 100, integer=True, minimum=1)
    solver.method = ck.choice(sv, "method", "solver.method", ("iterative", "spectral"), "iterative")

    constraint = None
    if data.get("constraint") is not None:
        cs = ck.section(data, "constraint")
        kind = ck.choice(cs, "kind", "constraint.kind", ("ball", "box"))
        raw = cs.get("bound")
        bounds = [raw] if isinstance(raw, (int, float)) and not isinstance(raw, bool) else raw
        if raw is None:
            ck.fail("constraint.bound", "missing")
            bounds = None
        else:
            bounds = ck.vector(bounds, "constraint.bound")
            if bounds is not None and (not bounds or min(bounds) <= 0):
                ck.fail("constraint.bound", "bounds must be positive")
        constraint = ConstraintSection(kind, bounds or [], ck.flag(cs, "per_channel", "constraint.per_channel", True))

    bd = ck.section(data, "boundary")
    boundary = BoundarySection(
        ck.choice(bd, "kind", "boundary.kind", ("identical", "shapes", "table"), "identical"),
        bd.get("initial"),
        bd.get("target"),
    )

    basis_order = None
    if data.get("basis") is not None:
        basis_order = ck.number(ck.section(data, "basis"), "order", "basis.order", integer=True, minimum=1)

    outer = OuterSection()
    if data.get("outer") is not None:
        os_ = ck.section(data, "outer")
        outer.max_outer = ck.number(os_, "max_outer", "outer.max_outer", 300, integer=True, minimum=0)
        outer.tol = ck.number(os_, "tol", "outer.tol", 5e-2, positive=True)
        outer.damping = ck.number(os_, "damping", "outer.damping", 1.0, positive=True)
        if outer.damping > 1:
            ck.fail("outer.damping", "must lie in (0, 1]")
        outer.warm_start = ck.flag(os_, "warm_start", "outer.warm_start", True)
        outer.inner_iterations = ck.number(os_, "inner_iterations", "outer.inner_iterations", 1000, integer=True, minimum=1)
        if os_.get("initial") is not None:
            outer.initial = ck.vector(os_["initial"], "outer.initial")

    out = ck.section(data, "output")
    output_dir = out.get("dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        ck.fail("output.dir", "expected a directory path")
        output_dir = "results"
    write_trajectory = ck.flag(out, "trajectory", "output.trajectory", solver.kind == "bilinear")

    tables = {}
    if data.get("tables") is not None:
        for key, val in ck.section(data, "tables").items():
            if not isinstance(val, str):
                ck.fail(f"tables.{key}", "expected a file path")
                continue
            path = (base_dir / val).resolve()
            if not path.is_file():
                ck.fail(f"tables.{key}", f"file not found: {val}")
            tables[key] = path

    name = data.get("name", Path(origin).stem)
    if not isinstance(name, str):
        ck.fail("name", "expected a string")
        name = Path(origin).stem

    # cross-field consistency
    if family and solver.kind:
        if (solver.kind == "bilinear") != (family == "bloch"):
            ck.fail("solver.kind", f"solver {solver.kind!r} is incompatible with family {family!r} (bilinear needs bloch)")
    if solver.kind in ("constrained_ball", "constrained_box"):
        want = solver.kind.split("_")[1]
        if constraint is None:
            ck.fail("constraint", f"solver {solver.kind!r} needs a constraint section")
        elif constraint.kind and constraint.kind != want:
            ck.fail("constraint.kind", f"solver {solver.kind!r} needs kind {want!r}, got {constraint.kind!r}")
    elif constraint is not None and len(constraint.bounds) > 1:
        ck.fail("constraint.bound", "a list of bounds is only allowed for constrained solvers")
    needs_basis = solver.kind == "spectral" or (solver.kind == "reachability" and solver.method == "spectral")
    if needs_basis and basis_order is None:
        ck.fail("basis.order", "required by the spectral solver")
    if basis_order is not None and steps is not None and basis_order > steps:
        ck.fail("basis.order", f"order {basis_order} exceeds grid.steps {steps}")
    if family == "custom_tabulated" and "input" not in tables:
        ck.fail("tables.input", "custom_tabulated needs an input table")

    n, m = DIMENSIONS.get(family, (None, None))
    if solver.initial is not None and m is not None and len(solver.initial) != m:
        ck.fail("solver.initial", f"expected {m} entries for family {family}")
    if outer.initial is not None and m is not None and len(outer.initial) != m:
        ck.fail("outer.initial", f"expected {m} entries for family {family}")
    _check_boundary(ck, boundary, n, count, base_dir)

    if ck.problems:
        raise ScenarioError([f"{origin}: {p}" for p in ck.problems])
    return Scenario(
        name=name,
        family=family,
        param_range=(rng[0], rng[1]),
        count=count,
        horizon=horizon,
        steps=steps,
        solver=solver,
        boundary=boundary,
        constraint=constraint,
        basis_order=basis_order,
        outer=outer,
        output_dir=Path(output_dir),
        write_trajectory=write_trajectory,
        tables=tables,
        base_dir=base_dir,
    )


def _check_boundary(ck: _Checker, b: BoundarySection, n: int | None, count: int | None, base_dir: Path):
    for side in ("initial", "target"):
        val = getattr(b, side)
        label = f"boundary.{side}"
        if val is None:
            ck.fail(label, "missing")
        elif b.kind == "identical":
            ck.vector(val, label, n)
        elif b.kind == "shapes":
            if val not in SHAPES:
                ck.fail(label, f"unknown shape {val!r}; available: {', '.join(SHAPES)}")
            if n not in (None, 2):
                ck.fail(label, "shape boundaries need a planar state")
            if count not in (None, 50):
                ck.fail("N (params.count)", "shape boundaries have 50 points")
        elif b.kind == "table":
            if not isinstance(val, str) or not (base_dir / val).is_file():
                ck.fail(label, f"file not found: {val!r}")


def parse_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file ({exc.strerror})") from exc
    return parse_scenario_text(text, str(path), path.parent.resolve())


# ----------------------------------------------------------- shipped data


def load_shape(name: str) -> np.ndarray:
    """One of the shipped 50-point planar shapes, shape (50, 2)."""
    if name not in SHAPES:
        raise ScenarioError(f"unknown shape {name!r}")
    ref = resources.files("ensemble_pocs") / "data" / f"{name}.csv"
    return np.loadtxt(ref.open("r", encoding="utf-8"), delimiter=",", skiprows=1)


def shipped_examples() -> dict[str, Path]:
    root = resources.files("ensemble_pocs") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name) if p.name.endswith(".yaml")}
