"""Weighted projection solvers, Dykstra's algorithm and the spectral closed form.

Two engines run the simultaneous (Jacobi) projection iteration
``u <- sum_i lambda_i P_i u``:

* the grid engine updates the sampled control directly and accepts any
  constraint set;
* the range-space engine exploits that every affine correction lies in the
  range of the adjoints, ``u_k = u_0 + sum_i L_i^* c_i``, and iterates on the
  N*n coefficients ``c`` only.  For affine sets the two are algebraically
  identical; the coefficient form costs O((N n)^2) per step instead of a pass
  over the grid.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .ensemble_model import BoundaryPair, LinearEnsembleModel
from .errors import InvalidArgumentError, SpectrumViolationError
from .function_space import BasisSet, ControlSignal, TimeGrid, from_coordinates, norm_l2
from .projections import AffineFamily, AffineSteeringSet, ConstraintSet, check_weights

log = logging.getLogger(__name__)


class Classification(str, enum.Enum):
    CONVERGED_FEASIBLE = "converged_feasible"
    CONVERGED_INFEASIBLE = "converged_infeasible"
    DIVERGED = "diverged"
    STALLED = "stalled"
    ITERATION_CAP = "iteration_cap"

    @property
    def converged(self) -> bool:
        return self in (Classification.CONVERGED_FEASIBLE, Classification.CONVERGED_INFEASIBLE)


@dataclass
class SolverOptions:
    """Iteration controls shared by every solver.

    ``initial`` is a ControlSignal, a constant channel vector, or None (zero).
    ``weights`` defaults to uniform; with a constraint set the first weight
    belongs to it.
    """

    max_iterations: int = 100_000
    weights: Sequence[float] | None = None
    residual_tol: float = 1e-6  # relative to 1 + max |xi_i|
    stall_window: int = 100
    stall_tol: float = 1e-12
    divergence_factor: float = 1e8
    reach_tol: float = 1e-3
    initial: ControlSignal | Sequence[float] | None = None
    record_trace: bool = True
    trace_every: int = 1
    checkpoints: Sequence[int] = ()
    engine: str = "range"

    def __post_init__(self):
        if self.max_iterations < 0:
            raise InvalidArgumentError("max_iterations must be non-negative")
        if self.trace_every < 1:
            raise InvalidArgumentError("trace_every must be at least 1")
        if self.stall_window < 1:
            raise InvalidArgumentError("stall_window must be at least 1")
        if self.engine not in ("range", "grid"):
            raise InvalidArgumentError(f"unknown engine {self.engine!r}")
        if not (self.residual_tol > 0 and self.reach_tol > 0):
            raise InvalidArgumentError("tolerances must be positive")


@dataclass
class IterationTrace:
    iteration: list[int] = field(default_factory=list)
    control_norm: list[float] = field(default_factory=list)
    max_residual: list[float] = field(default_factory=list)
    step_size: list[float] = field(default_factory=list)

    def record(self, k: int, norm: float, residual: float, step: float):
        self.iteration.append(k)
        self.control_norm.append(norm)
        self.max_residual.append(residual)
        self.step_size.append(step)

    def __len__(self):
        return len(self.iteration)

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iter", "control_norm", "max_residual", "step_size"])
            for row in zip(self.iteration, self.control_norm, self.max_residual, self.step_size):
                out.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


@dataclass
class Checkpoint:
    iteration: int
    residuals: np.ndarray
    control: ControlSignal


@dataclass
class SolveReport:
    control: ControlSignal
    classification: Classification
    residuals: np.ndarray
    iterations: int
    trace: IterationTrace
    checkpoints: dict[int, Checkpoint] = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return norm_l2(self.control) ** 2

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0


# ------------------------------------------------------------------ helpers


def _initial_samples(opts: SolverOptions, grid: TimeGrid, channels: int) -> np.ndarray:
    init = opts.initial
    if init is None:
        return np.zeros((grid.n_nodes, channels))
    if isinstance(init, ControlSignal):
        if init.grid != grid or init.channels != channels:
            raise InvalidArgumentError("initial control does not match the problem grid or channels")
        return np.array(init.samples)
    return np.array(ControlSignal.constant(grid, init).samples)


def _uniform(count: int) -> np.ndarray:
    return np.full(count, 1.0 / count)


class _Monitor:
    """Convergence bookkeeping common to all iterative engines."""

    def __init__(self, opts: SolverOptions, scale: float, start_norm: float):
        self.opts = opts
        self.tol = opts.residual_tol * (1.0 + scale)
        self.bound = opts.divergence_factor * (1.0 + start_norm)
        self.trace = IterationTrace()
        self.small_steps = 0
        self.history: list[float] = []

    def verdict(self, k: int, norm: float, residual: float, step: float | None) -> Classification | None:
        if residual <= self.tol:
            return Classification.CONVERGED_FEASIBLE
        if not np.isfinite(norm) or norm > self.bound:
            return Classification.DIVERGED
        if step is None:
            return None
        self.small_steps = self.small_steps + 1 if step <= self.opts.stall_tol * max(norm, 1e-300) else 0
        if self.small_steps >= self.opts.stall_window:
            return Classification.CONVERGED_INFEASIBLE
        # residual frozen over a whole window while the iterate keeps moving
        self.history.append(residual)
        w = self.opts.stall_window
        if len(self.history) > w:
            old = self.history.pop(0)
            if abs(old - residual) <= self.opts.stall_tol * residual:
                return Classification.STALLED
        return None

    def record(self, k: int, norm: float, residual: float, step: float, force: bool = False):
        if self.opts.record_trace and (force or k % self.opts.trace_every == 0):
            self.trace.record(k, norm, residual, step)


# ------------------------------------------------------------ grid engine


def weighted_projection_step(u: ControlSignal, sets: Sequence[ConstraintSet], weights: Sequence[float]) -> ControlSignal:
    """sum_j lambda_j P_j(u), every projection taken from the same input."""
    lam = check_weights(weights, len(sets))
    acc = np.zeros_like(u.samples)
    for lj, s in zip(lam, sets):
        acc += lj * s.project(u).samples
    return ControlSignal(u.grid, acc)


def _grid_iterate(
    step_fn: Callable[[np.ndarray], np.ndarray],
    residual_fn: Callable[[np.ndarray], np.ndarray],
    u0: np.ndarray,
    grid: TimeGrid,
    opts: SolverOptions,
    scale: float,
) -> tuple[np.ndarray, Classification, int, IterationTrace, dict]:
    w = grid.weights[:, None]
    l2 = lambda x: float(np.sqrt(max(np.sum(w * x * x), 0.0)))
    u = u0
    mon = _Monitor(opts, scale, l2(u0))
    marks = set(opts.checkpoints)
    checkpoints = {}
    status = Classification.ITERATION_CAP
    k = 0
    while True:
        res = residual_fn(u)
        rmax = float(res.max())
        norm = l2(u)
        if k in marks:
            checkpoints[k] = Checkpoint(k, res, ControlSignal(grid, u))
        verdict = mon.verdict(k, norm, rmax, None)
        if verdict is not None or k >= opts.max_iterations:
            mon.record(k, norm, rmax, 0.0, force=True)
            status = verdict or status
            break
        nxt = step_fn(u)
        step = l2(nxt - u)
        mon.record(k, norm, rmax, step)
        verdict = mon.verdict(k, norm, rmax, step)
        u = nxt
        k += 1
        if verdict is not None:
            status = verdict
            mon.record(k, l2(u), float(residual_fn(u).max()), 0.0, force=True)
            break
    return u, status, k, mon.trace, checkpoints


# ----------------------------------------------------- range-space engine


def _range_iterate(
    fam: AffineFamily, lam: np.ndarray, u0: np.ndarray, opts: SolverOptions
) -> tuple[np.ndarray, Classification, int, IterationTrace, dict]:
    grid = fam.grid
    g = fam.cross_gramian()
    inv = [gf.solve(np.eye(fam.n)) for gf in fam.gramians]
    d = block_diag(*[li * wi for li, wi in zip(lam, inv)])
    lu0 = fam.apply(u0).reshape(-1)
    b = fam.targets.reshape(-1) - lu0
    u0_sq = float(np.sum(grid.weights[:, None] * u0 * u0))
    scale = float(np.linalg.norm(fam.targets, axis=1).max())
    mon = _Monitor(opts, scale, np.sqrt(u0_sq))
    marks = set(opts.checkpoints)
    checkpoints = {}
    c = np.zeros(b.size)
    gc = np.zeros(b.size)
    status = Classification.ITERATION_CAP
    size, n = fam.size, fam.n

    def control(coeffs):
        return u0 + fam.adjoint_sum(coeffs)

    k = 0
    while True:
        r = b - gc
        res = np.linalg.norm(r.reshape(size, n), axis=1)
        rmax = float(res.max())
        norm = float(np.sqrt(max(u0_sq + 2.0 * c @ lu0 + c @ gc, 0.0)))
        if k in marks:
            checkpoints[k] = Checkpoint(k, res, ControlSignal(grid, control(c)))
        verdict = mon.verdict(k, norm, rmax, None)
        if verdict is not None or k >= opts.max_iterations:
            mon.record(k, norm, rmax, 0.0, force=True)
            status = verdict or status
            break
        dc = d @ r
        gdc = g @ dc
        step = float(np.sqrt(max(dc @ gdc, 0.0)))
        mon.record(k, norm, rmax, step)
        verdict = mon.verdict(k, norm, rmax, step)
        c += dc
        gc += gdc
        k += 1
        if verdict is not None:
            status = verdict
            break
    return control(c), status, k, mon.trace, checkpoints


# ---------------------------------------------------------------- solvers


def _affine_weights(opts: SolverOptions, count: int) -> np.ndarray:
    return _uniform(count) if opts.weights is None else check_weights(opts.weights, count)


def _solve_affine(fam: AffineFamily, opts: SolverOptions, u0: np.ndarray) -> SolveReport:
    lam = _affine_weights(opts, fam.size)
    if opts.engine == "range":
        u, status, k, trace, cps = _range_iterate(fam, lam, u0, opts)
    else:
        d = [li * gf.solve(np.eye(fam.n)) for li, gf in zip(lam, fam.gramians)]

        def step(x):
            r = fam.targets - fam.apply(x)
            return x + fam.adjoint_sum(np.einsum("iab,ib->ia", np.array(d), r))

        scale = float(np.linalg.norm(fam.targets, axis=1).max())
        u, status, k, trace, cps = _grid_iterate(step, fam.residuals, u0, fam.grid, opts, scale)
    return SolveReport(ControlSignal(fam.grid, u), status, fam.residuals(u), k, trace, cps)


def solve_feasible(
    model: LinearEnsembleModel, boundary: BoundaryPair, grid: TimeGrid, opts: SolverOptions | None = None
) -> SolveReport:
    """Weighted projections onto the steering sets from ``opts.initial``."""
    opts = opts or SolverOptions()
    fam = AffineFamily.from_model(model, boundary, grid)
    return _solve_affine(fam, opts, _initial_samples(opts, grid, model.m))


def solve_min_energy(
    model: LinearEnsembleModel, boundary: BoundaryPair, grid: TimeGrid, opts: SolverOptions | None = None
) -> SolveReport:
    """Weighted projections started from zero; the limit is the minimum-norm ensemble control."""
    opts = opts or SolverOptions()
    fam = AffineFamily.from_model(model, boundary, grid)
    return _solve_affine(fam, opts, np.zeros((grid.n_nodes, model.m)))


def solve_constrained(
    model: LinearEnsembleModel,
    boundary: BoundaryPair,
    grid: TimeGrid,
    constraint: ConstraintSet,
    opts: SolverOptions | None = None,
) -> SolveReport:
    """Weighted projections onto the steering sets and one constraint set G.

    Classification is judged on the terminal residuals.  The returned control
    is projected onto G once more so the constraint holds exactly.
    """
    opts = opts or SolverOptions()
    fam = AffineFamily.from_model(model, boundary, grid)
    lam = _uniform(fam.size + 1) if opts.weights is None else check_weights(opts.weights, fam.size + 1)
    lam0, lam_sets = lam[0], lam[1:]
    d = np.stack([li * gf.solve(np.eye(fam.n)) for li, gf in zip(lam_sets, fam.gramians)])
    project_g = lambda x: constraint.project(ControlSignal(grid, x)).samples

    def step(x):
        r = fam.targets - fam.apply(x)
        return lam0 * project_g(x) + (1.0 - lam0) * x + fam.adjoint_sum(np.einsum("iab,ib->ia", d, r))

    scale = float(np.linalg.norm(fam.targets, axis=1).max())
    u0 = _initial_samples(opts, grid, model.m)
    u, status, k, trace, cps = _grid_iterate(step, fam.residuals, u0, grid, opts, scale)
    final = project_g(u)
    res = fam.residuals(final)
    if status is Classification.CONVERGED_FEASIBLE and res.max() > opts.residual_tol * (1.0 + scale):
        status = Classification.CONVERGED_INFEASIBLE
    return SolveReport(ControlSignal(grid, final), status, res, k, trace, cps)


def solve_dykstra(
    sets: Sequence[ConstraintSet],
    u0: ControlSignal,
    opts: SolverOptions | None = None,
    tol: float = 1e-13,
) -> SolveReport:
    """Cyclic projections with Dykstra's offsets.

    Offsets are kept at zero when every set is affine, where plain cyclic
    projection already converges to the nearest point of the intersection.
    A cycle counts as one iteration; the loop stops once a full cycle moves
    the iterate by less than ``tol * (1 + |u|)``.
    """
    opts = opts or SolverOptions()
    if not sets:
        raise InvalidArgumentError("Dykstra needs at least one set")
    all_affine = all(isinstance(s, AffineSteeringSet) for s in sets)
    offsets = [np.zeros_like(u0.samples) for _ in sets]
    grid = u0.grid
    u = np.array(u0.samples)
    trace = IterationTrace()
    affine = [s for s in sets if isinstance(s, AffineSteeringSet)]

    def residuals(x):
        sig = ControlSignal(grid, x)
        return np.array([s.residual(sig) for s in affine]) if affine else np.zeros(0)

    status = Classification.ITERATION_CAP
    k = 0
    for k in range(1, max(opts.max_iterations, 1) + 1):
        start = u
        for j, s in enumerate(sets):
            shifted = u + offsets[j]
            nxt = s.project(ControlSignal(grid, shifted)).samples
            if not all_affine:
                offsets[j] = shifted - nxt
            u = nxt
        diff = u - start
        step = float(np.sqrt(grid.weights @ np.sum(diff * diff, axis=1)))
        norm = float(np.sqrt(grid.weights @ np.sum(u * u, axis=1)))
        if opts.record_trace and (k % opts.trace_every == 0):
            res = residuals(u)
            trace.record(k, norm, float(res.max()) if res.size else 0.0, step)
        if step <= tol * (1.0 + norm) or len(sets) == 1:
            feasible = all(s.contains(ControlSignal(grid, u), 1e-6) for s in sets)
            status = Classification.CONVERGED_FEASIBLE if feasible else Classification.CONVERGED_INFEASIBLE
            break
    return SolveReport(ControlSignal(grid, u), status, residuals(u), k, trace)


# --------------------------------------------------------------- spectral


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Coordinates of Q = sum lambda_i L_i^* W_i^{-1} L_i on a finite basis.

    ``matrix`` is W, ``pinv`` its pseudo-inverse, ``limit`` the projector W_inf
    onto the unit eigenspace of I - W, and ``delta`` the coordinates of
    sum lambda_i L_i^* W_i^{-1} xi_i.
    """

    basis: BasisSet
    family: AffineFamily
    weights: np.ndarray
    matrix: np.ndarray
    pinv: np.ndarray
    limit: np.ndarray
    delta: np.ndarray
    spectrum: np.ndarray  # eigenvalues of I - W, ascending

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


PINV_RCOND = 1e-12
UNIT_EIGEN_TOL = 1e-8
SPECTRUM_SLACK = 1e-6


def build_spectral(
    model: LinearEnsembleModel,
    boundary: BoundaryPair,
    basis: BasisSet,
    weights: Sequence[float] | None = None,
    unit_tol: float = UNIT_EIGEN_TOL,
) -> SpectralOperator:
    grid = basis.grid
    fam = AffineFamily.from_model(model, boundary, grid)
    lam = _uniform(fam.size) if weights is None else check_weights(weights, fam.size)
    # coordinates of L_i applied to each basis element: rows (i, a), columns (c, j)
    m_mat = np.einsum("k,ikac,jk->iacj", grid.weights, fam.kernels, basis.functions)
    m_mat = m_mat.reshape(fam.size * fam.n, fam.m * basis.order)
    d = block_diag(*[li * gf.solve(np.eye(fam.n)) for li, gf in zip(lam, fam.gramians)])
    w = m_mat.T @ d @ m_mat
    w = 0.5 * (w + w.T)
    delta = m_mat.T @ (d @ fam.targets.reshape(-1))
    pinv = np.linalg.pinv(w, rcond=PINV_RCOND, hermitian=True)
    try:
        eigval, eigvec = np.linalg.eigh(np.eye(w.shape[0]) - w)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigendecomposition of I - W failed: {exc}") from exc
    if eigval[0] < -SPECTRUM_SLACK or eigval[-1] > 1.0 + SPECTRUM_SLACK:
        raise SpectrumViolationError(
            f"spectrum of I - W spans [{eigval[0]:.3e}, {eigval[-1]:.3e}], outside [0, 1]"
        )
    keep = np.abs(eigval - 1.0) <= unit_tol
    limit = (eigvec[:, keep]) @ eigvec[:, keep].T
    return SpectralOperator(basis, fam, lam, w, pinv, limit, delta, eigval)


def solve_spectral(op: SpectralOperator, mu0: np.ndarray | None = None) -> ControlSignal:
    """mu* = W_inf (mu0 - W^+ delta) + W^+ delta, mapped back to the grid."""
    if mu0 is None:
        mu0 = np.zeros(op.dimension)
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != (op.dimension,):
        raise InvalidArgumentError(f"initial coordinates must have length {op.dimension}")
    particular = op.pinv @ op.delta
    return from_coordinates(op.limit @ (mu0 - particular) + particular, op.basis)


def spectral_report(op: SpectralOperator, mu0: np.ndarray | None = None, feasibility_tol: float = 1e-3) -> SolveReport:
    """Closed-form limit packaged as a converged solve.

    The limit is exact only up to basis truncation, so feasibility is judged
    against the absolute ``feasibility_tol`` (the reachability tolerance).
    """
    u = solve_spectral(op, mu0)
    fam = op.family
    res = fam.residuals(u.samples)
    ok = res.max() <= feasibility_tol
    status = Classification.CONVERGED_FEASIBLE if ok else Classification.CONVERGED_INFEASIBLE
    trace = IterationTrace()
    trace.record(0, norm_l2(u), float(res.max()), 0.0)
    return SolveReport(u, status, res, 0, trace)


# ------------------------------------------------------------ reachability


class Verdict(str, enum.Enum):
    REACHABLE = "reachable"
    NOT_REACHABLE = "not_reachable"
    INCONCLUSIVE = "inconclusive"


@dataclass
class ReachabilityResult:
    verdict: Verdict
    report: SolveReport
    method: str

    @property
    def residuals(self) -> np.ndarray:
        return self.report.residuals

    @property
    def witness(self) -> ControlSignal | None:
        return self.report.control if self.verdict is Verdict.REACHABLE else None


def classify_reachability(report: SolveReport, reach_tol: float) -> Verdict:
    status = report.classification
    if status.converged:
        return Verdict.REACHABLE if report.max_residual <= reach_tol else Verdict.NOT_REACHABLE
    if status in (Classification.DIVERGED, Classification.STALLED):
        return Verdict.NOT_REACHABLE
    return Verdict.INCONCLUSIVE


def assess_reachability(
    model: LinearEnsembleModel,
    boundary: BoundaryPair,
    grid: TimeGrid,
    opts: SolverOptions | None = None,
    method: str = "iterative",
    basis: BasisSet | None = None,
) -> ReachabilityResult:
    """Numerical evidence on whether the sampled ensemble transfer is achievable.

    The spectral route treats the closed-form limit as a converged iterate.
    """
    opts = opts or SolverOptions()
    if method == "iterative":
        report = solve_feasible(model, boundary, grid, opts)
    elif method == "spectral":
        if basis is None:
            raise InvalidArgumentError("spectral reachability needs a basis")
        report = spectral_report(build_spectral(model, boundary, basis, opts.weights), feasibility_tol=opts.reach_tol)
    else:
        raise InvalidArgumentError(f"unknown reachability method {method!r}")
    return ReachabilityResult(classify_reachability(report, opts.reach_tol), report, method)
