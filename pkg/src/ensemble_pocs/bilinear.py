"""Iterative linearization for bilinear ensembles.

``dX/dt = A(beta) X + sum_j u_j B_j X`` is rewritten along a frozen trajectory
as the time-varying linear system ``dX/dt = A X + Btilde(X_k(t)) u`` with
``Btilde(X) = [B_1 X, ..., B_m X]``.  Each outer round solves that linear
ensemble with the projection solvers, then re-simulates the true bilinear
dynamics; terminal errors are always measured on the true simulation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ensemble_model import (
    Z_ROTATION,
    BoundaryPair,
    LinearEnsembleModel,
    Trajectory,
    simulate_bilinear,
    tabulated,
)
from .errors import InvalidArgumentError, ShapeError, SingularGramianError
from .function_space import ControlSignal, TimeGrid, norm_l2
from .solvers import SolverOptions, solve_feasible, solve_min_energy

log = logging.getLogger(__name__)

# rotations about the y- and x-axes driven by the two transverse fields
BLOCH_COUPLINGS = np.array(
    [
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
    ]
)


@dataclass(frozen=True, eq=False)
class BilinearEnsembleModel:
    """Samples of dX/dt = A(beta_i) X + sum_j u_j B_j X.

    ``drift_matrices`` has shape (N, n, n) and ``couplings`` (m, n, n).  When
    the drift is ``beta * generator`` the generator is kept so frozen
    linearizations can use closed-form transitions.
    """

    params: np.ndarray
    horizon: float
    drift_matrices: np.ndarray
    couplings: np.ndarray
    generator: np.ndarray | None = None
    family: str = "bilinear"

    def __post_init__(self):
        params = np.atleast_1d(np.asarray(self.params, dtype=float))
        drift = np.asarray(self.drift_matrices, dtype=float)
        coup = np.asarray(self.couplings, dtype=float)
        if drift.ndim != 3 or drift.shape[0] != params.size or drift.shape[1] != drift.shape[2]:
            raise ShapeError(f"drift matrices must have shape ({params.size}, n, n), got {drift.shape}")
        n = drift.shape[1]
        if coup.ndim != 3 or coup.shape[1:] != (n, n):
            raise ShapeError(f"couplings must have shape (m, {n}, {n}), got {coup.shape}")
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(coup))):
            raise InvalidArgumentError("bilinear model matrices must be finite")
        if not self.horizon > 0:
            raise InvalidArgumentError("horizon must be positive")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "drift_matrices", drift)
        object.__setattr__(self, "couplings", coup)

    @property
    def size(self) -> int:
        return self.params.size

    @property
    def n(self) -> int:
        return self.drift_matrices.shape[1]

    @property
    def m(self) -> int:
        return self.couplings.shape[0]

    def is_rotational(self) -> bool:
        skew = lambda a: np.allclose(a, -np.swapaxes(a, -1, -2), atol=1e-14)
        return bool(skew(self.drift_matrices) and skew(self.couplings))


def bloch_ensemble(params, horizon: float) -> BilinearEnsembleModel:
    """Bloch equations without relaxation; ``params`` are Larmor frequencies."""
    params = np.atleast_1d(np.asarray(params, dtype=float))
    drift = params[:, None, None] * Z_ROTATION
    return BilinearEnsembleModel(params, horizon, drift, BLOCH_COUPLINGS, Z_ROTATION, "bloch")


def induced_inputs(model: BilinearEnsembleModel, states: np.ndarray) -> np.ndarray:
    """Btilde(X) = [B_1 X, ..., B_m X] for a stack of states (..., n) -> (..., n, m)."""
    return np.einsum("jab,...b->...aj", model.couplings, states)


def linearize_about(model: BilinearEnsembleModel, trajectory: Trajectory) -> LinearEnsembleModel:
    """Time-varying linear ensemble with the input matrix frozen along ``trajectory``."""
    grid = trajectory.grid
    if not np.isclose(grid.horizon, model.horizon, rtol=1e-12):
        raise ShapeError("trajectory grid horizon differs from the model horizon")
    if trajectory.states.shape != (model.size, grid.n_nodes, model.n):
        raise ShapeError(
            f"trajectory must have shape ({model.size}, {grid.n_nodes}, {model.n}), got {trajectory.states.shape}"
        )
    table = induced_inputs(model, trajectory.states)
    if model.generator is not None:
        return tabulated(model.params, grid, table, generator=model.generator, family="bloch_linearized")
    drift_table = np.broadcast_to(model.drift_matrices[:, None], (model.size, grid.n_nodes, model.n, model.n))
    return tabulated(model.params, grid, table, drift_table=drift_table)


@dataclass
class OuterOptions:
    max_outer: int = 300
    tol: float = 5e-2
    damping: float = 1.0
    warm_start: bool = True
    inner_iterations: int = 1000
    initial: ControlSignal | list[float] | None = None
    divergence_factor: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise InvalidArgumentError(f"damping must lie in (0, 1], got {self.damping}")
        if self.max_outer < 0 or self.inner_iterations < 1:
            raise InvalidArgumentError("iteration budgets must be positive")
        if not self.tol > 0:
            raise InvalidArgumentError("outer tolerance must be positive")


@dataclass
class BilinearReport:
    control: ControlSignal
    trajectory: Trajectory
    errors: list[float] = field(default_factory=list)  # max terminal error per outer iteration
    energies: list[float] = field(default_factory=list)
    norm_drift: list[float] = field(default_factory=list)  # max | |X(t)| - |X0| | per outer iteration
    converged: bool = False
    diverged: bool = False

    @property
    def outer_iterations(self) -> int:
        return len(self.errors) - 1

    @property
    def final_error(self) -> float:
        return self.errors[-1]

    @property
    def control_norms(self) -> list[float]:
        return [float(np.sqrt(e)) for e in self.energies]

    def terminal_errors(self, target: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.trajectory.terminal - target, axis=1)

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["outer_iter", "max_terminal_error", "control_energy"])
            for k, (e, en) in enumerate(zip(self.errors, self.energies)):
                out.writerow([k, f"{e:.17g}", f"{en:.17g}"])


def _initial_control(opts: OuterOptions, grid: TimeGrid, channels: int) -> ControlSignal:
    if opts.initial is None:
        return ControlSignal.zeros(grid, channels)
    if isinstance(opts.initial, ControlSignal):
        return opts.initial
    return ControlSignal.constant(grid, opts.initial)


def solve_bilinear(
    model: BilinearEnsembleModel,
    x0,
    xf,
    grid: TimeGrid,
    inner_opts: SolverOptions | None = None,
    outer_opts: OuterOptions | None = None,
) -> BilinearReport:
    """Alternate frozen-trajectory linear solves with true bilinear simulation.

    With ``warm_start`` the inner weighted projections start from the current
    control, which amounts to adding the minimum-norm correction for the
    current terminal miss.  Without it each round restarts from zero and
    returns the minimum-energy control of the frozen ensemble.
    """
    outer = outer_opts or OuterOptions()
    inner = replace(inner_opts or SolverOptions(), max_iterations=outer.inner_iterations, record_trace=False)
    boundary = BoundaryPair(
        np.broadcast_to(np.asarray(x0, dtype=float), (model.size, model.n)),
        np.broadcast_to(np.asarray(xf, dtype=float), (model.size, model.n)),
    )
    u = _initial_control(outer, grid, model.m)
    traj = simulate_bilinear(model, u, boundary.initial)
    err = lambda tr: float(np.linalg.norm(tr.terminal - boundary.target, axis=1).max())
    start_norms = np.linalg.norm(boundary.initial, axis=1)[:, None]
    drift = lambda tr: float(np.abs(np.linalg.norm(tr.states, axis=2) - start_norms).max())
    report = BilinearReport(u, traj, [err(traj)], [norm_l2(u) ** 2], [drift(traj)])
    if report.errors[0] < outer.tol:
        report.converged = True
        return report
    for k in range(outer.max_outer):
        frozen = linearize_about(model, traj)
        try:
            if outer.warm_start:
                solved = solve_feasible(frozen, boundary, grid, replace(inner, initial=u))
            else:
                solved = solve_min_energy(frozen, boundary, grid, inner)
        except SingularGramianError as exc:
            raise exc.at_outer_iteration(k) from exc
        u = outer.damping * solved.control + (1.0 - outer.damping) * u
        traj = simulate_bilinear(model, u, boundary.initial)
        report.control, report.trajectory = u, traj
        report.errors.append(err(traj))
        report.energies.append(norm_l2(u) ** 2)
        report.norm_drift.append(drift(traj))
        log.info("outer %d: max terminal error %.4g", k + 1, report.errors[-1])
        if report.errors[-1] < outer.tol:
            report.converged = True
            break
        if report.errors[-1] > outer.divergence_factor * report.errors[0]:
            report.diverged = True
            break
    return report
