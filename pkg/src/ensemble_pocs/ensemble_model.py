"""Sampled linear ensembles: transition matrices, steering operators, simulation.

A :class:`LinearEnsembleModel` is a finite sample of the family
``dX/dt = A(t, beta) X + B(t, beta) u`` sharing one broadcast control.  The
steering operator of sample ``i`` maps a control to the terminal displacement
``int_0^T Phi(T, s) B(s) u(s) ds``; it is tabulated on the grid as the kernel
``K_i(t_k) = Phi(T, t_k) B(t_k)`` and integrated with the trapezoid weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import InvalidArgumentError, NumericalBlowupError, ShapeError
from .function_space import ControlSignal, TimeGrid

# planar rotation generator and rotation about the z-axis; both satisfy J^3 = -J
PLANAR_ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])
Z_ROTATION = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

FAMILIES = (
    "harmonic_oscillator_2in",
    "harmonic_oscillator_1in",
    "bloch_linearized",
    "custom_tabulated",
    "custom",
)

Evaluator = Callable[[np.ndarray, int], np.ndarray]


def sample_parameters(lo: float, hi: float, count: int) -> np.ndarray:
    """``count`` equally spaced values in [lo, hi], endpoints included."""
    if not lo < hi:
        raise InvalidArgumentError(f"need lo < hi, got [{lo}, {hi}]")
    if int(count) != count or count < 1:
        raise InvalidArgumentError(f"count must be a positive integer, got {count}")
    if count == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, int(count))


def rodrigues(generator: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """exp(angle * J) for a skew generator with J^3 = -J, batched over angles."""
    angles = np.asarray(angles, dtype=float)
    n = generator.shape[0]
    j2 = generator @ generator
    s = np.sin(angles)[..., None, None]
    c = np.cos(angles)[..., None, None]
    return np.eye(n) + s * generator + (1.0 - c) * j2


@dataclass(frozen=True, eq=False)
class LinearEnsembleModel:
    """Finite sample of a parameterized linear system family.

    ``drift(times, i)`` and ``input_matrix(times, i)`` return stacks of shape
    ``(len(times), n, n)`` and ``(len(times), n, m)``.  When ``generator`` is
    set, ``A(beta) = beta * generator`` and transitions use a closed form.
    """

    family: str
    params: np.ndarray
    horizon: float
    n: int
    m: int
    drift: Evaluator
    input_matrix: Evaluator
    time_invariant: bool = True
    generator: np.ndarray | None = None
    max_step: float | None = None
    _kernel_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        params = np.atleast_1d(np.asarray(self.params, dtype=float))
        if params.ndim != 1 or params.size < 1:
            raise InvalidArgumentError("need at least one parameter sample")
        if not np.all(np.isfinite(params)):
            raise InvalidArgumentError("parameter samples must be finite")
        if np.unique(params).size != params.size:
            raise InvalidArgumentError("parameter samples must be distinct")
        if not self.horizon > 0:
            raise InvalidArgumentError(f"horizon must be positive, got {self.horizon}")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def size(self) -> int:
        return self.params.size

    def _check_index(self, i: int):
        if not 0 <= i < self.size:
            raise IndexError(f"sample index {i} out of range for {self.size} samples")

    def _drift_stack(self, times: np.ndarray) -> np.ndarray:
        """A(t, beta_i) for every sample, shape (N, len(times), n, n)."""
        return np.stack([self.drift(times, i) for i in range(self.size)])

    def _input_stack(self, times: np.ndarray) -> np.ndarray:
        return np.stack([self.input_matrix(times, i) for i in range(self.size)])

    def propagator(self, i: int, durations: np.ndarray) -> np.ndarray:
        """exp(A_i * tau) for a time-invariant drift, batched over tau."""
        durations = np.asarray(durations, dtype=float)
        if self.generator is not None:
            return rodrigues(self.generator, self.params[i] * durations)
        a = self.drift(np.zeros(1), i)[0]
        return expm(a * durations[..., None, None])

    def transition(self, t: float, s: float, i: int) -> np.ndarray:
        """Phi(t, s) for sample i, solving dPhi/dt = A Phi with Phi(s, s) = I."""
        self._check_index(i)
        if t < s:
            raise InvalidArgumentError(f"transition needs s <= t, got s={s}, t={t}")
        if s < 0 or t > self.horizon * (1 + 1e-12):
            raise InvalidArgumentError(f"times must lie in [0, {self.horizon}]")
        if self.time_invariant:
            return self.propagator(i, np.array(t - s))
        step = self.max_step or self.horizon / 1000
        count = max(1, math.ceil((t - s) / step - 1e-9))
        edges = np.linspace(s, t, count + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        h = (t - s) / count
        factors = expm(self.drift(mids, i) * h)
        phi = np.eye(self.n)
        for f in factors:
            phi = f @ phi
        return phi

    def terminal_transitions(self, grid: TimeGrid) -> np.ndarray:
        """Phi(T, t_k) for every sample and grid node, shape (N, n_nodes, n, n)."""
        self._check_grid(grid)
        tau = grid.horizon - grid.nodes
        if self.time_invariant:
            return np.stack([self.propagator(i, tau) for i in range(self.size)])
        # product of per-step exponentials with the drift frozen at midpoints
        mids = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
        steps = expm(self._drift_stack(mids) * grid.step)  # (N, n_steps, n, n)
        phi = np.empty((self.size, grid.n_nodes, self.n, self.n))
        phi[:, -1] = np.eye(self.n)
        for k in range(grid.n_steps - 1, -1, -1):
            phi[:, k] = phi[:, k + 1] @ steps[:, k]
        return phi

    def kernels(self, grid: TimeGrid) -> np.ndarray:
        """Steering kernels Phi(T, t_k) B(t_k), shape (N, n_nodes, n, m); cached per grid."""
        cached = self._kernel_cache.get(grid)
        if cached is None:
            cached = self.terminal_transitions(grid) @ self._input_stack(grid.nodes)
            cached.flags.writeable = False
            self._kernel_cache[grid] = cached
        return cached

    def _check_grid(self, grid: TimeGrid):
        if not math.isclose(grid.horizon, self.horizon, rel_tol=1e-12):
            raise ShapeError(f"grid horizon {grid.horizon} differs from model horizon {self.horizon}")


def transition_matrix(model: LinearEnsembleModel, t: float, s: float, beta: float) -> np.ndarray:
    """Phi(t, s, beta) for one of the model's parameter values.

    Rotation families accept any real beta; other families need beta to be
    one of the sampled parameters.
    """
    if model.generator is not None:
        if t < s:
            raise InvalidArgumentError(f"transition needs s <= t, got s={s}, t={t}")
        return rodrigues(model.generator, np.array(beta * (t - s)))
    hits = np.flatnonzero(np.isclose(model.params, beta, rtol=0.0, atol=1e-12))
    if hits.size == 0:
        raise InvalidArgumentError(f"beta={beta} is not a sampled parameter of this model")
    return model.transition(t, s, int(hits[0]))


# ---------------------------------------------------------------- families


def harmonic_oscillators(params, horizon: float, inputs: int = 2) -> LinearEnsembleModel:
    """Forced oscillators dx/dt = [[0, -w], [w, 0]] x + B u.

    ``inputs=2`` uses B = I (both coordinates actuated), ``inputs=1`` uses
    B = (1, 0)'.
    """
    if inputs not in (1, 2):
        raise InvalidArgumentError("oscillator families have one or two inputs")
    params = np.atleast_1d(np.asarray(params, dtype=float))
    b = np.eye(2) if inputs == 2 else np.array([[1.0], [0.0]])

    def drift(times, i):
        return np.broadcast_to(params[i] * PLANAR_ROTATION, (np.size(times), 2, 2))

    def input_matrix(times, i):
        return np.broadcast_to(b, (np.size(times),) + b.shape)

    return LinearEnsembleModel(
        family=f"harmonic_oscillator_{inputs}in",
        params=params,
        horizon=horizon,
        n=2,
        m=inputs,
        drift=drift,
        input_matrix=input_matrix,
        generator=PLANAR_ROTATION,
    )


def scalar_integrators(params, horizon: float) -> LinearEnsembleModel:
    """dx/dt = beta * u, one state and one input per sample."""
    params = np.atleast_1d(np.asarray(params, dtype=float))

    def drift(times, i):
        return np.zeros((np.size(times), 1, 1))

    def input_matrix(times, i):
        return np.full((np.size(times), 1, 1), params[i])

    return LinearEnsembleModel("custom", params, horizon, 1, 1, drift, input_matrix)


def from_functions(
    params,
    horizon: float,
    drift_fn: Callable[[float, float], np.ndarray],
    input_fn: Callable[[float, float], np.ndarray],
    time_invariant: bool = False,
    max_step: float | None = None,
) -> LinearEnsembleModel:
    """Family given by pointwise evaluators A(t, beta) and B(t, beta)."""
    params = np.atleast_1d(np.asarray(params, dtype=float))
    a0 = np.atleast_2d(np.asarray(drift_fn(0.0, params[0]), dtype=float))
    b0 = np.asarray(input_fn(0.0, params[0]), dtype=float)
    if b0.ndim == 1:
        b0 = b0[:, None]
    n, m = b0.shape
    if a0.shape != (n, n):
        raise ShapeError(f"A has shape {a0.shape}, expected {(n, n)}")

    def drift(times, i):
        return np.stack([np.asarray(drift_fn(t, params[i]), dtype=float).reshape(n, n)
                         for t in np.atleast_1d(times)])

    def input_matrix(times, i):
        return np.stack([np.asarray(input_fn(t, params[i]), dtype=float).reshape(n, m)
                         for t in np.atleast_1d(times)])

    return LinearEnsembleModel("custom", params, horizon, n, m, drift, input_matrix,
                               time_invariant=time_invariant, max_step=max_step)


def _interpolator(table: np.ndarray, nodes: np.ndarray) -> Evaluator:
    """Piecewise-linear interpolation in time of a per-sample matrix table."""
    n_samples, n_nodes = table.shape[:2]
    flat = table.reshape(n_samples, n_nodes, -1)
    step = nodes[1] - nodes[0]

    def evaluate(times, i):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        pos = np.clip(times / step, 0.0, n_nodes - 1)
        lo = np.minimum(np.floor(pos).astype(int), n_nodes - 2)
        frac = (pos - lo)[:, None]
        vals = (1 - frac) * flat[i, lo] + frac * flat[i, lo + 1]
        return vals.reshape((times.size,) + table.shape[2:])

    return evaluate


def tabulated(
    params,
    grid: TimeGrid,
    input_table: np.ndarray,
    drift_table: np.ndarray | None = None,
    generator: np.ndarray | None = None,
    family: str = "custom_tabulated",
) -> LinearEnsembleModel:
    """Family given by matrix tables on the grid nodes.

    ``input_table`` has shape (N, n_nodes, n, m).  The drift is either a table
    (N, n_nodes, n, n), a rotation ``generator`` scaled by each parameter, or
    zero.  Values between nodes are linearly interpolated.
    """
    params = np.atleast_1d(np.asarray(params, dtype=float))
    input_table = np.asarray(input_table, dtype=float)
    if input_table.ndim != 4 or input_table.shape[:2] != (params.size, grid.n_nodes):
        raise ShapeError(
            f"input table must have shape ({params.size}, {grid.n_nodes}, n, m), got {input_table.shape}"
        )
    if not np.all(np.isfinite(input_table)):
        raise InvalidArgumentError("input table entries must be finite")
    n, m = input_table.shape[2:]
    input_matrix = _interpolator(input_table, grid.nodes)
    time_invariant = True
    if generator is not None:
        def drift(times, i):
            return np.broadcast_to(params[i] * generator, (np.size(times), n, n))
    elif drift_table is not None:
        drift_table = np.asarray(drift_table, dtype=float)
        if drift_table.shape != (params.size, grid.n_nodes, n, n):
            raise ShapeError(f"drift table must have shape {(params.size, grid.n_nodes, n, n)}")
        if not np.all(np.isfinite(drift_table)):
            raise InvalidArgumentError("drift table entries must be finite")
        time_invariant = bool(np.all(drift_table == drift_table[:, :1]))
        drift = _interpolator(drift_table, grid.nodes)
    else:
        def drift(times, i):
            return np.zeros((np.size(times), n, n))

    return LinearEnsembleModel(family, params, grid.horizon, n, m, drift, input_matrix,
                               time_invariant=time_invariant, generator=generator,
                               max_step=grid.step)


# ------------------------------------------------------- boundary and targets


@dataclass(frozen=True, eq=False)
class BoundaryPair:
    """Initial and target states per sample, each of shape (N, n)."""

    initial: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        x0 = np.atleast_2d(np.asarray(self.initial, dtype=float))
        xf = np.atleast_2d(np.asarray(self.target, dtype=float))
        if x0.shape != xf.shape:
            raise ShapeError(f"initial {x0.shape} and target {xf.shape} shapes differ")
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(xf))):
            raise InvalidArgumentError("boundary states must be finite")
        x0.flags.writeable = False
        xf.flags.writeable = False
        object.__setattr__(self, "initial", x0)
        object.__setattr__(self, "target", xf)

    @classmethod
    def identical(cls, initial, target, count: int) -> BoundaryPair:
        x0 = np.asarray(initial, dtype=float)
        xf = np.asarray(target, dtype=float)
        return cls(np.tile(x0, (count, 1)), np.tile(xf, (count, 1)))

    def check(self, model: LinearEnsembleModel | None = None, n: int | None = None, size: int | None = None):
        if model is not None:
            n, size = model.n, model.size
        if self.initial.shape != (size, n):
            raise ShapeError(f"boundary has shape {self.initial.shape}, model needs {(size, n)}")


def target_vector(model: LinearEnsembleModel, i: int, boundary: BoundaryPair) -> np.ndarray:
    """XF_i - Phi(T, 0, beta_i) X0_i."""
    model._check_index(i)
    boundary.check(model)
    phi = model.transition(model.horizon, 0.0, i)
    return boundary.target[i] - phi @ boundary.initial[i]


def target_vectors(model: LinearEnsembleModel, boundary: BoundaryPair, grid: TimeGrid | None = None) -> np.ndarray:
    """All targets stacked, shape (N, n).

    With a grid, Phi(T, 0) is taken from the same tabulation as the kernels so
    that targets and steering operators are mutually consistent.
    """
    boundary.check(model)
    if grid is None:
        return np.stack([target_vector(model, i, boundary) for i in range(model.size)])
    phi0 = model.terminal_transitions(grid)[:, 0]
    return boundary.target - np.einsum("iab,ib->ia", phi0, boundary.initial)


@dataclass(frozen=True, eq=False)
class SteeringOperator:
    """Discretized steering map of one sample: control -> R^n."""

    index: int
    grid: TimeGrid
    kernel: np.ndarray  # (n_nodes, n, m)

    @property
    def n(self) -> int:
        return self.kernel.shape[1]

    @property
    def m(self) -> int:
        return self.kernel.shape[2]

    def apply(self, u: ControlSignal) -> np.ndarray:
        if u.grid != self.grid or u.channels != self.m:
            raise ShapeError("control does not match the operator's grid or input dimension")
        return np.einsum("k,kab,kb->a", self.grid.weights, self.kernel, u.samples)

    def adjoint(self, v: np.ndarray) -> ControlSignal:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ShapeError(f"adjoint expects a vector of length {self.n}")
        return ControlSignal(self.grid, np.einsum("kab,a->kb", self.kernel, v))

    def gramian(self) -> np.ndarray:
        g = np.einsum("k,kab,kcb->ac", self.grid.weights, self.kernel, self.kernel)
        return 0.5 * (g + g.T)


def steering_operator(model: LinearEnsembleModel, grid: TimeGrid, i: int) -> SteeringOperator:
    model._check_index(i)
    return SteeringOperator(i, grid, model.kernels(grid)[i])


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State paths of every sample, shape (N, n_nodes, n)."""

    grid: TimeGrid
    states: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1]


def _initial_states(x0, size: int, n: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.tile(x0, (size, 1))
    if x0.shape != (size, n):
        raise ShapeError(f"initial states must have shape ({n},) or ({size}, {n}), got {x0.shape}")
    return x0


def _rk4(grid: TimeGrid, x0: np.ndarray, rhs) -> np.ndarray:
    """Classical RK4 on the grid; ``rhs(x, k, stage)`` with stage 0 (node k), 1 (midpoint), 2 (node k+1)."""
    h = grid.step
    out = np.empty((x0.shape[0], grid.n_nodes, x0.shape[1]))
    out[:, 0] = x = x0
    for k in range(grid.n_steps):
        k1 = rhs(x, k, 0)
        k2 = rhs(x + 0.5 * h * k1, k, 1)
        k3 = rhs(x + 0.5 * h * k2, k, 1)
        k4 = rhs(x + h * k3, k, 2)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericalBlowupError(f"non-finite state at t={grid.nodes[k + 1]:.6g}")
        out[:, k + 1] = x
    return out


def _midpoint_controls(u: ControlSignal) -> np.ndarray:
    return 0.5 * (u.samples[:-1] + u.samples[1:])


def simulate_linear(model: LinearEnsembleModel, u: ControlSignal, x0) -> Trajectory:
    """RK4 integration of every sample under the broadcast control ``u``."""
    grid = u.grid
    model._check_grid(grid)
    if u.channels != model.m:
        raise ShapeError(f"control has {u.channels} channels, model expects {model.m}")
    x0 = _initial_states(x0, model.size, model.n)
    mids = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    a_nodes = model._drift_stack(grid.nodes)
    a_mids = model._drift_stack(mids)
    b_nodes = model._input_stack(grid.nodes)
    b_mids = model._input_stack(mids)
    bu_nodes = np.einsum("ikab,kb->ika", b_nodes, u.samples)
    bu_mids = np.einsum("ikab,kb->ika", b_mids, _midpoint_controls(u))

    def rhs(x, k, stage):
        if stage == 1:
            return np.einsum("iab,ib->ia", a_mids[:, k], x) + bu_mids[:, k]
        j = k + (stage == 2)
        return np.einsum("iab,ib->ia", a_nodes[:, j], x) + bu_nodes[:, j]

    return Trajectory(grid, _rk4(grid, x0, rhs))


def simulate_bilinear(model, controls: ControlSignal, x0) -> Trajectory:
    """RK4 integration of dX/dt = (A_i + sum_j u_j B_j) X for every sample.

    ``model`` needs ``drift_matrices`` (N, n, n) and ``couplings`` (m, n, n),
    as provided by :class:`ensemble_pocs.bilinear.BilinearEnsembleModel`.
    """
    drift = np.asarray(model.drift_matrices)
    couplings = np.asarray(model.couplings)
    size, n = drift.shape[0], drift.shape[1]
    if controls.channels != couplings.shape[0]:
        raise ShapeError(f"control has {controls.channels} channels, model expects {couplings.shape[0]}")
    if not math.isclose(controls.grid.horizon, model.horizon, rel_tol=1e-12):
        raise ShapeError("control grid horizon differs from model horizon")
    x0 = _initial_states(x0, size, n)
    u_nodes = controls.samples
    u_mids = _midpoint_controls(controls)

    def rhs(x, k, stage):
        u = u_mids[k] if stage == 1 else u_nodes[k + (stage == 2)]
        gen = drift + np.tensordot(u, couplings, axes=1)
        return np.einsum("iab,ib->ia", gen, x)

    return Trajectory(controls.grid, _rk4(controls.grid, x0, rhs))
