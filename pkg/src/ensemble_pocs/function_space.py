"""Discretized control space L2([0, T], R^m).

Controls live on a uniform grid; inner products use the composite trapezoidal
rule, so every operator in the package is exactly self-consistent with the
grid representation.  A truncated Legendre basis, orthonormal under that same
discrete inner product, provides coordinates for the spectral solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial import legendre

from .errors import InvalidArgumentError, ResolutionError, ShapeError


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InvalidArgumentError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise InvalidArgumentError(f"n_steps must be an integer >= 2, got {self.n_steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.linspace(0.0, self.horizon, self.n_steps + 1)
        t.flags.writeable = False
        return t

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights."""
        w = np.full(self.n_nodes, self.step)
        w[0] = w[-1] = 0.5 * self.step
        w.flags.writeable = False
        return w


def make_time_grid(horizon: float, n_steps: int) -> TimeGrid:
    return TimeGrid(horizon, n_steps)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Grid samples of a vector-valued control, shape ``(n_nodes, m)``."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] != self.grid.n_nodes or s.shape[1] < 1:
            raise ShapeError(
                f"samples must have shape ({self.grid.n_nodes}, m), got {np.shape(self.samples)}"
            )
        if not np.all(np.isfinite(s)):
            raise InvalidArgumentError("control samples must be finite")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def zeros(cls, grid: TimeGrid, channels: int) -> ControlSignal:
        return cls(grid, np.zeros((grid.n_nodes, channels)))

    @classmethod
    def constant(cls, grid: TimeGrid, values) -> ControlSignal:
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(grid, np.tile(values, (grid.n_nodes, 1)))

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable[[np.ndarray], np.ndarray]) -> ControlSignal:
        """Sample ``fn`` (vectorized over times) on the grid nodes."""
        vals = np.asarray(fn(grid.nodes), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        elif vals.shape[0] != grid.n_nodes:
            vals = vals.T
        return cls(grid, vals)

    def __add__(self, other):
        if not isinstance(other, ControlSignal):
            return NotImplemented
        _require_compatible(self, other)
        return ControlSignal(self.grid, self.samples + other.samples)

    def __sub__(self, other):
        if not isinstance(other, ControlSignal):
            return NotImplemented
        _require_compatible(self, other)
        return ControlSignal(self.grid, self.samples - other.samples)

    def __mul__(self, scalar):
        return ControlSignal(self.grid, self.samples * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return ControlSignal(self.grid, -self.samples)

    def __repr__(self):
        return f"ControlSignal(T={self.grid.horizon}, n_steps={self.grid.n_steps}, m={self.channels})"


def _require_compatible(u: ControlSignal, v: ControlSignal):
    if u.grid != v.grid or u.channels != v.channels:
        raise ShapeError(
            f"incompatible signals: grids {u.grid} vs {v.grid}, channels {u.channels} vs {v.channels}"
        )


def inner_product(u: ControlSignal, v: ControlSignal) -> float:
    """Trapezoid approximation of the integral of u(t)'v(t) over [0, T]."""
    _require_compatible(u, v)
    return float(u.grid.weights @ np.sum(u.samples * v.samples, axis=1))


def norm_l2(u: ControlSignal) -> float:
    return float(np.sqrt(max(inner_product(u, u), 0.0)))


def channel_norms(u: ControlSignal) -> np.ndarray:
    """L2 norm of each control channel separately."""
    return np.sqrt(u.grid.weights @ (u.samples**2))


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Scalar basis functions sampled on the grid, shape ``(order, n_nodes)``.

    The basis acts per channel: element ``(c, j)`` of the vector basis is
    ``functions[j]`` placed in channel ``c``.
    """

    order: int
    grid: TimeGrid
    functions: np.ndarray

    def gram(self) -> np.ndarray:
        return (self.functions * self.grid.weights) @ self.functions.T


def _orthonormalize(vectors: np.ndarray, weights: np.ndarray, sweeps: int = 2) -> np.ndarray:
    # Modified Gram-Schmidt in the weighted inner product; a second sweep
    # cleans up the loss of orthogonality from the first.
    q = vectors.copy()
    r = q.shape[0]
    for _ in range(sweeps):
        for j in range(r):
            q[j] /= np.sqrt(weights @ (q[j] * q[j]))
            if j + 1 < r:
                coeffs = q[j + 1 :] @ (weights * q[j])
                q[j + 1 :] -= coeffs[:, None] * q[j]
    return q


def legendre_basis(order: int, grid: TimeGrid) -> BasisSet:
    """Shifted Legendre polynomials of degree < ``order`` on [0, T].

    Re-orthonormalized against the trapezoid inner product, so the discrete
    Gram matrix is the identity up to round-off.
    """
    if int(order) != order or order < 1:
        raise InvalidArgumentError(f"basis order must be a positive integer, got {order}")
    order = int(order)
    if order > grid.n_steps:
        raise ResolutionError(
            f"Legendre order {order} exceeds grid resolution n_steps={grid.n_steps}"
        )
    x = 2.0 * grid.nodes / grid.horizon - 1.0
    raw = legendre.legvander(x, order - 1).T
    raw *= np.sqrt((2.0 * np.arange(order) + 1.0) / grid.horizon)[:, None]
    funcs = _orthonormalize(raw, np.asarray(grid.weights))
    funcs.flags.writeable = False
    return BasisSet(order, grid, funcs)


def to_coordinates(u: ControlSignal, basis: BasisSet) -> np.ndarray:
    """Coefficients <u_c, phi_j>, stacked channel-major into a flat vector."""
    if u.grid != basis.grid:
        raise ShapeError("signal and basis live on different grids")
    coeffs = (basis.functions * basis.grid.weights) @ u.samples  # (order, m)
    return coeffs.T.reshape(-1)


def from_coordinates(mu: np.ndarray, basis: BasisSet) -> ControlSignal:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or mu.size % basis.order:
        raise ShapeError(f"coordinate vector length {mu.size} is not a multiple of order {basis.order}")
    coeffs = mu.reshape(-1, basis.order)  # (m, order)
    return ControlSignal(basis.grid, (coeffs @ basis.functions).T)
