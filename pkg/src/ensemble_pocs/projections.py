"""Exact projections onto steering sets, energy balls and amplitude boxes.

The affine set of sample ``i`` is ``{u : L_i u = xi_i}``; its projection is
``u + L_i^* W_i^{-1} (xi_i - L_i u)`` with the Gramian ``W_i = L_i L_i^*``
factored once by Cholesky.  Energy and amplitude constraints act per channel
by default.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ensemble_model import BoundaryPair, LinearEnsembleModel, SteeringOperator, target_vectors
from .errors import InvalidArgumentError, ShapeError, SingularGramianError
from .function_space import ControlSignal, TimeGrid, channel_norms, norm_l2

log = logging.getLogger(__name__)

SINGULAR_RTOL = 1e-10
ILL_CONDITIONED = 1e8


class ConstraintSet(Protocol):
    def project(self, u: ControlSignal) -> ControlSignal: ...

    def contains(self, u: ControlSignal, tol: float = 1e-9) -> bool: ...


@dataclass(frozen=True, eq=False)
class GramianFactor:
    matrix: np.ndarray
    factor: tuple
    condition: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, rhs)


def factor_gramian(w: np.ndarray, index: int = 0) -> GramianFactor:
    """Symmetrize, check positive definiteness and Cholesky-factor an n x n Gramian."""
    w = 0.5 * (w + w.T)
    eig = np.linalg.eigvalsh(w)
    lo, hi = float(eig[0]), float(eig[-1])
    if not hi > 0 or lo <= SINGULAR_RTOL * hi:
        raise SingularGramianError(index, lo, hi)
    condition = hi / lo
    if condition > ILL_CONDITIONED:
        log.warning("Gramian of sample %d is ill-conditioned (condition %.3g)", index, condition)
    return GramianFactor(w, cho_factor(w, lower=True), condition)


def gramian(op: SteeringOperator) -> GramianFactor:
    """W = L L^* by quadrature, with its Cholesky factor."""
    return factor_gramian(op.gramian(), op.index)


@dataclass(frozen=True, eq=False)
class AffineSteeringSet:
    """Controls that steer one sample exactly onto its target."""

    operator: SteeringOperator
    target: np.ndarray
    gram: GramianFactor

    @classmethod
    def build(cls, operator: SteeringOperator, target) -> AffineSteeringSet:
        target = np.asarray(target, dtype=float)
        if target.shape != (operator.n,):
            raise ShapeError(f"target must have length {operator.n}, got shape {target.shape}")
        return cls(operator, target, gramian(operator))

    def residual(self, u: ControlSignal) -> float:
        return float(np.linalg.norm(self.operator.apply(u) - self.target))

    def project(self, u: ControlSignal) -> ControlSignal:
        coeff = self.gram.solve(self.target - self.operator.apply(u))
        return u + self.operator.adjoint(coeff)

    def contains(self, u: ControlSignal, tol: float = 1e-9) -> bool:
        return self.residual(u) <= tol * (1.0 + np.linalg.norm(self.target))


@dataclass(frozen=True)
class EnergyBall:
    """||u_c||_2 <= M for every channel c, or ||u||_2 <= M jointly."""

    radius: float
    per_channel: bool = True

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidArgumentError(f"ball radius must be positive, got {self.radius}")

    def project(self, u: ControlSignal) -> ControlSignal:
        if self.per_channel:
            norms = channel_norms(u)
            scale = np.where(norms > self.radius, self.radius / np.maximum(norms, 1e-300), 1.0)
            return ControlSignal(u.grid, u.samples * scale)
        norm = norm_l2(u)
        return u if norm <= self.radius else u * (self.radius / norm)

    def contains(self, u: ControlSignal, tol: float = 1e-9) -> bool:
        norms = channel_norms(u) if self.per_channel else np.array([norm_l2(u)])
        return bool(np.all(norms <= self.radius + tol))


@dataclass(frozen=True)
class AmplitudeBox:
    """|u_c(t_k)| <= M at every grid node and channel."""

    bound: float

    def __post_init__(self):
        if not self.bound > 0:
            raise InvalidArgumentError(f"box bound must be positive, got {self.bound}")

    def project(self, u: ControlSignal) -> ControlSignal:
        return ControlSignal(u.grid, np.clip(u.samples, -self.bound, self.bound))

    def contains(self, u: ControlSignal, tol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(u.samples)) <= self.bound + tol)


def project_affine(u: ControlSignal, aset: AffineSteeringSet) -> ControlSignal:
    return aset.project(u)


def project_ball(u: ControlSignal, ball: EnergyBall) -> ControlSignal:
    return ball.project(u)


def project_box(u: ControlSignal, box: AmplitudeBox) -> ControlSignal:
    return box.project(u)


class AffineFamily:
    """All steering sets of an ensemble, held as stacked arrays.

    ``kernels`` has shape (N, n_nodes, n, m), ``targets`` (N, n).  Methods work
    on raw sample arrays of shape (n_nodes, m) to keep solver loops cheap.
    """

    def __init__(self, grid: TimeGrid, kernels: np.ndarray, targets: np.ndarray):
        kernels = np.asarray(kernels, dtype=float)
        targets = np.asarray(targets, dtype=float)
        if kernels.ndim != 4 or kernels.shape[1] != grid.n_nodes:
            raise ShapeError(f"kernels must have shape (N, {grid.n_nodes}, n, m)")
        if targets.shape != kernels.shape[:1] + kernels.shape[2:3]:
            raise ShapeError(f"targets must have shape {kernels.shape[:1] + kernels.shape[2:3]}")
        self.grid = grid
        self.kernels = kernels
        self.targets = targets
        self.size, _, self.n, self.m = kernels.shape
        # rows of the stacked operator: (sample, state component) x (node, channel)
        self._rows = np.ascontiguousarray(kernels.transpose(0, 2, 1, 3)).reshape(self.size * self.n, -1)
        self._wrows = self._rows * np.repeat(grid.weights, self.m)
        grams = np.einsum("k,ikab,ikcb->iac", grid.weights, kernels, kernels)
        self.gramians = [factor_gramian(grams[i], i) for i in range(self.size)]

    @classmethod
    def from_model(cls, model: LinearEnsembleModel, boundary: BoundaryPair, grid: TimeGrid) -> AffineFamily:
        return cls(grid, model.kernels(grid), target_vectors(model, boundary, grid))

    @property
    def conditions(self) -> np.ndarray:
        return np.array([g.condition for g in self.gramians])

    def apply(self, samples: np.ndarray) -> np.ndarray:
        """L_i u for every sample, shape (N, n)."""
        return (self._wrows @ samples.reshape(-1)).reshape(self.size, self.n)

    def adjoint_sum(self, coeffs: np.ndarray) -> np.ndarray:
        """sum_i L_i^* c_i as grid samples (n_nodes, m)."""
        return (coeffs.reshape(-1) @ self._rows).reshape(self.grid.n_nodes, self.m)

    def solve_gramians(self, rhs: np.ndarray) -> np.ndarray:
        return np.stack([g.solve(r) for g, r in zip(self.gramians, rhs)])

    def residual_vectors(self, samples: np.ndarray) -> np.ndarray:
        return self.apply(samples) - self.targets

    def residuals(self, samples: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.residual_vectors(samples), axis=1)

    def cross_gramian(self) -> np.ndarray:
        """Blocks L_i L_j^*, shape (N n, N n)."""
        g = self._wrows @ self._rows.T
        return 0.5 * (g + g.T)

    def sets(self) -> list[AffineSteeringSet]:
        return [
            AffineSteeringSet(SteeringOperator(i, self.grid, self.kernels[i]), self.targets[i], self.gramians[i])
            for i in range(self.size)
        ]


def check_weights(weights: Sequence[float], count: int) -> np.ndarray:
    """Convex weights: each in (0, 1] and summing to one."""
    lam = np.asarray(weights, dtype=float)
    if lam.shape != (count,):
        raise InvalidArgumentError(f"expected {count} weights, got {lam.size}")
    if np.any(lam <= 0) or np.any(lam > 1) or abs(lam.sum() - 1.0) > 1e-12:
        raise InvalidArgumentError("weights must lie in (0, 1] and sum to 1")
    return lam
