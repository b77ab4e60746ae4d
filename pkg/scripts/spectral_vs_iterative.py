"""Compare the closed-form spectral limit with the iterated minimum-energy solve.

Prints the three candidate minimum-energy controls (spectral limit, iterated
weighted projections, SVD least-norm solution of the discrete constraints)
together with the smallest eigenvalues of the averaged projection operator on
the range of the stacked adjoint.  Eigenvalues near zero are modes the
iteration cannot resolve in any practical budget.
"""

import argparse

import numpy as np
from scipy.linalg import block_diag

from ensemble_pocs.ensemble_model import BoundaryPair, harmonic_oscillators, sample_parameters
from ensemble_pocs.function_space import ControlSignal, TimeGrid, legendre_basis, norm_l2
from ensemble_pocs.projections import AffineFamily
from ensemble_pocs.solvers import SolverOptions, build_spectral, solve_min_energy, solve_spectral


def least_norm(fam: AffineFamily, grid: TimeGrid) -> np.ndarray:
    sw = np.sqrt(grid.weights)
    a = np.einsum("k,ikab->iakb", sw, fam.kernels).reshape(fam.size * fam.n, -1)
    v, *_ = np.linalg.lstsq(a, fam.targets.reshape(-1), rcond=None)
    return v.reshape(grid.n_nodes, fam.m) / sw[:, None]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=21)
    parser.add_argument("--omega", type=float, default=1.0, help="parameters span [-omega, omega]")
    parser.add_argument("--steps", type=int, default=1000)
    parser.add_argument("--order", type=int, default=50)
    parser.add_argument("--iterations", type=int, default=100_000)
    args = parser.parse_args()

    grid = TimeGrid(1.0, args.steps)
    model = harmonic_oscillators(sample_parameters(-args.omega, args.omega, args.count), 1.0)
    boundary = BoundaryPair.identical([1.0, 0.0], [0.0, 1.0], args.count)
    fam = AffineFamily.from_model(model, boundary, grid)

    candidates = {
        "spectral": solve_spectral(build_spectral(model, boundary, legendre_basis(args.order, grid))),
        "iterative": solve_min_energy(model, boundary, grid, SolverOptions(max_iterations=args.iterations, record_trace=False)).control,
        "least-norm": ControlSignal(grid, least_norm(fam, grid)),
    }
    for name, u in candidates.items():
        print(f"{name:11s} norm {norm_l2(u):9.4f}  max residual {fam.residuals(u.samples).max():.3e}")
    print(f"spectral - iterative L2 gap {norm_l2(candidates['spectral'] - candidates['iterative']):.4f}")

    d = block_diag(*[g.solve(np.eye(fam.n)) / fam.size for g in fam.gramians])
    eig = np.sort(np.linalg.eigvals(d @ fam.cross_gramian()).real)
    print("smallest eigenvalues of the averaged projection on the adjoint range:")
    for lam in eig[:: max(1, eig.size // 12)]:
        budget = np.log(1e-3) / np.log1p(-lam) if 0 < lam < 1 else float("inf")
        print(f"  {lam:10.3e}   iterations for 1e-3 decay {budget:10.3g}")


if __name__ == "__main__":
    main()
