"""Reference computations that share no code path with the solvers."""

import numpy as np


def min_norm_control(kernels, weights, targets):
    """Minimum-norm grid control meeting every discrete steering constraint.

    Substituting v = sqrt(w) u turns the weighted problem into a plain
    least-norm one, solved by SVD-based least squares.
    """
    size, nodes, n, m = kernels.shape
    sw = np.sqrt(weights)
    a = np.einsum("k,ikab->iakb", sw, kernels).reshape(size * n, nodes * m)
    v, *_ = np.linalg.lstsq(a, np.asarray(targets).reshape(-1), rcond=None)
    return (v.reshape(nodes, m)) / sw[:, None]


def ball_affine_qp(weights, kernel_row, target, radius, start, iterations=200_000, tol=1e-10):
    """Nearest point to ``start`` in {|u|_w <= radius, <kernel_row, u>_w = target}.

    Projected gradient on the affine slice: each step moves toward ``start``
    and then projects back onto the slice intersected with the ball, using the
    explicit geometry of a ball cut by a hyperplane.
    """
    a = kernel_row / np.sqrt(weights @ kernel_row**2)  # unit normal of the hyperplane
    offset = target / np.sqrt(weights @ kernel_row**2)
    center = offset * a  # closest point of the hyperplane to the origin
    r2 = radius**2 - offset**2
    if r2 < 0:
        raise ValueError("ball and hyperplane do not intersect")

    def project(x):
        x = x - (weights @ (a * x) - offset) * a
        d = x - center
        dn = np.sqrt(weights @ d**2)
        return center + d * (np.sqrt(r2) / dn) if dn > np.sqrt(r2) else x

    x = project(np.zeros_like(start))
    step = 0.5
    for _ in range(iterations):
        nxt = project(x - step * 2.0 * (x - start))
        if np.sqrt(weights @ (nxt - x) ** 2) < tol:
            return nxt
        x = nxt
    return x
