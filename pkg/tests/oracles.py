"""Independent reference implementations used to cross-check the package.

Everything here deliberately avoids the package's own code paths: the
robust solve inverts the reweighted scatter instead of solving Lyapunov
equations, the constrained projector fit uses a closed-form water-filling
scan instead of bisection, and subspace angles come from scipy.
"""

import numpy as np
from scipy.linalg import subspace_angles


def gms_irls(points, delta=1e-10, iters=400, tol=1e-15):
    """Centralized robust inverse-scatter iteration, run to convergence.

    Q <- inv(sum x x^T / max(||Q x||, delta)), normalized to unit trace.
    """
    dim = points.shape[1]
    q = np.eye(dim) / dim
    for _ in range(iters):
        norms = np.maximum(np.linalg.norm(points @ q, axis=1), delta)
        scatter = (points / norms[:, None]).T @ points
        q_next = np.linalg.inv(scatter)
        q_next /= np.trace(q_next)
        q_next = 0.5 * (q_next + q_next.T)
        if np.linalg.norm(q_next - q, "fro") < tol:
            return q_next
        q = q_next
    return q


def gms_objective_value(points, q, delta=1e-10):
    norms = np.linalg.norm(points @ q, axis=1)
    small = norms < delta
    return norms[~small].sum() + (norms[small] ** 2 / (2 * delta) + delta / 2).sum()


def weiszfeld(points, delta=1e-10, iters=2000, tol=1e-15):
    """Centralized regularized geometric median."""
    y = points.mean(axis=0)
    for _ in range(iters):
        dist = np.maximum(np.linalg.norm(points - y, axis=1), delta)
        w = 1.0 / dist
        y_next = (w @ points) / w.sum()
        if np.linalg.norm(y_next - y) < tol:
            return y_next
        y = y_next
    return y


def gmedian_objective_value(points, y, delta=1e-10):
    dist = np.linalg.norm(points - y, axis=1)
    small = dist < delta
    return dist[~small].sum() + (dist[small] ** 2 / (2 * delta) + delta / 2).sum()


def grid_search_median_2d(points, delta, lo, hi, steps=401, refinements=3):
    """Two-stage grid minimizer of the regularized median objective in 2-D."""
    lo = np.array([lo, lo], dtype=float)
    hi = np.array([hi, hi], dtype=float)
    best = None
    for _ in range(refinements):
        xs = np.linspace(lo[0], hi[0], steps)
        ys = np.linspace(lo[1], hi[1], steps)
        grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        dist = np.linalg.norm(grid[:, None, :] - points[None, :, :], axis=2)
        small = dist < delta
        vals = np.where(small, dist ** 2 / (2 * delta) + delta / 2, dist).sum(axis=1)
        best = grid[np.argmin(vals)]
        span = (hi - lo) / (steps - 1) * 4
        lo, hi = best - span, best + span
    return best


def _waterfill_closed_form(lam_desc, d):
    """Exact shift for eigenvalues nu_i = max(0, 1 - theta/(2 lam_i)).

    With the support being the top j eigenvalues, theta solves
    ``j - (theta/2) sum_{i<=j} 1/lam_i = d``; scan j until the resulting
    theta is consistent with that support.
    """
    lam = np.asarray(lam_desc, dtype=float)
    n = len(lam)
    for j in range(1, n + 1):
        inv_sum = np.sum(1.0 / lam[:j])
        theta = 2.0 * (j - d) / inv_sum
        if theta < 0:
            continue
        if theta <= 2.0 * lam[j - 1] + 1e-12 and (j == n or theta >= 2.0 * lam[j] - 1e-12):
            return np.clip(1.0 - theta / (2.0 * lam), 0.0, 1.0)
    raise AssertionError("water-filling scan failed; spectrum not positive?")


def reaper_irls(points, d, delta=1e-10, iters=60):
    """Centralized least-unsquared-residual projector fit."""
    beta = np.ones(len(points))
    projector = None
    for _ in range(iters):
        cov = (points * beta[:, None]).T @ points
        lam, vecs = np.linalg.eigh(cov)
        lam_desc = lam[::-1]
        vecs_desc = vecs[:, ::-1]
        nu = _waterfill_closed_form(lam_desc, d)
        projector = (vecs_desc * nu) @ vecs_desc.T
        projector = 0.5 * (projector + projector.T)
        residual = np.linalg.norm(points - points @ projector, axis=1)
        beta = 1.0 / np.maximum(delta, residual)
    return projector


def fms_irls(points, d, delta=1e-10, iters=60):
    """Centralized reweighted-PCA median subspace, PCA initialized."""
    lam, vecs = np.linalg.eigh(points.T @ points)
    basis = vecs[:, -d:]
    for _ in range(iters):
        residual = points - (points @ basis) @ basis.T
        w = 1.0 / np.maximum(np.linalg.norm(residual, axis=1), delta)
        cov = (points * w[:, None]).T @ points
        lam, vecs = np.linalg.eigh(cov)
        basis = vecs[:, -d:]
    return basis


def max_principal_angle(basis_a, basis_b):
    return float(np.max(subspace_angles(basis_a, basis_b)))


def projector_distance_from_angles(basis_a, basis_b):
    angles = subspace_angles(basis_a, basis_b)
    return float(np.sqrt(2.0 * np.sum(np.sin(angles) ** 2)))


def lambda_bookkeeping_step(edges, states, mu):
    """One dual update via explicit per-edge multipliers.

    edges are 1-indexed (lo, hi) pairs; states maps node id to its matrix.
    Returns the aggregated duals A_k = sum_m c_mk Lambda_m after one step
    from zero multipliers.
    """
    lambdas = {}
    for m, (lo, hi) in enumerate(edges, start=1):
        lambdas[m] = mu * (states[lo] - states[hi])
    duals = {k: np.zeros_like(next(iter(states.values()))) for k in states}
    for m, (lo, hi) in enumerate(edges, start=1):
        duals[lo] = duals[lo] + lambdas[m]
        duals[hi] = duals[hi] - lambdas[m]
    return duals


def random_trace_one_spd(rng, dim):
    """Random positive definite matrix with unit trace."""
    m = rng.standard_normal((dim, dim))
    q = m @ m.T + 0.1 * np.eye(dim)
    return q / np.trace(q)


def random_traceless_symmetric(rng, dim, scale=1.0):
    a = rng.standard_normal((dim, dim))
    a = 0.5 * (a + a.T)
    a -= np.trace(a) / dim * np.eye(dim)
    return scale * a
