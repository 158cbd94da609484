"""Per-node dual subproblem solvers.

Each consensus node repeatedly minimizes a penalized local objective over
the trace-one symmetric matrices.  The robust subspace objective is
handled by a majorize-minimize loop whose every step is one
trace-calibrated Lyapunov solve; the squared (PCA) objective is a single
such solve; the geometric-median objective is a reweighted-average loop
on vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    IterateNotPositiveDefiniteError,
    PreconditionError,
    RankDeficientDataError,
    TraceConditionError,
)
from .matops import (
    _check_positive_definite,
    _trace_one_in_eigenbasis,
    check_symmetric,
    symmetrize,
)

#: Inner IRLS loops stop when the relative objective decrease drops below this.
INNER_REL_TOL = 1e-12

#: Eigenvalues of a returned iterate below this count as a positive
#: definiteness violation (float noise around zero is tolerated).
_PD_EIG_TOL = -1e-10

#: Frobenius norm past which an iterate is declared divergent.  A trace-one
#: symmetric positive definite matrix has Frobenius norm at most one, so this
#: only fires when the dual aggregate has destabilized the solve.
_BLOWUP_NORM = 1e3


class LocalDataset:
    """An immutable block of points in R^D held by one node.

    Points are rows of ``points``.  The full-rank flag is computed once at
    construction; solvers that require spanning data check it.
    """

    def __init__(self, points: np.ndarray, require_full_rank: bool = True):
        points = np.ascontiguousarray(np.asarray(points, dtype=float))
        if points.ndim != 2 or points.shape[0] == 0:
            raise PreconditionError(
                f"points must be a nonempty N x D array, got shape {points.shape}")
        self.points = points
        singular_values = np.linalg.svd(points, compute_uv=False)
        self.full_rank = bool(
            points.shape[0] >= points.shape[1]
            and singular_values[-1] > 1e-10 * singular_values[0])
        if require_full_rank and not self.full_rank:
            raise RankDeficientDataError(
                f"dataset of {points.shape[0]} points does not span R^{points.shape[1]}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __repr__(self) -> str:
        return f"LocalDataset(N={self.size}, D={self.dim}, full_rank={self.full_rank})"


@dataclass(frozen=True)
class GmsParams:
    """Knobs of the local robust solve.

    delta is the smoothing parameter of the objective; t_gms caps the
    inner iteration count; warm_start lets consensus engines reuse the
    previous outer iterate instead of restarting from I/D (the default
    restart matches the reference procedure).
    """

    delta: float = 1e-10
    t_gms: int = 30
    warm_start: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}")
        if self.t_gms < 1:
            raise ConfigurationError(f"t_gms must be >= 1, got {self.t_gms}")


@dataclass
class SolveInfo:
    """Diagnostics of one local solve."""

    iterations: int = 0
    objectives: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    fixed_point_residual: float | None = None


def _row_norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def _huber_sum(norms: np.ndarray, delta: float) -> float:
    """Sum of smoothed unsquared norms: r for r >= delta, quadratic below."""
    small = norms < delta
    total = float(norms[~small].sum())
    if small.any():
        r = norms[small]
        total += float((r * r / (2.0 * delta) + 0.5 * delta).sum())
    return total


def _require_full_rank(data: LocalDataset) -> None:
    if not data.full_rank:
        raise RankDeficientDataError(
            f"dataset of {data.size} points does not span R^{data.dim}")


def _check_membership_h(q: np.ndarray, name: str = "q") -> np.ndarray:
    q = check_symmetric(q, name)
    trace = float(np.trace(q))
    if abs(trace - 1.0) > 1e-8:
        raise TraceConditionError(f"{name} must have unit trace, got {trace!r}")
    return q


def _check_traceless(a: np.ndarray, name: str = "a") -> np.ndarray:
    a = check_symmetric(a, name)
    trace = float(np.trace(a))
    if abs(trace) > 1e-8 * (1.0 + np.linalg.norm(a, "fro")):
        raise TraceConditionError(f"{name} must be traceless, got tr = {trace:.3e}")
    return a


def gms_weight_matrix(data: LocalDataset, q: np.ndarray, delta: float) -> np.ndarray:
    """Reweighted scatter ``sum_x x x^T / (2 max(||Q x||, delta))``."""
    _require_full_rank(data)
    if not delta > 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    q = check_symmetric(q, "q")
    norms = _row_norms(data.points @ q)
    return _scatter(data.points, norms, delta)


def _scatter(points: np.ndarray, norms: np.ndarray, delta: float,
             ridge: float = 0.0) -> np.ndarray:
    weights = 0.5 / np.maximum(norms, delta)
    x = (points * weights[:, None]).T @ points
    if ridge:
        x = x + ridge * np.eye(points.shape[1])
    return symmetrize(x)


def gms_objective(data: LocalDataset, q: np.ndarray, a: np.ndarray,
                  delta: float) -> float:
    """Penalized robust objective: smoothed norm sum plus ``tr(Q A)``."""
    q = _check_membership_h(q)
    a = check_symmetric(a, "a")
    norms = _row_norms(data.points @ q)
    return _huber_sum(norms, delta) + float(np.sum(q * a))


def gms_majorizer(data: LocalDataset, q: np.ndarray, q_star: np.ndarray,
                  a: np.ndarray, delta: float) -> float:
    """Quadratic surrogate anchored at ``q_star``.

    Equals the objective at ``q = q_star`` and dominates it everywhere,
    which is the property the descent loop leans on.
    """
    q = _check_membership_h(q)
    q_star = _check_membership_h(q_star, "q_star")
    a = check_symmetric(a, "a")
    anchor = np.maximum(_row_norms(data.points @ q_star), delta)
    norms_sq = np.einsum("ij,ij->i", data.points @ q, data.points @ q)
    return float(np.sum(norms_sq / (2.0 * anchor) + 0.5 * anchor)) + float(np.sum(q * a))


def _descent_loop(points: np.ndarray, constant: np.ndarray, params: GmsParams,
                  initial_q: np.ndarray, evaluate, ridge: float = 0.0,
                  collect_info: bool = False) -> tuple[np.ndarray, SolveInfo]:
    """Shared majorize-minimize loop.

    At each step the reweighted scatter (plus optional ridge) is formed at
    the current iterate, the trace-one Lyapunov equation with additive
    block ``constant`` is solved, and the candidate is kept only if the
    supplied objective does not increase (compute-then-test).  ``evaluate``
    maps ``(q, norms)`` to the objective value being descended.
    """
    q = initial_q
    norms = _row_norms(points @ q)
    value = evaluate(q, norms)
    info = SolveInfo(objectives=[value] if collect_info else [])
    dim = points.shape[1]
    trace_shift = float(np.trace(constant)) / dim
    constant0 = constant - trace_shift * np.eye(dim)
    for _ in range(params.t_gms):
        x = _scatter(points, norms, params.delta, ridge)
        eigenvalues, eigenvectors = np.linalg.eigh(x)
        _check_positive_definite(eigenvalues)
        a_hat = eigenvectors.T @ constant0 @ eigenvectors
        p_hat, _ = _trace_one_in_eigenbasis(eigenvalues, a_hat)
        candidate = symmetrize(eigenvectors @ p_hat @ eigenvectors.T)
        cand_norms = _row_norms(points @ candidate)
        cand_value = evaluate(candidate, cand_norms)
        if cand_value > value:
            break
        decrease = value - cand_value
        if collect_info:
            info.step_norms.append(float(np.linalg.norm(candidate - q, "fro")))
        q, norms, value = candidate, cand_norms, cand_value
        info.iterations += 1
        if collect_info:
            info.objectives.append(value)
        if np.linalg.norm(q, "fro") > _BLOWUP_NORM:
            raise IterateNotPositiveDefiniteError(
                "iterate norm diverged; dual aggregate exceeds the solvable range")
        if decrease <= INNER_REL_TOL * max(1.0, abs(value)):
            break
    if np.linalg.eigvalsh(q)[0] < _PD_EIG_TOL:
        raise IterateNotPositiveDefiniteError(
            "returned iterate is not positive definite; the dual aggregate "
            "violates the step-size bound")
    return q, info


def _fixed_point_residual(points: np.ndarray, constant: np.ndarray,
                          q: np.ndarray, delta: float, ridge: float = 0.0) -> float:
    """Distance moved by one more solve step from ``q``."""
    dim = points.shape[1]
    norms = _row_norms(points @ q)
    x = _scatter(points, norms, delta, ridge)
    eigenvalues, eigenvectors = np.linalg.eigh(x)
    shift = float(np.trace(constant)) / dim
    a_hat = eigenvectors.T @ (constant - shift * np.eye(dim)) @ eigenvectors
    p_hat, _ = _trace_one_in_eigenbasis(eigenvalues, a_hat)
    step = symmetrize(eigenvectors @ p_hat @ eigenvectors.T)
    return float(np.linalg.norm(step - q, "fro"))


def gms_local_solve(data: LocalDataset, a: np.ndarray, params: GmsParams,
                    initial_q: np.ndarray | None = None,
                    return_info: bool = False):
    """Minimize the penalized robust objective over trace-one symmetric Q.

    Starts from ``I/D`` (or ``initial_q``), iterates trace-calibrated
    Lyapunov solves with compute-then-test acceptance, and stops at the
    iteration cap, on an objective increase, or when the relative decrease
    falls below ``1e-12``.  The objective sequence is non-increasing.

    Raises IterateNotPositiveDefiniteError when an accepted iterate leaves
    the positive definite cone, which tells the consensus layer its step
    size is too large.
    """
    _require_full_rank(data)
    a = _check_traceless(a)
    points = data.points
    dim = data.dim
    q0 = np.eye(dim) / dim if initial_q is None else _check_membership_h(initial_q, "initial_q")

    def evaluate(q, norms):
        return _huber_sum(norms, params.delta) + float(np.sum(q * a))

    q, info = _descent_loop(points, a, params, q0, evaluate,
                            collect_info=return_info)
    if return_info:
        info.fixed_point_residual = _fixed_point_residual(points, a, q, params.delta)
        return q, info
    return q


def pca_local_solve(data: LocalDataset, a: np.ndarray) -> np.ndarray:
    """Minimize ``sum ||Q x||^2 + tr(A Q)`` over trace-one symmetric Q.

    The minimizer is the trace-one solution of a single Lyapunov equation
    in the unweighted scatter; with ``A = 0`` it reduces to the normalized
    inverse of the second-moment matrix.
    """
    _require_full_rank(data)
    a = check_symmetric(a, "a")
    points = data.points
    dim = data.dim
    x = symmetrize(points.T @ points)
    eigenvalues, eigenvectors = np.linalg.eigh(x)
    _check_positive_definite(eigenvalues)
    shift = float(np.trace(a)) / dim
    a_hat = eigenvectors.T @ (a - shift * np.eye(dim)) @ eigenvectors
    p_hat, _ = _trace_one_in_eigenbasis(eigenvalues, a_hat)
    return symmetrize(eigenvectors @ p_hat @ eigenvectors.T)


def gmedian_local_solve(data: LocalDataset, a: np.ndarray, delta: float,
                        max_iter: int,
                        initial_y: np.ndarray | None = None) -> np.ndarray:
    """Minimize the smoothed distance sum plus the linear edge term.

    Reweighted-average iteration: ``y <- (2 sum_x w_x x - a) / (2 sum_x w_x)``
    with ``w_x = 1 / max(||x - y||, delta)``, started at the centroid
    unless ``initial_y`` is given.  Rank of the data is irrelevant here.
    """
    if not delta > 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    if max_iter < 1:
        raise ConfigurationError(f"max_iter must be >= 1, got {max_iter}")
    points = data.points
    a = np.asarray(a, dtype=float)
    if a.shape != (data.dim,):
        raise PreconditionError(f"a must be a vector of length {data.dim}, got {a.shape}")
    y = points.mean(axis=0) if initial_y is None else np.asarray(initial_y, dtype=float)
    for _ in range(max_iter):
        dist = np.maximum(_row_norms(points - y), delta)
        weights = 1.0 / dist
        total = weights.sum()
        y_next = (2.0 * weights @ points - a) / (2.0 * total)
        step = np.linalg.norm(y_next - y)
        y = y_next
        if step <= INNER_REL_TOL * (1.0 + np.linalg.norm(y)):
            break
    return y


def cadmm_local_solve(data: LocalDataset, z: np.ndarray,
                      neighbor_qs: list[np.ndarray], own_q_prev: np.ndarray,
                      rho: float, params: GmsParams,
                      initial_q: np.ndarray | None = None,
                      return_info: bool = False):
    """One proximal-penalized local solve of the ADMM consensus scheme.

    Minimizes the robust objective plus ``tr(Q Z)`` plus
    ``rho * sum_j ||Q - (Q_k_prev + Q_j_prev)/2||_F^2``; each inner step is
    a trace-one Lyapunov solve whose scatter is ridged by
    ``rho * |neighbors| * I`` and whose additive block is
    ``Z - rho * sum_j (Q_k_prev + Q_j_prev)``.  With ``rho = 0`` and
    ``Z = 0`` this is exactly the plain local solve.
    """
    _require_full_rank(data)
    if rho < 0:
        raise ConfigurationError(f"rho must be >= 0, got {rho}")
    z = check_symmetric(z, "z")
    own_q_prev = check_symmetric(own_q_prev, "own_q_prev")
    neighbor_qs = [check_symmetric(nq, "neighbor q") for nq in neighbor_qs]
    points = data.points
    dim = data.dim
    degree = len(neighbor_qs)
    ridge = rho * degree
    anchors = [0.5 * (own_q_prev + nq) for nq in neighbor_qs]
    constant = z - rho * sum((own_q_prev + nq for nq in neighbor_qs),
                             start=np.zeros((dim, dim)))
    q0 = np.eye(dim) / dim if initial_q is None else _check_membership_h(initial_q, "initial_q")

    def evaluate(q, norms):
        value = _huber_sum(norms, params.delta) + float(np.sum(q * z))
        for anchor in anchors:
            diff = q - anchor
            value += rho * float(np.sum(diff * diff))
        return value

    q, info = _descent_loop(points, constant, params, q0, evaluate, ridge=ridge,
                            collect_info=return_info)
    if return_info:
        info.fixed_point_residual = _fixed_point_residual(
            points, constant, q, params.delta, ridge=ridge)
        return q, info
    return q
