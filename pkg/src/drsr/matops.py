"""Dense symmetric linear algebra: eigendecompositions, Lyapunov solves,
and trace-calibrated Lyapunov solves.

Every local dual solver in this package reduces to equations of the form
``P X + X P = B`` with symmetric positive definite ``X``.  They are solved
in the eigenbasis of ``X``: transform ``B``, divide entrywise by
``lam_i + lam_j``, transform back.  This is O(D^3), numerically
transparent, and lets one eigendecomposition be shared by the two solves
of the trace-calibrated variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, SingularCoefficientError, TraceConditionError

#: Relative tolerance for accepting a matrix as symmetric.
SYMMETRY_RTOL = 1e-12

#: Eigenvalue ratio below which a coefficient matrix is rejected as singular.
DEGENERACY_RTOL = 1e-14

#: Residual target for ``solve_lyapunov``: ``1e-10 * (1 + ||B||_F)``.
LYAPUNOV_RTOL = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part ``(a + a.T) / 2`` as a new float array."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def check_symmetric(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate that ``a`` is square and symmetric within tolerance.

    Returns the symmetrized array (float64, C-contiguous).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {a.shape}")
    scale = 1.0 + (np.max(np.abs(a)) if a.size else 0.0)
    dev = np.max(np.abs(a - a.T)) if a.size else 0.0
    if dev > SYMMETRY_RTOL * scale:
        raise PreconditionError(
            f"{name} is not symmetric: max asymmetry {dev:.3e} exceeds "
            f"{SYMMETRY_RTOL:.0e} * (1 + max|entries|)")
    return np.ascontiguousarray(symmetrize(a))


def fix_eigenvector_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so the entry of largest magnitude is positive.

    Makes eigendecompositions deterministic up to exact eigenvalue ties,
    which keeps diagnostics bitwise reproducible.
    """
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigensystem of a symmetric matrix.

    eigenvalues are sorted ascending; eigenvectors holds the matching
    orthonormal columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Return ``V diag(lam) V.T``."""
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


def spectral_decompose(s: np.ndarray) -> SpectralDecomposition:
    """Eigendecompose a symmetric matrix with a deterministic sign convention.

    Raises PreconditionError if the input is not symmetric within
    tolerance.
    """
    s = check_symmetric(s, "spectral_decompose input")
    eigenvalues, eigenvectors = np.linalg.eigh(s)
    return SpectralDecomposition(eigenvalues, fix_eigenvector_signs(eigenvectors))


def _check_positive_definite(eigenvalues: np.ndarray) -> None:
    lam_max = float(eigenvalues[-1])
    lam_min = float(eigenvalues[0])
    if lam_max <= 0.0 or lam_min <= DEGENERACY_RTOL * lam_max:
        raise SingularCoefficientError(
            f"coefficient matrix is not positive definite "
            f"(eigenvalue range [{lam_min:.3e}, {lam_max:.3e}])")


def _lyapunov_in_eigenbasis(eigenvalues: np.ndarray, eigenvectors: np.ndarray,
                            b: np.ndarray) -> np.ndarray:
    """Solve ``P X + X P = B`` given the eigensystem of ``X``. No checks."""
    denom = eigenvalues[:, None] + eigenvalues[None, :]
    b_hat = eigenvectors.T @ b @ eigenvectors
    p = eigenvectors @ (b_hat / denom) @ eigenvectors.T
    return symmetrize(p)


def solve_lyapunov(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``P X + X P = B`` for symmetric ``P``.

    ``x`` must be symmetric positive definite and ``b`` symmetric.  The
    solution satisfies ``||P X + X P - B||_F <= 1e-10 * (1 + ||B||_F)``;
    one or two refinement sweeps in the same eigenbasis absorb the loss
    of accuracy on badly conditioned ``x``.
    """
    x = check_symmetric(x, "x")
    b = check_symmetric(b, "b")
    if x.shape != b.shape:
        raise PreconditionError(f"shape mismatch: x {x.shape} vs b {b.shape}")
    eigenvalues, eigenvectors = np.linalg.eigh(x)
    _check_positive_definite(eigenvalues)
    p = _lyapunov_in_eigenbasis(eigenvalues, eigenvectors, b)
    tol = LYAPUNOV_RTOL * (1.0 + np.linalg.norm(b, "fro"))
    for _ in range(3):
        residual = b - (p @ x + x @ p)
        if np.linalg.norm(residual, "fro") <= 0.5 * tol:
            break
        p = symmetrize(p + _lyapunov_in_eigenbasis(eigenvalues, eigenvectors, residual))
    return p


def _trace_one_in_eigenbasis(eigenvalues: np.ndarray, a_hat: np.ndarray
                             ) -> tuple[np.ndarray, float]:
    """Trace-one solution of ``P X + X P + A = c I`` in the eigenbasis of X.

    Returns ``(P_hat, c)``.  Follows the two-solve procedure: the c=0
    solution has trace ``tr(-A_hat / (lam_i + lam_j))`` on the diagonal,
    and the trace of the solution is linear in ``c`` with slope
    ``tr(X^-1) / 2``, so one correction lands exactly on trace one.
    """
    denom = eigenvalues[:, None] + eigenvalues[None, :]
    trace_qstar = float(np.trace(-a_hat / denom))
    inv_trace = float(np.sum(1.0 / eigenvalues))
    c = 2.0 * (1.0 - trace_qstar) / inv_trace
    p_hat = (c * np.eye(len(eigenvalues)) - a_hat) / denom
    return p_hat, c


def solve_trace_one_lyapunov(x: np.ndarray, a: np.ndarray
                             ) -> tuple[np.ndarray, float]:
    """Solve ``P X + X P + A = c I`` with ``c`` calibrated so ``tr(P) = 1``.

    ``x`` must be symmetric positive definite, ``a`` symmetric and
    traceless.  Returns ``(P, c)``.  The solution is the unique symmetric
    one; it is additionally positive definite whenever the spectral norm
    of ``a`` is small enough relative to ``x``.
    """
    x = check_symmetric(x, "x")
    a = check_symmetric(a, "a")
    if x.shape != a.shape:
        raise PreconditionError(f"shape mismatch: x {x.shape} vs a {a.shape}")
    trace_a = float(np.trace(a))
    if abs(trace_a) > 1e-8 * (1.0 + np.linalg.norm(a, "fro")):
        raise TraceConditionError(f"a must be traceless, got tr(a) = {trace_a:.3e}")
    eigenvalues, eigenvectors = np.linalg.eigh(x)
    _check_positive_definite(eigenvalues)
    a_hat = eigenvectors.T @ a @ eigenvectors
    p_hat, c = _trace_one_in_eigenbasis(eigenvalues, a_hat)
    p = symmetrize(eigenvectors @ p_hat @ eigenvectors.T)
    return p, c
