"""Dense symmetric eigendecomposition by cyclic Jacobi rotations.

The solver operates on plain numpy arrays and is deliberately kept off the
differentiation tape: every matrix it decomposes in this package depends
only on graph topology, never on learnable parameters.
"""

from __future__ import annotations

import numpy as np

__all__ = ["symmetric_eig", "AsymmetricMatrixError", "EigenConvergenceError"]

SYMMETRY_TOL = 1e-10
OFF_DIAG_TOL = 1e-12
MAX_SWEEPS = 100
DEFAULT_SIZE_CAP = 1500


class AsymmetricMatrixError(ValueError):
    """Input matrix is not symmetric within tolerance."""


class EigenConvergenceError(RuntimeError):
    """Off-diagonal mass did not fall below threshold within the sweep cap."""


def symmetric_eig(a, *, size_cap=DEFAULT_SIZE_CAP):
    """Eigendecomposition U, lam of a symmetric matrix, eigenvalues ascending.

    Cyclic Jacobi rotations, stopping when the off-diagonal Frobenius norm
    drops below 1e-12 (at most 100 sweeps). Returns (U, lam) with orthogonal
    U whose columns are eigenvectors: a = U @ diag(lam) @ U.T.
    """
    A = np.array(a, dtype=np.float64, copy=True)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"symmetric_eig: expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        raise ValueError("symmetric_eig: empty matrix")
    if n > size_cap:
        raise ValueError(f"symmetric_eig: size {n} exceeds cap {size_cap}")
    asym = np.max(np.abs(A - A.T)) if n > 1 else 0.0
    if asym > SYMMETRY_TOL:
        raise AsymmetricMatrixError(f"matrix asymmetric by {asym:.3e} (tolerance {SYMMETRY_TOL:.0e})")

    V = np.eye(n)
    if n == 1:
        return V, A[0, :1].copy()

    B = 0.5 * (A + A.T)
    off_diag = np.ones((n, n)) - np.eye(n)
    for _ in range(MAX_SWEEPS):
        off = np.sqrt(np.sum((B * off_diag) ** 2))
        if off <= OFF_DIAG_TOL:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = B[p, q]
                if apq == 0.0:
                    continue
                tau = (B[q, q] - B[p, p]) / (2.0 * apq)
                # hypot keeps t finite when tau overflows toward +-inf
                if tau >= 0.0:
                    t = 1.0 / (tau + np.hypot(1.0, tau))
                else:
                    t = -1.0 / (-tau + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                col_p = B[:, p].copy()
                col_q = B[:, q].copy()
                B[:, p] = c * col_p - s * col_q
                B[:, q] = s * col_p + c * col_q
                row_p = B[p, :].copy()
                row_q = B[q, :].copy()
                B[p, :] = c * row_p - s * row_q
                B[q, :] = s * row_p + c * row_q
                B[p, q] = 0.0
                B[q, p] = 0.0

                v_p = V[:, p].copy()
                v_q = V[:, q].copy()
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
    else:
        raise EigenConvergenceError(f"no convergence after {MAX_SWEEPS} sweeps (n={n})")

    lam = np.diag(B).copy()
    order = np.argsort(lam, kind="stable")
    return V[:, order], lam[order]
