"""Eigenvalues of small dense symmetric matrices via cyclic Jacobi rotations.

Used wherever a certificate-grade margin is reported: the rotation sweep is
deterministic, dependency-free in spirit, and fully adequate for the matrix
sizes this package deals with (n + m up to a few dozen).  Bulk sampling paths
use vectorized closed forms / numpy instead, see `batch_eigvalsh`.
"""

from __future__ import annotations

import numpy as np

__all__ = ["jacobi_eigenvalues", "batch_eigvalsh", "require_symmetric"]

JACOBI_OFFDIAG_TOL = 1e-13
JACOBI_MAX_SWEEPS = 60


def require_symmetric(M, name="matrix", tol=1e-10):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("%s must be square, got shape %r" % (name, M.shape))
    scale = max(1.0, np.max(np.abs(M)))
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise ValueError("%s is not symmetric" % name)
    return M


def jacobi_eigenvalues(M, tol=JACOBI_OFFDIAG_TOL):
    """Ascending eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.

    Sweeps rotate away every off-diagonal entry above `tol` (relative to the
    Frobenius norm) until none remain.
    """
    A = require_symmetric(M, tol=1e-9).copy()
    A = (A + A.T) / 2.0
    size = A.shape[0]
    if size == 1:
        return A[0].copy()
    threshold = tol * max(np.linalg.norm(A), 1e-300)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(size - 1):
            for q in range(p + 1, size):
                apq = A[p, q]
                if abs(apq) <= threshold:
                    continue
                off = max(off, abs(apq))
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) \
                    if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                A[p, :], A[q, :] = c * A[p, :] - s * A[q, :], \
                    s * A[p, :] + c * A[q, :]
                A[p, q] = A[q, p] = 0.0
        if off <= threshold:
            break
    return np.sort(np.diag(A))


def batch_eigvalsh(H):
    """Ascending eigenvalues for a stack of symmetric matrices.

    2x2 stacks use the closed form (cheap for large sample batches), larger
    sizes fall back to numpy's symmetric eigensolver.
    """
    H = np.asarray(H, dtype=float)
    if H.shape[-1] == 1:
        return H[..., 0]
    if H.shape[-1] == 2:
        a, b, c = H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]
        half_tr = (a + c) / 2.0
        radius = np.hypot((a - c) / 2.0, b)
        return np.stack([half_tr - radius, half_tr + radius], axis=-1)
    return np.linalg.eigvalsh(H)
