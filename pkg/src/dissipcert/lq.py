"""Linear-quadratic analysis: feasibility of the dissipativity matrix
inequality Q + P - A'PA > 0, synthesis of quadratic-plus-linear storage
functions, convex combination of solutions across weights, and the
linearity-in-weight test for the equilibrium multiplier.

The matrix inequality is attacked with a three-stage heuristic (P = 0, the
discrete Lyapunov series when A is Schur stable, then projected gradient
ascent on the smallest eigenvalue).  The heuristic can miss feasible
instances; that incompleteness surfaces honestly as `feasible=False`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import jacobi_eigenvalues, require_symmetric
from .equilibrium import lq_scalar_closed_form
from .model import WeightVector
from .storage import StorageFunction

__all__ = [
    "LmiSolution", "InfeasibleLMI", "solve_lmi", "lmi_margin",
    "combine_storage_matrices", "synthesize_quadratic_storage",
    "check_nu_linearity", "NuLinearityReport",
]

LMI_MARGIN_TOL = 1e-9
LYAPUNOV_TERM_TOL = 1e-14
ASCENT_ITERATIONS = 500
ASCENT_STEP = 0.1


class InfeasibleLMI(RuntimeError):
    pass


@dataclass
class LmiSolution:
    P: np.ndarray
    margin: float          # smallest eigenvalue of Q + P - A'PA
    feasible: bool         # margin > LMI_MARGIN_TOL
    psd_P: bool            # P itself positive semidefinite


def lmi_margin(A, Q, P):
    """Exact smallest eigenvalue of Q + P - A'PA (cyclic Jacobi)."""
    M = Q + P - A.T @ P @ A
    return float(jacobi_eigenvalues(M)[0])


def _lyapunov_series(A):
    """P = sum_k (A')^k A^k, truncated when the term norm drops below
    LYAPUNOV_TERM_TOL; requires the spectral radius of A to be < 1."""
    n = A.shape[0]
    P = np.eye(n)
    term = np.eye(n)
    for _ in range(100000):
        term = A.T @ term @ A
        norm = np.linalg.norm(term)
        if not np.isfinite(norm):
            raise FloatingPointError("Lyapunov series diverged")
        P += term
        if norm < LYAPUNOV_TERM_TOL:
            break
    return (P + P.T) / 2.0


def _ascent(A, Q):
    """Projected gradient ascent on P -> lambda_min(Q + P - A'PA) over
    symmetric matrices; returns the best iterate found."""
    n = A.shape[0]
    P = np.zeros((n, n))
    best_P, best_margin = P.copy(), lmi_margin(A, Q, P)
    for _ in range(ASCENT_ITERATIONS):
        M = Q + P - A.T @ P @ A
        vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
        v = vecs[:, 0]
        Av = A @ v
        G = np.outer(v, v) - np.outer(Av, Av)
        P = P + ASCENT_STEP * (G + G.T) / 2.0
        margin = lmi_margin(A, Q, P)
        if margin > best_margin:
            best_margin, best_P = margin, P.copy()
        if best_margin > 10.0 * LMI_MARGIN_TOL:
            break
    return best_P, best_margin


def solve_lmi(A, Q, require_psd=False):
    """Search for a symmetric P with Q + P - A'PA > 0.

    Strategy: P = 0 (works iff Q is definite), the discrete Lyapunov series
    when A is Schur stable, then gradient ascent on the smallest eigenvalue.
    With `require_psd`, a feasible P is nudged to a positive definite one by
    adding eps*I with eps small enough to preserve the margin.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    Q = require_symmetric(np.atleast_2d(np.asarray(Q, dtype=float)), "Q")
    if jacobi_eigenvalues(Q)[0] < -1e-10:
        raise ValueError("Q must be positive semidefinite")

    candidates = [np.zeros_like(Q)]
    if np.max(np.abs(np.linalg.eigvals(A))) < 1.0 - 1e-12:
        candidates.append(_lyapunov_series(A))
    best_P, best_margin = None, -np.inf
    for P in candidates:
        margin = lmi_margin(A, Q, P)
        if margin > best_margin:
            best_P, best_margin = P, margin
    if best_margin <= LMI_MARGIN_TOL:
        P, margin = _ascent(A, Q)
        if margin > best_margin:
            best_P, best_margin = P, margin

    feasible = best_margin > LMI_MARGIN_TOL
    P = best_P
    if feasible and require_psd:
        # eps keeps feasibility: the margin drops by at most eps*(1+||A||^2)
        norm_A2 = np.linalg.norm(A, 2) ** 2
        for _ in range(200):
            if jacobi_eigenvalues(P)[0] > 0.0:
                break
            eps = lmi_margin(A, Q, P) / 2.0 / (1.0 + norm_A2)
            if eps <= 0.0:
                break
            P = P + eps * np.eye(P.shape[0])
        best_margin = lmi_margin(A, Q, P)
        feasible = best_margin > LMI_MARGIN_TOL
    psd_P = bool(jacobi_eigenvalues(P)[0] >= -1e-12)
    return LmiSolution(P=P, margin=float(best_margin), feasible=bool(feasible),
                       psd_P=psd_P)


def combine_storage_matrices(P1, P2, mu):
    """mu*P1 + (1-mu)*P2; the caller re-verifies the margin for the combined
    Q (it is bounded below by the combined margins, by concavity)."""
    P1 = require_symmetric(np.atleast_2d(np.asarray(P1, dtype=float)), "P1")
    P2 = require_symmetric(np.atleast_2d(np.asarray(P2, dtype=float)), "P2")
    return mu * P1 + (1.0 - mu) * P2


def synthesize_quadratic_storage(lq, w, equilibrium, require_psd=False):
    """Storage lam(x) = x'P x + p'x for the weighted cost.

    P solves the matrix inequality for the weighted Q; the linear part is
    pinned by the gradient identity grad lam(x_e) = nu, i.e.
    p = nu - 2 P x_e.  Raises InfeasibleLMI when the search fails.
    """
    Q, _, _, _ = lq.weighted(w)
    sol = solve_lmi(lq.A, Q, require_psd=require_psd)
    if not sol.feasible:
        raise InfeasibleLMI(
            "matrix inequality search failed (best margin %.3e)" % sol.margin)
    x_e = np.asarray(equilibrium.x_e, dtype=float)
    nu = np.asarray(equilibrium.nu, dtype=float)
    p = nu - 2.0 * sol.P @ x_e
    return StorageFunction(sol.P, p, provenance="LQ-synthesized")


@dataclass
class NuLinearityReport:
    max_deviation: float      # max over the grid of |nu_mu - chord|
    argmax_mu: float
    nu_endpoints: tuple       # (nu at mu=1, nu at mu=0)
    condition_a_eq_1: bool    # sufficient condition a = 1
    condition_qr: bool        # sufficient condition q1 r2 = q2 r1
    grid: np.ndarray
    nu_values: np.ndarray


def check_nu_linearity(lq, grid_size=101):
    """Deviation of the equilibrium multiplier from linearity in the weight.

    Evaluates nu_mu on a uniform grid via the scalar closed form and compares
    with the chord mu*nu_1 + (1-mu)*nu_2.  Also reports whether one of the
    sufficient conditions for exact linearity holds: a = 1 or q1 r2 = q2 r1.
    """
    if lq.A.shape != (1, 1) or lq.k != 2:
        raise ValueError("nu-linearity check requires a scalar two-cost problem")
    grid = np.linspace(0.0, 1.0, grid_size)
    nu1 = lq_scalar_closed_form(lq, WeightVector.pair(1.0)).nu[0]
    nu2 = lq_scalar_closed_form(lq, WeightVector.pair(0.0)).nu[0]
    nus = np.array([lq_scalar_closed_form(lq, WeightVector.pair(mu)).nu[0]
                    for mu in grid])
    deviation = np.abs(nus - (grid * nu1 + (1.0 - grid) * nu2))
    worst = int(np.argmax(deviation))
    a = float(lq.A[0, 0])
    q1, q2 = float(lq.Q[0][0, 0]), float(lq.Q[1][0, 0])
    r1, r2 = float(lq.R[0][0, 0]), float(lq.R[1][0, 0])
    scale = max(1.0, abs(q1 * r2), abs(q2 * r1))
    return NuLinearityReport(
        max_deviation=float(deviation[worst]),
        argmax_mu=float(grid[worst]),
        nu_endpoints=(nu1, nu2),
        condition_a_eq_1=abs(a - 1.0) <= 1e-12,
        condition_qr=abs(q1 * r2 - q2 * r1) <= 1e-12 * scale,
        grid=grid, nu_values=nus)
