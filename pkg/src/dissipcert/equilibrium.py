"""Optimal equilibria of the weighted stage cost.

The optimal equilibrium minimises the stage cost over all admissible pairs
(x, u) with x = f(x, u).  Interior minimisers satisfy the stationarity
conditions of the Lagrangian

    L(x, u, nu) = l(x, u) + nu' (x - f(x, u)),

which we solve with a damped Newton iteration on the full KKT system,
globalised over a grid of starting points.  For scalar linear-quadratic
problems the closed-form solution is also available and doubles as a
cross-check of the Newton path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .model import combine_costs

__all__ = [
    "EquilibriumSolution", "KKTError", "NewtonDivergence", "SingularKKTMatrix",
    "NoEquilibriumFound", "solve_kkt", "find_global_equilibrium",
    "lq_scalar_closed_form", "check_second_order", "default_starts",
]

NEWTON_TOL = 1e-10          # residual infinity norm for convergence
NEWTON_MAX_ITER = 100
BACKTRACK_FACTOR = 0.5
BACKTRACK_MAX = 30
INTERIOR_SLACK = 1e-9       # strict slack required to call a point interior
TIE_TOL = 1e-9              # cost gap under which minimisers count as tied
REGULARITY_RTOL = 1e-8      # sigma_min > rtol * sigma_max for a regular point
SOSC_TOL = 1e-9
STARTS_PER_DIM = 5


class KKTError(RuntimeError):
    """Base class for equilibrium solver failures."""


class NewtonDivergence(KKTError):
    pass


class SingularKKTMatrix(KKTError):
    def __init__(self, cond):
        super().__init__("singular KKT matrix (condition estimate %.3e)" % cond)
        self.cond = cond


class NoEquilibriumFound(KKTError):
    pass


@dataclass
class EquilibriumSolution:
    x_e: np.ndarray
    u_e: np.ndarray
    nu: np.ndarray
    kkt_residual: float
    cost_value: float
    regular: bool = False
    sosc: bool = False
    interior: bool = True
    tied: list = field(default_factory=list)  # other minimisers within TIE_TOL

    def as_tuple(self):
        return (np.asarray(self.x_e), np.asarray(self.u_e), np.asarray(self.nu))


def _kkt_system(problem, cost_expr, x, u, nu):
    """Residual F, KKT Jacobian, Lagrangian Hessian and constraint Jacobian."""
    n, m, d = problem.n, problem.m, problem.d
    jl = problem.eval_jet2(cost_expr, x, u)
    grad_L = jl.grad.copy()
    hess_L = jl.hess.copy()
    Jh = np.zeros((n, d))
    fval = np.zeros(n)
    for j, fj in enumerate(problem.f):
        jf = problem.eval_jet2(fj, x, u)
        fval[j] = jf.value
        Jh[j] = -jf.grad
        Jh[j, j] += 1.0
        grad_L += nu[j] * Jh[j]
        hess_L -= nu[j] * jf.hess
    h = np.atleast_1d(x) - fval
    F = np.concatenate([grad_L, h])
    K = np.zeros((d + n, d + n))
    K[:d, :d] = hess_L
    K[:d, d:] = Jh.T
    K[d:, :d] = Jh
    return F, K, hess_L, Jh


def solve_kkt(problem, w, guess, cost_expr=None):
    """Newton iteration on the KKT conditions from a single start.

    `guess` is (x0, u0, nu0).  Converges to residual <= 1e-10 or raises
    NewtonDivergence / SingularKKTMatrix / ExprDomainError.
    """
    if cost_expr is None:
        cost_expr = combine_costs(problem, w)
    n, m = problem.n, problem.m
    x = np.atleast_1d(np.asarray(guess[0], dtype=float)).copy()
    u = np.atleast_1d(np.asarray(guess[1], dtype=float)).copy() if m else np.zeros(0)
    nu = np.atleast_1d(np.asarray(guess[2], dtype=float)).copy()
    if x.shape != (n,) or u.shape != (m,) or nu.shape != (n,):
        raise ValueError("guess has wrong dimensions")
    if not np.all(np.isfinite(np.concatenate([x, u, nu]))):
        raise ValueError("guess must be finite")

    F, K, _, _ = _kkt_system(problem, cost_expr, x, u, nu)
    res = np.max(np.abs(F))
    for _ in range(NEWTON_MAX_ITER):
        if res <= NEWTON_TOL:
            break
        try:
            step = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError:
            raise SingularKKTMatrix(np.linalg.cond(K)) from None
        if not np.all(np.isfinite(step)):
            raise SingularKKTMatrix(np.linalg.cond(K))
        t = 1.0
        for _ in range(BACKTRACK_MAX + 1):
            xt = x + t * step[:n]
            ut = u + t * step[n:n + m]
            nut = nu + t * step[n + m:]
            try:
                Ft, Kt, _, _ = _kkt_system(problem, cost_expr, xt, ut, nut)
            except ex.ExprDomainError:
                t *= BACKTRACK_FACTOR
                continue
            rt = np.max(np.abs(Ft))
            if rt < res or res <= NEWTON_TOL:
                break
            t *= BACKTRACK_FACTOR
        else:
            raise NewtonDivergence("step halving exhausted at residual %.3e" % res)
        x, u, nu, F, K, res = xt, ut, nut, Ft, Kt, rt
    else:
        raise NewtonDivergence("no convergence after %d iterations (residual %.3e)"
                               % (NEWTON_MAX_ITER, res))

    cost_value = problem.eval_value(cost_expr, x, u)
    sol = EquilibriumSolution(
        x_e=x, u_e=u, nu=nu, kkt_residual=float(res), cost_value=float(cost_value),
        interior=problem.interior_slack(x, u) > INTERIOR_SLACK)
    sol.regular, sol.sosc = check_second_order(problem, w, sol, cost_expr=cost_expr)
    return sol


def check_second_order(problem, w, solution, cost_expr=None):
    """Regularity (full-rank equilibrium-constraint Jacobian) and strong
    second-order sufficiency (projected Lagrangian Hessian positive definite
    on the constraint null space)."""
    if cost_expr is None:
        cost_expr = combine_costs(problem, w)
    _, _, hess_L, Jh = _kkt_system(problem, cost_expr, solution.x_e,
                                   solution.u_e, solution.nu)
    sigma = np.linalg.svd(Jh, compute_uv=False)
    regular = bool(sigma.size and sigma[-1] > REGULARITY_RTOL * sigma[0] and sigma[0] > 0)
    _, _, vt = np.linalg.svd(Jh)
    rank = int(np.sum(sigma > REGULARITY_RTOL * max(sigma[0], 1e-300)))
    null_basis = vt[rank:].T
    if null_basis.shape[1] == 0:
        sosc = True
    else:
        proj = null_basis.T @ hess_L @ null_basis
        sosc = bool(np.linalg.eigvalsh((proj + proj.T) / 2.0).min() > SOSC_TOL)
    return regular, sosc


def _box_grid(problem, per_dim):
    xlo, xhi, ulo, uhi = problem.box_bounds()
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(xlo, xhi)]
    axes += [np.linspace(lo, hi, per_dim) for lo, hi in zip(ulo, uhi)]
    if not axes:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def default_starts(problem, w=None, per_dim=STARTS_PER_DIM, scored=16,
                   cost_expr=None):
    """Newton starting points: the per-dimension grid over the box (default
    half-width box for unconstrained coordinates) crossed with nu0 = 0, plus
    points pre-scored by equilibrium violation ||x - f(x, u)||.

    Newton's basin around an optimal equilibrium can be small when the
    dynamics is strongly nonlinear, so the plain grid is augmented with the
    `scored` best points of a finer grid ranked by distance to the
    equilibrium manifold (kept mutually spaced apart), each with a
    least-squares multiplier estimate.
    """
    n = problem.n
    starts = [(pt[:n], pt[n:], np.zeros(n)) for pt in _box_grid(problem, per_dim)]
    if scored <= 0:
        return starts

    fine = _box_grid(problem, 4 * per_dim - 1)
    if fine.shape[1] == 0:
        return starts
    xs, us = fine[:, :n], fine[:, n:]
    fvals, valid = problem.f_value_batch(xs, us)
    with np.errstate(invalid="ignore"):
        violation = np.max(np.abs(xs - fvals), axis=-1)
    violation[~valid] = np.inf
    xlo, xhi, ulo, uhi = problem.box_bounds()
    spacing = 0.05 * np.linalg.norm(np.concatenate([xhi - xlo, uhi - ulo]))
    chosen = []
    for idx in np.argsort(violation):
        if not np.isfinite(violation[idx]):
            break
        pt = fine[idx]
        if any(np.linalg.norm(pt - fine[j]) < spacing for j in chosen):
            continue
        chosen.append(idx)
        if len(chosen) >= scored:
            break
    if cost_expr is None:
        cost_expr = combine_costs(problem, w) if w is not None else problem.costs[0]
    for idx in chosen:
        x, u = xs[idx], us[idx]
        try:
            _, grad_l = problem.eval_jet1(cost_expr, x, u)
            Jh = np.zeros((n, problem.d))
            for j, fj in enumerate(problem.f):
                _, gf = problem.eval_jet1(fj, x, u)
                Jh[j] = -gf
                Jh[j, j] += 1.0
            nu0, *_ = np.linalg.lstsq(Jh.T, -grad_l, rcond=None)
        except (ex.ExprDomainError, np.linalg.LinAlgError):
            nu0 = np.zeros(n)
        starts.append((x.copy(), u.copy(), nu0))
    return starts


# -- batched Newton over many starts ----------------------------------------


def _batch_gradients(problem, cost_expr, X, U, NU):
    """Residuals of the stationarity system for a batch of iterates."""
    n, d = problem.n, problem.d
    B = X.shape[0]
    vl, gl, okl = problem.eval_jet1_batch(cost_expr, X, U)
    gradL = gl.copy()
    fv = np.zeros((B, n))
    valid = okl.copy()
    for j, fj in enumerate(problem.f):
        v, g, ok = problem.eval_jet1_batch(fj, X, U)
        fv[:, j] = v
        Jh_j = -g
        Jh_j[:, j] += 1.0
        gradL += NU[:, j:j + 1] * Jh_j
        valid &= ok
    F = np.concatenate([gradL, X - fv], axis=1)
    res = np.where(valid, np.max(np.abs(F), axis=1), np.inf)
    return F, res, valid


def _batch_system(problem, cost_expr, X, U, NU):
    """Residuals plus KKT matrices for a batch of iterates."""
    n, d = problem.n, problem.d
    B = X.shape[0]
    vl, gl, hl, okl = problem.eval_jet2_batch(cost_expr, X, U)
    gradL = gl.copy()
    hessL = hl.copy()
    Jh = np.zeros((B, n, d))
    fv = np.zeros((B, n))
    valid = okl.copy()
    for j, fj in enumerate(problem.f):
        v, g, h, ok = problem.eval_jet2_batch(fj, X, U)
        fv[:, j] = v
        Jh[:, j, :] = -g
        Jh[:, j, j] += 1.0
        gradL += NU[:, j:j + 1] * Jh[:, j, :]
        hessL -= NU[:, j, None, None] * h
        valid &= ok
    F = np.concatenate([gradL, X - fv], axis=1)
    K = np.zeros((B, d + n, d + n))
    K[:, :d, :d] = hessL
    K[:, :d, d:] = np.transpose(Jh, (0, 2, 1))
    K[:, d:, :d] = Jh
    res = np.where(valid, np.max(np.abs(F), axis=1), np.inf)
    return F, K, res, valid


def _batch_solve(K, F):
    """Newton steps for a stack of KKT systems; singular lanes become NaN."""
    try:
        return np.linalg.solve(K, -F[..., None])[..., 0]
    except np.linalg.LinAlgError:
        steps = np.full_like(F, np.nan)
        for i in range(K.shape[0]):
            try:
                steps[i] = np.linalg.solve(K[i], -F[i])
            except np.linalg.LinAlgError:
                pass
        return steps


STALL_WINDOW = 8        # lanes making < 10% progress this many times are dropped
DIVERGE_RES = 1e10


def _newton_batch(problem, cost_expr, starts, max_iter=NEWTON_MAX_ITER):
    """Damped Newton on the KKT system, vectorized over starting points.

    Returns (X, U, NU, residuals); lanes that diverged, stalled or left the
    expression domain carry infinite residual.
    """
    n, m = problem.n, problem.m
    X = np.array([np.atleast_1d(s[0]) for s in starts], dtype=float).reshape(-1, n)
    U = (np.array([np.atleast_1d(s[1]) for s in starts], dtype=float).reshape(-1, m)
         if m else np.zeros((len(starts), 0)))
    NU = np.array([np.atleast_1d(s[2]) for s in starts], dtype=float).reshape(-1, n)
    B = X.shape[0]
    res = np.full(B, np.inf)
    F = K = None

    F, K, res, valid = _batch_system(problem, cost_expr, X, U, NU)
    best = res.copy()
    stall = np.zeros(B, dtype=int)
    for _ in range(max_iter):
        active = (res > NEWTON_TOL) & np.isfinite(res)
        if not active.any():
            break
        idx = np.where(active)[0]
        step = _batch_solve(K[idx], F[idx])
        bad = ~np.all(np.isfinite(step), axis=1)
        res[idx[bad]] = np.inf
        idx = idx[~bad]
        step = step[~bad]
        if idx.size == 0:
            break
        t = np.ones(idx.size)
        searching = np.ones(idx.size, dtype=bool)
        trial_res = np.full(idx.size, np.inf)
        Xt, Ut, NUt = X[idx].copy(), U[idx].copy(), NU[idx].copy()
        for _ in range(BACKTRACK_MAX + 1):
            sel = np.where(searching)[0]
            if sel.size == 0:
                break
            rows = idx[sel]
            Xt[sel] = X[rows] + t[sel, None] * step[sel, :n]
            Ut[sel] = U[rows] + t[sel, None] * step[sel, n:n + m]
            NUt[sel] = NU[rows] + t[sel, None] * step[sel, n + m:]
            _, r_try, _ = _batch_gradients(problem, cost_expr, Xt[sel], Ut[sel], NUt[sel])
            trial_res[sel] = r_try
            improved = r_try < res[rows]
            searching[sel[improved]] = False
            t[sel[~improved]] *= BACKTRACK_FACTOR
        ok = ~searching
        rows = idx[ok]
        X[rows], U[rows], NU[rows] = Xt[ok], Ut[ok], NUt[ok]
        res[idx[searching]] = np.inf  # damping exhausted: give the lane up
        if rows.size:
            F_new, K_new, res_new, _ = _batch_system(problem, cost_expr,
                                                     X[rows], U[rows], NU[rows])
            F[rows], K[rows], res[rows] = F_new, K_new, res_new
            # drop lanes that diverge or grind without real progress
            progress = res_new < 0.9 * best[rows]
            best[rows] = np.minimum(best[rows], res_new)
            stall[rows] = np.where(progress, 0, stall[rows] + 1)
            dead = (res_new > DIVERGE_RES) | (stall[rows] > STALL_WINDOW)
            res[rows[dead]] = np.inf
    return X, U, NU, res


def find_global_equilibrium(problem, w, starts=None, warm=None,
                            cost_expr_override=None):
    """Best KKT point over a multistart sweep.

    All starts run through one vectorized damped-Newton loop.  Returns the
    converged admissible solution with minimal stage cost; ties within 1e-9
    are broken by lexicographically smallest state and reported in `tied`.
    Raises NoEquilibriumFound when no start converges.  A cost expression
    override replaces the weighted cost (used for auxiliary bounds).
    """
    cost_expr = cost_expr_override if cost_expr_override is not None \
        else combine_costs(problem, w)
    if starts is None:
        starts = default_starts(problem, w, cost_expr=cost_expr)
    starts = list(starts)
    if warm is not None:
        starts.insert(0, warm)
    X, U, NU, res = _newton_batch(problem, cost_expr, starts)

    candidates = []
    for i in range(X.shape[0]):
        if not res[i] <= NEWTON_TOL:
            continue
        x, u, nu = X[i], U[i], NU[i]
        # keep only admissible equilibria: inside the box / inequality set
        if not problem.box_contains(x, u, tol=INTERIOR_SLACK):
            continue
        try:
            if any(problem.eval_value(gi, x, u) > INTERIOR_SLACK for gi in problem.g):
                continue
            cost_value = problem.eval_value(cost_expr, x, u)
        except ex.ExprDomainError:
            continue
        candidates.append(EquilibriumSolution(
            x_e=x.copy(), u_e=u.copy(), nu=nu.copy(),
            kkt_residual=float(res[i]), cost_value=float(cost_value)))
    if not candidates:
        raise NoEquilibriumFound("no multistart point converged to an admissible equilibrium")

    # deduplicate converged points
    unique = []
    for sol in candidates:
        if not any(np.max(np.abs(sol.x_e - o.x_e)) < 1e-7
                   and np.max(np.abs(sol.u_e - o.u_e)) < 1e-7 for o in unique):
            unique.append(sol)

    best_value = min(s.cost_value for s in unique)
    tied = [s for s in unique if s.cost_value <= best_value + TIE_TOL]
    tied.sort(key=lambda s: tuple(s.x_e))
    winner = tied[0]
    winner.tied = [(s.x_e.copy(), s.u_e.copy()) for s in tied[1:]]
    winner.interior = problem.interior_slack(winner.x_e, winner.u_e) > INTERIOR_SLACK
    winner.regular, winner.sosc = check_second_order(problem, w, winner, cost_expr=cost_expr)
    return winner


def lq_scalar_closed_form(lq, w, problem=None):
    """Closed-form optimal equilibrium and multiplier for a scalar (n=m=1)
    linear-quadratic problem under weights `w`.

    Solving the stationarity system for l(x,u) = q x^2 + r u^2 + s x + v u
    subject to x = a x + b u gives

        x_e = b (-b s - (1-a) v) / (2 (q b^2 + (1-a)^2 r))
        u_e = (1-a) (-b s - (1-a) v) / (2 (q b^2 + (1-a)^2 r))
        nu  = (q v b - (1-a) r s) / (q b^2 + (1-a)^2 r)

    with the weighted coefficients q, r, s, v.
    """
    if lq.A.shape != (1, 1) or lq.B.shape != (1, 1):
        raise ValueError("closed form requires n = m = 1")
    a, b = float(lq.A[0, 0]), float(lq.B[0, 0])
    Q, R, s_, v_ = lq.weighted(w)
    q, r = float(Q[0, 0]), float(R[0, 0])
    s, v = float(s_[0]), float(v_[0])
    denom = q * b * b + (1.0 - a) ** 2 * r
    if denom == 0.0:
        raise ZeroDivisionError("degenerate problem: q b^2 + (1-a)^2 r = 0")
    core = -b * s - (1.0 - a) * v
    x_e = b * core / (2.0 * denom)
    u_e = (1.0 - a) * core / (2.0 * denom)
    nu = (q * v * b - (1.0 - a) * r * s) / denom
    offset = float(np.dot(w.as_array(), np.asarray(lq.offsets)))
    cost = q * x_e * x_e + r * u_e * u_e + s * x_e + v * u_e + offset
    sol = EquilibriumSolution(
        x_e=np.array([x_e]), u_e=np.array([u_e]), nu=np.array([nu]),
        kkt_residual=0.0, cost_value=float(cost),
        regular=(abs(1.0 - a) + abs(b)) > 0.0, interior=True)
    # SOSC along the constraint null direction (b, 1-a): 2(q b^2 + (1-a)^2 r) > 0
    sol.sosc = denom > 0.0
    if problem is not None:
        sol.interior = problem.interior_slack(sol.x_e, sol.u_e) > INTERIOR_SLACK
    return sol
