"""Finite-horizon optimal control by direct single shooting, and the
weighted-sum sweep that traces the nondominated set of a two-cost problem.

The decision variable is the control sequence; states follow from the exact
rollout.  Gradients are exact via the backward chain rule (adjoint recursion)
through per-step first-order jets.  Minimisation uses projected gradient with
Barzilai-Borwein steps and a nonmonotone line search; box constraints on the
input are handled by projection, state-box violations by a stiff quadratic
penalty (single shooting cannot project states).

Everything is vectorized over "lanes" (restart x weight combinations), which
is what keeps a 101-point weight sweep with multistart affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import WeightVector

__all__ = ["Trajectory", "ParetoPoint", "solve_ocp", "pareto_sweep",
           "dominance_filter"]

OCP_TOL = 1e-8               # projected-gradient stationarity target
OCP_MAX_ITER = 50000
STATE_PENALTY = 1e6
NONMONOTONE_MEMORY = 10
ARMIJO_C = 1e-4
LINESEARCH_MAX = 30
BB_MIN, BB_MAX = 1e-10, 1e6
LINESEARCH_FAILS = 3         # consecutive exhausted searches before giving up
PLATEAU_WINDOW = 500         # iterations without progress -> stop the lane
PLATEAU_RTOL = 1e-10
PLATEAU_RES_FACTOR = 0.95    # residual contraction that counts as progress
RESTART_SCALE = 0.8          # random-init range for unconstrained inputs
DEFAULT_RESTARTS = 5
LBFGS_MEMORY = 8             # curvature pairs kept per lane (unconstrained runs)


@dataclass
class Trajectory:
    x: np.ndarray            # (N+1, n) states, exact rollout
    u: np.ndarray            # (N, m) inputs
    J: float                 # achieved weighted cost (penalty excluded)
    J_components: tuple      # per-cost sums along the trajectory
    converged: bool
    proj_grad: float         # final stationarity residual
    iterations: int


@dataclass
class ParetoPoint:
    mu: float
    J1: float
    J2: float
    trajectory: Trajectory


class _Engine:
    """Batched rollout / objective / adjoint-gradient evaluation."""

    def __init__(self, problem, x0, N, mu_matrix):
        self.p = problem
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.N = N
        self.W = np.asarray(mu_matrix, dtype=float)     # (L, k) lane weights
        if problem.u_box is not None:
            box = np.array(problem.u_box, dtype=float)
            self.u_lo, self.u_hi = box[:, 0], box[:, 1]
        else:
            self.u_lo = self.u_hi = None
        if problem.x_box is not None:
            box = np.array(problem.x_box, dtype=float)
            self.x_lo, self.x_hi = box[:, 0], box[:, 1]
        else:
            self.x_lo = self.x_hi = None

    @property
    def x_shape(self):
        return (self.N + 1, self.p.n)

    def project(self, U):
        if self.u_lo is None:
            return U
        return np.clip(U, self.u_lo, self.u_hi)

    def rollout(self, U):
        p, N = self.p, self.N
        L = U.shape[0]
        X = np.zeros((L, N + 1, p.n))
        X[:, 0] = self.x0
        valid = np.ones(L, dtype=bool)
        for k in range(N):
            fv, ok = p.f_value_batch(X[:, k, :], U[:, k, :])
            X[:, k + 1] = fv
            valid &= ok
        return X, valid

    def _penalty_terms(self, X):
        """Quadratic state-box penalty and its x-gradients for steps 1..N."""
        if self.x_lo is None:
            return 0.0, None
        tail = X[:, 1:, :]
        lo = np.maximum(self.x_lo - tail, 0.0)
        hi = np.maximum(tail - self.x_hi, 0.0)
        pen = STATE_PENALTY * np.sum(lo ** 2 + hi ** 2, axis=(1, 2))
        dpen = 2.0 * STATE_PENALTY * (hi - lo)          # (L, N, n)
        return pen, dpen

    def lane_weights(self, rows=None):
        return self.W if rows is None else self.W[rows]

    def objective(self, U, rows=None):
        """Penalised objective per lane (inf when the rollout leaves the
        expression domain).  `rows` selects the weight rows for lane subsets."""
        p, N = self.p, self.N
        W = self.lane_weights(rows)
        L = U.shape[0]
        X, valid = self.rollout(U)
        xs = X[:, :N, :].reshape(L * N, p.n)
        us = U.reshape(L * N, p.m)
        J = np.zeros(L)
        for i, cost in enumerate(p.costs):
            lv, ok = p.eval_value_batch(cost, xs, us)
            valid &= ok.reshape(L, N).all(axis=1)
            J += W[:, i] * np.where(np.isfinite(lv), lv, 0.0).reshape(L, N).sum(axis=1)
        pen, _ = self._penalty_terms(X)
        J = J + pen
        return np.where(valid, J, np.inf), X, valid

    def objective_grad(self, U, rows=None, rollout=None):
        """Penalised objective, gradient w.r.t. U, and per-cost sums.

        `rollout` may carry a precomputed (X, valid) pair for these controls
        (saves repeating the forward pass after a line search)."""
        p, N = self.p, self.N
        W = self.lane_weights(rows)
        L = U.shape[0]
        if rollout is None:
            X, valid = self.rollout(U)
        else:
            X, valid = rollout
            valid = valid.copy()
        xs = X[:, :N, :].reshape(L * N, p.n)
        us = U.reshape(L * N, p.m)
        n, m, d = p.n, p.m, p.d

        lgrad = np.zeros((L * N, d))
        J = np.zeros(L)
        comps = np.zeros((L, p.k))
        for i, cost in enumerate(p.costs):
            lv, lg, ok = p.eval_jet1_batch(cost, xs, us)
            valid &= ok.reshape(L, N).all(axis=1)
            sums = np.where(np.isfinite(lv), lv, 0.0).reshape(L, N).sum(axis=1)
            comps[:, i] = sums
            J += W[:, i] * sums
            lgrad += np.repeat(W[:, i], N)[:, None] * np.where(np.isfinite(lg), lg, 0.0)

        A = np.zeros((L * N, n, n))
        Bm = np.zeros((L * N, n, m))
        for j, fj in enumerate(p.f):
            _, g, ok = p.eval_jet1_batch(fj, xs, us)
            valid &= ok.reshape(L, N).all(axis=1)
            g = np.where(np.isfinite(g), g, 0.0)
            A[:, j, :] = g[:, :n]
            Bm[:, j, :] = g[:, n:]
        A = A.reshape(L, N, n, n)
        Bm = Bm.reshape(L, N, n, m)
        lgx = lgrad[:, :n].reshape(L, N, n)
        lgu = lgrad[:, n:].reshape(L, N, m)

        pen, dpen = self._penalty_terms(X)
        J = J + pen

        G = np.zeros((L, N, m))
        adj = np.zeros((L, n)) if dpen is None else dpen[:, N - 1, :].copy()
        for k in range(N - 1, -1, -1):
            G[:, k] = lgu[:, k] + np.einsum("lij,li->lj", Bm[:, k], adj)
            adj = lgx[:, k] + np.einsum("lij,li->lj", A[:, k], adj)
            if dpen is not None and k >= 1:
                adj += dpen[:, k - 1, :]
        return np.where(valid, J, np.inf), G, comps


class _LbfgsState:
    """Per-lane limited-memory curvature pairs with a vectorized two-loop
    recursion.  The 10-step dynamics chain makes the control Hessian badly
    conditioned, where plain BB steps crawl; curvature pairs fix that for
    unconstrained inputs (with boxes the projected BB direction is kept,
    since it respects the feasible arc)."""

    def __init__(self, L, dim):
        self.S = np.zeros((L, LBFGS_MEMORY, dim))
        self.Y = np.zeros((L, LBFGS_MEMORY, dim))
        self.rho = np.zeros((L, LBFGS_MEMORY))
        self.valid = np.zeros((L, LBFGS_MEMORY), dtype=bool)
        self.pos = np.zeros(L, dtype=int)

    def push(self, rows, s, y):
        sy = np.sum(s * y, axis=1)
        good = sy > 1e-12 * np.linalg.norm(s, axis=1) * np.linalg.norm(y, axis=1)
        rows, s, y, sy = rows[good], s[good], y[good], sy[good]
        if rows.size == 0:
            return
        slot = self.pos[rows] % LBFGS_MEMORY
        self.S[rows, slot] = s
        self.Y[rows, slot] = y
        self.rho[rows, slot] = 1.0 / sy
        self.valid[rows, slot] = True
        self.pos[rows] += 1

    def direction(self, rows, g, fallback_scale):
        """-H g via the two-loop recursion; lanes without pairs fall back to
        -fallback_scale * g."""
        q = g.copy()
        k = rows.size
        alphas = np.zeros((k, LBFGS_MEMORY))
        order = []   # most recent first
        for back in range(1, LBFGS_MEMORY + 1):
            slot = (self.pos[rows] - back) % LBFGS_MEMORY
            ok = self.valid[rows, slot] & (self.pos[rows] >= back)
            order.append((slot, ok))
            a = self.rho[rows, slot] * np.sum(self.S[rows, slot] * q, axis=1)
            a = np.where(ok, a, 0.0)
            alphas[:, back - 1] = a
            q -= a[:, None] * np.where(ok[:, None], self.Y[rows, slot], 0.0)
        newest, ok_new = order[0]
        sy = np.sum(self.S[rows, newest] * self.Y[rows, newest], axis=1)
        yy = np.sum(self.Y[rows, newest] ** 2, axis=1)
        gamma = np.where(ok_new & (yy > 0), sy / np.where(yy > 0, yy, 1.0),
                         fallback_scale)
        r = gamma[:, None] * q
        for back in range(LBFGS_MEMORY, 0, -1):
            slot, ok = order[back - 1]
            b = self.rho[rows, slot] * np.sum(self.Y[rows, slot] * r, axis=1)
            b = np.where(ok, b, 0.0)
            r += (alphas[:, back - 1] - b)[:, None] * \
                np.where(ok[:, None], self.S[rows, slot], 0.0)
        d = -r
        # enforce descent; otherwise fall back to the scaled gradient
        gd = np.sum(g * d, axis=1)
        bad = gd > -1e-12 * np.linalg.norm(g, axis=1) * np.linalg.norm(d, axis=1)
        d[bad] = -fallback_scale[bad, None] * g[bad]
        return d


def _spg(engine, U0, max_iter, tol):
    """Projected-gradient descent with BB steps and a nonmonotone line
    search, vectorized over lanes; unconstrained runs take L-BFGS directions.

    Per-lane state: step length, reference history, consecutive line-search
    failures, best iterate so far.  A lane stops when its stationarity
    residual drops below `tol`, its objective plateaus, or the line search
    keeps failing.  Returns the best controls per lane with objective,
    residual and iteration count.
    """
    U = engine.project(U0.copy())
    L = U.shape[0]
    J, G, _ = engine.objective_grad(U)
    gnorm = np.maximum(np.max(np.abs(np.where(np.isfinite(G), G, 0.0)
                                     .reshape(L, -1)), axis=1), 1e-12)
    alpha0 = np.clip(1.0 / gnorm, BB_MIN, BB_MAX)
    alpha = alpha0.copy()
    hist = np.repeat(np.where(np.isfinite(J), J, np.inf)[:, None],
                     NONMONOTONE_MEMORY, axis=1)
    stopped = ~np.isfinite(J)       # lanes whose start is already invalid
    fails = np.zeros(L, dtype=int)
    U_best = U.copy()
    J_best = J.copy()
    last_progress = np.zeros(L, dtype=int)
    res_best = np.full(L, np.inf)
    residual = np.full(L, np.inf)
    lbfgs = None if engine.u_lo is not None else _LbfgsState(L, U[0].size)
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(max_iter):
            iterations = it + 1
            step1 = engine.project(U - G) - U
            residual = np.max(np.abs(step1.reshape(L, -1)), axis=1)
            residual[~np.isfinite(residual)] = np.inf
            contracting = residual < PLATEAU_RES_FACTOR * res_best
            res_best = np.minimum(res_best, residual)
            last_progress[contracting & ~stopped] = it
            done = ~stopped & (residual <= tol)
            # a lane ending at stationarity keeps that iterate (its J matches
            # the best seen up to rounding, and the residual is what counts)
            U_best[done] = U[done]
            J_best[done] = J[done]
            stopped |= done
            if stopped.all():
                break
            act = np.where(~stopped)[0]
            if lbfgs is None:
                D = engine.project(U[act] - alpha[act, None, None] * G[act]) - U[act]
            else:
                d = lbfgs.direction(act, G[act].reshape(act.size, -1), alpha[act])
                D = d.reshape(U[act].shape)
            delta = np.sum(G[act] * D, axis=(1, 2))
            ref = hist[act].max(axis=1)
            lam = np.ones(act.size)
            searching = np.ones(act.size, dtype=bool)
            X_acc = np.zeros((act.size,) + engine.x_shape)
            ok_acc = np.zeros(act.size, dtype=bool)
            J_acc = np.full(act.size, np.inf)
            noise = 1e-14 * np.maximum(1.0, np.abs(ref))
            for _ in range(LINESEARCH_MAX + 1):
                sel = np.where(searching)[0]
                if sel.size == 0:
                    break
                Ut = U[act[sel]] + lam[sel, None, None] * D[sel]
                Jt_sel, Xt, okt = engine.objective(Ut, rows=act[sel])
                # the noise term keeps rounding in J from rejecting the tiny
                # predicted decreases that occur near stationarity
                okay = Jt_sel <= ref[sel] + ARMIJO_C * lam[sel] * delta[sel] + noise[sel]
                acc = sel[okay]
                X_acc[acc] = Xt[okay]
                ok_acc[acc] = okt[okay]
                J_acc[acc] = Jt_sel[okay]
                searching[acc] = False
                lam[sel[~okay]] *= 0.5
            moved = ~searching
            rows = act[moved]
            # exhausted searches: shrink the step and retry a few times
            bad = act[searching]
            fails[bad] += 1
            alpha[bad] = np.maximum(alpha[bad] * 1e-3, BB_MIN)
            stopped[bad[fails[bad] >= LINESEARCH_FAILS]] = True
            if rows.size == 0:
                continue
            fails[rows] = 0
            U_new = U[rows] + lam[moved, None, None] * D[moved]
            J_new, G_new, _ = engine.objective_grad(
                U_new, rows=rows, rollout=(X_acc[moved], ok_acc[moved]))
            S = (U_new - U[rows]).reshape(rows.size, -1)
            Y = (G_new - G[rows]).reshape(rows.size, -1)
            sy = np.sum(S * Y, axis=1)
            ss = np.sum(S * S, axis=1)
            bb = np.where(sy > 1e-30, ss / np.where(sy > 1e-30, sy, 1.0),
                          np.minimum(alpha[rows] * 10.0, BB_MAX))
            alpha[rows] = np.clip(bb, BB_MIN, BB_MAX)
            if lbfgs is not None:
                lbfgs.push(rows, S, Y)
            U[rows], J[rows], G[rows] = U_new, J_new, G_new
            hist[rows] = np.roll(hist[rows], 1, axis=1)
            hist[rows, 0] = np.where(np.isfinite(J_new), J_new, np.inf)
            gain = J_best[rows] - J_new
            better = gain > 0
            U_best[rows[better]] = U_new[better]
            progressed = gain > PLATEAU_RTOL * np.maximum(1.0, np.abs(J_best[rows]))
            J_best[rows[better]] = J_new[better]
            last_progress[rows[progressed]] = it
            # stop lanes that have stopped making headway
            stale = np.where(~stopped)[0]
            stale = stale[it - last_progress[stale] > PLATEAU_WINDOW]
            stopped[stale] = True
        final_res = np.max(np.abs((engine.project(U - G) - U).reshape(L, -1)), axis=1)
        better = (J < J_best) | (np.isfinite(final_res) & (final_res <= tol))
        U_best[better] = U[better]
        J_best[better] = J[better]
        J_fin, G_fin, _ = engine.objective_grad(U_best)
        step1 = engine.project(U_best - G_fin) - U_best
        residual = np.max(np.abs(step1.reshape(L, -1)), axis=1)
        residual[~np.isfinite(residual)] = np.inf
    return U_best, np.where(np.isfinite(J_fin), J_fin, np.inf), residual, iterations


def _initial_controls(problem, N, restarts, seed):
    """Deterministic stack of starting control sequences."""
    m = problem.m
    if problem.u_box is not None:
        box = np.array(problem.u_box, dtype=float)
        lo, hi = box[:, 0], box[:, 1]
        base = (lo + hi) / 2.0
    else:
        lo, hi = np.full(m, -RESTART_SCALE), np.full(m, RESTART_SCALE)
        base = np.zeros(m)
    inits = [np.tile(base, (N, 1))]
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        inits.append(rng.uniform(lo, hi, size=(N, m)))
    return np.stack(inits)          # (restarts+1, N, m)


def _components(problem, x0, N, U):
    """Exact rollout and per-cost sums for a stack of control sequences."""
    engine = _Engine(problem, x0, N, np.zeros((U.shape[0], problem.k)))
    X, valid = engine.rollout(U)
    L = U.shape[0]
    xs = X[:, :N, :].reshape(L * N, problem.n)
    us = U.reshape(L * N, problem.m)
    comps = np.zeros((L, problem.k))
    for i, cost in enumerate(problem.costs):
        lv, ok = problem.eval_value_batch(cost, xs, us)
        valid &= ok.reshape(L, N).all(axis=1)
        comps[:, i] = np.where(np.isfinite(lv), lv, 0.0).reshape(L, N).sum(axis=1)
    return X, comps, valid


def solve_ocp(problem, w, x0, N, restarts=DEFAULT_RESTARTS, seed=0,
              warm_start=None, max_iter=OCP_MAX_ITER, tol=OCP_TOL):
    """Locally optimal control sequence for the weighted cost from `x0` over
    horizon N, best of `restarts`+1 deterministic starts (plus an optional
    warm start).  Non-convergence returns the best point found, flagged."""
    if N < 1:
        raise ValueError("horizon must be at least 1")
    if not problem.state_in_X(x0):
        raise ValueError("x0 violates the state box")
    inits = _initial_controls(problem, N, restarts, seed)
    if warm_start is not None:
        inits = np.vstack([np.asarray(warm_start, dtype=float)[None], inits])
    L = inits.shape[0]
    W = np.tile(w.as_array(), (L, 1))
    engine = _Engine(problem, x0, N, W)
    U, J, residual, iterations = _spg(engine, inits, max_iter, tol)
    best = int(np.argmin(np.where(np.isfinite(J), J, np.inf)))
    if not np.isfinite(J[best]):
        raise RuntimeError("every start left the expression domain")
    X, comps, valid = _components(problem, x0, N, U[best][None])
    comps_t = tuple(float(c) for c in comps[0])
    return Trajectory(x=X[0], u=U[best].copy(),
                      J=float(np.dot(w.as_array(), comps_t)),
                      J_components=comps_t,
                      converged=bool(residual[best] <= tol),
                      proj_grad=float(residual[best]), iterations=iterations)


def dominance_filter(points, rel_tol=1e-9):
    """Nondominated subset of (J1, J2) pairs, sorted by J1 ascending.

    Exact duplicates (within relative tolerance) collapse to one point, so
    identical objectives yield a single front point.
    """
    order = sorted(range(len(points)), key=lambda i: (points[i][0], points[i][1]))
    kept = []
    best_J2 = np.inf
    for i in order:
        J1, J2 = points[i]
        if kept:
            pJ1, pJ2 = points[kept[-1]]
            scale1 = max(1.0, abs(J1), abs(pJ1))
            scale2 = max(1.0, abs(J2), abs(pJ2))
            if abs(J1 - pJ1) <= rel_tol * scale1 and abs(J2 - pJ2) <= rel_tol * scale2:
                continue
        if J2 < best_J2:
            kept.append(i)
            best_J2 = J2
    return kept


def pareto_sweep(problem, x0, N, K, restarts=DEFAULT_RESTARTS, seed=0,
                 max_iter=OCP_MAX_ITER, tol=OCP_TOL):
    """Weighted-sum sweep over K weights: solve all weight/restart lanes in
    one vectorized run, cross-polish candidates across weights, then filter
    to the nondominated set (sorted by the first objective).

    Returns (pareto_points, per_weight_results) where per_weight_results is a
    list of (mu, Trajectory-or-None, error-string-or-None).
    """
    if K < 2:
        raise ValueError("need at least two weights")
    if problem.k != 2:
        raise ValueError("the sweep traces two objectives")
    grid = np.linspace(0.0, 1.0, K)
    inits = _initial_controls(problem, N, restarts, seed)   # shared by groups
    R = inits.shape[0]
    L = K * R
    U0 = np.tile(inits, (K, 1, 1))
    W = np.repeat(np.stack([grid, 1.0 - grid], axis=1), R, axis=0)
    engine = _Engine(problem, x0, N, W)
    U, J, residual, iterations = _spg(engine, U0, max_iter, tol)

    # per-weight champion lanes
    J_groups = np.where(np.isfinite(J), J, np.inf).reshape(K, R)
    champions = np.argmin(J_groups, axis=1)
    champ_lane = np.array([k * R + champions[k] for k in range(K)])
    champ_U = U[champ_lane].copy()
    champ_res = residual[champ_lane].copy()

    # cross-polish: a trajectory found at another weight may scalarize
    # better; re-minimise from such candidates until no weight improves
    champ_J = J_groups[np.arange(K), champions].copy()
    for _ in range(3):
        _, comps, cvalid = _components(problem, x0, N, champ_U)
        J1c = np.where(cvalid, comps[:, 0], np.inf)
        J2c = np.where(cvalid, comps[:, 1], np.inf)
        scal = grid[:, None] * J1c[None, :] + (1.0 - grid[:, None]) * J2c[None, :]
        cross = np.argmin(scal, axis=1)
        need = [k for k in range(K) if cross[k] != k
                and scal[k, cross[k]] < scal[k, k] - 1e-12]
        if not need:
            break
        W2 = np.stack([grid[need], 1.0 - grid[need]], axis=1)
        engine2 = _Engine(problem, x0, N, W2)
        U2, J2_, res2, _ = _spg(engine2, champ_U[cross[need]].copy(), max_iter, tol)
        adopted = False
        for pos, k in enumerate(need):
            if np.isfinite(J2_[pos]) and J2_[pos] < champ_J[k]:
                champ_U[k] = U2[pos]
                champ_res[k] = res2[pos]
                champ_J[k] = J2_[pos]
                adopted = True
        if not adopted:
            break

    X_all, comps_all, valid_all = _components(problem, x0, N, champ_U)
    per_weight = []
    pts = []
    for k, mu in enumerate(grid):
        w = WeightVector.pair(mu)
        if not valid_all[k]:
            per_weight.append((float(mu), None, "rollout left the expression domain"))
            continue
        comps_k = tuple(float(c) for c in comps_all[k])
        traj = Trajectory(x=X_all[k], u=champ_U[k].copy(),
                          J=float(np.dot(w.as_array(), comps_k)),
                          J_components=comps_k,
                          converged=bool(champ_res[k] <= tol),
                          proj_grad=float(champ_res[k]), iterations=iterations)
        per_weight.append((float(mu), traj, None))
        pts.append(ParetoPoint(mu=float(mu), J1=comps_k[0], J2=comps_k[1],
                               trajectory=traj))
    kept = dominance_filter([(p.J1, p.J2) for p in pts])
    front = [pts[i] for i in kept]
    return front, per_weight
