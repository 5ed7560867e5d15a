"""Storage functions, rotated stage costs and the sampled dissipation margin.

A storage function here is quadratic-plus-linear, lam(x) = x'Px + p'x.  The
rotated stage cost of a weighted cost l with storage lam at an optimal
equilibrium (x_e, u_e) is

    lt(x, u) = l(x, u) - l(x_e, u_e) + lam(x) - lam(f(x, u)),

which vanishes at the equilibrium and whose nonnegativity with a margin is
the dissipation inequality in disguise.  Combining two storages across a
weight requires the linear correction vector that restores the gradient
identity grad lam(x_e) = nu at the new equilibrium.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .model import combine_costs

__all__ = [
    "StorageFunction", "RotatedCost", "DissipationReport",
    "build_rotated_cost", "build_correction", "check_dissipation_inequality",
    "default_samples",
]

EQ_VALUE_TOL = 1e-9        # rotated cost must vanish at the equilibrium
EXCLUSION_RADIUS = 1e-6    # ball around the equilibrium excluded from margins
GRID_PER_DIM = 200
N_RANDOM_SAMPLES = 1000


@dataclass(frozen=True)
class StorageFunction:
    """lam(x) = x'Px + p'x with P symmetric (possibly zero)."""

    P: np.ndarray
    p: np.ndarray
    provenance: str = "user-supplied"

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if P.shape != (p.size, p.size):
            raise ValueError("P must be (n, n) matching p")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(P), initial=0.0)):
            raise ValueError("P must be symmetric")
        object.__setattr__(self, "P", (P + P.T) / 2.0)
        object.__setattr__(self, "p", p)

    @classmethod
    def zero(cls, n, provenance="user-supplied"):
        return cls(np.zeros((n, n)), np.zeros(n), provenance)

    @classmethod
    def linear(cls, p, provenance="user-supplied"):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return cls(np.zeros((p.size, p.size)), p, provenance)

    @property
    def n(self):
        return self.p.size

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x) + x @ self.p

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * (x @ self.P) + self.p

    def combine(self, other, mu):
        """Convex combination mu*self + (1-mu)*other."""
        return StorageFunction(mu * self.P + (1.0 - mu) * other.P,
                               mu * self.p + (1.0 - mu) * other.p,
                               provenance="combined")


@dataclass
class RotatedCost:
    """Evaluator for the rotated stage cost; supports scalar and batch jets."""

    problem: object
    cost_expr: object
    storage: StorageFunction
    x_e: np.ndarray
    u_e: np.ndarray
    value_at_equilibrium: float   # l(x_e, u_e), subtracted off

    def value(self, x, u):
        p = self.problem
        lv = p.eval_value(self.cost_expr, x, u)
        fx = p.f_value(x, u)
        return (lv - self.value_at_equilibrium
                + self.storage.value(np.atleast_1d(np.asarray(x, dtype=float)))
                - self.storage.value(fx))

    def jet2(self, x, u):
        """Exact value/gradient/Hessian of the rotated cost at one point."""
        p = self.problem
        n, d = p.n, p.d
        jl = p.eval_jet2(self.cost_expr, x, u)
        fv = np.zeros(n)
        Jf = np.zeros((n, d))
        Hf = []
        for j, fj in enumerate(p.f):
            jf = p.eval_jet2(fj, x, u)
            fv[j] = jf.value
            Jf[j] = jf.grad
            Hf.append(jf.hess)
        xarr = np.atleast_1d(np.asarray(x, dtype=float))
        glam_x = self.storage.grad(xarr)          # grad of lam at x
        glam_f = self.storage.grad(fv)            # grad of lam at f(x, u)
        value = (jl.value - self.value_at_equilibrium
                 + self.storage.value(xarr) - self.storage.value(fv))
        grad = jl.grad.copy()
        grad[:n] += glam_x
        grad -= Jf.T @ glam_f
        hess = jl.hess.copy()
        hess[:n, :n] += 2.0 * self.storage.P
        hess -= Jf.T @ (2.0 * self.storage.P) @ Jf
        for j in range(n):
            hess -= glam_f[j] * Hf[j]
        return ex.Jet2(float(value), grad, hess)

    def hessian_batch(self, xs, us):
        """Rotated-cost Hessians over a batch of points; returns (H, valid)."""
        p = self.problem
        n, d = p.n, p.d
        _, _, hl, okl = p.eval_jet2_batch(self.cost_expr, xs, us)
        B = hl.shape[0]
        fv = np.zeros((B, n))
        Jf = np.zeros((B, n, d))
        Hf = np.zeros((B, n, d, d))
        valid = okl.copy()
        for j, fj in enumerate(p.f):
            v, g, h, ok = p.eval_jet2_batch(fj, xs, us)
            fv[:, j] = v
            Jf[:, j, :] = g
            Hf[:, j] = h
            valid &= ok
        glam_f = 2.0 * (fv @ self.storage.P) + self.storage.p   # (B, n)
        H = hl.copy()
        H[:, :n, :n] += 2.0 * self.storage.P
        H -= np.einsum("bji,jk,bkl->bil", Jf, 2.0 * self.storage.P, Jf)
        H -= np.einsum("bj,bjil->bil", glam_f, Hf)
        return H, valid

    def value_batch(self, xs, us):
        p = self.problem
        lv, okl = p.eval_value_batch(self.cost_expr, xs, us)
        fv, okf = p.f_value_batch(xs, us)
        vals = (lv - self.value_at_equilibrium
                + self.storage.value(xs) - self.storage.value(fv))
        return vals, okl & okf


@dataclass
class DissipationReport:
    """Sampled lower bound lt(x,u) >= c_star * ||x - x_e||^2 on the region."""

    c_star: float
    witness_x: np.ndarray
    witness_u: np.ndarray
    witness_value: float
    samples_used: int
    samples_total: int

    @property
    def satisfied(self):
        return self.c_star > 0.0


def build_rotated_cost(problem, w, storage, equilibrium):
    """Rotated stage cost of the weighted cost under `storage` at the given
    optimal equilibrium."""
    if equilibrium.kkt_residual > EQ_VALUE_TOL:
        raise ValueError("equilibrium residual %.3e exceeds %.1e"
                         % (equilibrium.kkt_residual, EQ_VALUE_TOL))
    cost_expr = combine_costs(problem, w)
    value_eq = problem.eval_value(cost_expr, equilibrium.x_e, equilibrium.u_e)
    rc = RotatedCost(problem=problem, cost_expr=cost_expr, storage=storage,
                     x_e=np.asarray(equilibrium.x_e, dtype=float),
                     u_e=np.asarray(equilibrium.u_e, dtype=float),
                     value_at_equilibrium=float(value_eq))
    check = rc.value(rc.x_e, rc.u_e)
    if abs(check) > EQ_VALUE_TOL:
        raise AssertionError("rotated cost fails to vanish at the equilibrium")
    return rc


def build_correction(problem, w, storage1, storage2, equilibrium):
    """Correction vector and combined storage across the weight.

    The combined storage is mu*lam1 + (1-mu)*lam2 plus the linear term that
    restores grad lam(x_e) = nu at the weighted problem's equilibrium:

        correction = nu - mu*grad lam1(x_e) - (1-mu)*grad lam2(x_e).

    Only two-cost weight vectors are supported (mu, 1-mu).
    """
    if len(w) != 2:
        raise ValueError("storage combination is defined for two costs")
    mu = w.mu
    x_e = np.asarray(equilibrium.x_e, dtype=float)
    lam_tilde = (np.asarray(equilibrium.nu, dtype=float)
                 - mu * storage1.grad(x_e) - (1.0 - mu) * storage2.grad(x_e))
    base = storage1.combine(storage2, mu)
    combined = StorageFunction(base.P, base.p + lam_tilde, provenance="combined")
    return lam_tilde, combined


def default_samples(problem, grid_per_dim=GRID_PER_DIM, n_random=N_RANDOM_SAMPLES,
                    seed=0):
    """Uniform grid over the box (default half-width box when unconstrained)
    plus uniform random points."""
    xlo, xhi, ulo, uhi = problem.box_bounds()
    lo = np.concatenate([xlo, ulo])
    hi = np.concatenate([xhi, uhi])
    axes = [np.linspace(l, h, grid_per_dim) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    if n_random:
        rng = np.random.default_rng(seed)
        pts = np.vstack([pts, rng.uniform(lo, hi, size=(n_random, lo.size))])
    return pts[:, :problem.n], pts[:, problem.n:]


def _admissible_mask(problem, xs, us, fv, fv_ok):
    """Samples must be in the domain, satisfy g <= 0 and map back into X."""
    valid = fv_ok.copy()
    for gi in problem.g:
        gv, ok = problem.eval_value_batch(gi, xs, us)
        valid &= ok & (gv <= 0.0)
    if problem.x_box is not None:
        for j, (lo, hi) in enumerate(problem.x_box):
            valid &= (fv[:, j] >= lo) & (fv[:, j] <= hi)
    return valid


def check_dissipation_inequality(problem, rotated, samples=None,
                                 grid_per_dim=GRID_PER_DIM,
                                 n_random=N_RANDOM_SAMPLES, seed=0):
    """Sampled margin c_star = inf lt(x,u) / ||x - x_e||^2 over admissible
    samples, excluding a small ball around the equilibrium.

    A positive c_star certifies the dissipation inequality on the sampled
    region with the quadratic comparison function c_star * r^2; a negative
    c_star exhibits a violating witness.
    """
    if samples is None:
        xs, us = default_samples(problem, grid_per_dim, n_random, seed)
    else:
        xs, us = samples
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        us = np.asarray(us, dtype=float).reshape(xs.shape[0], problem.m)
    total = xs.shape[0]
    if total == 0:
        raise ValueError("empty sample set")
    vals, ok = rotated.value_batch(xs, us)
    fv, fok = problem.f_value_batch(xs, us)
    ok &= _admissible_mask(problem, xs, us, fv, fok)
    dist2 = np.sum((xs - rotated.x_e) ** 2, axis=1)
    ok &= dist2 > EXCLUSION_RADIUS ** 2
    used = int(np.count_nonzero(ok))
    if used == 0:
        raise ValueError("no admissible samples outside the exclusion ball")
    ratio = np.where(ok, vals / np.where(ok, dist2, 1.0), np.inf)
    worst = int(np.argmin(ratio))
    return DissipationReport(
        c_star=float(ratio[worst]),
        witness_x=xs[worst].copy(), witness_u=us[worst].copy(),
        witness_value=float(vals[worst]),
        samples_used=used, samples_total=total)
