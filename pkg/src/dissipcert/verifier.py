"""Certificate assembly: sufficient-condition tests for strict dissipativity
of the weighted stage cost, plus the weight-sweep continuity scan.

Four certification paths are available, tried cheapest-and-strongest first:

* convex: linear dynamics with sampled-convex costs (optionally a supplied
  strictly convex lower bound) yield a linear storage from the multiplier.
* shared equilibrium: when both costs are optimal at the same state, the
  plain convex combination of their storages works, margins included.
* local: the combined-storage Hessian test at the equilibrium; its failure
  direction also powers the refutation test for the (unique) linearly
  corrected storage.
* global sampled: the same Hessian condition enforced on a sample cloud over
  the constraint box; explicitly labeled as sampled evidence, not a proof.

The continuity scan sweeps the weight, tracks the global equilibrium, flags
jumps (a jump violates a necessary condition for strict dissipativity on the
bracketing interval) and attaches per-weight certificate statuses.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .eigen import jacobi_eigenvalues, batch_eigvalsh
from .equilibrium import (EquilibriumSolution, KKTError,
                          find_global_equilibrium)
from .lq import InfeasibleLMI, synthesize_quadratic_storage
from .model import LQStructure, WeightVector, combine_costs, extract_lq
from .storage import (RotatedCost, StorageFunction, build_correction,
                      build_rotated_cost, check_dissipation_inequality,
                      default_samples)

__all__ = [
    "DissipativityCertificate", "SweepResult", "SweepRecord", "JumpInterval",
    "GlobalHessianSampler", "certify", "certify_convex",
    "certify_shared_equilibrium", "certify_local", "certify_global_sampled",
    "continuity_scan", "endpoint_storages", "certify_grid",
]

STRICT_DELTA = 1e-8          # strictness threshold for m2 > m1 and convexity
REFUTE_EIG = -1e-8           # negative curvature below this refutes
SHARED_EQ_TOL = 1e-8
CONVEX_PSD_TOL = -1e-10
JUMP_ABS_FLOOR = 1e-3
JUMP_FACTOR = 10.0

STATUS_STRENGTH = {
    "CertifiedConvex": 4,
    "CertifiedSharedEquilibrium": 3,
    "CertifiedGlobalSampled": 2,
    "CertifiedLocal": 1,
    "Inconclusive": 0,
    "Refuted": 0,
}


@dataclass
class DissipativityCertificate:
    status: str
    weights: WeightVector
    equilibrium: EquilibriumSolution = None
    storage: StorageFunction = None
    m1: float = float("nan")
    m2: float = float("nan")
    alpha_coefficient: float = float("nan")
    evidence: list = field(default_factory=list)
    xu_dissipative: bool = False
    sampled: bool = False
    sample_count: int = 0
    detail: str = ""
    path: str = ""

    @property
    def certified(self):
        return self.status.startswith("Certified")

    def to_report(self):
        """JSON-ready dictionary (the certificate wire format)."""
        eq = self.equilibrium
        sto = self.storage

        def opt(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return _jsonable({
            "status": self.status,
            "path": self.path,
            "weights": list(self.weights.values),
            "equilibrium": None if eq is None else {
                "x": list(np.atleast_1d(eq.x_e)),
                "u": list(np.atleast_1d(eq.u_e)),
                "nu": list(np.atleast_1d(eq.nu)),
                "kkt_residual": eq.kkt_residual,
                "cost_value": eq.cost_value,
                "regular": eq.regular,
                "sosc": eq.sosc,
                "interior": eq.interior,
            },
            "storage": None if sto is None else {
                "P": np.asarray(sto.P).tolist(),
                "p": list(np.atleast_1d(sto.p)),
                "provenance": sto.provenance,
            },
            "m1": opt(self.m1),
            "m2": opt(self.m2),
            "alpha_coefficient": opt(self.alpha_coefficient),
            "xu_dissipative": self.xu_dissipative,
            "sampled": self.sampled,
            "sample_count": self.sample_count,
            "evidence": self.evidence,
            "detail": self.detail,
        })


def _num(x):
    return float(x)


def _jsonable(obj):
    """Recursively strip numpy scalars/arrays out of report structures."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


# ---------------------------------------------------------------------------
# Endpoint storages


def _rotated_hessian_at(problem, cost_expr, storage, x, u):
    rc = RotatedCost(problem=problem, cost_expr=cost_expr, storage=storage,
                     x_e=np.zeros(problem.n), u_e=np.zeros(problem.m),
                     value_at_equilibrium=0.0)
    return rc.jet2(x, u).hess


def endpoint_storages(problem, require_psd=None):
    """Storage functions and equilibria for the two pure weights.

    Linear-quadratic problems get LMI-synthesized quadratic-plus-linear
    storages; otherwise the storages are linear with slope equal to the
    endpoint multiplier (the gradient identity pins that choice).
    Returns (storage1, storage2, eq1, eq2, lq) where lq is the extracted
    structure or a NotLQ marker.
    """
    if problem.k != 2:
        raise ValueError("endpoint storages are defined for two costs")
    lq = extract_lq(problem)
    w1, w2 = WeightVector.pair(1.0), WeightVector.pair(0.0)
    eq1 = find_global_equilibrium(problem, w1)
    eq2 = find_global_equilibrium(problem, w2)
    if require_psd is None:
        require_psd = not problem.bounded
    if isinstance(lq, LQStructure):
        s1 = synthesize_quadratic_storage(lq, w1, eq1, require_psd=require_psd)
        s2 = synthesize_quadratic_storage(lq, w2, eq2, require_psd=require_psd)
    else:
        s1 = StorageFunction.linear(eq1.nu, provenance="user-supplied")
        s2 = StorageFunction.linear(eq2.nu, provenance="user-supplied")
    return s1, s2, eq1, eq2, lq


def _distinct_tied_states(equilibrium):
    """Tied global minimisers whose state differs from the winner's."""
    return [(x, u) for x, u in equilibrium.tied
            if np.max(np.abs(x - equilibrium.x_e)) > 1e-6]


# ---------------------------------------------------------------------------
# Shared-equilibrium path


def certify_shared_equilibrium(problem, storage1, storage2, eq1, eq2, w,
                               grid_per_dim=80, n_random=1000, seed=0):
    """Convex combination of the two certificates when both costs share the
    optimal equilibrium state; margins combine linearly."""
    if np.max(np.abs(np.atleast_1d(eq1.x_e) - np.atleast_1d(eq2.x_e))) > SHARED_EQ_TOL:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="shared-equilibrium",
            detail="optimal equilibria differ; path not applicable")
    mu = w.mu
    reports = []
    for wi, sto, eqi in ((WeightVector.pair(1.0), storage1, eq1),
                         (WeightVector.pair(0.0), storage2, eq2)):
        rc = build_rotated_cost(problem, wi, sto, eqi)
        reports.append(check_dissipation_inequality(
            problem, rc, grid_per_dim=grid_per_dim, n_random=n_random, seed=seed))
    c1, c2 = reports[0].c_star, reports[1].c_star
    if c1 <= 0.0 or c2 <= 0.0:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="shared-equilibrium",
            detail="per-cost sampled margins not positive (c1=%.3e, c2=%.3e)" % (c1, c2),
            evidence=[{"c1": _num(c1), "c2": _num(c2)}])
    combined = storage1.combine(storage2, mu)
    eqw = find_global_equilibrium(problem, w)
    rc = build_rotated_cost(problem, w, combined, eqw)
    rep = check_dissipation_inequality(problem, rc, grid_per_dim=grid_per_dim,
                                       n_random=n_random, seed=seed)
    alpha = mu * c1 + (1.0 - mu) * c2
    return DissipativityCertificate(
        status="CertifiedSharedEquilibrium", weights=w, equilibrium=eqw,
        storage=combined, alpha_coefficient=_num(alpha), sampled=True,
        sample_count=rep.samples_used, path="shared-equilibrium",
        detail="combined storage mu*lam1 + (1-mu)*lam2 at the shared equilibrium",
        evidence=[{"c1": _num(c1), "c2": _num(c2),
                   "combined_margin": _num(rep.c_star)}])


# ---------------------------------------------------------------------------
# Local path (and refutation)


def certify_local(problem, w, storage1, storage2, equilibrium=None):
    """Hessian test at the optimal equilibrium for the linearly corrected
    combined storage.

    m2 is the smallest eigenvalue of the weighted rotated-cost Hessians, m1
    the clamped largest eigenvalue of the correction term's Hessian.  A
    certificate needs m2 > m1 >= 0; strictly negative curvature of the full
    rotated-cost Hessian refutes every storage of this form.
    """
    if equilibrium is None:
        equilibrium = find_global_equilibrium(problem, w)
    eqw = equilibrium
    ties = _distinct_tied_states(eqw)
    if ties:
        return DissipativityCertificate(
            status="Refuted", weights=w, equilibrium=eqw, path="local",
            detail="multiple global optimal equilibria with distinct states",
            evidence=[{"tied_states": [list(np.atleast_1d(x)) for x, _ in ties]}])
    if not eqw.interior:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, equilibrium=eqw, path="local",
            detail="equilibrium touches the constraint boundary")
    if not eqw.regular:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, equilibrium=eqw, path="local",
            detail="equilibrium is not a regular point")
    mu = w.mu
    lam_tilde, combined = build_correction(problem, w, storage1, storage2, eqw)
    x, u = eqw.x_e, eqw.u_e
    H1_rot = _rotated_hessian_at(problem, problem.costs[0], storage1, x, u)
    H2_rot = _rotated_hessian_at(problem, problem.costs[1], storage2, x, u)
    H_weighted = mu * H1_rot + (1.0 - mu) * H2_rot
    H_corr = np.zeros_like(H_weighted)
    for j, fj in enumerate(problem.f):
        H_corr += lam_tilde[j] * problem.eval_jet2(fj, x, u).hess
    m2 = float(jacobi_eigenvalues(H_weighted)[0])
    m1 = max(0.0, float(jacobi_eigenvalues(H_corr)[-1]))
    full = H_weighted - H_corr     # Hessian of the corrected rotated cost
    full_eigs, full_vecs = np.linalg.eigh((full + full.T) / 2.0)
    d = problem.d
    evidence = [{
        "lam_tilde": list(np.atleast_1d(lam_tilde)),
        "rotated_hessian_min_eig": _num(full_eigs[0]),
        "hess_uu": _num(full[d - 1, d - 1]) if problem.m else None,
        "min_eig_direction": list(full_vecs[:, 0]),
        "point_x": list(np.atleast_1d(x)), "point_u": list(np.atleast_1d(u)),
    }]
    base = dict(weights=w, equilibrium=eqw, storage=combined, m1=_num(m1),
                m2=_num(m2), evidence=evidence, path="local")
    if full_eigs[0] < REFUTE_EIG:
        return DissipativityCertificate(
            status="Refuted", detail="rotated-cost Hessian indefinite at the "
            "equilibrium; no quadratic-plus-linear storage of the combined "
            "form exists (the gradient identity makes it unique)", **base)
    if m2 > m1 + STRICT_DELTA and m2 > 0.0:
        # soundness re-check: the full Hessian margin dominates m2 - m1
        if full_eigs[0] < (m2 - m1) - 1e-9:
            raise AssertionError("certificate soundness check failed")
        alpha, radius = _local_ball(problem, w, combined, eqw)
        cert = DissipativityCertificate(
            status="CertifiedLocal", alpha_coefficient=_num(alpha),
            xu_dissipative=True,
            detail="Hessian margin m2 - m1 = %.6g at the equilibrium; "
                   "quadratic lower bound sampled on a ball of radius %.3g"
                   % (m2 - m1, radius), **base)
        cert.evidence.append({"ball_radius": _num(radius)})
        return cert
    return DissipativityCertificate(
        status="Inconclusive",
        detail="Hessian test indecisive (m2=%.3e, m1=%.3e)" % (m2, m1), **base)


def _local_ball(problem, w, storage, eqw, samples_per_radius=512, seed=0):
    """Largest sampled ball around the equilibrium on which the rotated cost
    dominates a positive quadratic; returns (coefficient, radius)."""
    rc = build_rotated_cost(problem, w, storage, eqw)
    rng = np.random.default_rng(seed)
    d = problem.d
    z_e = np.concatenate([np.atleast_1d(eqw.x_e), np.atleast_1d(eqw.u_e)])
    xlo, xhi, ulo, uhi = problem.box_bounds()
    scale = 0.25 * float(np.max(np.concatenate([xhi - xlo, uhi - ulo])))
    radius = max(scale, 1e-3)
    for _ in range(40):
        dirs = rng.normal(size=(samples_per_radius, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = radius * rng.uniform(0.05, 1.0, size=(samples_per_radius, 1))
        zs = z_e + dirs * radii
        xs, us = zs[:, :problem.n], zs[:, problem.n:]
        vals, ok = rc.value_batch(xs, us)
        dist2 = np.sum((xs - rc.x_e) ** 2, axis=1)
        ok &= dist2 > 1e-12
        if ok.any():
            ratio = vals[ok] / dist2[ok]
            c = float(np.min(ratio))
            if c > 0.0:
                return c, radius
        radius *= 0.5
    return 0.0, 0.0


# ---------------------------------------------------------------------------
# Global sampled path


class GlobalHessianSampler:
    """Precomputed rotated-cost Hessians over a sample cloud of the box.

    Building the Hessian stacks once makes weight sweeps cheap: for each
    weight only a convex combination and an eigenvalue bound remain.
    Samples outside the expression domain, violating g <= 0, or mapping
    outside the state box are discarded.
    """

    def __init__(self, problem, storage1, storage2, grid_per_dim=200,
                 n_random=1000, seed=0):
        if not problem.bounded:
            raise ValueError("global sampling requires a bounded box")
        self.problem = problem
        xs, us = default_samples(problem, grid_per_dim, n_random, seed)
        rc1 = RotatedCost(problem=problem, cost_expr=problem.costs[0],
                          storage=storage1, x_e=np.zeros(problem.n),
                          u_e=np.zeros(problem.m), value_at_equilibrium=0.0)
        rc2 = RotatedCost(problem=problem, cost_expr=problem.costs[1],
                          storage=storage2, x_e=np.zeros(problem.n),
                          u_e=np.zeros(problem.m), value_at_equilibrium=0.0)
        H1, ok1 = rc1.hessian_batch(xs, us)
        H2, ok2 = rc2.hessian_batch(xs, us)
        fv, okf = problem.f_value_batch(xs, us)
        n = problem.n
        Hf = np.zeros((xs.shape[0], n, problem.d, problem.d))
        for j, fj in enumerate(problem.f):
            _, _, h, ok = problem.eval_jet2_batch(fj, xs, us)
            Hf[:, j] = h
            okf &= ok
        mask = ok1 & ok2 & okf
        for gi in problem.g:
            gv, okg = problem.eval_value_batch(gi, xs, us)
            mask &= okg & (gv <= 0.0)
        if problem.x_box is not None:
            for j, (lo, hi) in enumerate(problem.x_box):
                mask &= (fv[:, j] >= lo) & (fv[:, j] <= hi)
        self.total = xs.shape[0]
        self.xs, self.us = xs[mask], us[mask]
        self.H1, self.H2, self.Hf = H1[mask], H2[mask], Hf[mask]
        if self.xs.shape[0] == 0:
            raise ValueError("no admissible samples in the box")

    @property
    def count(self):
        return self.xs.shape[0]

    def query(self, mu, lam_tilde):
        """(m2, m1, witnesses) for weight mu and correction vector lam_tilde."""
        H = mu * self.H1 + (1.0 - mu) * self.H2
        mins = batch_eigvalsh(H)[..., 0]
        i2 = int(np.argmin(mins))
        Hc = np.einsum("j,bjkl->bkl", np.atleast_1d(lam_tilde), self.Hf)
        maxs = batch_eigvalsh(Hc)[..., -1]
        i1 = int(np.argmax(maxs))
        return {
            "m2": float(mins[i2]),
            "m1": max(0.0, float(maxs[i1])),
            "m2_witness": (self.xs[i2].copy(), self.us[i2].copy()),
            "m1_witness": (self.xs[i1].copy(), self.us[i1].copy()),
        }


def certify_global_sampled(problem, w, storage1, storage2, sampler=None,
                           grid_per_dim=200, n_random=1000, seed=0,
                           equilibrium=None):
    """Hessian conditions sampled over the whole box: m2 from the weighted
    rotated costs, m1 from the correction term, certificate iff m2 > m1.

    The result is evidence over a finite sample cloud, not a proof, and the
    certificate says so.
    """
    if not problem.bounded:
        raise ValueError("global sampled certification requires a bounded box")
    if sampler is None:
        sampler = GlobalHessianSampler(problem, storage1, storage2,
                                       grid_per_dim, n_random, seed)
    if equilibrium is None:
        equilibrium = find_global_equilibrium(problem, w)
    eqw = equilibrium
    lam_tilde, combined = build_correction(problem, w, storage1, storage2, eqw)
    res = sampler.query(w.mu, lam_tilde)
    m2, m1 = res["m2"], res["m1"]
    evidence = [{
        "lam_tilde": list(np.atleast_1d(lam_tilde)),
        "m2_witness_x": list(res["m2_witness"][0]),
        "m2_witness_u": list(res["m2_witness"][1]),
        "m1_witness_x": list(res["m1_witness"][0]),
        "m1_witness_u": list(res["m1_witness"][1]),
    }]
    base = dict(weights=w, equilibrium=eqw, storage=combined, m1=_num(m1),
                m2=_num(m2), evidence=evidence, sampled=True,
                sample_count=sampler.count, path="global-sampled")
    if m2 > m1 + STRICT_DELTA:
        return DissipativityCertificate(
            status="CertifiedGlobalSampled", alpha_coefficient=_num((m2 - m1) / 2.0),
            xu_dissipative=True,
            detail="sampled, not a proof: Hessian conditions hold on %d of %d "
                   "samples kept" % (sampler.count, sampler.total), **base)
    return DissipativityCertificate(
        status="Inconclusive",
        detail="sampled Hessian conditions fail (m2=%.3e <= m1=%.3e); "
               "sampled, not a proof" % (m2, m1), **base)


# ---------------------------------------------------------------------------
# Convex path


def _linear_dynamics(problem, rng_seed=0):
    """(A, B) when the dynamics is exactly linear with no constant term."""
    n, m, d = problem.n, problem.m, problem.d
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    try:
        for j, fj in enumerate(problem.f):
            jet = problem.eval_jet2(fj, np.zeros(n), np.zeros(m))
            if abs(jet.value) > 1e-12 or np.max(np.abs(jet.hess)) > 1e-12:
                return None
            A[j] = jet.grad[:n]
            B[j] = jet.grad[n:]
        rng = np.random.default_rng(rng_seed)
        for z in rng.uniform(-3.0, 3.0, size=(20, d)):
            x, u = z[:n], z[n:]
            fv = problem.f_value(x, u)
            if np.max(np.abs(fv - (A @ x + B @ u))) > 1e-12 * max(1.0, np.max(np.abs(fv))):
                return None
    except ex.ExprDomainError:
        return None
    return A, B


def _sampled_convexity(problem, cost_expr, xs, us):
    """(min, max) of the smallest Hessian eigenvalue over valid samples."""
    _, _, H, ok = problem.eval_jet2_batch(cost_expr, xs, us)
    if not ok.any():
        return None
    mins = batch_eigvalsh(H[ok])[..., 0]
    return float(np.min(mins))


def certify_convex(problem, w, lower_bound=None, grid_per_dim=80,
                   n_random=1000, seed=0):
    """Linear-dynamics convexity path.

    Every positively weighted cost must be sampled-convex and at least one
    strictly convex; the storage is then linear with slope equal to the
    weighted problem's multiplier.  Alternatively a strictly convex lower
    bound for the weighted cost (touching it at the bound's optimal
    equilibrium) certifies the same conclusion.
    """
    lin = _linear_dynamics(problem)
    if lin is None:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="convex",
            detail="dynamics not linear; path not applicable")
    xs, us = default_samples(problem, grid_per_dim, n_random, seed)

    if lower_bound is not None:
        return _certify_convex_bound(problem, w, lower_bound, xs, us)

    strict_found = False
    for mu_i, cost in zip(w.values, problem.costs):
        if mu_i == 0.0:
            continue
        lam_min = _sampled_convexity(problem, cost, xs, us)
        if lam_min is None or lam_min < CONVEX_PSD_TOL:
            return DissipativityCertificate(
                status="Inconclusive", weights=w, path="convex",
                detail="a positively weighted cost is not convex on samples "
                       "(min Hessian eigenvalue %.3e)" % (lam_min if lam_min is not None else float("nan")))
        if lam_min >= STRICT_DELTA:
            strict_found = True
    if not strict_found:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="convex",
            detail="no strictly convex cost carries positive weight")
    try:
        eqw = find_global_equilibrium(problem, w)
    except KKTError as err:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="convex",
            detail="equilibrium solve failed: %s" % err)
    if not eqw.interior:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, equilibrium=eqw, path="convex",
            detail="no strictly feasible equilibrium found (Slater check)")
    delta = _sampled_convexity(problem, combine_costs(problem, w), xs, us)
    storage = StorageFunction.linear(eqw.nu, provenance="user-supplied")
    return DissipativityCertificate(
        status="CertifiedConvex", weights=w, equilibrium=eqw, storage=storage,
        alpha_coefficient=_num(max(delta, 0.0) / 2.0), sampled=True,
        sample_count=xs.shape[0], path="convex", xu_dissipative=delta > STRICT_DELTA,
        detail="linear storage nu'x from the equilibrium multiplier; "
               "convexity checked on samples",
        evidence=[{"combined_strict_convexity": _num(delta)}])


def _certify_convex_bound(problem, w, lower_bound, xs, us):
    """Certify via a strictly convex lower bound touching the weighted cost
    at the bound's optimal equilibrium."""
    cost_expr = combine_costs(problem, w)
    delta = _sampled_convexity(problem, lower_bound, xs, us)
    if delta is None or delta < STRICT_DELTA:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="convex-bound",
            detail="candidate lower bound is not strictly convex on samples")
    lv, okl = problem.eval_value_batch(lower_bound, xs, us)
    cv, okc = problem.eval_value_batch(cost_expr, xs, us)
    ok = okl & okc
    gap = lv[ok] - cv[ok]
    if gap.size == 0 or np.max(gap) > 1e-9:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="convex-bound",
            detail="candidate exceeds the cost somewhere on samples "
                   "(max violation %.3e)" % (np.max(gap) if gap.size else float("nan")))
    try:
        eq_hat = find_global_equilibrium(problem, w, cost_expr_override=lower_bound)
    except KKTError as err:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, path="convex-bound",
            detail="equilibrium solve for the bound failed: %s" % err)
    touch = abs(problem.eval_value(lower_bound, eq_hat.x_e, eq_hat.u_e)
                - problem.eval_value(cost_expr, eq_hat.x_e, eq_hat.u_e))
    if touch > 1e-8:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, equilibrium=eq_hat, path="convex-bound",
            detail="bound does not touch the cost at its optimal equilibrium "
                   "(gap %.3e)" % touch)
    if not eq_hat.interior:
        return DissipativityCertificate(
            status="Inconclusive", weights=w, equilibrium=eq_hat, path="convex-bound",
            detail="bound's equilibrium is not strictly feasible (Slater check)")
    storage = StorageFunction.linear(eq_hat.nu, provenance="user-supplied")
    return DissipativityCertificate(
        status="CertifiedConvex", weights=w, equilibrium=eq_hat, storage=storage,
        alpha_coefficient=_num(delta / 2.0), sampled=True, sample_count=xs.shape[0],
        path="convex-bound", xu_dissipative=True,
        detail="strictly convex lower bound touches the cost at its optimal "
               "equilibrium; linear storage from the bound's multiplier",
        evidence=[{"bound_strict_convexity": _num(delta), "touch_gap": _num(touch)}])


# ---------------------------------------------------------------------------
# Driver


def certify(problem, w, lower_bound=None, grid_per_dim=200, n_random=1000,
            seed=0, sampler=None, storages=None):
    """Run the certificate paths (convex, shared-equilibrium, local, global
    sampled) and report the strongest success, a refutation, or Inconclusive
    with the per-path reasons."""
    if len(w) != problem.k:
        raise ValueError("weight vector length %d != number of costs %d"
                         % (len(w), problem.k))
    attempts = []

    cert = certify_convex(problem, w, lower_bound=lower_bound,
                          grid_per_dim=min(grid_per_dim, 80),
                          n_random=n_random, seed=seed)
    attempts.append(cert)

    storages_err = None
    s1 = s2 = eq1 = eq2 = None
    if storages is not None:
        s1, s2, eq1, eq2 = storages
    else:
        try:
            s1, s2, eq1, eq2, _ = endpoint_storages(problem)
        except (KKTError, InfeasibleLMI, ex.ExprDomainError, ValueError) as err:
            storages_err = "endpoint storages unavailable: %s" % err

    eqw = None
    if s1 is not None:
        try:
            eqw = find_global_equilibrium(problem, w)
        except KKTError as err:
            storages_err = "equilibrium solve failed: %s" % err
    if s1 is not None and eqw is not None:
        attempts.append(certify_shared_equilibrium(
            problem, s1, s2, eq1, eq2, w,
            grid_per_dim=min(grid_per_dim, 80), n_random=n_random, seed=seed))
        attempts.append(certify_local(problem, w, s1, s2, equilibrium=eqw))
        if problem.bounded:
            try:
                attempts.append(certify_global_sampled(
                    problem, w, s1, s2, sampler=sampler,
                    grid_per_dim=grid_per_dim, n_random=n_random, seed=seed,
                    equilibrium=eqw))
            except ValueError as err:
                attempts.append(DissipativityCertificate(
                    status="Inconclusive", weights=w, path="global-sampled",
                    detail=str(err)))
        else:
            attempts.append(DissipativityCertificate(
                status="Inconclusive", weights=w, path="global-sampled",
                detail="unbounded constraint set; sampling not applicable"))

    certified = [c for c in attempts if c.certified]
    if certified:
        best = max(certified, key=lambda c: STATUS_STRENGTH[c.status])
    else:
        refuted = [c for c in attempts if c.status == "Refuted"]
        if refuted:
            best = refuted[0]
        else:
            best = DissipativityCertificate(
                status="Inconclusive", weights=w, path="driver",
                detail=storages_err or "no path concluded")
    best.evidence = list(best.evidence)
    best.evidence.append({
        "paths_tried": [{"path": c.path, "status": c.status, "detail": c.detail}
                        for c in attempts]})
    return best


def certify_grid(problem, K, lower_bound=None, grid_per_dim=200, n_random=1000,
                 seed=0, threads=1):
    """Full certificates on a uniform weight grid, sharing one Hessian
    sampler and the endpoint storages across all weights."""
    storages = None
    try:
        s1, s2, eq1, eq2, _ = endpoint_storages(problem)
        storages = (s1, s2, eq1, eq2)
    except (KKTError, InfeasibleLMI, ex.ExprDomainError):
        pass
    sampler = None
    if storages is not None and problem.bounded:
        try:
            sampler = GlobalHessianSampler(problem, storages[0], storages[1],
                                           grid_per_dim, n_random, seed)
        except ValueError:
            sampler = None
    grid = np.linspace(0.0, 1.0, K)

    def run(mu):
        return certify(problem, WeightVector.pair(mu), lower_bound=lower_bound,
                       grid_per_dim=grid_per_dim, n_random=n_random, seed=seed,
                       sampler=sampler, storages=storages)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            certs = list(pool.map(run, grid))
    else:
        certs = [run(mu) for mu in grid]
    return grid, certs


# ---------------------------------------------------------------------------
# Continuity scan


@dataclass
class SweepRecord:
    mu: float
    x_e: np.ndarray = None
    u_e: np.ndarray = None
    nu: np.ndarray = None
    lam_tilde: np.ndarray = None
    min_rotated_hess_eig: float = float("nan")
    status: str = "Inconclusive"
    detail: str = ""
    failed: bool = False


@dataclass
class JumpInterval:
    mu_lo: float
    mu_hi: float
    size: float

    def contains(self, mu):
        return self.mu_lo <= mu <= self.mu_hi


@dataclass
class SweepResult:
    grid: np.ndarray
    records: list
    jumps: list
    threshold: float

    @property
    def has_jump(self):
        return bool(self.jumps)


def continuity_scan(problem, K, jump_threshold=None, seed=0):
    """Track the globally optimal equilibrium across a uniform weight grid.

    Consecutive equilibrium motion above the jump threshold (default: ten
    times the mean consecutive step, floored at 1e-3) flags an interval; a
    discontinuous optimal equilibrium violates a necessary condition for
    strict dissipativity, so both bracketing grid records are marked Refuted.
    """
    if K < 3:
        raise ValueError("grid size must be at least 3")
    if problem.k != 2:
        raise ValueError("the weight sweep is defined for two costs")
    grid = np.linspace(0.0, 1.0, K)
    try:
        s1, s2, eq1, eq2, _ = endpoint_storages(problem)
    except (KKTError, InfeasibleLMI, ex.ExprDomainError):
        s1 = s2 = None

    records = []
    warm = None
    for mu in grid:
        w = WeightVector.pair(mu)
        rec = SweepRecord(mu=float(mu))
        try:
            sol = find_global_equilibrium(problem, w, warm=warm)
        except (KKTError, ex.ExprDomainError) as err:
            rec.failed = True
            rec.detail = "solver failure: %s" % err
            records.append(rec)
            warm = None
            continue
        warm = sol.as_tuple()
        rec.x_e, rec.u_e, rec.nu = sol.x_e, sol.u_e, sol.nu
        if s1 is not None:
            cert = certify_local(problem, w, s1, s2, equilibrium=sol)
            rec.status, rec.detail = cert.status, cert.detail
            if cert.evidence:
                rec.lam_tilde = np.atleast_1d(np.asarray(
                    cert.evidence[0].get("lam_tilde", np.full(problem.n, np.nan))))
                rec.min_rotated_hess_eig = cert.evidence[0].get(
                    "rotated_hessian_min_eig", float("nan"))
        else:
            rec.detail = "endpoint storages unavailable"
        records.append(rec)

    steps = []
    for a, b in zip(records, records[1:]):
        if a.failed or b.failed:
            steps.append(np.nan)
        else:
            steps.append(float(np.linalg.norm(b.x_e - a.x_e)))
    finite = [s for s in steps if np.isfinite(s)]
    if jump_threshold is None:
        mean_step = float(np.mean(finite)) if finite else 0.0
        jump_threshold = max(JUMP_FACTOR * mean_step, JUMP_ABS_FLOOR)
    jumps = []
    for i, s in enumerate(steps):
        if np.isfinite(s) and s > jump_threshold:
            jumps.append(JumpInterval(float(grid[i]), float(grid[i + 1]), s))
            for rec in (records[i], records[i + 1]):
                rec.status = "Refuted"
                rec.detail = ("optimal equilibrium jumps by %.6g on [%.6g, %.6g]; "
                              "necessary continuity condition violated"
                              % (s, grid[i], grid[i + 1]))
    return SweepResult(grid=grid, records=records, jumps=jumps,
                       threshold=float(jump_threshold))
