import numpy as np
import pytest

from dissipcert import equilibrium as eq
from dissipcert import model as md
from dissipcert import storage as st
from dissipcert import verifier as vf


def test_refutation_at_balanced_weight(poly_quadratic):
    cert = vf.certify(poly_quadratic, md.WeightVector.pair(0.5))
    assert cert.status == "Refuted"
    assert cert.path == "local"
    ev = cert.evidence[0]
    # frozen, cross-checked value: 1 - nu (2 + 6 u_e); see the ledger note
    # about the published figure for this entry
    assert ev["hess_uu"] == pytest.approx(-0.0831092, abs=1e-6)
    # witness reproducibility: re-evaluating at the stored point matches
    sol = eq.find_global_equilibrium(poly_quadratic, md.WeightVector.pair(0.5))
    lam = st.StorageFunction.linear(sol.nu)
    rc = st.build_rotated_cost(poly_quadratic, md.WeightVector.pair(0.5), lam, sol)
    H = rc.jet2(np.array(ev["point_x"]), np.array(ev["point_u"])).hess
    assert np.linalg.eigvalsh(H)[0] == pytest.approx(
        ev["rotated_hessian_min_eig"], abs=1e-10)


def test_endpoint_certified_local(poly_quadratic):
    cert = vf.certify(poly_quadratic, md.WeightVector.pair(1.0))
    assert cert.status == "CertifiedLocal"
    assert cert.m1 <= 1e-8
    assert cert.m2 > cert.m1
    assert cert.xu_dissipative
    # soundness: m2 > m1 >= 0 and interior equilibrium
    assert cert.equilibrium.interior


def test_lq_pair_certified_convex(lq_pair):
    for mu in (0.0, 0.25, 0.5, 0.75, 1.0):
        cert = vf.certify(lq_pair, md.WeightVector.pair(mu))
        assert cert.status == "CertifiedConvex"
        # storage is linear with slope nu
        sol = eq.find_global_equilibrium(lq_pair, md.WeightVector.pair(mu))
        assert np.max(np.abs(cert.storage.p - sol.nu)) <= 1e-9


def test_endpoint_consistency_with_single_cost(lq_pair):
    """A pure weight must match the analysis of the single-cost problem."""
    single = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 2*x1 + 4*u1
[cost 1] l = 0.1*x1^2 + 10*u1^2 + 6*x1 + 7*u1
[cost 2] l = 0.1*x1^2 + 10*u1^2 + 6*x1 + 7*u1
""")
    pair_cert = vf.certify(lq_pair, md.WeightVector.pair(1.0))
    single_cert = vf.certify(single, md.WeightVector.pair(0.5))
    assert pair_cert.status == single_cert.status
    assert np.max(np.abs(pair_cert.storage.p - single_cert.storage.p)) <= 1e-9
    assert pair_cert.alpha_coefficient == pytest.approx(
        single_cert.alpha_coefficient, abs=1e-9)


def test_shared_equilibrium_path(shared_eq_problem):
    s1, s2, eq1, eq2, _ = vf.endpoint_storages(shared_eq_problem)
    for mu in (0.0, 0.5, 1.0):
        cert = vf.certify_shared_equilibrium(
            shared_eq_problem, s1, s2, eq1, eq2, md.WeightVector.pair(mu))
        assert cert.status == "CertifiedSharedEquilibrium"
        c1 = cert.evidence[0]["c1"]
        c2 = cert.evidence[0]["c2"]
        combined = cert.evidence[0]["combined_margin"]
        assert combined >= mu * c1 + (1 - mu) * c2 - 1e-9
        assert cert.alpha_coefficient == pytest.approx(mu * c1 + (1 - mu) * c2)
    # degenerate weight returns the first cost's certificate content
    cert1 = vf.certify_shared_equilibrium(
        shared_eq_problem, s1, s2, eq1, eq2, md.WeightVector.pair(1.0))
    assert np.max(np.abs(cert1.storage.P - s1.P)) <= 1e-12
    assert np.max(np.abs(cert1.storage.p - s1.p)) <= 1e-12


def test_shared_equilibrium_not_applicable(growth):
    s1, s2, eq1, eq2, _ = vf.endpoint_storages(growth)
    cert = vf.certify_shared_equilibrium(growth, s1, s2, eq1, eq2,
                                         md.WeightVector.pair(0.5))
    assert cert.status == "Inconclusive"
    assert "differ" in cert.detail


def test_convex_path_needs_strict_cost_with_weight():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = (x1 + u1)^2
[cost 2] l = x1^2 + u1^2
[constraints] x1 in [-2, 2] u1 in [-2, 2]
""")
    at_endpoint = vf.certify_convex(p, md.WeightVector.pair(1.0))
    assert at_endpoint.status == "Inconclusive"
    assert "strictly convex" in at_endpoint.detail
    mixed = vf.certify_convex(p, md.WeightVector.pair(0.5))
    assert mixed.status == "CertifiedConvex"


def test_convex_path_rejects_nonlinear_dynamics(growth):
    cert = vf.certify_convex(growth, md.WeightVector.pair(0.5))
    assert cert.status == "Inconclusive"
    assert "not linear" in cert.detail


def test_convex_lower_bound_path(double_well):
    from dissipcert import expr as ex
    bound = ex.parse_expression("(x1 + 1)^2/10 - 1 + u1^2", 1, 1)
    cert = vf.certify_convex(double_well, md.WeightVector.pair(1.0),
                             lower_bound=bound)
    assert cert.status == "CertifiedConvex"
    assert cert.path == "convex-bound"
    assert cert.equilibrium.x_e[0] == pytest.approx(-1.0, abs=1e-8)
    # without the bound the quartic cost is not convex
    plain = vf.certify_convex(double_well, md.WeightVector.pair(1.0))
    assert plain.status == "Inconclusive"


def test_global_sampled_linear_dynamics_zero_m1(shared_eq_problem):
    s1, s2, eq1, eq2, _ = vf.endpoint_storages(shared_eq_problem)
    cert = vf.certify_global_sampled(shared_eq_problem,
                                     md.WeightVector.pair(0.5), s1, s2,
                                     grid_per_dim=60, n_random=200)
    assert cert.m1 == 0.0
    assert cert.status == "CertifiedGlobalSampled"
    assert cert.sampled and cert.sample_count > 0
    assert "not a proof" in cert.detail


def test_global_sampled_fails_on_growth_box(growth):
    s1, s2, eq1, eq2, _ = vf.endpoint_storages(growth)
    cert = vf.certify_global_sampled(growth, md.WeightVector.pair(0.5), s1, s2,
                                     grid_per_dim=120, n_random=400)
    assert cert.status == "Inconclusive"
    assert cert.m2 < 0.0


def test_global_sampled_requires_box(poly_quadratic):
    s1, s2, eq1, eq2, _ = vf.endpoint_storages(poly_quadratic)
    with pytest.raises(ValueError, match="bounded"):
        vf.certify_global_sampled(poly_quadratic, md.WeightVector.pair(0.5),
                                  s1, s2)


def test_tie_refutes(double_well):
    cert = vf.certify(double_well, md.WeightVector.pair(32.0 / 41.0))
    assert cert.status == "Refuted"
    assert any("tied_states" in e for e in cert.evidence)


def test_continuity_scan_flags_single_jump(double_well):
    res = vf.continuity_scan(double_well, 83)
    assert len(res.jumps) == 1
    jump = res.jumps[0]
    assert jump.contains(32.0 / 41.0)
    assert jump.size == pytest.approx(1.75, abs=1e-6)
    flagged = [r for r in res.records if r.status == "Refuted"]
    assert {round(r.mu, 5) for r in flagged} == {round(jump.mu_lo, 5),
                                                 round(jump.mu_hi, 5)}
    # away from the jump the local test certifies
    others = [r for r in res.records if r.status != "Refuted" and not r.failed]
    assert all(r.status == "CertifiedLocal" for r in others)


def test_continuity_scan_smooth_problem(growth):
    res = vf.continuity_scan(growth, 21)
    assert not res.jumps
    xs = np.array([r.x_e[0] for r in res.records])
    assert xs[0] == pytest.approx(0.2507, abs=1e-3)
    assert xs[-1] == pytest.approx(0.6214, abs=1e-3)
    assert np.all(np.diff(xs) > -1e-12)   # monotone branch


def test_continuity_scan_constant_problem():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = (x1 - 1)^2 + u1^2
[cost 2] l = (x1 - 1)^2 + u1^2
[constraints] x1 in [-3, 3] u1 in [-3, 3]
""")
    res = vf.continuity_scan(p, 11)
    assert not res.jumps
    xs = [r.x_e[0] for r in res.records]
    assert max(xs) - min(xs) <= 1e-10


def test_scan_rejects_tiny_grid(double_well):
    with pytest.raises(ValueError):
        vf.continuity_scan(double_well, 2)


def test_scan_records_solver_failures_and_continues():
    # cost 1 pulls the equilibrium outside the box (an interior KKT point
    # stops existing there), cost 2 keeps it inside: large weights fail,
    # small ones succeed, and the scan reports both
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = (x1 - 5)^2 + u1^2
[cost 2] l = (x1 - 0.5)^2 + u1^2
[constraints] x1 in [0, 1] u1 in [-1, 1]
""")
    res = vf.continuity_scan(p, 11)
    failed = [r for r in res.records if r.failed]
    fine = [r for r in res.records if not r.failed]
    assert failed and fine
    assert all("solver failure" in r.detail for r in failed)
    assert all(r.x_e is not None for r in fine)


def test_three_cost_problem_uses_convex_path():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = x1^2 + u1^2
[cost 2] l = 2*x1^2 + u1^2 + x1
[cost 3] l = x1^2 + 3*u1^2 - u1
[constraints] x1 in [-2, 2] u1 in [-2, 2]
""")
    cert = vf.certify(p, md.WeightVector((0.2, 0.3, 0.5)))
    assert cert.status == "CertifiedConvex"
    # pairwise machinery refuses more than two costs rather than truncating
    with pytest.raises(ValueError, match="two costs"):
        vf.endpoint_storages(p)
    with pytest.raises(ValueError, match="two costs"):
        vf.continuity_scan(p, 5)
    with pytest.raises(ValueError, match="length"):
        vf.certify(p, md.WeightVector.pair(0.5))


def test_certificate_report_round_trip(poly_quadratic):
    import json
    cert = vf.certify(poly_quadratic, md.WeightVector.pair(0.5))
    blob = json.dumps(cert.to_report())
    parsed = json.loads(blob)
    assert parsed["status"] == "Refuted"
    assert parsed["weights"] == [0.5, 0.5]
    assert parsed["equilibrium"]["interior"] is True
