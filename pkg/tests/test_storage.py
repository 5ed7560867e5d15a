import numpy as np
import pytest

from dissipcert import equilibrium as eq
from dissipcert import expr as ex
from dissipcert import model as md
from dissipcert import storage as st
from conftest import fd_hessian


def test_storage_value_and_grad():
    lam = st.StorageFunction(np.array([[2.0]]), np.array([3.0]))
    assert lam.value(np.array([1.5])) == pytest.approx(2 * 2.25 + 4.5)
    assert lam.grad(np.array([1.5]))[0] == pytest.approx(2 * 2 * 1.5 + 3)


def test_storage_validation():
    with pytest.raises(ValueError, match="symmetric"):
        st.StorageFunction(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2))
    with pytest.raises(ValueError, match="matching"):
        st.StorageFunction(np.eye(2), np.zeros(3))


def test_storage_combine():
    a = st.StorageFunction(np.array([[1.0]]), np.array([2.0]))
    b = st.StorageFunction(np.array([[3.0]]), np.array([-2.0]))
    c = a.combine(b, 0.25)
    assert c.P[0, 0] == pytest.approx(0.25 + 2.25)
    assert c.p[0] == pytest.approx(0.5 - 1.5)
    assert c.provenance == "combined"


def test_rotated_cost_hessian_entry_refutation_case(poly_quadratic):
    """Frozen from three independent routes (forward jets, finite
    differences of the rotated value, and the scalar closed form
    1 - nu*(2 + 6u) of this problem's data)."""
    w = md.WeightVector.pair(0.5)
    sol = eq.find_global_equilibrium(poly_quadratic, w)
    lam = st.StorageFunction.linear(sol.nu)
    rc = st.build_rotated_cost(poly_quadratic, w, lam, sol)
    jet = rc.jet2(sol.x_e, sol.u_e)
    assert jet.hess[1, 1] == pytest.approx(-0.0831092, abs=1e-6)
    nu, u = sol.nu[0], sol.u_e[0]
    assert jet.hess[1, 1] == pytest.approx(1.0 - nu * (2.0 + 6.0 * u), abs=1e-12)
    # finite-difference oracle on the rotated value itself
    z0 = np.array([sol.x_e[0], sol.u_e[0]])
    def grad_fn(z):
        return rc.jet2(z[:1], z[1:]).grad
    H_fd = fd_hessian(grad_fn, z0)
    assert jet.hess[1, 1] == pytest.approx(H_fd[1, 1], abs=1e-7)


def test_rotated_cost_vanishes_and_is_stationary(poly_quadratic, growth):
    cases = [(poly_quadratic, 0.5), (poly_quadratic, 1.0), (growth, 0.3)]
    for problem, mu in cases:
        w = md.WeightVector.pair(mu)
        sol = eq.find_global_equilibrium(problem, w)
        lam = st.StorageFunction.linear(sol.nu)
        rc = st.build_rotated_cost(problem, w, lam, sol)
        assert abs(rc.value(sol.x_e, sol.u_e)) <= 1e-9
        assert np.max(np.abs(rc.jet2(sol.x_e, sol.u_e).grad)) <= 1e-8


def test_zero_storage_convex_cost_nonnegative():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = 2*x1^2 + u1^2
[cost 2] l = 2*x1^2 + u1^2
""")
    w = md.WeightVector.pair(1.0)
    sol = eq.find_global_equilibrium(p, w)
    rc = st.build_rotated_cost(p, w, st.StorageFunction.zero(1), sol)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(200, 2))
    vals, ok = rc.value_batch(pts[:, :1], pts[:, 1:])
    assert ok.all() and np.min(vals) >= -1e-12


def test_growth_rotated_cost_matches_rounded_coefficients(growth):
    """The rotated cost rebuilt from 4-digit published-style coefficients
    agrees to the rounding level."""
    w = md.WeightVector.pair(1.0)
    sol = eq.find_global_equilibrium(growth, w)
    lam = st.StorageFunction.linear(sol.nu)
    rc = st.build_rotated_cost(growth, w, lam, sol)
    ref = ex.parse_expression(
        "-ln(5*x1^0.34 - u1) + 1.1312 + 0.3226*x1 - 0.3226*(x1^3 - 2*x1^2 + u1)",
        1, 1)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform(0.2, 1.0, 1)
        u = rng.uniform(0.2, 1.2, 1)
        if 5 * x[0] ** 0.34 - u[0] <= 0.05:
            continue
        assert rc.value(x, u) == pytest.approx(
            growth.eval_value(ref, x, u), abs=1e-3)


def test_build_correction_endpoint_recovers_storage(growth):
    w = md.WeightVector.pair(1.0)
    s1 = eq.find_global_equilibrium(growth, w)
    s2 = eq.find_global_equilibrium(growth, md.WeightVector.pair(0.0))
    lam1 = st.StorageFunction.linear(s1.nu)
    lam2 = st.StorageFunction.linear(s2.nu)
    lam_tilde, combined = st.build_correction(growth, w, lam1, lam2, s1)
    assert np.max(np.abs(lam_tilde)) <= 1e-9
    assert np.max(np.abs(combined.p - lam1.p)) <= 1e-9


def test_build_correction_midpoint_value(growth):
    """Frozen from the development sweep of this problem."""
    s1 = eq.find_global_equilibrium(growth, md.WeightVector.pair(1.0))
    s2 = eq.find_global_equilibrium(growth, md.WeightVector.pair(0.0))
    w = md.WeightVector.pair(0.5)
    sm = eq.find_global_equilibrium(growth, w)
    lam_tilde, combined = st.build_correction(
        growth, w, st.StorageFunction.linear(s1.nu),
        st.StorageFunction.linear(s2.nu), sm)
    assert lam_tilde[0] == pytest.approx(0.0137169, abs=1e-6)
    assert np.max(np.abs(combined.grad(sm.x_e) - sm.nu)) <= 1e-12


def test_correction_gradient_identity_random():
    rng = np.random.default_rng(7)
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = 2*x1^2 + u1^2 + x1
[cost 2] l = x1^2 + 3*u1^2 - u1
""")
    for _ in range(10):
        w = md.WeightVector.pair(float(rng.uniform(0, 1)))
        sol = eq.find_global_equilibrium(p, w)
        lam1 = st.StorageFunction(np.array([[rng.uniform(0, 1)]]),
                                  np.array([rng.uniform(-2, 2)]))
        lam2 = st.StorageFunction(np.array([[rng.uniform(0, 1)]]),
                                  np.array([rng.uniform(-2, 2)]))
        _, combined = st.build_correction(p, w, lam1, lam2, sol)
        assert np.max(np.abs(combined.grad(sol.x_e) - sol.nu)) <= 1e-12


def test_dissipation_margin_quadratic_case():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = 2*x1^2 + u1^2
[cost 2] l = 2*x1^2 + u1^2
""")
    w = md.WeightVector.pair(1.0)
    sol = eq.find_global_equilibrium(p, w)
    rc = st.build_rotated_cost(p, w, st.StorageFunction.zero(1), sol)
    rep = st.check_dissipation_inequality(p, rc, grid_per_dim=101, n_random=500)
    assert rep.c_star == pytest.approx(2.0, abs=1e-3)
    assert rep.satisfied


def test_dissipation_violated_for_forced_linear_storage(poly_quadratic):
    w = md.WeightVector.pair(0.5)
    sol = eq.find_global_equilibrium(poly_quadratic, w)
    rc = st.build_rotated_cost(poly_quadratic, w,
                               st.StorageFunction.linear(sol.nu), sol)
    rep = st.check_dissipation_inequality(poly_quadratic, rc,
                                          grid_per_dim=101, n_random=500)
    assert rep.c_star < 0.0
    # the stored witness reproduces the violation
    assert rc.value(rep.witness_x, rep.witness_u) == pytest.approx(
        rep.witness_value, abs=1e-12)


def test_growth_dissipation_near_equilibrium_path(growth):
    """On the declared box the inequality fails far from the equilibria
    (see the decisions ledger); restricted to a neighborhood of the
    equilibrium path it holds with a solid quadratic margin."""
    s1 = eq.find_global_equilibrium(growth, md.WeightVector.pair(1.0))
    s2 = eq.find_global_equilibrium(growth, md.WeightVector.pair(0.0))
    w = md.WeightVector.pair(0.5)
    sm = eq.find_global_equilibrium(growth, w)
    _, combined = st.build_correction(
        growth, w, st.StorageFunction.linear(s1.nu),
        st.StorageFunction.linear(s2.nu), sm)
    rc = st.build_rotated_cost(growth, w, combined, sm)
    # full declared box: admissible witness with negative rotated cost
    rep_full = st.check_dissipation_inequality(growth, rc, grid_per_dim=200,
                                               n_random=1000)
    assert rep_full.c_star < 0.0
    assert rc.value([3.0], [0.1]) < -1.0
    # neighborhood of the equilibrium path: positive margin
    from dissipcert.problems import text as ptext
    near = md.load_problem(ptext("economic_growth").replace(
        "x1 in [0, 10]  u1 in [0.1, 5]", "x1 in [0.15, 0.75]  u1 in [0.25, 1.3]"))
    rc_near = st.build_rotated_cost(near, w, combined,
                                    eq.find_global_equilibrium(near, w))
    rep_near = st.check_dissipation_inequality(near, rc_near,
                                               grid_per_dim=200, n_random=1000)
    assert rep_near.c_star == pytest.approx(0.83216, abs=5e-3)


def test_empty_sample_set_rejected(poly_quadratic):
    w = md.WeightVector.pair(0.5)
    sol = eq.find_global_equilibrium(poly_quadratic, w)
    rc = st.build_rotated_cost(poly_quadratic, w,
                               st.StorageFunction.linear(sol.nu), sol)
    with pytest.raises(ValueError, match="empty"):
        st.check_dissipation_inequality(poly_quadratic, rc,
                                        samples=(np.zeros((0, 1)), np.zeros((0, 1))))
