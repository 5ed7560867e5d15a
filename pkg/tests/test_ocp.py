import numpy as np
import pytest

from dissipcert import equilibrium as eq
from dissipcert import model as md
from dissipcert import ocp


def test_one_step_matches_analytic_minimiser():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.7*x1 + 0.3*u1
[cost 1] l = 2*x1^2 + 5*u1^2 + 1*x1 + 3*u1
[cost 2] l = 2*x1^2 + 5*u1^2 + 1*x1 + 3*u1
""")
    traj = ocp.solve_ocp(p, md.WeightVector.pair(1.0), x0=[1.0], N=1)
    # single-step cost q x0^2 + s x0 + r u^2 + v u; minimiser u = -v / (2r)
    assert traj.u[0, 0] == pytest.approx(-3.0 / 10.0, abs=1e-8)
    assert traj.converged


def test_adjoint_gradient_matches_finite_differences(poly_quadratic):
    w = md.WeightVector.pair(0.5)
    engine = ocp._Engine(poly_quadratic, [1.0], 8,
                         np.tile(w.as_array(), (1, 1)))
    rng = np.random.default_rng(3)
    U = rng.uniform(-0.5, 0.5, size=(1, 8, 1))
    _, G, _ = engine.objective_grad(U)
    h = 1e-6
    for k in range(8):
        Up, Um = U.copy(), U.copy()
        Up[0, k, 0] += h
        Um[0, k, 0] -= h
        fd = (engine.objective(Up)[0][0] - engine.objective(Um)[0][0]) / (2 * h)
        assert G[0, k, 0] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_equilibrium_start_is_upper_bound(poly_quadratic):
    w = md.WeightVector.pair(0.5)
    sol = eq.find_global_equilibrium(poly_quadratic, w)
    traj = ocp.solve_ocp(poly_quadratic, w, x0=sol.x_e, N=10)
    assert traj.J <= 10 * sol.cost_value + 1e-8
    assert traj.converged


def test_rollout_dynamics_consistency(poly_quadratic):
    w = md.WeightVector.pair(0.3)
    traj = ocp.solve_ocp(poly_quadratic, w, x0=[0.5], N=6)
    for k in range(6):
        fv = poly_quadratic.f_value(traj.x[k], traj.u[k])
        assert np.max(np.abs(traj.x[k + 1] - fv)) <= 1e-10
    assert traj.J == pytest.approx(np.dot(w.as_array(), traj.J_components))


def test_input_box_respected(growth):
    traj = ocp.solve_ocp(growth, md.WeightVector.pair(0.5), x0=[0.5], N=5,
                         max_iter=2000)
    assert np.all(traj.u >= 0.1 - 1e-12) and np.all(traj.u <= 5 + 1e-12)
    assert np.all(traj.x >= -1e-9) and np.all(traj.x <= 10 + 1e-9)


def test_x0_outside_state_box_rejected(growth):
    with pytest.raises(ValueError, match="x0"):
        ocp.solve_ocp(growth, md.WeightVector.pair(0.5), x0=[20.0], N=3)


def test_dominance_filter_hand_case():
    kept = ocp.dominance_filter([(1.0, 1.0), (2.0, 2.0), (0.0, 3.0)])
    assert sorted(kept) == [0, 2]


def test_front_collapses_for_identical_costs():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = (x1 - 1)^2 + u1^2
[cost 2] l = (x1 - 1)^2 + u1^2
[constraints] x1 in [-3, 3] u1 in [-2, 2]
""")
    front, per = ocp.pareto_sweep(p, x0=[0.0], N=4, K=5, restarts=2,
                                  max_iter=2000)
    assert len(front) == 1


def test_small_sweep_front_properties(poly_quadratic):
    front, per = ocp.pareto_sweep(poly_quadratic, x0=[1.0], N=6, K=7,
                                  restarts=2, max_iter=4000)
    J1 = [q.J1 for q in front]
    J2 = [q.J2 for q in front]
    assert all(np.diff(J1) > 0)
    assert all(np.diff(J2) <= 0)
    assert all(t.converged for _, t, e in per if t is not None)
    # mutual nondominance
    for a in front:
        for b in front:
            if a is b:
                continue
            assert not (b.J1 <= a.J1 and b.J2 <= a.J2
                        and (b.J1 < a.J1 or b.J2 < a.J2))


def test_sweep_with_input_box_projected(shared_eq_problem):
    # box-constrained inputs exercise the projected-BB branch
    front, per = ocp.pareto_sweep(shared_eq_problem, x0=[1.5], N=5, K=5,
                                  restarts=2, max_iter=4000)
    assert front
    for _, traj, err in per:
        assert err is None
        assert np.all(traj.u >= -1 - 1e-12) and np.all(traj.u <= 1 + 1e-12)
    J1 = [q.J1 for q in front]
    J2 = [q.J2 for q in front]
    assert all(np.diff(J1) > 0) and all(np.diff(J2) <= 0)


def test_sweep_requires_two_costs():
    p = md.load_problem("""
[dims] n=1 m=1
[dynamics] f1 = 0.5*x1 + u1
[cost 1] l = x1^2 + u1^2
[cost 2] l = x1^2
[cost 3] l = u1^2
""")
    with pytest.raises(ValueError, match="two objectives"):
        ocp.pareto_sweep(p, x0=[0.0], N=3, K=3)
