import numpy as np
import pytest

from dissipcert import expr as ex
from dissipcert import model
from dissipcert.problems import text as problem_text


@pytest.fixture(scope="session")
def lq_pair():
    return model.load_problem(problem_text("scalar_lq"))


@pytest.fixture(scope="session")
def double_well():
    return model.load_problem(problem_text("double_well_tracking"))


@pytest.fixture(scope="session")
def poly_quadratic():
    return model.load_problem(problem_text("poly_dynamics_quadratic_costs"))


@pytest.fixture(scope="session")
def growth():
    return model.load_problem(problem_text("economic_growth"))


@pytest.fixture(scope="session")
def shared_eq_problem():
    return model.load_problem(problem_text("shared_equilibrium"))


# ---------------------------------------------------------------------------
# independent finite-difference oracles (central differences on values only)

FD_STEP = 1e-5


def fd_gradient(fn, z, h=FD_STEP):
    z = np.asarray(z, dtype=float)
    g = np.zeros(z.size)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (fn(zp) - fn(zm)) / (2.0 * h)
    return g


def fd_hessian_of_values(fn, z, h=FD_STEP):
    """Four-point central differences on values.  Carries an error floor of
    roughly eps/h^2 times the evaluation magnitude, so only use it where the
    Hessian norm towers over that floor."""
    z = np.asarray(z, dtype=float)
    d = z.size
    H = np.zeros((d, d))
    f0 = fn(z)
    for i in range(d):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        H[i, i] = (fn(zp) - 2.0 * f0 + fn(zm)) / h ** 2
        for j in range(i + 1, d):
            zpp, zpm, zmp, zmm = z.copy(), z.copy(), z.copy(), z.copy()
            zpp[[i, j]] += h
            zmm[[i, j]] -= h
            zpm[i] += h
            zpm[j] -= h
            zmp[i] -= h
            zmp[j] += h
            H[i, j] = H[j, i] = (fn(zpp) - fn(zpm) - fn(zmp) + fn(zmm)) / (4.0 * h ** 2)
    return H


def fd_hessian(grad_fn, z, h=FD_STEP):
    """Central differences of first derivatives.

    The gradients themselves are validated against value differences
    separately, so the chain stays anchored to plain evaluations while the
    second-order oracle remains well conditioned at h = 1e-5 (differencing
    values twice would drown O(1) Hessians in roundoff).  Never touches the
    Hessian propagation under test.
    """
    z = np.asarray(z, dtype=float)
    d = z.size
    H = np.zeros((d, d))
    for i in range(d):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        H[:, i] = (grad_fn(zp) - grad_fn(zm)) / (2.0 * h)
    return (H + H.T) / 2.0


def random_smooth_expression(rng, n=2, m=1):
    """Random polynomial/ln/exp expression plus an evaluation point away from
    singularities, conditioned so central differences with step 1e-5 resolve
    the derivatives.

    Returns (expr, z) with z in a moderate positive range; ln arguments are
    kept >= 2 by construction and exp arguments small.
    """
    d = n + m

    def small_poly():
        terms = []
        for _ in range(rng.integers(2, 5)):
            c = float(np.round(rng.uniform(-1.5, 1.5), 3))
            node = ex.Const(c)
            for _ in range(rng.integers(1, 3)):
                kind = "x" if rng.integers(0, d) < n else "u"
                idx = int(rng.integers(0, n if kind == "x" else m))
                power = int(rng.integers(1, 3))
                factor = ex.Var(kind, idx)
                if power > 1:
                    factor = ex.Pow(factor, ex.Const(float(power)))
                node = ex.Mul(node, factor)
            terms.append(node)
        poly = terms[0]
        for t in terms[1:]:
            poly = ex.Add(poly, t)
        return poly

    while True:
        poly = small_poly()
        shape = int(rng.integers(0, 3))
        if shape == 1:
            # ln(2 + p^2) stays well inside the ln domain
            inner = small_poly()
            body = ex.Func("ln", ex.Add(ex.Const(2.0), ex.Pow(inner, ex.Const(2.0))))
            expr = ex.Add(poly, body)
        elif shape == 2:
            expr = ex.Add(poly, ex.Func("exp", ex.Mul(ex.Const(0.25), small_poly())))
        else:
            expr = poly
        z = rng.uniform(0.7, 1.2, size=d)
        try:
            jet = ex.eval_jet2(expr, z[:n], z[n:], n, m)
        except ex.ExprDomainError:
            continue
        if np.max(np.abs(jet.grad)) < 50.0 and np.max(np.abs(jet.hess)) < 150.0:
            # shift by a constant: derivatives are untouched and a small
            # value at the test point keeps the FD oracle well conditioned
            return ex.Sub(expr, ex.Const(float(np.round(jet.value, 6)))), z
