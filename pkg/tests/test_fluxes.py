import math

import numpy as np
import pytest

from dgforge import symexpr as se
from dgforge.fluxes import (HLLE, LocalLaxFriedrichs, dissipation_alpha, exterior_flux,
                            flux_jacobian_normal, hlle_flux, jacobian_eigenvalues,
                            lax_friedrichs_flux, make_flux, normal_flux, polynomial_roots)
from dgforge.operators import (burgers_eigenvalues, burgers_flux, euler_eigenvalues,
                               euler_flux, slip_wall_reflection)

a = se.as_vector([se.symbol("a")])
b = se.as_vector([se.symbol("b")])
N = se.as_vector([se.symbol("n0"), se.symbol("n1")])


def advection(bvec):
    bv = se.as_vector(list(bvec))
    return (lambda u: se.as_matrix([list(bv * u[0])]),
            lambda u, n: [se.dot(bv, n)])


def test_flux_jacobian_examples():
    F, _ = advection((1.0, 2.0))
    B = flux_jacobian_normal(F, a, N)
    assert B.shape == (1, 1)
    assert B[0, 0] is N[0] + 2 * N[1]
    B = flux_jacobian_normal(burgers_flux, a, N)
    assert B[0, 0] is a[0] * N[0] + N[1]


def test_euler_jacobian_eigenvalues():
    rng = np.random.default_rng(0)
    for _ in range(10):
        U = [rng.uniform(0.5, 2), rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0]
        U[3] = rng.uniform(1, 2) / 0.4 + 0.5 * (U[1] ** 2 + U[2] ** 2) / U[0]
        th = rng.uniform(0, 2 * math.pi)
        n = [math.cos(th), math.sin(th)]
        un = (U[1] * n[0] + U[2] * n[1]) / U[0]
        p = 0.4 * (U[3] - 0.5 * (U[1] ** 2 + U[2] ** 2) / U[0])
        c = math.sqrt(1.4 * p / U[0])
        got = jacobian_eigenvalues(euler_flux, U, n)
        assert np.allclose(got, [un - c, un, un, un + c], atol=1e-9)


def test_alpha_examples():
    F, lam = advection((1.0, 1.0))
    alpha = dissipation_alpha(lam, a, b, N)
    assert se.evaluate(alpha, {"a": 1.0, "b": 2.0, "n0": 0.6, "n1": -0.8}) == \
        pytest.approx(0.2)
    bv = se.as_vector([1.0, 1.0])
    lam2 = lambda u, n: [2 * u[0] * se.dot(bv, n)]
    alpha = dissipation_alpha(lam2, a, b, N)
    val = se.evaluate(alpha, {"a": 0.5, "b": -1.5, "n0": 1.0, "n1": 0.0})
    assert val == pytest.approx(3.0)
    alpha = dissipation_alpha(burgers_eigenvalues, a, b, se.as_vector([1.0, 0.0]))
    assert se.evaluate(alpha, {"a": 0.0, "b": 0.0}) == 0.0


def test_lax_friedrichs_hand_values():
    F, _ = advection((1.0, 1.0))
    n = se.as_vector([1.0, 0.0])
    H = lax_friedrichs_flux(F, a, b, n, 1.0)
    assert se.evaluate(H, {"a": 2.0, "b": 0.0}).tolist() == [2.0]
    H = lax_friedrichs_flux(burgers_flux, a, b, n, 1.0)
    assert se.evaluate(H, {"a": 1.0, "b": -1.0}).tolist() == [1.5]


def test_lf_consistency():
    F, lam = advection((0.3, -1.2))
    scheme = LocalLaxFriedrichs(lam)
    scheme.setup(F, a, a, N)
    H = scheme.interior(F, a, a, N)
    ref = normal_flux(F, a, N)
    env = {"a": 0.7, "n0": 0.6, "n1": 0.8}
    assert se.evaluate(H, env) == pytest.approx(se.evaluate(ref, env), abs=1e-15)


def test_setup_required():
    F, lam = advection((1.0, 0.0))
    with pytest.raises(RuntimeError):
        LocalLaxFriedrichs(lam).interior(F, a, b, N)


def test_hlle_examples():
    F, lam = advection((1.0, 0.0))
    n = se.as_vector([1.0, 0.0])
    H = hlle_flux(F, a, b, n, lam)
    # b.n = 1: lambda_plus = 1, lambda_minus = 0, upwind value
    assert se.evaluate(H, {"a": 3.0, "b": -2.0}).tolist() == [3.0]
    # stagnant Burgers state falls back to the central flux
    H = hlle_flux(burgers_flux, a, b, se.as_vector([1.0, 0.0]), burgers_eigenvalues)
    assert se.evaluate(H, {"a": 0.0, "b": 0.0}).tolist() == [0.0]
    # consistency with distinct wave speeds
    H = hlle_flux(burgers_flux, a, a, se.as_vector([0.6, 0.8]), burgers_eigenvalues)
    expect = 0.5 * 0.6 * 0.7 ** 2 + 0.8 * 0.7
    assert se.evaluate(H, {"a": 0.7})[0] == pytest.approx(expect, rel=1e-15)


def test_exterior_flux():
    F, lam = advection((1.0, 1.0))
    n = se.as_vector([-1.0, 0.0])
    scheme = LocalLaxFriedrichs(lam)
    H = exterior_flux(scheme, F, a, a, n)
    assert se.evaluate(H, {"a": 1.3})[0] == pytest.approx(-1.3)
    # inflow: b.n = -1, alpha = 1, H = (u(-1) + g(-1) + (u - g)) / 2 = -g
    H = exterior_flux(scheme, F, a, b, n)
    assert se.evaluate(H, {"a": 1.3, "b": 0.4})[0] == pytest.approx(-0.4)


def test_slip_wall_state_has_no_mass_flux():
    rng = np.random.default_rng(2)
    for _ in range(10):
        th = rng.uniform(0, 2 * math.pi)
        n = se.as_vector([math.cos(th), math.sin(th)])
        U = se.as_vector([1.2, rng.normal(), rng.normal(), 4.0])
        Ug = slip_wall_reflection(n) @ U
        # the wall state averaged with the interior state carries no normal momentum
        m = (U + Ug) * 0.5
        mass = normal_flux(euler_flux, m, n)[0]
        assert abs(se.evaluate(mass, {})) < 1e-14


def test_make_flux():
    assert isinstance(make_flux("lf", burgers_eigenvalues), LocalLaxFriedrichs)
    assert isinstance(make_flux("HLLE", burgers_eigenvalues), HLLE)
    with pytest.raises(ValueError):
        make_flux("roe", burgers_eigenvalues)


def test_euler_rest_state():
    U = se.as_vector([1.0, 0.0, 0.0, 2.5])
    F = se.evaluate(euler_flux(U), {})
    assert np.allclose(F, [[0, 0], [1, 0], [0, 1], [0, 0]], atol=1e-15)
    lam = [se.evaluate(l, {}) for l in euler_eigenvalues(U, se.as_vector([1.0, 0.0]))]
    assert np.allclose(lam, [-math.sqrt(1.4), 0.0, math.sqrt(1.4)], atol=1e-15)


def test_double_root_refinement():
    # (x - 1)^2 (x + 2)
    r = polynomial_roots([1.0, 0.0, -3.0, 2.0])
    assert np.allclose(r, [-2.0, 1.0, 1.0], atol=1e-12)
