import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from fieldlab.connections import (ConnectionCoeffs, ConstraintSet, Formalism, NotProjectable, PointOffConstraint,
                                  SampleMismatch, alpha_limit, beta_point, gamma_s, is_projectable_symbolic,
                                  projectability_defect, projector_from_coeffs, right_inverse_defect, rk4,
                                  s_eta_on_projector, semiholonomic_defect, submanifold_tangency_defect)
from fieldlab.constraints import assemble_system, formalism_setup, solve_pointwise
from fieldlab.theories import free_field, oscillator, random_quadratic

LAG = Formalism.LAGRANGIAN


def _ff():
    th = free_field()
    return th, th.chart, th.chart.Z


def test_projector_from_coeffs_is_idempotent_with_vertical_kernel():
    th, c, Z = _ff()
    coeffs = ConnectionCoeffs(LAG, Z, {(c.y[0], 0): c.z[0, 0], (c.y[0], 1): c.z[0, 1],
                                       (c.z[0, 0], 1): c.y[0]})
    P = projector_from_coeffs(coeffs)
    assert P.is_idempotent(rng=0)
    M = P.matrix(np.arange(5.0))
    assert np.allclose(M[:, 2:], 0)
    assert right_inverse_defect(coeffs, np.arange(5.0)) == 0


def test_keys_must_be_fiber_directions():
    th, c, Z = _ff()
    with pytest.raises(ValueError):
        ConnectionCoeffs(LAG, Z, {(c.x[0], 0): 1})
    with pytest.raises(ValueError):
        ConnectionCoeffs(LAG, Z, {(c.y[0], 2): 1})


@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.floats(-2, 2), st.floats(-2, 2))
def test_semiholonomy_two_routes(pt, g0, g1):
    """Direct defect vs the vertical endomorphism applied to the horizontal lifts."""
    th, c, Z = _ff()
    coeffs = ConnectionCoeffs(LAG, Z, {(c.y[0], 0): g0, (c.y[0], 1): g1})
    d = semiholonomic_defect(coeffs, pt)
    S = s_eta_on_projector(coeffs, pt)
    assert np.allclose(d, [g0 - pt[3], g1 - pt[4]])
    semi = np.max(np.abs(d)) <= 1e-12
    assert semi == (np.max(np.abs(S)) <= 1e-12)


def test_semiholonomy_rejects_momentum_charts():
    th, c, _ = _ff()
    with pytest.raises(ValueError):
        semiholonomic_defect(ConnectionCoeffs(Formalism.HAMILTONIAN, c.Zstar), np.zeros(5))


def test_constraint_set_membership():
    th, c, Z = _ff()
    cs = ConstraintSet(Z, [c.z[0, 0] - c.y[0] ** 2])
    X = np.array([[0, 0, 2, 4, 0], [0, 0, 2, 4.1, 0]], dtype=float)
    assert cs.contains(X).tolist() == [True, False]
    g = cs.gradients(X)
    assert g.shape == (1, 2, 5) and np.allclose(g[0, 0], [0, 0, -4, 1, 0])
    assert np.allclose(cs.scaled_residuals(X)[0, 1], 0.1 / np.sqrt(17))
    with pytest.raises(ValueError):
        ConstraintSet(Z, [c.pmu[0, 0]])
    ext = cs.extend([c.y[0]], "secondary-symbolic")
    assert ext.provenance == ["primary-symbolic", "secondary-symbolic"]
    assert ext.printed() == ["-y1^2 + y1_1", "y1"]


def test_tangency_defect():
    th, c, Z = _ff()
    cs = ConstraintSet(Z, [c.y[0]])
    flat = ConnectionCoeffs(LAG, Z, {})
    assert submanifold_tangency_defect(flat, cs, np.zeros(5)) == 0
    tilted = ConnectionCoeffs(LAG, Z, {(c.y[0], 0): 2.0})
    assert submanifold_tangency_defect(tilted, cs, np.zeros(5)) == 2.0
    with pytest.raises(PointOffConstraint):
        submanifold_tangency_defect(flat, cs, np.ones(5))


def test_projectability():
    th, c, Z = _ff()
    good = ConnectionCoeffs(LAG, Z, {(c.y[0], 0): c.y[0] ** 2, (c.z[0, 0], 1): c.z[0, 1]})
    bad = ConnectionCoeffs(LAG, Z, {(c.y[0], 0): c.z[0, 0]})
    assert is_projectable_symbolic(good) and not is_projectable_symbolic(bad)
    fiber = np.zeros((4, 5))
    fiber[:, 3:] = np.random.default_rng(0).normal(size=(4, 2))
    assert projectability_defect(good, fiber) == 0
    assert projectability_defect(bad, fiber) > 0.1
    shifted = fiber.copy()
    shifted[1, 2] = 1.0
    with pytest.raises(SampleMismatch):
        projectability_defect(good, shifted)
    with pytest.raises(NotProjectable):
        beta_point(bad, np.zeros(5), rng=0)


def test_beta_agrees_with_alpha_limit():
    th, c, Z = _ff()
    coeffs = ConnectionCoeffs(LAG, Z, {(c.y[0], 0): sp.sin(c.y[0]), (c.y[0], 1): c.x[0] * c.y[0]})
    z0 = np.array([0.5, -1.0, 0.7, 3.0, -2.0])
    b = beta_point(coeffs, z0, rng=0)
    assert np.max(np.abs(semiholonomic_defect(coeffs, b))) <= 1e-12
    assert np.max(np.abs(alpha_limit(coeffs, z0) - b)) <= 1e-9


def test_rk4_fourth_order_and_horizon():
    f = lambda x: -x
    errs = []
    for h in (0.1, 0.05):
        t, xs = rk4(f, np.array([1.0]), 1.0, h)
        assert np.isclose(t[-1], 1.0)
        errs.append(abs(xs[-1, 0] - np.exp(-1)))
    assert 14 < errs[0] / errs[1] < 18
    t, _ = rk4(f, np.array([1.0]), 1.05, 0.1)
    assert np.isclose(t[-1], 1.05) and len(t) == 12
    with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
        rk4(lambda x: x * x, np.array([1.0]), 5.0, 0.1)


@given(st.integers(0, 10**5))
def test_gamma_s_maps_hamiltonian_solution_to_semiholonomic(seed):
    """A Hamiltonian projector moved through the Legendre Jacobian is the Lagrangian one."""
    th = random_quadratic(seed, n=1, m=1, regular=True)
    c = th.chart
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1, 1, c.Z.dim)
    from fieldlab.bundles import Leg_map
    from fieldlab.expr import compile_exprs
    zs = compile_exprs(Leg_map(th), c.Z.symbols)(z[None, :])[:, 0]
    hs = assemble_system(Formalism.HAMILTONIAN, th, zs)
    hsol = solve_pointwise(hs)
    assert hsol.solvable
    layer = formalism_setup(Formalism.HAMILTONIAN, th).layer
    hc = ConnectionCoeffs.from_vector(Formalism.HAMILTONIAN, layer, hs.labels, hsol.solution)
    lc = gamma_s(th, hc, z)
    assert np.max(np.abs(semiholonomic_defect(lc, z))) < 1e-9
    ls = assemble_system(LAG, th, z)
    lsol = solve_pointwise(ls)
    assert np.allclose([lc.get(*k) for k in ls.labels], lsol.solution, atol=1e-8)
