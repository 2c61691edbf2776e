import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from fieldlab.bundles import (BundleChart, DimensionError, GridTooCoarse, H0, HamiltonianData, LagrangianTheory,
                              Leg_map, SectionSample, de_donder_residual, euler_lagrange_residual,
                              hamilton_residual, hamiltonian_forms, hessian, is_regular_at, leg_map,
                              legendre_hamiltonian, legendre_jacobian_rank, poincare_cartan,
                              w1_parametrization)
from fieldlab.expr import equiv_probabilistic
from fieldlab.forms import is_closed
from fieldlab.theories import bosonic_string, free_field, oscillator, random_quadratic, singular_mech


def test_chart_names_and_dimensions():
    c = BundleChart(2, 1)
    assert c.Z.names == ["x1", "x2", "y1", "y1_1", "y1_2"]
    assert c.Zstar.names == ["x1", "x2", "y1", "p_y1_1", "p_y1_2"]
    assert c.W0.dim == 2 + 1 + 1 + 2 + 2
    with pytest.raises(DimensionError):
        BundleChart(2, 1, labels=["a"])
    with pytest.raises(DimensionError):
        BundleChart(0, 1)


def test_indexed_dsl_resolution():
    c = BundleChart(2, 2)
    assert c.parse("y[2,1]") == c.z[1, 0]
    assert c.parse("p[1,2]") == c.pmu[0, 1]
    assert c.parse("x[2]") == c.x[1]
    s = BundleChart(2, 3, fields=["u", "h00", "h01"], labels=["0", "1"])
    assert s.parse("y[1,0]").name == "u_0"


def test_group_inverse_and_det():
    th = bosonic_string()
    c = th.chart
    h = c.group_matrix("h")
    assert sp.simplify(c.group_inverse("h") * h - sp.eye(2)) == sp.zeros(2, 2)
    assert sp.simplify(c.parse("det2(h)") - h.det()) == 0
    assert sp.simplify(c.parse("hinv[0,1]") - c.group_inverse("h")[0, 1]) == 0


def test_aliases():
    th = oscillator()
    assert th.chart.parse("v") == th.chart.z[0, 0]


def test_lagrangian_rejects_momenta():
    c = BundleChart(1, 1)
    with pytest.raises(ValueError):
        LagrangianTheory(c, c.pmu[0, 0] * c.z[0, 0])


def test_oscillator_cartan_form():
    th = oscillator()
    c = th.chart
    t, q, v = c.Z.symbols
    theta, omega = poincare_cartan(th)
    # Theta_L = (L - v dL/dv) dt + dL/dv dq
    assert sp.simplify(theta.coefficient(t) - (-(v**2) / 2 - q**2 / 2)) == 0
    assert sp.simplify(theta.coefficient(q) - v) == 0
    assert is_closed(omega)


def test_regularity():
    assert is_regular_at(free_field(), np.zeros(5))
    assert not is_regular_at(singular_mech(), np.zeros(5))
    assert hessian(singular_mech()) == sp.Matrix([[1, 0], [0, 0]])
    assert legendre_jacobian_rank(bosonic_string(), [np.r_[0, 0, 1, 2, -1, 0.1, 1, np.ones(10)]]) == [11]


def test_leg_maps_free_field():
    th = free_field()
    c = th.chart
    lam = dict(zip(c.Lam.symbols, leg_map(th)))
    assert lam[c.pmu[0, 0]] == c.z[0, 0]
    assert sp.simplify(lam[c.p] + (c.z[0, 0] ** 2 + c.z[0, 1] ** 2) / 2) == 0
    assert Leg_map(th)[-1] == c.z[0, 1]


def test_h0_vanishes_on_w1_image():
    th = bosonic_string()
    c = th.chart
    img = dict(zip(c.W0.symbols, w1_parametrization(th)))
    assert sp.simplify(H0(th).xreplace(img)) == 0


@given(st.integers(0, 10**6))
def test_legendre_hamiltonian_is_energy(seed):
    th = random_quadratic(seed, regular=True)
    c = th.chart
    hd = legendre_hamiltonian(th)
    leg = dict(zip(c.Zstar.symbols, Leg_map(th)))
    P = th.dL_dz()
    energy = sum(c.z[k] * P[k] for k in P) - th.L
    assert equiv_probabilistic(hd.H.xreplace(leg), energy, trials=5, rng=seed)


def test_legendre_hamiltonian_singular_elimination():
    th = singular_mech()
    hd = legendre_hamiltonian(th)
    c = th.chart
    assert set(hd.eliminated) == {c.pmu[1, 0]}
    assert hd.layer.name == "Zstar1"
    assert "p_y2_t" not in hd.layer.names
    with pytest.raises(ValueError):
        HamiltonianData(c, c.pmu[1, 0], {c.pmu[1, 0]: 0})


def _grid(n=41):
    return SectionSample.from_functions(["x1", "x2"], (n, n), (0.0, 0.0), (0.05, 0.05),
                                        {"y1": lambda a, b: a**2 - b**2 + 3 * a * b})


def test_free_field_residuals_on_harmonic_section():
    th = free_field()
    s = _grid()
    assert np.max(np.abs(euler_lagrange_residual(th, s))) < 1e-9
    assert np.max(de_donder_residual(th, s)) < 1e-9
    bad = SectionSample.from_functions(["x1", "x2"], (21, 21), (0, 0), (0.1, 0.1), {"y1": lambda a, b: a**2})
    assert np.allclose(euler_lagrange_residual(th, bad), -2.0)


def test_hamilton_residual_on_harmonic_section():
    th = free_field()
    hd = legendre_hamiltonian(th)
    s = _grid()
    a, b = s.mesh()
    s.values["p_y1_1"] = 2 * a + 3 * b
    s.values["p_y1_2"] = -2 * b + 3 * a
    assert np.max(np.abs(hamilton_residual(hd, s))) < 1e-9
    _, omega = hamiltonian_forms(hd)
    assert is_closed(omega)


def test_section_json_round_trip_and_errors():
    s = _grid(5)
    t = SectionSample.from_json(s.to_json())
    assert t.shape == s.shape and np.allclose(t.values["y1"], s.values["y1"])
    with pytest.raises(GridTooCoarse):
        euler_lagrange_residual(free_field(), _grid(2))
    with pytest.raises(DimensionError):
        SectionSample((3,), (0.0, 0.0), (0.1,), {})
    with pytest.raises(ValueError):
        SectionSample((3,), (0.0,), (0.0,), {})
