import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from fieldlab.checks import dense_tensor, forms_equal, random_form, random_layer, tensor_value
from fieldlab.expr import coordinate
from fieldlab.forms import (ChartMismatch, ExteriorForm, Layer, NotClosed, Projector, VectorField,
                            VerticalTensor, WrongChart, base_hyperform, contract_projector, contract_vector,
                            exterior_d, is_closed, is_cosymplectic, is_multisymplectic, pullback,
                            volume_form, wedge)

seeds = st.integers(0, 10**6)
u = [coordinate(f"u{k}") for k in range(3)]
R3 = Layer("R3", tuple(u), 1)


def test_coordinates_and_dx():
    f = u[0] ** 2 * u[1]
    df = exterior_d(ExteriorForm.function(R3, f))
    assert df.coeffs == {(0,): 2 * u[0] * u[1], (1,): u[0] ** 2}
    w = wedge(ExteriorForm.dx(R3, u[1]), ExteriorForm.dx(R3, u[0]))
    assert w.coeffs == {(0, 1): -1}
    assert w.coefficient(u[1], u[0]) == 1


def test_invalid_index_tuple():
    with pytest.raises(ValueError):
        ExteriorForm(R3, 2, {(1, 0): 1})


def test_chart_mismatch():
    other = Layer("S", tuple(coordinate(f"s{k}") for k in range(3)), 1)
    with pytest.raises(ChartMismatch):
        wedge(ExteriorForm.dx(R3, 0), ExteriorForm.dx(other, 0))


@given(seeds)
def test_value_matches_tensor_oracle(seed):
    rng = np.random.default_rng(seed)
    L = random_layer(rng)
    k = int(rng.integers(1, L.dim + 1))
    a = random_form(L, k, rng).evaluate(rng.uniform(-1, 1, L.dim))
    V = rng.normal(size=(k, L.dim))
    assert np.isclose(a.value(V), tensor_value(dense_tensor(a.coeffs, L.dim, k), V), atol=1e-9)


@given(seeds)
def test_d_squared(seed):
    rng = np.random.default_rng(seed)
    L = random_layer(rng)
    a = random_form(L, int(rng.integers(0, L.dim - 1)), rng)
    assert exterior_d(exterior_d(a)).expand().is_zero()


@given(seeds)
def test_graded_commutativity_and_leibniz(seed):
    rng = np.random.default_rng(seed)
    L = random_layer(rng, 4)
    a, b = random_form(L, 1, rng), random_form(L, 2, rng)
    assert forms_equal(wedge(a, b), wedge(b, a), rng)
    lhs = exterior_d(wedge(a, b))
    assert forms_equal(lhs, wedge(exterior_d(a), b) - wedge(a, exterior_d(b)), rng)


@given(seeds)
def test_contraction_is_antiderivation(seed):
    rng = np.random.default_rng(seed)
    L = random_layer(rng, 4)
    a, b = random_form(L, 1, rng), random_form(L, 2, rng)
    X = VectorField(L, {k: float(v) for k, v in enumerate(rng.normal(size=4))})
    lhs = contract_vector(wedge(a, b), X)
    rhs = wedge(contract_vector(a, X), b) - wedge(a, contract_vector(b, X))
    assert forms_equal(lhs, rhs, rng)


@given(seeds)
def test_identity_projector_scales_by_degree(seed):
    rng = np.random.default_rng(seed)
    L = random_layer(rng)
    k = int(rng.integers(1, L.dim + 1))
    a = random_form(L, k, rng)
    assert forms_equal(contract_projector(a, Projector.identity(L)), a * k, rng)
    assert contract_projector(a, Projector.zero(L)).is_zero()


@given(seeds)
def test_pullback_commutes_with_d_and_wedge(seed):
    rng = np.random.default_rng(seed)
    src = Layer("S", tuple(coordinate(f"s{k}") for k in range(3)), 1)
    tgt = random_layer(rng, 3)
    s = src.symbols
    images = [s[0] + s[1] ** 2, sp.sin(s[2]) * s[0], s[1] * s[2] - s[0]]
    a, b = random_form(tgt, 1, rng), random_form(tgt, 1, rng)
    assert forms_equal(pullback(exterior_d(a), src, images), exterior_d(pullback(a, src, images)), rng)
    assert forms_equal(pullback(wedge(a, b), src, images),
                       wedge(pullback(a, src, images), pullback(b, src, images)), rng)


def test_projector_idempotence():
    P = Projector(R3, {(0, 0): 1, (1, 0): u[2], (2, 2): 1})
    assert P.is_idempotent(rng=0)
    assert not Projector(R3, {(0, 0): 2}).is_idempotent(rng=0)


def test_volume_and_hyperforms():
    L = Layer("B2", tuple(coordinate(n) for n in ("a0", "a1", "w")), 2)
    eta = volume_form(L)
    assert eta.coeffs == {(0, 1): 1}
    assert base_hyperform(L, 0).coeffs == {(1,): 1}
    assert base_hyperform(L, 1).coeffs == {(0,): -1}


def test_multisymplectic_and_closedness():
    omega = wedge(ExteriorForm.dx(R3, 0), ExteriorForm.dx(R3, 1))
    assert is_closed(omega)
    # degenerate: d/du2 is in the kernel
    assert not is_multisymplectic(omega, np.zeros((1, 3)))
    assert is_cosymplectic(omega, ExteriorForm.dx(R3, 2), np.zeros((1, 3)))
    with pytest.raises(NotClosed):
        is_multisymplectic(omega * u[2], np.zeros((1, 3)))
    with pytest.raises(ValueError):
        is_multisymplectic(ExteriorForm.dx(R3, 0), np.zeros((1, 3)))


def test_vertical_tensor_needs_jet_roles():
    with pytest.raises(WrongChart):
        VerticalTensor(R3)
