import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from fieldlab.expr import (DSLSyntaxError, DomainError, Inconclusive, MissingCoordinate, SymbolTable,
                           UnknownCoordinate, UnregisteredDerivative, compile_exprs, coordinate, diff,
                           equiv_probabilistic, evaluate, parse_expr, print_expr, register_function)

x, y, z = (coordinate(n) for n in "xyz")
TABLE = [x, y, z]


def test_precedence_and_power():
    e = parse_expr("1 + 2*x^2 - y/3", TABLE)
    assert sp.simplify(e - (1 + 2 * x**2 - y / 3)) == 0
    assert parse_expr("-x^2", TABLE) == -x**2
    assert parse_expr("x**3", TABLE) == x**3
    assert parse_expr("x^-1", TABLE) == 1 / x


def test_functions_and_constants():
    e = parse_expr("sin(x) + exp(y) + sqrt(z) + log(x) + pi", TABLE)
    assert e == sp.sin(x) + sp.exp(y) + sp.sqrt(z) + sp.log(x) + sp.pi


def test_sum_binder():
    t = SymbolTable({"a1": x, "a2": y, "a3": z})
    assert parse_expr("sum(i,1,3,i*i)", t) == 14


def test_syntax_errors_carry_position():
    with pytest.raises(DSLSyntaxError) as info:
        parse_expr("x + * y", TABLE)
    assert info.value.pos == 4
    with pytest.raises(DSLSyntaxError):
        parse_expr("x ^ y", TABLE)
    with pytest.raises(DSLSyntaxError):
        parse_expr("(x + y", TABLE)
    with pytest.raises(DSLSyntaxError):
        parse_expr("x $ y", TABLE)


def test_unknown_coordinate():
    with pytest.raises(UnknownCoordinate):
        parse_expr("w + x", TABLE)
    with pytest.raises(UnknownCoordinate):
        parse_expr("foo(x)", TABLE)


def test_zero_power_is_one():
    assert parse_expr("x^0", TABLE) == 1


def test_diff_exact():
    e = parse_expr("x^3*sin(y)", TABLE)
    assert diff(e, "x") == 3 * x**2 * sp.sin(y)
    assert diff(e, y) == x**3 * sp.cos(y)


def test_evaluate_and_domain_errors():
    assert evaluate(parse_expr("x*y + 1", TABLE), {"x": 2, "y": 3}) == 7
    with pytest.raises(DomainError):
        evaluate(parse_expr("sqrt(x)", TABLE), {"x": -1})
    with pytest.raises(DomainError):
        evaluate(parse_expr("log(x)", TABLE), {"x": 0})
    with pytest.raises(MissingCoordinate):
        evaluate(parse_expr("x + y", TABLE), {"x": 1})


def test_compile_marks_domain_failures_nan():
    f = compile_exprs([sp.sqrt(x), x + y], [x, y])
    out = f(np.array([[4.0, 1.0], [-1.0, 2.0]]))
    assert out.shape == (2, 2)
    assert out[0, 0] == 2 and np.isnan(out[0, 1])
    assert np.allclose(out[1], [5, 1])


def test_equiv_probabilistic():
    a = parse_expr("(x + y)^2", TABLE)
    b = parse_expr("x^2 + 2*x*y + y^2", TABLE)
    assert equiv_probabilistic(a, b, rng=0)
    assert not equiv_probabilistic(a, b + 1e-3, rng=0)
    # sqrt(x^2) = x only on x > 0
    assert equiv_probabilistic(sp.sqrt(x**2), x, box={"x": (0.1, 3)}, rng=0)
    assert not equiv_probabilistic(sp.sqrt(x**2), x, box={"x": (-3, -0.1)}, rng=0)
    with pytest.raises(Inconclusive):
        equiv_probabilistic(sp.sqrt(x), x, box={"x": (-3, -1)}, rng=0)


def test_registered_function():
    cube = register_function("cube", lambda u: u**3, [lambda u: 3 * u**2])
    e = parse_expr("cube(x) + 1", TABLE)
    assert isinstance(e.args[1] if e.args[0] == 1 else e.args[0], cube)
    assert evaluate(e, {"x": 2}) == 9
    assert sp.simplify(diff(e, x) - 3 * x**2) == 0
    register_function("opaque", np.tanh)
    with pytest.raises(UnregisteredDerivative):
        diff(parse_expr("opaque(x)", TABLE), x)


_atoms = st.sampled_from(["x", "y", "z", "2", "3", "1.5"])


@st.composite
def dsl(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        return draw(_atoms)
    op = draw(st.sampled_from(["+", "-", "*", "^", "sin", "exp"]))
    a = draw(dsl(depth=depth - 1))
    if op in ("sin", "exp"):
        return f"{op}({a})"
    if op == "^":
        return f"({a})^{draw(st.integers(1, 3))}"
    return f"({a}) {op} ({draw(dsl(depth=depth - 1))})"


@given(dsl())
def test_print_parse_round_trip(text):
    e = parse_expr(text, TABLE)
    again = parse_expr(print_expr(e), TABLE)
    assert equiv_probabilistic(e, again, trials=5, rng=1, box=(-1, 1))


@given(dsl(), st.sampled_from(["x", "y", "z"]))
def test_diff_matches_central_difference(text, var):
    e = parse_expr(text, TABLE)
    d = diff(e, var)
    pt = {"x": 0.3, "y": -0.4, "z": 0.7}
    h = 1e-5
    up, dn = dict(pt), dict(pt)
    up[var] += h
    dn[var] -= h
    fd = (evaluate(e, up) - evaluate(e, dn)) / (2 * h)
    assert math.isclose(evaluate(d, pt), fd, rel_tol=1e-5, abs_tol=1e-5)
