"""Randomized property suites for the exterior algebra.

The oracles expand forms into dense antisymmetric tensors and act on
explicit vectors, so they share no combinatorics with ``forms``.
"""
from __future__ import annotations

import math
from itertools import combinations, permutations

import numpy as np
import sympy as sp

from .expr import compile_exprs, coordinate
from .forms import (ExteriorForm, Layer, Projector, contract_projector, exterior_d, wedge)

__all__ = ["random_layer", "random_form", "forms_equal", "dense_tensor", "tensor_value",
           "shuffle_wedge_value", "run_exterior_suites"]


def random_layer(rng, dim: int | None = None, n_base: int = 1) -> Layer:
    dim = dim or int(rng.integers(2, 6))
    return Layer(f"R{dim}", tuple(coordinate(f"u{k}") for k in range(dim)), min(n_base, dim))


def _random_coeff(layer: Layer, rng) -> sp.Expr:
    s = layer.symbols
    pick = lambda: s[int(rng.integers(len(s)))]
    c = sp.Rational(int(rng.integers(-5, 6)), int(rng.integers(1, 4)))
    kind = int(rng.integers(5))
    if kind == 0:
        return c
    if kind == 1:
        return c * pick() * pick()
    if kind == 2:
        return c * sp.sin(pick()) + pick()
    if kind == 3:
        return c * sp.exp(pick() / 3) * pick()
    return c * pick() ** 3 - pick() * pick()


def random_form(layer: Layer, degree: int, rng, terms: int = 3) -> ExteriorForm:
    tuples = list(combinations(range(layer.dim), degree))
    coeffs = {}
    for _ in range(terms):
        I = tuples[int(rng.integers(len(tuples)))]
        coeffs[I] = coeffs.get(I, 0) + _random_coeff(layer, rng)
    return ExteriorForm(layer, degree, coeffs)


def _substitute(exprs, symbols, X: np.ndarray) -> np.ndarray:
    """Values of ``exprs`` at the rows of ``X`` by direct substitution, shape (K, P).

    Cheaper than compiling when the expressions are used once at a few points.
    """
    out = np.empty((len(exprs), len(X)))
    for p, row in enumerate(X):
        sub = {s: sp.Float(v, 30) for s, v in zip(symbols, row)}
        for k, e in enumerate(exprs):
            out[k, p] = float(sp.sympify(e).xreplace(sub)) if isinstance(e, sp.Basic) else float(e)
    return out


def _at(form: ExteriorForm, x) -> ExteriorForm:
    keys = list(form.coeffs)
    vals = _substitute([form.coeffs[k] for k in keys], form.layer.symbols, np.asarray(x)[None, :])[:, 0]
    return ExteriorForm(form.layer, form.degree, dict(zip(keys, vals.tolist())))


def forms_equal(a: ExteriorForm, b: ExteriorForm, rng, points: int = 4, tol: float = 1e-9,
                compiled: bool = False) -> bool:
    """Coefficientwise equality at random points of [-2, 2]^dim."""
    if a.degree != b.degree or a.layer != b.layer:
        return False
    keys = sorted(set(a.coeffs) | set(b.coeffs))
    if not keys:
        return True
    exprs = [a.coeffs.get(k, 0) for k in keys] + [b.coeffs.get(k, 0) for k in keys]
    X = rng.uniform(-2, 2, (points, a.layer.dim))
    v = compile_exprs(exprs, a.layer.symbols)(X) if compiled else _substitute(exprs, a.layer.symbols, X)
    x, y = v[:len(keys)], v[len(keys):]
    return bool(np.all(np.abs(x - y) <= tol * (1 + np.maximum(np.abs(x), np.abs(y)))))


def _perm_sign(p) -> int:
    p = list(p)
    sign = 1
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def dense_tensor(coeffs: dict, dim: int, degree: int) -> np.ndarray:
    """Antisymmetric array ``T`` with ``T[I] = c_I / k!`` summed over orderings of ``I``,
    so that ``w(v1..vk) = k! * T(v1, .., vk)`` matches the determinant convention."""
    T = np.zeros((dim,) * degree)
    for I, c in coeffs.items():
        for p in permutations(range(degree)):
            T[tuple(I[q] for q in p)] += _perm_sign(p) * float(c) / math.factorial(degree)
    return T


def tensor_value(T: np.ndarray, vectors) -> float:
    out = T
    for v in vectors:
        out = np.tensordot(np.asarray(v, dtype=float), out, axes=(0, 0))
    return float(out) * math.factorial(T.ndim)


def shuffle_wedge_value(a_num: ExteriorForm, b_num: ExteriorForm, vectors) -> float:
    """``(a ^ b)(v..)`` as a signed sum over (p, q)-shuffles of tensor evaluations."""
    p, q = a_num.degree, b_num.degree
    D = a_num.layer.dim
    Ta, Tb = dense_tensor(a_num.coeffs, D, p), dense_tensor(b_num.coeffs, D, q)
    total = 0.0
    for S in combinations(range(p + q), p):
        rest = [k for k in range(p + q) if k not in S]
        sign = _perm_sign(list(S) + rest)
        va = tensor_value(Ta, [vectors[k] for k in S]) if p else float(a_num.coeffs.get((), 0))
        vb = tensor_value(Tb, [vectors[k] for k in rest]) if q else float(b_num.coeffs.get((), 0))
        total += sign * va * vb
    return total


def _value(form_num: ExteriorForm, vectors) -> float:
    if form_num.degree == 0:
        return float(form_num.coeffs.get((), 0))
    return tensor_value(dense_tensor(form_num.coeffs, form_num.layer.dim, form_num.degree), vectors)


def _suite_dd(rng, trials):
    fails = 0
    for _ in range(trials):
        L = random_layer(rng)
        k = int(rng.integers(0, min(3, L.dim - 1)))
        a = random_form(L, k, rng)
        if not forms_equal(exterior_d(exterior_d(a)), ExteriorForm.zero(L, k + 2), rng, points=2):
            fails += 1
    return fails


def _pair(rng):
    L = random_layer(rng, int(rng.integers(3, 6)))
    p = int(rng.integers(0, 3))
    q = int(rng.integers(0, min(3, L.dim - p + 1)))
    return L, random_form(L, p, rng), random_form(L, q, rng)


def _suite_graded(rng, trials):
    fails = 0
    for _ in range(trials):
        L, a, b = _pair(rng)
        ab, ba = wedge(a, b), wedge(b, a)
        ok = forms_equal(ab, ba * (-1) ** (a.degree * b.degree), rng, points=2)
        # brute-force value at a point on random vectors
        x = rng.uniform(-2, 2, L.dim)
        vecs = rng.normal(size=(ab.degree, L.dim))
        lhs = _value(_at(ab, x), vecs)
        rhs = shuffle_wedge_value(_at(a, x), _at(b, x), vecs)
        ok = ok and abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs))
        fails += not ok
    return fails


def _suite_leibniz(rng, trials):
    fails = 0
    for _ in range(trials):
        L, a, b = _pair(rng)
        if a.degree + b.degree + 1 > L.dim:
            b = random_form(L, 0, rng)
        lhs = exterior_d(wedge(a, b))
        rhs = wedge(exterior_d(a), b) + wedge(a, exterior_d(b)) * (-1) ** a.degree
        fails += not forms_equal(lhs, rhs, rng, points=2)
    return fails


def _suite_projector(rng, trials):
    fails = 0
    for _ in range(trials):
        L = random_layer(rng, int(rng.integers(2, 6)))
        k = int(rng.integers(1, min(4, L.dim + 1)))
        a = random_form(L, k, rng)
        H = rng.normal(size=(L.dim, L.dim))
        H[np.abs(H) < 0.3] = 0.0
        h = Projector(L, {(i, j): float(H[i, j]) for i in range(L.dim) for j in range(L.dim)})
        x = rng.uniform(-2, 2, L.dim)
        vecs = rng.normal(size=(k, L.dim))
        got = _value(_at(contract_projector(a, h), x), vecs)
        an = _at(a, x)
        want = 0.0
        for j in range(k):
            vs = [vecs[i] if i != j else H @ vecs[i] for i in range(k)]
            want += _value(an, vs)
        fails += abs(got - want) > 1e-9 * (1 + abs(want))
    return fails


SUITES = {
    "d_squared_zero": _suite_dd,
    "graded_commutativity": _suite_graded,
    "leibniz": _suite_leibniz,
    "projector_contraction": _suite_projector,
}


def run_exterior_suites(trials: int = 100, seed: int = 0) -> dict:
    out = {}
    for name, fn in SUITES.items():
        rng = np.random.default_rng([seed, len(name)])
        fails = fn(rng, trials)
        out[name] = {"trials": trials, "failures": int(fails), "passed": fails == 0}
    return out
