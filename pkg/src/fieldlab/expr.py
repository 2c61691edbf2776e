"""Symbolic expressions over chart coordinates.

Expressions are sympy trees whose free symbols are real chart coordinates.
This module adds the pieces the rest of the package relies on: a small
infix DSL for writing Lagrangians, a printer that round-trips through it,
exact differentiation, IEEE evaluation that raises on domain errors, and a
randomized equality oracle.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy as sp
from sympy.printing.str import StrPrinter

Expr = sp.Expr

__all__ = [
    "Space", "CoordId", "coordinate", "parse_expr", "print_expr", "diff",
    "evaluate", "compile_exprs", "equiv_probabilistic", "register_function",
    "ExprError", "DSLSyntaxError", "UnknownCoordinate", "DomainError",
    "MissingCoordinate", "Inconclusive", "UnregisteredDerivative", "SymbolTable",
]


class ExprError(Exception):
    pass


class DSLSyntaxError(ExprError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class UnknownCoordinate(ExprError):
    def __init__(self, token: str, pos: int | None = None):
        where = "" if pos is None else f" at position {pos}"
        super().__init__(f"unknown coordinate or name {token!r}{where}")
        self.token = token
        self.pos = pos


class DomainError(ExprError, ArithmeticError):
    pass


class MissingCoordinate(ExprError):
    pass


class Inconclusive(ExprError):
    pass


class UnregisteredDerivative(ExprError):
    pass


class Space(enum.Enum):
    BASE = "x"
    FIBER = "y"
    JET = "z"
    MOMENTUM_P = "p"
    MOMENTUM_PMU = "pmu"
    W0_EXTRA = "w0"


@dataclass(frozen=True)
class CoordId:
    space: Space
    indices: tuple[int, ...] = ()


def coordinate(name: str) -> sp.Symbol:
    return sp.Symbol(name, real=True)


# ---------------------------------------------------------------- externals

@dataclass
class _External:
    name: str
    nargs: int
    impl: Callable
    derivatives: Sequence[Callable] | None
    cls: type = field(default=None)


_EXTERNALS: dict[str, _External] = {}


class ExternalFunction(sp.Function):
    """Base for user-registered primitives with optional derivative rules."""

    def fdiff(self, argindex=1):
        spec = _EXTERNALS[type(self).__name__]
        if not spec.derivatives:
            raise UnregisteredDerivative(f"no derivative rule registered for {spec.name}")
        return spec.derivatives[argindex - 1](*self.args)


def register_function(name: str, impl: Callable, derivatives: Sequence[Callable] | None = None,
                      nargs: int = 1) -> type:
    """Register an external primitive usable from the DSL.

    ``impl`` must accept floats and numpy arrays. Each derivative rule maps
    the sympy argument list to the partial derivative expression.
    """
    cls = type(name, (ExternalFunction,), {"nargs": nargs})
    _EXTERNALS[name] = _External(name, nargs, impl, derivatives, cls)
    _compiled.cache_clear()
    return cls


def _modules(vectorized: bool):
    ext = {name: spec.impl for name, spec in _EXTERNALS.items()}
    return [ext, "numpy" if vectorized else "math"]


# ------------------------------------------------------------------- parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\*\*|[-+*/^()\[\],])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tok = m.group()
            out.append(_Tok("op" if tok == "**" else kind, "^" if tok == "**" else tok, pos))
        pos = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


# AST nodes are plain tuples: (tag, pos, *payload)

class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self, text: str | None = None, kind: str | None = None) -> _Tok:
        t = self.tok
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = text or kind
            got = t.text or "end of input"
            raise DSLSyntaxError(f"expected {want!r}, got {got!r}", t.pos)
        self.i += 1
        return t

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            raise DSLSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.take()
            node = ("bin", op.pos, op.text, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take()
            node = ("bin", op.pos, op.text, node, self.unary())
        return node

    def unary(self):
        if self.tok.text in ("-", "+"):
            op = self.take()
            inner = self.unary()
            return ("neg", op.pos, inner) if op.text == "-" else inner
        return self.power()

    def power(self):
        node = self.base()
        if self.tok.text == "^":
            op = self.take()
            node = ("pow", op.pos, node, self.exponent())
        return node

    def exponent(self):
        t = self.tok
        if t.text == "-":
            self.take()
            return ("neg", t.pos, self.exponent())
        if t.kind == "num":
            self.take()
            return ("num", t.pos, t.text)
        if t.text == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if t.kind == "ident":
            self.take()
            return ("name", t.pos, t.text)
        raise DSLSyntaxError("expected an exponent", t.pos)

    def base(self):
        t = self.tok
        if t.kind == "num":
            self.take()
            return ("num", t.pos, t.text)
        if t.text == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if t.kind != "ident":
            raise DSLSyntaxError(f"unexpected token {t.text or 'end of input'!r}", t.pos)
        self.take()
        if t.text == "sum" and self.tok.text == "(":
            self.take("(")
            var = self.take(kind="ident").text
            self.take(",")
            lo = self._int()
            self.take(",")
            hi = self._int()
            self.take(",")
            body = self.expr()
            self.take(")")
            return ("sum", t.pos, var, lo, hi, body)
        if self.tok.text == "(":
            self.take()
            args = [self.expr()]
            while self.tok.text == ",":
                self.take()
                args.append(self.expr())
            self.take(")")
            return ("call", t.pos, t.text, args)
        if self.tok.text == "[":
            self.take()
            idx = [self._index()]
            while self.tok.text == ",":
                self.take()
                idx.append(self._index())
            self.take("]")
            return ("index", t.pos, t.text, idx)
        return ("name", t.pos, t.text)

    def _int(self) -> int:
        neg = False
        if self.tok.text == "-":
            self.take()
            neg = True
        t = self.take(kind="num")
        if not t.text.isdigit():
            raise DSLSyntaxError("expected an integer", t.pos)
        return -int(t.text) if neg else int(t.text)

    def _index(self):
        t = self.tok
        if t.kind == "num":
            return ("int", t.pos, self._int())
        if t.kind == "ident":
            self.take()
            return ("var", t.pos, t.text)
        raise DSLSyntaxError("expected an index", t.pos)


class SymbolTable:
    """Name resolution for the DSL.

    The base table knows plain names; charts subclass it to add indexed
    coordinates (``y[1,2]``), ``det2`` and metric-inverse primitives.
    """

    def __init__(self, names: Mapping[str, sp.Expr] | Iterable[sp.Symbol] = ()):
        if isinstance(names, Mapping):
            self.names = dict(names)
        else:
            self.names = {s.name: s for s in names}

    def resolve_name(self, name: str, pos: int) -> sp.Expr:
        if name in self.names:
            return self.names[name]
        if name == "pi":
            return sp.pi
        if name == "E":
            return sp.E
        raise UnknownCoordinate(name, pos)

    def resolve_index(self, name: str, indices: tuple[int, ...], pos: int) -> sp.Expr:
        raise UnknownCoordinate(f"{name}[{','.join(map(str, indices))}]", pos)

    def det2(self, name: str, pos: int) -> sp.Expr:
        raise UnknownCoordinate(name, pos)


_FUNCS = {"sqrt": sp.sqrt, "sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "log": sp.log}


def _elaborate(node, table: SymbolTable, env: dict[str, int]) -> sp.Expr:
    tag, pos = node[0], node[1]
    if tag == "num":
        text = node[2]
        return sp.Integer(int(text)) if text.isdigit() else sp.Float(text)
    if tag == "name":
        name = node[2]
        if name in env:
            return sp.Integer(env[name])
        return table.resolve_name(name, pos)
    if tag == "neg":
        return -_elaborate(node[2], table, env)
    if tag == "bin":
        op, a, b = node[2], _elaborate(node[3], table, env), _elaborate(node[4], table, env)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        return a / b
    if tag == "pow":
        base = _elaborate(node[2], table, env)
        exp = _elaborate(node[3], table, env)
        if not exp.is_number:
            raise DSLSyntaxError("exponent must be a numeric constant", pos)
        if exp == 0:
            return sp.Integer(1)
        return base ** exp
    if tag == "index":
        idx = []
        for kind, ipos, val in node[3]:
            if kind == "int":
                idx.append(val)
            elif val in env:
                idx.append(env[val])
            else:
                raise DSLSyntaxError(f"unbound index variable {val!r}", ipos)
        return table.resolve_index(node[2], tuple(idx), pos)
    if tag == "call":
        fname, args = node[2], node[3]
        if fname == "det2":
            if len(args) != 1 or args[0][0] != "name":
                raise DSLSyntaxError("det2 expects a declared 2x2 group name", pos)
            return table.det2(args[0][2], pos)
        vals = [_elaborate(a, table, env) for a in args]
        if fname in _FUNCS:
            if len(vals) != 1:
                raise DSLSyntaxError(f"{fname} takes one argument", pos)
            return _FUNCS[fname](vals[0])
        if fname in _EXTERNALS:
            spec = _EXTERNALS[fname]
            if len(vals) != spec.nargs:
                raise DSLSyntaxError(f"{fname} takes {spec.nargs} argument(s)", pos)
            return spec.cls(*vals)
        raise UnknownCoordinate(fname, pos)
    if tag == "sum":
        var, lo, hi, body = node[2], node[3], node[4], node[5]
        total = sp.Integer(0)
        for k in range(lo, hi + 1):
            total += _elaborate(body, table, {**env, var: k})
        return total
    raise AssertionError(tag)


def parse_expr(text: str, chart=None) -> sp.Expr:
    """Parse DSL text into an expression over ``chart``'s coordinates.

    ``chart`` may be a SymbolTable, an object exposing ``symbol_table()``,
    a name-to-expression mapping, or an iterable of symbols.
    """
    if chart is None:
        table = SymbolTable()
    elif isinstance(chart, SymbolTable):
        table = chart
    elif hasattr(chart, "symbol_table"):
        table = chart.symbol_table()
    else:
        table = SymbolTable(chart)
    return sp.sympify(_elaborate(_Parser(text).parse(), table, {}))


# ------------------------------------------------------------------ printer

class _DSLPrinter(StrPrinter):
    def _print_Pow(self, expr, rational=False):
        return super()._print_Pow(expr, rational).replace("**", "^")


def print_expr(e: sp.Expr) -> str:
    return _DSLPrinter().doprint(sp.sympify(e))


# ----------------------------------------------------- calculus, evaluation

def _as_symbol(c) -> sp.Symbol:
    return coordinate(c) if isinstance(c, str) else c


def diff(e: sp.Expr, c) -> sp.Expr:
    return sp.diff(sp.sympify(e), _as_symbol(c))


def _point_values(pt: Mapping) -> dict[str, float]:
    return {(k if isinstance(k, str) else k.name): float(v) for k, v in pt.items()}


@lru_cache(maxsize=4096)
def _scalar_fn(e: sp.Expr, names: tuple[str, ...]):
    return sp.lambdify([coordinate(n) for n in names], e, modules=_modules(False))


def evaluate(e: sp.Expr, pt: Mapping) -> float:
    """Evaluate ``e`` at a point given as ``{name or symbol: value}``."""
    e = sp.sympify(e)
    values = _point_values(pt)
    names = tuple(sorted(s.name for s in e.free_symbols))
    missing = [n for n in names if n not in values]
    if missing:
        raise MissingCoordinate(f"point lacks coordinates {missing}")
    try:
        out = _scalar_fn(e, names)(*[values[n] for n in names])
        out = complex(out)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(str(exc)) from exc
    if out.imag != 0 or not math.isfinite(out.real):
        raise DomainError(f"non-real or non-finite value {out}")
    return out.real


@lru_cache(maxsize=1024)
def _compiled(exprs: tuple, names: tuple[str, ...]):
    return sp.lambdify([coordinate(n) for n in names], list(exprs), modules=_modules(True), cse=True)


def compile_exprs(exprs: Sequence, symbols: Sequence) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized evaluator: ``f(X)`` with X of shape (P, D) returns (K, P).

    Domain failures show up as nan/inf entries rather than exceptions.
    """
    exprs = tuple(sp.sympify(e) for e in exprs)
    names = tuple(_as_symbol(s).name for s in symbols)
    if not exprs:
        return lambda X: np.zeros((0, np.atleast_2d(X).shape[0]))
    fn = _compiled(exprs, names)

    def run(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        with np.errstate(all="ignore"):
            vals = fn(*X.T)
        P = X.shape[0]
        out = np.empty((len(exprs), P))
        for k, v in enumerate(vals):
            v = np.asarray(v)
            if np.iscomplexobj(v):
                v = np.where(v.imag == 0, v.real, np.nan)
            out[k] = np.broadcast_to(v, (P,))
        return out

    return run


def equiv_probabilistic(a, b, trials: int = 20, tol: float = 1e-9, rng=None,
                        box: tuple[float, float] | Mapping[str, tuple[float, float]] = (-2.0, 2.0),
                        resamples: int = 10) -> bool:
    """Randomized equality test of two expressions.

    Each trial draws a point uniformly from ``box`` (per coordinate when a
    mapping is given); points where either side is undefined are redrawn up
    to ``resamples`` times.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    a, b = sp.sympify(a), sp.sympify(b)
    syms = sorted(a.free_symbols | b.free_symbols, key=lambda s: s.name)
    rng = np.random.default_rng(rng)
    if not syms:
        if a == b:
            return True
        try:
            va, vb = complex(a.evalf()), complex(b.evalf())
            return abs(va - vb) <= tol * (1 + max(abs(va), abs(vb)))
        except (OverflowError, TypeError) as exc:
            raise Inconclusive(f"constants cannot be compared numerically: {exc}") from exc
    lo = np.empty(len(syms))
    hi = np.empty(len(syms))
    for k, s in enumerate(syms):
        lo[k], hi[k] = box.get(s.name, (-2.0, 2.0)) if isinstance(box, Mapping) else box
    X = lo + (hi - lo) * rng.random((trials * resamples, len(syms)))
    vals = compile_exprs([a, b], syms)(X)
    ok = np.all(np.isfinite(vals), axis=0).reshape(trials, resamples)
    va = vals[0].reshape(trials, resamples)
    vb = vals[1].reshape(trials, resamples)
    for t in range(trials):
        hits = np.flatnonzero(ok[t])
        if hits.size == 0:
            raise Inconclusive("every resample hit a domain error")
        x, y = va[t, hits[0]], vb[t, hits[0]]
        if abs(x - y) > tol * (1 + max(abs(x), abs(y))):
            return False
    return True
