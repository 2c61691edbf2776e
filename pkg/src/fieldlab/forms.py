"""Sparse exterior algebra on a single coordinate chart.

A form of degree k is a map from strictly increasing coordinate-index
tuples to coefficients. Coefficients are sympy expressions or plain floats;
the combinatorics are the same for both, so numeric workflows evaluate a
symbolic form at a point and keep using the same functions.

Conventions: ``(i1 < ... < ik)`` stands for ``dx^i1 ^ ... ^ dx^ik`` and a
form acts on vectors by ``w(v1..vk) = sum_I w_I det(v_j^{i_l})``, so that
``i_X w = w(X, ...)``. The contraction with a (1,1) tensor ``h`` is the
sum over slots ``(i_h w)(v1..vk) = sum_j w(v1, .., h v_j, .., vk)``; with
this choice ``i_Id w = k w``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import CoordId, compile_exprs, equiv_probabilistic
from .linalg import numerical_rank

__all__ = [
    "Layer", "ExteriorForm", "VectorField", "Projector", "VerticalTensor",
    "wedge", "exterior_d", "contract_vector", "contract_projector", "pullback",
    "volume_form", "base_hyperform", "is_multisymplectic", "is_cosymplectic",
    "contraction_matrix", "is_closed", "ChartMismatch", "NotClosed",
    "DimensionMismatch", "WrongChart",
]


class ChartMismatch(ValueError):
    pass


class NotClosed(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class WrongChart(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Layer:
    """An ordered coordinate system; the first ``n_base`` coordinates are base."""

    name: str
    symbols: tuple[sp.Symbol, ...]
    n_base: int
    roles: Mapping[sp.Symbol, CoordId] = field(default_factory=dict)

    def __post_init__(self):
        names = [s.name for s in self.symbols]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate coordinate names in layer {self.name}")
        object.__setattr__(self, "_index", {s: k for k, s in enumerate(self.symbols)})
        object.__setattr__(self, "_by_name", {s.name: k for k, s in enumerate(self.symbols)})

    @property
    def dim(self) -> int:
        return len(self.symbols)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.symbols]

    def index(self, c) -> int:
        if isinstance(c, (int, np.integer)):
            return int(c)
        if isinstance(c, str):
            return self._by_name[c]
        return self._index[c]

    def __contains__(self, c) -> bool:
        return (c in self._by_name) if isinstance(c, str) else (c in self._index)

    def __eq__(self, other):
        return isinstance(other, Layer) and self.symbols == other.symbols and self.n_base == other.n_base

    def __hash__(self):
        return hash((self.symbols, self.n_base))

    def point_array(self, pt) -> np.ndarray:
        """Coordinates in layer order from a mapping or an array."""
        if isinstance(pt, Mapping):
            vals = {(k if isinstance(k, str) else k.name): float(v) for k, v in pt.items()}
            missing = [n for n in self.names if n not in vals]
            if missing:
                raise KeyError(f"point lacks coordinates {missing}")
            return np.array([vals[n] for n in self.names])
        arr = np.asarray(pt, dtype=float)
        if arr.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {arr.shape[-1]}")
        return arr

    def points_array(self, pts) -> np.ndarray:
        if isinstance(pts, np.ndarray):
            return np.atleast_2d(self.point_array(pts))
        return np.array([self.point_array(p) for p in pts]).reshape(-1, self.dim)

    def assignment(self, arr) -> dict[str, float]:
        return dict(zip(self.names, map(float, arr)))


def _is_zero(c) -> bool:
    if isinstance(c, sp.Basic):
        return c == 0
    return c == 0


def _merge(I: tuple[int, ...], J: tuple[int, ...]):
    """Sign and sorted tuple for dx^I ^ dx^J, or None when they overlap."""
    if set(I) & set(J):
        return None
    seq = list(I) + list(J)
    # parity of the sorting permutation by counting inversions
    inv = sum(1 for a in range(len(seq)) for b in range(a + 1, len(seq)) if seq[a] > seq[b])
    return (-1 if inv % 2 else 1), tuple(sorted(seq))


class ExteriorForm:
    __slots__ = ("layer", "degree", "coeffs")

    def __init__(self, layer: Layer, degree: int, coeffs: Mapping[tuple[int, ...], object] | None = None):
        self.layer = layer
        self.degree = degree
        clean = {}
        for I, c in (coeffs or {}).items():
            I = tuple(int(i) for i in I)
            if len(I) != degree or any(a >= b for a, b in zip(I, I[1:])):
                raise ValueError(f"index tuple {I} is not strictly increasing of length {degree}")
            if not _is_zero(c):
                clean[I] = c
        self.coeffs = clean

    # constructors
    @classmethod
    def zero(cls, layer: Layer, degree: int) -> "ExteriorForm":
        return cls(layer, degree)

    @classmethod
    def function(cls, layer: Layer, f) -> "ExteriorForm":
        return cls(layer, 0, {(): f})

    @classmethod
    def dx(cls, layer: Layer, c) -> "ExteriorForm":
        return cls(layer, 1, {(layer.index(c),): sp.Integer(1)})

    # algebra
    def _check(self, other: "ExteriorForm"):
        if self.layer != other.layer:
            raise ChartMismatch(f"{self.layer.name} vs {other.layer.name}")
        if self.degree != other.degree:
            raise ValueError("degree mismatch")

    def __add__(self, other: "ExteriorForm") -> "ExteriorForm":
        self._check(other)
        out = dict(self.coeffs)
        for I, c in other.coeffs.items():
            out[I] = out[I] + c if I in out else c
        return ExteriorForm(self.layer, self.degree, out)

    def __neg__(self) -> "ExteriorForm":
        return ExteriorForm(self.layer, self.degree, {I: -c for I, c in self.coeffs.items()})

    def __sub__(self, other: "ExteriorForm") -> "ExteriorForm":
        return self + (-other)

    def __mul__(self, f) -> "ExteriorForm":
        return ExteriorForm(self.layer, self.degree, {I: c * f for I, c in self.coeffs.items()})

    __rmul__ = __mul__

    def __repr__(self):
        names = self.layer.names
        parts = [f"({c})*" + "^".join("d" + names[i] for i in I) for I, c in sorted(self.coeffs.items())]
        return f"ExteriorForm[{self.layer.name}, {self.degree}](" + " + ".join(parts or ["0"]) + ")"

    def coefficient(self, *coords):
        """Coefficient on the basis element built from ``coords`` (any order)."""
        idx = [self.layer.index(c) for c in coords]
        merged = _merge((), tuple(idx)) if len(set(idx)) == len(idx) else None
        if merged is None:
            return sp.Integer(0)
        sign, I = _merge(tuple(idx[:1]), tuple(idx[1:])) if idx else (1, ())
        return sign * self.coeffs.get(I, sp.Integer(0))

    def map(self, fn) -> "ExteriorForm":
        return ExteriorForm(self.layer, self.degree, {I: fn(c) for I, c in self.coeffs.items()})

    def expand(self) -> "ExteriorForm":
        return self.map(lambda c: sp.expand(c) if isinstance(c, sp.Basic) else c)

    def evaluate(self, pt) -> "ExteriorForm":
        """Numeric form at a point (mapping or layer-ordered array)."""
        x = self.layer.point_array(pt)
        keys = list(self.coeffs)
        vals = compile_exprs([self.coeffs[k] for k in keys], self.layer.symbols)(x[None, :])[:, 0]
        return ExteriorForm(self.layer, self.degree, dict(zip(keys, vals.tolist())))

    def evaluate_many(self, pts) -> tuple[list[tuple[int, ...]], np.ndarray]:
        X = self.layer.points_array(pts)
        keys = list(self.coeffs)
        return keys, compile_exprs([self.coeffs[k] for k in keys], self.layer.symbols)(X)

    def value(self, vectors: Sequence[Sequence[float]]) -> float:
        """The multilinear value on ``degree`` numeric vectors (numeric forms)."""
        V = np.asarray(vectors, dtype=float).reshape(self.degree, self.layer.dim)
        total = 0.0
        for I, c in self.coeffs.items():
            total += float(c) * (np.linalg.det(V[:, list(I)]) if I else 1.0)
        return total

    def is_zero(self) -> bool:
        return not self.coeffs


def wedge(a: ExteriorForm, b: ExteriorForm) -> ExteriorForm:
    if a.layer != b.layer:
        raise ChartMismatch(f"{a.layer.name} vs {b.layer.name}")
    out: dict[tuple[int, ...], object] = {}
    for I, ca in a.coeffs.items():
        for J, cb in b.coeffs.items():
            m = _merge(I, J)
            if m is None:
                continue
            sign, K = m
            term = sign * ca * cb
            out[K] = out[K] + term if K in out else term
    return ExteriorForm(a.layer, a.degree + b.degree, out)


def exterior_d(a: ExteriorForm) -> ExteriorForm:
    out: dict[tuple[int, ...], object] = {}
    syms = set(a.layer.symbols)
    for I, c in a.coeffs.items():
        if not isinstance(c, sp.Basic):
            continue
        for s in c.free_symbols & syms:
            j = a.layer.index(s)
            m = _merge((j,), I)
            if m is None:
                continue
            sign, K = m
            term = sign * sp.diff(c, s)
            out[K] = out[K] + term if K in out else term
    return ExteriorForm(a.layer, a.degree + 1, out)


class VectorField:
    __slots__ = ("layer", "comps")

    def __init__(self, layer: Layer, comps: Mapping | None = None):
        self.layer = layer
        self.comps = {layer.index(k): v for k, v in (comps or {}).items() if not _is_zero(v)}

    @classmethod
    def coordinate(cls, layer: Layer, c) -> "VectorField":
        return cls(layer, {c: sp.Integer(1)})

    def __call__(self, f) -> sp.Expr:
        """Directional derivative of a function."""
        return sum((v * sp.diff(f, self.layer.symbols[a]) for a, v in self.comps.items()), sp.Integer(0))

    def __add__(self, other: "VectorField") -> "VectorField":
        out = dict(self.comps)
        for a, v in other.comps.items():
            out[a] = out.get(a, 0) + v
        return VectorField(self.layer, out)

    def __mul__(self, f) -> "VectorField":
        return VectorField(self.layer, {a: v * f for a, v in self.comps.items()})

    __rmul__ = __mul__

    def array(self, pt=None) -> np.ndarray:
        out = np.zeros(self.layer.dim)
        if pt is None:
            for a, v in self.comps.items():
                out[a] = float(v)
            return out
        x = self.layer.point_array(pt)
        keys = list(self.comps)
        vals = compile_exprs([self.comps[k] for k in keys], self.layer.symbols)(x[None, :])[:, 0]
        out[keys] = vals
        return out


def contract_vector(a: ExteriorForm, X: VectorField) -> ExteriorForm:
    if a.layer != X.layer:
        raise ChartMismatch(f"{a.layer.name} vs {X.layer.name}")
    if a.degree < 1:
        raise ValueError("cannot contract a 0-form")
    out: dict[tuple[int, ...], object] = {}
    for I, c in a.coeffs.items():
        for s, idx in enumerate(I):
            if idx in X.comps:
                K = I[:s] + I[s + 1:]
                term = (-1) ** s * X.comps[idx] * c
                out[K] = out[K] + term if K in out else term
    return ExteriorForm(a.layer, a.degree - 1, out)


class Projector:
    """A (1,1) tensor ``h`` stored as ``{(row a, col b): h^a_b}``."""

    __slots__ = ("layer", "entries")

    def __init__(self, layer: Layer, entries: Mapping[tuple[int, int], object] | None = None):
        self.layer = layer
        self.entries = {(int(a), int(b)): v for (a, b), v in (entries or {}).items() if not _is_zero(v)}

    @classmethod
    def identity(cls, layer: Layer) -> "Projector":
        return cls(layer, {(a, a): sp.Integer(1) for a in range(layer.dim)})

    @classmethod
    def zero(cls, layer: Layer) -> "Projector":
        return cls(layer)

    def column(self, b: int) -> VectorField:
        return VectorField(self.layer, {a: v for (a, bb), v in self.entries.items() if bb == b})

    def columns(self) -> dict[int, VectorField]:
        cols: dict[int, dict] = {}
        for (a, b), v in self.entries.items():
            cols.setdefault(b, {})[a] = v
        return {b: VectorField(self.layer, c) for b, c in cols.items()}

    def compose(self, other: "Projector") -> "Projector":
        out: dict[tuple[int, int], object] = {}
        for (a, b), v in self.entries.items():
            for (bb, c), w in other.entries.items():
                if bb == b:
                    out[(a, c)] = out.get((a, c), 0) + v * w
        return Projector(self.layer, out)

    def matrix(self, pt=None) -> np.ndarray:
        D = self.layer.dim
        M = np.zeros((D, D))
        if not self.entries:
            return M
        keys = list(self.entries)
        if pt is None:
            vals = [float(self.entries[k]) for k in keys]
        else:
            x = self.layer.point_array(pt)
            vals = compile_exprs([self.entries[k] for k in keys], self.layer.symbols)(x[None, :])[:, 0]
        for (a, b), v in zip(keys, vals):
            M[a, b] = v
        return M

    def is_idempotent(self, trials: int = 20, tol: float = 1e-9, rng=None) -> bool:
        sq = self.compose(self)
        keys = set(sq.entries) | set(self.entries)
        return all(equiv_probabilistic(sq.entries.get(k, 0), self.entries.get(k, 0), trials, tol, rng)
                   for k in keys)


def contract_projector(a: ExteriorForm, h: Projector) -> ExteriorForm:
    """Sum-over-slots contraction: ``i_h a = sum_b dx^b ^ i_{h(d_b)} a``."""
    if a.layer != h.layer:
        raise ChartMismatch(f"{a.layer.name} vs {h.layer.name}")
    if a.degree < 1:
        raise ValueError("cannot contract a 0-form")
    out = ExteriorForm.zero(a.layer, a.degree)
    for b, col in h.columns().items():
        out = out + wedge(ExteriorForm.dx(a.layer, b), contract_vector(a, col))
    return out


def pullback(form: ExteriorForm, source: Layer, images: Mapping | Sequence) -> ExteriorForm:
    """Pull ``form`` back along a map ``source -> form.layer``.

    ``images`` gives each target coordinate as an expression in the source
    coordinates (sequence in target order, or mapping target symbol -> expr).
    """
    target = form.layer
    if isinstance(images, Mapping):
        imgs = [sp.sympify(images.get(s, images.get(s.name, s))) for s in target.symbols]
    else:
        imgs = [sp.sympify(e) for e in images]
    subs = dict(zip(target.symbols, imgs))
    d_imgs = {}

    def d_img(k):
        if k not in d_imgs:
            d_imgs[k] = exterior_d(ExteriorForm.function(source, imgs[k]))
        return d_imgs[k]

    out = ExteriorForm.zero(source, form.degree)
    for I, c in form.coeffs.items():
        c_src = c.xreplace(subs) if isinstance(c, sp.Basic) else c
        term = ExteriorForm.function(source, c_src)
        for k in I:
            term = wedge(term, d_img(k))
        out = out + term
    return out


def volume_form(layer: Layer) -> ExteriorForm:
    """``eta = dx^1 ^ ... ^ dx^n`` over the base coordinates."""
    return ExteriorForm(layer, layer.n_base, {tuple(range(layer.n_base)): sp.Integer(1)})


def base_hyperform(layer: Layer, mu: int) -> ExteriorForm:
    """``d^{n-1}x^mu = i_{d/dx^mu} eta`` for the base index ``mu`` (0-based)."""
    return contract_vector(volume_form(layer), VectorField.coordinate(layer, mu))


class VerticalTensor:
    """The vector-valued form ``S_eta = (dy^i - z^i_mu dx^mu) ^ d^{n-1}x^nu (x) d/dz^i_nu``.

    Requires a layer whose roles mark fiber coordinates ``(FIBER, (i,))`` and
    jet coordinates ``(JET, (i, nu))``.
    """

    def __init__(self, layer: Layer):
        from .expr import Space
        fib = {cid.indices[0]: s for s, cid in layer.roles.items() if cid.space is Space.FIBER}
        jet = {cid.indices: s for s, cid in layer.roles.items() if cid.space is Space.JET}
        if not fib or not jet:
            raise WrongChart(f"layer {layer.name} has no jet coordinates")
        self.layer = layer
        n = layer.n_base
        self.parts: dict[tuple[int, int], ExteriorForm] = {}
        for (i, nu), zsym in jet.items():
            theta = ExteriorForm.dx(layer, fib[i])
            for mu in range(n):
                theta = theta - jet[(i, mu)] * ExteriorForm.dx(layer, mu)
            self.parts[(i, nu)] = wedge(theta, base_hyperform(layer, nu))
        self.targets = {key: layer.index(s) for key, s in jet.items()}

    def apply(self, vectors: Sequence[np.ndarray], pt) -> np.ndarray:
        """``S_eta(v1, .., vn)`` at a point, as a layer-ordered numeric vector."""
        out = np.zeros(self.layer.dim)
        for key, form in self.parts.items():
            out[self.targets[key]] = form.evaluate(pt).value(vectors)
        return out

    def adjoint(self, dL: ExteriorForm) -> ExteriorForm:
        """``S_eta^*(dL) = sum dL(d/dz^i_nu) (dy^i - z^i_mu dx^mu) ^ d^{n-1}x^nu``."""
        if dL.layer != self.layer:
            raise WrongChart(f"{dL.layer.name} vs {self.layer.name}")
        if dL.degree != 1:
            raise ValueError("S_eta adjoint acts on 1-forms")
        out = ExteriorForm.zero(self.layer, self.layer.n_base)
        for key, form in self.parts.items():
            c = dL.coeffs.get((self.targets[key],))
            if c is not None:
                out = out + c * form
        return out


def s_eta_adjoint(dL: ExteriorForm) -> ExteriorForm:
    return VerticalTensor(dL.layer).adjoint(dL)


# ------------------------------------------------------------ rank tests

def _coeff_vanishes(c, rng) -> bool:
    if not isinstance(c, sp.Basic):
        return abs(c) == 0
    if c == 0 or sp.expand(c) == 0:
        return True
    return equiv_probabilistic(c, 0, trials=10, tol=1e-9, rng=rng)


def is_closed(form: ExteriorForm, rng=0) -> bool:
    return all(_coeff_vanishes(c, rng) for c in exterior_d(form).coeffs.values())


def contraction_matrix(omega: ExteriorForm) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Matrix of ``v -> i_v omega`` for a numeric form (rows: (k-1)-tuples)."""
    rows: dict[tuple[int, ...], int] = {}
    entries = []
    for I, c in omega.coeffs.items():
        for s, a in enumerate(I):
            K = I[:s] + I[s + 1:]
            r = rows.setdefault(K, len(rows))
            entries.append((r, a, (-1) ** s * float(c)))
    M = np.zeros((len(rows), omega.layer.dim))
    for r, a, v in entries:
        M[r, a] += v
    return list(rows), M


def is_multisymplectic(omega: ExteriorForm, pts, tol: float = 1e-10, check_closed: bool = True) -> bool:
    """Injectivity of ``v -> i_v omega`` at every given point."""
    if omega.degree < 2:
        raise ValueError("multisymplectic forms have degree >= 2")
    if check_closed and not is_closed(omega):
        raise NotClosed("form is not closed")
    if omega.is_zero():
        return False
    keys, vals = omega.evaluate_many(pts)
    for p in range(vals.shape[1]):
        num = ExteriorForm(omega.layer, omega.degree, dict(zip(keys, vals[:, p].tolist())))
        _, M = contraction_matrix(num)
        if not np.all(np.isfinite(M)) or numerical_rank(M, tol) != omega.layer.dim:
            return False
    return True


def is_cosymplectic(omega: ExteriorForm, eta: ExteriorForm, pts, tol: float = 1e-10,
                    check_closed: bool = True) -> bool:
    """``eta ^ omega^n`` nonvanishing at every point of a (2n+1)-chart."""
    D = omega.layer.dim
    if omega.degree != 2 or eta.degree != 1 or D % 2 == 0:
        raise DimensionMismatch("need a 2-form and a 1-form on an odd-dimensional chart")
    if check_closed and not (is_closed(omega) and is_closed(eta)):
        raise NotClosed("cosymplectic pair must be closed")
    top = eta
    for _ in range(D // 2):
        top = wedge(top, omega)
    c = top.coeffs.get(tuple(range(D)))
    if c is None:
        return False
    X = omega.layer.points_array(pts)
    vals = compile_exprs([c], omega.layer.symbols)(X)[0]
    return bool(np.all(np.isfinite(vals)) and np.all(np.abs(vals) > tol))
