"""Trivial bundle charts and the canonical objects living on them.

Indices are 0-based internally: ``mu`` runs over base directions and ``i``
over fiber fields. The DSL is 1-based for fields and uses the chart's base
labels for base indices (so a chart labelled ``0, 1`` writes ``x[0]``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import (CoordId, DSLSyntaxError, Space, SymbolTable, UnknownCoordinate,
                   compile_exprs, coordinate, parse_expr)
from .forms import (ExteriorForm, Layer, VectorField, base_hyperform, contract_vector,
                    exterior_d, pullback, s_eta_adjoint, volume_form, wedge)
from .linalg import numerical_rank

__all__ = [
    "BundleChart", "LagrangianTheory", "HamiltonianData", "SectionSample", "GridTooCoarse",
    "DimensionError", "hessian", "is_regular_at", "poincare_cartan", "canonical_forms",
    "leg_map", "Leg_map", "legendre_jacobian_rank", "hamiltonian_forms", "pairing_Phi", "H0",
    "unified_forms", "omega_H0", "w1_parametrization", "restricted_omega", "legendre_hamiltonian",
    "euler_lagrange_residual", "hamilton_residual", "de_donder_residual",
]


class GridTooCoarse(ValueError):
    pass


class DimensionError(ValueError):
    pass


class _ChartTable(SymbolTable):
    def __init__(self, chart: "BundleChart"):
        super().__init__({**{s.name: s for s in chart.all_symbols()}, **chart.aliases})
        self.chart = chart

    def _base(self, k: int, pos: int) -> int:
        mu = k - self.chart.index_offset
        if not 0 <= mu < self.chart.n:
            raise UnknownCoordinate(f"base index {k}", pos)
        return mu

    def _field(self, k: int, pos: int) -> int:
        if not 1 <= k <= self.chart.m:
            raise UnknownCoordinate(f"field index {k}", pos)
        return k - 1

    def resolve_index(self, name, idx, pos):
        c = self.chart
        if name == "x" and len(idx) == 1:
            return c.x[self._base(idx[0], pos)]
        if name == "y" and len(idx) == 1:
            return c.y[self._field(idx[0], pos)]
        if name in ("y", "z") and len(idx) == 2:
            return c.z[self._field(idx[0], pos), self._base(idx[1], pos)]
        if name == "p" and len(idx) == 2:
            return c.pmu[self._field(idx[0], pos), self._base(idx[1], pos)]
        if name in c.groups and len(idx) in (2, 3):
            a, b = sorted(self._base(k, pos) for k in idx[:2])
            i = c.field_index(c.groups[name][(a, b)])
            return c.y[i] if len(idx) == 2 else c.z[i, self._base(idx[2], pos)]
        if name.endswith("inv") and name[:-3] in c.groups and len(idx) == 2:
            return c.group_inverse(name[:-3])[self._base(idx[0], pos), self._base(idx[1], pos)]
        if name in c.matrices and len(idx) == 2:
            return c.matrices[name][idx[0] - 1, idx[1] - 1]
        if name.endswith("inv") and name[:-3] in c.matrices and len(idx) == 2:
            return c.matrices[name[:-3]].inv()[idx[0] - 1, idx[1] - 1]
        return super().resolve_index(name, idx, pos)

    def det2(self, name, pos):
        if name not in self.chart.groups:
            raise UnknownCoordinate(name, pos)
        return self.chart.group_matrix(name).det()


class BundleChart:
    """Coordinates of ``Z``, ``Lambda^n_2 Y``, ``Z*`` and ``W_0`` for a trivial bundle.

    ``labels`` name the base directions inside composite coordinate names;
    ``base`` overrides the base coordinate names (default ``x<label>``).
    ``groups`` declare symmetric 2x2 blocks of fields, given as the three
    field names of entries (0,0), (0,1), (1,1). ``matrices`` are constant
    matrices over field indices usable in the DSL (``g[i,j]``, ``ginv``).
    """

    def __init__(self, n: int, m: int, fields: Sequence[str] | None = None,
                 labels: Sequence[str] | None = None, base: Sequence[str] | None = None,
                 groups: Mapping[str, Sequence[str]] | None = None,
                 matrices: Mapping[str, Sequence[Sequence[float]]] | None = None,
                 aliases: Mapping[str, str] | None = None):
        if n < 1 or m < 1:
            raise DimensionError("n and m must be positive")
        self.n, self.m = n, m
        self.labels = [str(l) for l in (labels or range(1, n + 1))]
        self.field_names = list(fields or [f"y{i}" for i in range(1, m + 1)])
        base = list(base or [f"x{l}" for l in self.labels])
        if len(self.labels) != n or len(base) != n or len(self.field_names) != m:
            raise DimensionError("declared names do not match n and m")
        self.index_offset = int(self.labels[0]) if all(l.isdigit() for l in self.labels) else 1
        self.x = [coordinate(b) for b in base]
        self.y = [coordinate(f) for f in self.field_names]
        self.z = {(i, mu): coordinate(f"{f}_{l}") for i, f in enumerate(self.field_names)
                  for mu, l in enumerate(self.labels)}
        self.p = coordinate("p")
        self.pmu = {(i, mu): coordinate(f"p_{f}_{l}") for i, f in enumerate(self.field_names)
                    for mu, l in enumerate(self.labels)}
        self.groups = {}
        for g, names in (groups or {}).items():
            if n != 2 or len(names) != 3:
                raise DimensionError("symmetric groups are 2x2 and need n = 2")
            self.groups[g] = {(0, 0): names[0], (0, 1): names[1], (1, 1): names[2]}
        self.matrices = {k: sp.Matrix(v).applyfunc(sp.nsimplify) for k, v in (matrices or {}).items()}
        self.aliases = {}
        for a, target in (aliases or {}).items():
            self.aliases[a] = coordinate(target)
        zs = [self.z[i, mu] for i in range(m) for mu in range(n)]
        ps = [self.pmu[i, mu] for i in range(m) for mu in range(n)]
        roles = {s: CoordId(Space.BASE, (mu,)) for mu, s in enumerate(self.x)}
        roles.update({s: CoordId(Space.FIBER, (i,)) for i, s in enumerate(self.y)})
        roles.update({s: CoordId(Space.JET, k) for k, s in self.z.items()})
        roles.update({s: CoordId(Space.MOMENTUM_PMU, k) for k, s in self.pmu.items()})
        roles[self.p] = CoordId(Space.MOMENTUM_P, ())

        def layer(name, syms):
            return Layer(name, tuple(syms), n, {s: roles[s] for s in syms})

        self.Z = layer("Z", self.x + self.y + zs)
        self.Lam = layer("Lambda2", self.x + self.y + [self.p] + ps)
        self.Zstar = layer("Zstar", self.x + self.y + ps)
        self.W0 = layer("W0", self.x + self.y + [self.p] + ps + zs)
        if len(set(s.name for s in self.W0.symbols)) != self.W0.dim:
            raise DimensionError("coordinate names collide")

    def all_symbols(self):
        return self.W0.symbols

    def symbol_table(self) -> SymbolTable:
        return _ChartTable(self)

    def parse(self, text: str) -> sp.Expr:
        return parse_expr(text, self)

    def field_index(self, name: str) -> int:
        return self.field_names.index(name)

    def group_matrix(self, g: str) -> sp.Matrix:
        e = self.groups[g]
        y = lambda a, b: self.y[self.field_index(e[tuple(sorted((a, b)))])]
        return sp.Matrix(2, 2, lambda a, b: y(a, b))

    def group_inverse(self, g: str) -> sp.Matrix:
        M = self.group_matrix(g)
        det = M.det()
        return sp.Matrix([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]) / det

    def velocities(self) -> list[sp.Symbol]:
        return [self.z[i, mu] for i in range(self.m) for mu in range(self.n)]

    def momenta(self) -> list[sp.Symbol]:
        return [self.pmu[i, mu] for i in range(self.m) for mu in range(self.n)]

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "fields": self.field_names, "labels": self.labels,
                "base": [s.name for s in self.x]}


@dataclass
class HamiltonianData:
    """A Hamiltonian density on ``Z*`` or on a reduced chart of it.

    ``eliminated`` maps momenta that are fixed on the primary constraint set
    to their values in the remaining coordinates; the working layer then
    omits them.
    """

    chart: BundleChart
    H: sp.Expr
    eliminated: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H = sp.sympify(self.H)
        self.eliminated = {k: sp.sympify(v) for k, v in self.eliminated.items()}
        keep = tuple(s for s in self.chart.Zstar.symbols if s not in self.eliminated)
        self.layer = Layer("Zstar1" if self.eliminated else "Zstar", keep, self.chart.n,
                           {s: self.chart.Zstar.roles[s] for s in keep})
        extra = self.H.free_symbols - set(keep)
        if extra:
            raise ValueError(f"H depends on non-chart coordinates {sorted(map(str, extra))}")

    def constraints(self) -> list[sp.Expr]:
        """Primary constraints in solved form ``p - value``."""
        return [k - v for k, v in self.eliminated.items()]

    def embedding(self) -> list[sp.Expr]:
        """Images of the full ``Z*`` coordinates in terms of the working layer."""
        return [self.eliminated.get(s, s) for s in self.chart.Zstar.symbols]


@dataclass
class LagrangianTheory:
    chart: BundleChart
    L: sp.Expr
    name: str = "theory"
    cokernel: list | None = None
    hamiltonian: HamiltonianData | None = None
    registered: dict = field(default_factory=dict)
    box: dict = field(default_factory=dict)

    def __post_init__(self):
        self.L = sp.sympify(self.L)
        extra = self.L.free_symbols - set(self.chart.Z.symbols)
        if extra:
            raise ValueError(f"L depends on non-jet coordinates {sorted(map(str, extra))}")

    @property
    def eta(self) -> ExteriorForm:
        return volume_form(self.chart.Z)

    def dL_dz(self) -> dict:
        return {k: sp.diff(self.L, s) for k, s in self.chart.z.items()}

    def euler_lagrange(self) -> list[sp.Expr]:
        """``E_i = dL/dy^i - d_mu (dL/dz^i_mu)`` with only the explicit-x and y parts
        of the total derivative; second derivatives of the section are not included."""
        c = self.chart
        out = []
        for i in range(c.m):
            e = sp.diff(self.L, c.y[i])
            for mu in range(c.n):
                P = sp.diff(self.L, c.z[i, mu])
                e -= sp.diff(P, c.x[mu])
                for j in range(c.m):
                    e -= c.z[j, mu] * sp.diff(P, c.y[j])
            out.append(e)
        return out

    def sample_box(self, layer: Layer, default=(-2.0, 2.0)) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.box.get(s.name, default)[0] for s in layer.symbols], dtype=float)
        hi = np.array([self.box.get(s.name, default)[1] for s in layer.symbols], dtype=float)
        return lo, hi


# ------------------------------------------------------------ regularity

def hessian(th: LagrangianTheory) -> sp.Matrix:
    zs = th.chart.velocities()
    return sp.Matrix(len(zs), len(zs), lambda a, b: sp.diff(th.L, zs[a], zs[b]))


def is_regular_at(th: LagrangianTheory, pt, tol: float = 0.0) -> bool:
    H = hessian(th)
    x = th.chart.Z.point_array(pt)
    vals = compile_exprs(list(H), th.chart.Z.symbols)(x[None, :])[:, 0].reshape(H.shape)
    return numerical_rank(vals, tol) == H.shape[0]


# ------------------------------------------------------- canonical forms

def poincare_cartan(th: LagrangianTheory) -> tuple[ExteriorForm, ExteriorForm]:
    Z = th.chart.Z
    dL = exterior_d(ExteriorForm.function(Z, th.L))
    theta = volume_form(Z) * th.L + s_eta_adjoint(dL)
    return theta, -exterior_d(theta)


def _canonical_theta(layer: Layer, chart: BundleChart, scalar) -> ExteriorForm:
    theta = volume_form(layer) * scalar
    for (i, mu), s in chart.pmu.items():
        if s in layer:
            theta = theta + s * wedge(ExteriorForm.dx(layer, chart.y[i]), base_hyperform(layer, mu))
    return theta


def canonical_forms(chart: BundleChart) -> tuple[ExteriorForm, ExteriorForm]:
    theta = _canonical_theta(chart.Lam, chart, chart.p)
    return theta, -exterior_d(theta)


def leg_map(th: LagrangianTheory) -> list[sp.Expr]:
    """Images of the ``Lambda^n_2 Y`` coordinates as functions on ``Z``."""
    c = th.chart
    P = th.dL_dz()
    p = th.L - sum((c.z[k] * P[k] for k in P), sp.Integer(0))
    image = {c.p: p, **{c.pmu[k]: P[k] for k in P}}
    return [image.get(s, s) for s in c.Lam.symbols]


def Leg_map(th: LagrangianTheory) -> list[sp.Expr]:
    c = th.chart
    P = th.dL_dz()
    image = {c.pmu[k]: P[k] for k in P}
    return [image.get(s, s) for s in c.Zstar.symbols]


def legendre_jacobian_rank(th: LagrangianTheory, pts, tol: float = 0.0) -> list[int]:
    c = th.chart
    images = Leg_map(th)
    J = [sp.diff(f, s) for f in images for s in c.Z.symbols]
    X = c.Z.points_array(pts)
    vals = compile_exprs(J, c.Z.symbols)(X).T.reshape(len(X), len(images), c.Z.dim)
    return [int(numerical_rank(M, tol)) for M in vals]


def hamiltonian_forms(hd: HamiltonianData) -> tuple[ExteriorForm, ExteriorForm]:
    """``Theta_h = -H d^n x + p^mu_i dy^i ^ d^{n-1}x_mu`` on the working layer."""
    c = hd.chart
    theta = _canonical_theta(c.Zstar, c, sp.Integer(0))
    if hd.eliminated:
        theta = pullback(theta, hd.layer, hd.embedding())
    theta = theta + volume_form(hd.layer) * (-hd.H)
    return theta, -exterior_d(theta)


# ---------------------------------------------------------- unified space

def pairing_Phi(chart: BundleChart) -> sp.Expr:
    return chart.p + sum((chart.pmu[k] * chart.z[k] for k in chart.z), sp.Integer(0))


def H0(th: LagrangianTheory) -> sp.Expr:
    return pairing_Phi(th.chart) - th.L


def unified_forms(chart: BundleChart) -> tuple[ExteriorForm, ExteriorForm]:
    """The canonical pair pulled back to ``W_0`` (same coordinate formula)."""
    theta = _canonical_theta(chart.W0, chart, chart.p)
    return theta, -exterior_d(theta)


def omega_H0(th: LagrangianTheory) -> ExteriorForm:
    W0 = th.chart.W0
    _, omega = unified_forms(th.chart)
    return omega + wedge(exterior_d(ExteriorForm.function(W0, H0(th))), volume_form(W0))


def w1_parametrization(th: LagrangianTheory) -> list[sp.Expr]:
    """Images of the ``W_0`` coordinates along ``Z -> W_0`` onto the set ``H_0 = 0``
    inside the primary constraint set."""
    c = th.chart
    lam = dict(zip(c.Lam.symbols, leg_map(th)))
    return [lam.get(s, s) for s in c.W0.symbols]


def restricted_omega(th: LagrangianTheory) -> ExteriorForm:
    """``Omega_{H_0}`` restricted to the parametrized ``W_0`` constraint set, on ``Z``."""
    return pullback(omega_H0(th), th.chart.Z, w1_parametrization(th))


def legendre_hamiltonian(th: LagrangianTheory) -> HamiltonianData:
    """Hamiltonian of a Lagrangian with constant velocity Hessian.

    With ``L = 1/2 z.K.z + b.z + c`` the momenta satisfy ``p - b = K z``.
    Cokernel directions of ``K`` give primary constraints, which are solved
    for pivot momenta; on the constraint set ``H = 1/2 (p - b).z - c`` for
    any preimage ``z``.
    """
    c = th.chart
    zs, ps = c.velocities(), c.momenta()
    K = hessian(th)
    if any(s in set(zs) for e in K for s in e.free_symbols):
        raise ValueError("velocity Hessian is not constant; register a Hamiltonian instead")
    zero = {s: 0 for s in zs}
    b = sp.Matrix([sp.diff(th.L, s).xreplace(zero) for s in zs])
    c0 = th.L.xreplace(zero)
    rhs = sp.Matrix(ps) - b
    eliminated = {}
    W = K.T.nullspace()
    if W:
        Wm = sp.Matrix.hstack(*W).T
        R, pivots = Wm.rref()
        R = R[:len(pivots), :]
        sol = sp.solve(list(R * rhs), [ps[k] for k in pivots], dict=True)[0]
        eliminated = {ps[k]: sp.simplify(sol[ps[k]]) for k in pivots}
        rhs = rhs.xreplace(eliminated)
    zstar, params = K.gauss_jordan_solve(rhs)
    zstar = zstar.xreplace({t: 0 for t in params})
    H = sp.expand(sp.Rational(1, 2) * (rhs.T * zstar)[0, 0] - c0)
    return HamiltonianData(c, H, eliminated)


# --------------------------------------------------------------- sections

@dataclass
class SectionSample:
    """Values of chart coordinates on a regular base grid (arrays in grid shape)."""

    shape: tuple[int, ...]
    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    values: dict[str, np.ndarray]

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.origin = tuple(float(o) for o in self.origin)
        self.spacing = tuple(float(h) for h in self.spacing)
        if not (len(self.shape) == len(self.origin) == len(self.spacing)):
            raise DimensionError("grid shape, origin and spacing lengths differ")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("grid spacing must be positive")
        self.values = {k: np.asarray(v, dtype=float).reshape(self.shape) for k, v in self.values.items()}

    @property
    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(s) for o, h, s in zip(self.origin, self.spacing, self.shape)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    @classmethod
    def from_functions(cls, base_names: Sequence[str], shape, origin, spacing, funcs: Mapping):
        """Sample callables ``f(*base_arrays)`` on a grid."""
        s = cls(shape, origin, spacing, {})
        X = s.mesh()
        s.values = {k: np.broadcast_to(np.asarray(f(*X), dtype=float), s.shape).copy()
                    for k, f in funcs.items()}
        return s

    def gradient(self, name: str, axis: int) -> np.ndarray:
        if min(self.shape) < 3:
            raise GridTooCoarse("need at least 3 points per axis")
        return np.gradient(self.values[name], self.spacing[axis], axis=axis, edge_order=2)

    def to_json(self) -> str:
        return json.dumps({"grid": {"shape": list(self.shape), "origin": list(self.origin),
                                    "spacing": list(self.spacing)},
                           "values": {k: v.ravel().tolist() for k, v in sorted(self.values.items())}})

    @classmethod
    def from_json(cls, text: str) -> "SectionSample":
        d = json.loads(text)
        g = d["grid"]
        return cls(g["shape"], g["origin"], g["spacing"], d["values"])


def _section_points(s: SectionSample, layer: Layer, chart: BundleChart, fill_jets: bool) -> np.ndarray:
    if min(s.shape) < 3:
        raise GridTooCoarse("need at least 3 points per axis")
    if len(s.shape) != chart.n:
        raise DimensionError("grid dimension differs from base dimension")
    cols = {}
    for mu, X in enumerate(s.mesh()):
        cols[chart.x[mu].name] = X
    cols.update(s.values)
    if fill_jets:
        for (i, mu), z in chart.z.items():
            if z.name not in cols:
                cols[z.name] = s.gradient(chart.y[i].name, mu)
    missing = [n for n in layer.names if n not in cols]
    if missing:
        raise KeyError(f"section lacks values for {missing}")
    return np.stack([cols[n].ravel() for n in layer.names], axis=1)


def euler_lagrange_residual(th: LagrangianTheory, s: SectionSample) -> np.ndarray:
    """``dL/dy^i - d_mu(dL/dz^i_mu)`` along the section, shape ``(m, *grid)``.

    Jets missing from the sample are filled by finite differences of the
    fields; the outer total derivative differentiates the composed momenta.
    """
    c = th.chart
    X = _section_points(s, c.Z, c, fill_jets=True)
    P = th.dL_dz()
    exprs = [sp.diff(th.L, y) for y in c.y] + [P[i, mu] for i in range(c.m) for mu in range(c.n)]
    vals = compile_exprs(exprs, c.Z.symbols)(X)
    out = vals[:c.m].reshape((c.m,) + s.shape).copy()
    mom = vals[c.m:].reshape((c.m, c.n) + s.shape)
    for i in range(c.m):
        for mu in range(c.n):
            out[i] -= np.gradient(mom[i, mu], s.spacing[mu], axis=mu, edge_order=2)
    return out


def hamilton_residual(hd: HamiltonianData, s: SectionSample) -> np.ndarray:
    """Stacked residuals of the field equations of ``H``.

    The first ``m*n`` rows are ``dy^i/dx^mu - dH/dp^mu_i``, the last ``m``
    rows ``sum_mu dp^mu_i/dx^mu + dH/dy^i``.
    """
    c = hd.chart
    X = _section_points(s, c.Zstar, c, fill_jets=False)
    exprs = [sp.diff(hd.H, c.pmu[i, mu]) for i in range(c.m) for mu in range(c.n)]
    exprs += [sp.diff(hd.H, y) for y in c.y]
    vals = compile_exprs(exprs, c.Zstar.symbols)(X).reshape((len(exprs),) + s.shape)
    rows = []
    k = 0
    for i in range(c.m):
        for mu in range(c.n):
            rows.append(s.gradient(c.y[i].name, mu) - vals[k])
            k += 1
    for i in range(c.m):
        div = sum(s.gradient(c.pmu[i, mu].name, mu) for mu in range(c.n))
        rows.append(div + vals[k])
        k += 1
    return np.stack(rows)


def de_donder_residual(th: LagrangianTheory, s: SectionSample) -> np.ndarray:
    """``max_a |psi^*(i_{d_a} Omega_L)|`` per grid point for a section of ``Z``."""
    c = th.chart
    Z = c.Z
    X = _section_points(s, Z, c, fill_jets=True)
    n = c.n
    P = X.shape[0]
    # Jacobian of the section: base rows are the identity
    J = np.zeros((P, Z.dim, n))
    for mu in range(n):
        J[:, mu, mu] = 1.0
    for a in range(n, Z.dim):
        for mu in range(n):
            J[:, a, mu] = np.gradient(X[:, a].reshape(s.shape), s.spacing[mu], axis=mu, edge_order=2).ravel()
    _, omega = poincare_cartan(th)
    worst = np.zeros(P)
    for a in range(Z.dim):
        form = contract_vector(omega, VectorField.coordinate(Z, a))
        if form.is_zero():
            continue
        keys = list(form.coeffs)
        coef = compile_exprs([form.coeffs[k] for k in keys], Z.symbols)(X)
        total = np.zeros(P)
        for k, I in enumerate(keys):
            total += coef[k] * np.linalg.det(J[:, list(I), :])
        worst = np.maximum(worst, np.abs(total))
    return worst.reshape(s.shape)
