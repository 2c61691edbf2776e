"""Horizontal-projector coefficients and the diagnostics built on them."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import sympy as sp

from .expr import Space, compile_exprs, print_expr
from .forms import Layer, Projector, VectorField, VerticalTensor

__all__ = [
    "Formalism", "ConnectionCoeffs", "ConstraintSet", "projector_from_coeffs",
    "semiholonomic_defect", "s_eta_on_projector", "projectability_defect",
    "is_projectable_symbolic", "beta_point", "alpha_limit", "rk4",
    "submanifold_tangency_defect", "right_inverse_defect", "gamma_s",
    "SampleMismatch", "NotProjectable", "PointOffConstraint",
]


class SampleMismatch(ValueError):
    pass


class NotProjectable(ValueError):
    pass


class PointOffConstraint(ValueError):
    pass


class Formalism(enum.Enum):
    LAGRANGIAN = "lagrangian"
    HAMILTONIAN = "hamiltonian"
    UNIFIED = "unified"
    UNIFIED_RESTRICTED = "unified_restricted"


@dataclass
class ConnectionCoeffs:
    """``h(d/dx^mu) = d/dx^mu + sum_a table[a, mu] d/da`` over non-base coordinates ``a``.

    Keys are ``(coordinate symbol, mu)``; missing entries are zero. Values
    are expressions on ``layer`` or plain numbers.
    """

    formalism: Formalism
    layer: Layer
    table: dict = field(default_factory=dict)

    def __post_init__(self):
        nb = self.layer.n_base
        for (s, mu) in self.table:
            if s not in self.layer or self.layer.index(s) < nb or not 0 <= mu < nb:
                raise ValueError(f"coefficient key {(s, mu)} outside the chart ranges")

    def get(self, s, mu):
        return self.table.get((s, mu), 0)

    def lift(self, mu: int) -> VectorField:
        comps = {mu: sp.Integer(1)}
        comps.update({self.layer.index(s): v for (s, nu), v in self.table.items() if nu == mu})
        return VectorField(self.layer, comps)

    def evaluate(self, pt) -> "ConnectionCoeffs":
        keys = list(self.table)
        x = self.layer.point_array(pt)
        vals = compile_exprs([sp.sympify(self.table[k]) for k in keys], self.layer.symbols)(x[None, :])[:, 0]
        return ConnectionCoeffs(self.formalism, self.layer, dict(zip(keys, vals.tolist())))

    def lift_matrix(self, pt=None) -> np.ndarray:
        """Columns ``h(d/dx^mu)`` as a (dim, n) numeric matrix."""
        c = self if pt is None else self.evaluate(pt)
        A = np.zeros((self.layer.dim, self.layer.n_base))
        for mu in range(self.layer.n_base):
            A[mu, mu] = 1.0
        for (s, mu), v in c.table.items():
            A[self.layer.index(s), mu] = float(v)
        return A

    @classmethod
    def from_vector(cls, formalism, layer: Layer, labels: Sequence[tuple], values) -> "ConnectionCoeffs":
        return cls(formalism, layer, {k: float(v) for k, v in zip(labels, values)})


def projector_from_coeffs(c: ConnectionCoeffs) -> Projector:
    n = c.layer.n_base
    entries = {(mu, mu): sp.Integer(1) for mu in range(n)}
    for (s, mu), v in c.table.items():
        entries[(c.layer.index(s), mu)] = v
    return Projector(c.layer, entries)


# ------------------------------------------------------------ constraints

@dataclass
class ConstraintSet:
    """Defining functions of a subset of ``layer`` with per-entry provenance."""

    layer: Layer
    exprs: list = field(default_factory=list)
    provenance: list = field(default_factory=list)
    tol: float = 1e-7

    def __post_init__(self):
        self.exprs = [sp.sympify(e) for e in self.exprs]
        if len(self.provenance) < len(self.exprs):
            self.provenance = list(self.provenance) + ["primary-symbolic"] * (len(self.exprs) - len(self.provenance))
        syms = set(self.layer.symbols)
        for e in self.exprs:
            if e.free_symbols - syms:
                raise ValueError(f"constraint {e} lives off layer {self.layer.name}")

    def __len__(self):
        return len(self.exprs)

    def extend(self, exprs, tag: str) -> "ConstraintSet":
        exprs = list(exprs)
        return ConstraintSet(self.layer, self.exprs + exprs, self.provenance + [tag] * len(exprs), self.tol)

    def values(self, X) -> np.ndarray:
        X = self.layer.points_array(X)
        return compile_exprs(self.exprs, self.layer.symbols)(X)

    def gradients(self, X) -> np.ndarray:
        """Shape (K, P, dim)."""
        X = self.layer.points_array(X)
        K, D = len(self.exprs), self.layer.dim
        if K == 0:
            return np.zeros((0, len(X), D))
        return self._grad_fn()(X).reshape(K, D, len(X)).transpose(0, 2, 1)

    def _grad_fn(self):
        key = tuple(self.exprs)
        cached = self.__dict__.get("_grad_cache")
        if cached is None or cached[0] != key:
            flat = [sp.diff(e, s) if s in e.free_symbols else sp.Integer(0)
                    for e in self.exprs for s in self.layer.symbols]
            cached = (key, compile_exprs(flat, self.layer.symbols))
            self.__dict__["_grad_cache"] = cached
        return cached[1]

    def scaled_residuals(self, X) -> np.ndarray:
        """``|phi| / max(1, |grad phi|)`` per constraint and point."""
        v = np.abs(self.values(X))
        g = np.linalg.norm(self.gradients(X), axis=-1)
        return v / np.maximum(1.0, g)

    def contains(self, X) -> np.ndarray:
        X = self.layer.points_array(X)
        if not self.exprs:
            return np.ones(len(X), dtype=bool)
        r = self.scaled_residuals(X)
        return np.all(np.isfinite(r) & (r <= self.tol), axis=0)

    def printed(self) -> list[str]:
        return [print_expr(e) for e in self.exprs]


# ---------------------------------------------------- jet-space diagnostics

def _jet_parts(layer: Layer):
    fib = {cid.indices[0]: s for s, cid in layer.roles.items() if cid.space is Space.FIBER}
    jet = {cid.indices: s for s, cid in layer.roles.items() if cid.space is Space.JET}
    return fib, jet


def semiholonomic_defect(c: ConnectionCoeffs, pt) -> np.ndarray:
    """``Gamma^i_mu(pt) - z^i_mu(pt)`` in (i, mu) order."""
    if c.formalism not in (Formalism.LAGRANGIAN, Formalism.UNIFIED_RESTRICTED):
        raise ValueError("semiholonomy is defined for jet-space connections")
    fib, jet = _jet_parts(c.layer)
    x = c.layer.point_array(pt)
    ev = c.evaluate(x)
    return np.array([float(ev.get(fib[i], mu)) - x[c.layer.index(jet[i, mu])] for (i, mu) in sorted(jet)])


def s_eta_on_projector(c: ConnectionCoeffs, pt) -> np.ndarray:
    """``S_eta(h d_1, .., h d_n)`` at ``pt``; zero exactly for semiholonomic ``h``."""
    A = c.lift_matrix(pt)
    return VerticalTensor(c.layer).apply([A[:, mu] for mu in range(c.layer.n_base)], pt)


def _fiber_components(c: ConnectionCoeffs, components):
    if components is not None:
        return list(components)
    fib, _ = _jet_parts(c.layer)
    return [(fib[i], mu) for i in sorted(fib) for mu in range(c.layer.n_base)]


def projectability_defect(c: ConnectionCoeffs, samples, fixed: Sequence[str] | None = None,
                          components=None) -> float:
    """Spread of the base-and-field components of ``c`` across one fiber.

    ``fixed`` names the coordinates the samples must share (default: base and
    field coordinates).
    """
    L = c.layer
    X = L.points_array(samples)
    if fixed is None:
        fixed = [s.name for s, cid in L.roles.items() if cid.space in (Space.BASE, Space.FIBER)]
    idx = [L.index(f) for f in fixed]
    if not np.allclose(X[:, idx], X[0, idx], rtol=0, atol=1e-12):
        raise SampleMismatch("samples do not share their projected coordinates")
    comps = _fiber_components(c, components)
    if not comps:
        return 0.0
    vals = compile_exprs([sp.sympify(c.get(*k)) for k in comps], L.symbols)(X)
    return float(np.max(np.abs(vals - vals[:, :1])))


def is_projectable_symbolic(c: ConnectionCoeffs, along: Sequence | None = None, components=None) -> bool:
    L = c.layer
    if along is None:
        along = [s for s, cid in L.roles.items() if cid.space is Space.JET]
    return all(sp.simplify(sp.diff(sp.sympify(c.get(*k)), s)) == 0
               for k in _fiber_components(c, components) for s in along)


def beta_point(c: ConnectionCoeffs, z0, rng=None, samples: int = 16, spread: float = 2.0,
               tol: float = 1e-10) -> np.ndarray:
    """Replace each ``z^i_mu`` of ``z0`` by ``Gamma^i_mu(z0)``.

    Projectability over the fiber of ``z0`` is checked first by sampling.
    """
    L = c.layer
    x = L.point_array(z0).astype(float)
    fib, jet = _jet_parts(L)
    rng = np.random.default_rng(rng)
    jidx = [L.index(s) for s in jet.values()]
    S = np.repeat(x[None, :], samples, axis=0)
    S[1:, jidx] += rng.uniform(-spread, spread, (samples - 1, len(jidx)))
    if projectability_defect(c, S) > tol:
        raise NotProjectable("coefficients vary along the fiber")
    ev = c.evaluate(x)
    out = x.copy()
    for (i, mu), s in jet.items():
        out[L.index(s)] = float(ev.get(fib[i], mu))
    return out


def rk4(f, x0: np.ndarray, horizon: float, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Classical fixed-step Runge-Kutta for autonomous ``x' = f(x)``."""
    if step <= 0:
        raise ValueError("step must be positive")
    # whole steps, then one shorter step to land exactly on the horizon
    N = int(np.ceil(horizon / step - 1e-9))
    hs = np.full(N, step)
    if N:
        hs[-1] = horizon - step * (N - 1)
    xs = np.empty((N + 1, len(x0)))
    xs[0] = x = np.asarray(x0, dtype=float)
    for k, h in enumerate(hs):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at step {k + 1}")
        xs[k + 1] = x
    return np.concatenate([[0.0], np.cumsum(hs)]), xs


def alpha_limit(c: ConnectionCoeffs, z0, horizon: float = 30.0, step: float = 0.01) -> np.ndarray:
    """Endpoint of the integral curve of ``U = (Gamma - z) d/dz`` from ``z0``."""
    L = c.layer
    fib, jet = _jet_parts(L)
    keys = sorted(jet)
    targets = [L.index(jet[k]) for k in keys]
    fn = compile_exprs([sp.sympify(c.get(fib[i], mu)) for (i, mu) in keys], L.symbols)

    def U(x):
        v = np.zeros_like(x)
        v[targets] = fn(x[None, :])[:, 0] - x[targets]
        return v

    return rk4(U, L.point_array(z0), horizon, step)[1][-1]


# ---------------------------------------------------------- submanifolds

def submanifold_tangency_defect(c: ConnectionCoeffs, constraints: ConstraintSet, pt) -> float:
    """``max |h(d/dx^mu)(phi)|`` over constraints ``phi``; zero when tangent."""
    if constraints.layer != c.layer:
        raise ValueError("constraints and connection live on different layers")
    if not constraints.exprs:
        return 0.0
    x = constraints.layer.point_array(pt)
    if not constraints.contains(x[None, :])[0]:
        raise PointOffConstraint("point does not satisfy the constraints")
    G = constraints.gradients(x[None, :])[:, 0, :]
    A = c.lift_matrix(x)
    return float(np.max(np.abs(G @ A)))


def right_inverse_defect(c: ConnectionCoeffs, pt) -> float:
    """``|T pi o A - Id|`` for ``A`` the horizontal lift at ``pt``."""
    A = c.lift_matrix(pt)
    n = c.layer.n_base
    return float(np.max(np.abs(A[:n, :] - np.eye(n))))


def gamma_s(th, hcoeffs: ConnectionCoeffs, pt) -> ConnectionCoeffs:
    """Transport Hamiltonian projector coefficients to the jet chart at ``pt``.

    The field components are composed with the Legendre map; the jet
    components come from lifting each horizontal vector through the Jacobian
    of the Legendre map (minimum-norm preimage with fixed base part).
    """
    from .bundles import Leg_map
    chart = th.chart
    Z = chart.Z
    target = hcoeffs.layer
    images = Leg_map(th)
    full = dict(zip(chart.Zstar.symbols, images))
    img = [full[s] for s in target.symbols]
    x = Z.point_array(pt)
    ymap = compile_exprs(img, Z.symbols)(x[None, :])[:, 0]
    J = compile_exprs([sp.diff(f, s) for f in img for s in Z.symbols], Z.symbols)(x[None, :])[:, 0]
    J = J.reshape(len(img), Z.dim)
    Ht = hcoeffs.lift_matrix(ymap)
    n = chart.n
    table = {}
    zcols = [Z.index(s) for s in chart.velocities()]
    for mu in range(n):
        v = np.zeros(Z.dim)
        v[mu] = 1.0
        for i in range(chart.m):
            v[Z.index(chart.y[i])] = Ht[target.index(chart.y[i]), mu]
        rhs = Ht[:, mu] - J @ v
        sol, *_ = np.linalg.lstsq(J[:, zcols], rhs, rcond=None)
        v[zcols] = sol
        for a in range(n, Z.dim):
            table[(Z.symbols[a], mu)] = float(v[a])
    return ConnectionCoeffs(Formalism.LAGRANGIAN, Z, table)
