"""One-dimensional base (time-dependent mechanics): Reeb fields and trajectories.

The presymplectic oracle here deliberately avoids the projector machinery:
it builds the unified 2-form as a dense antisymmetric matrix straight from
its coordinate formula and solves for ``xi`` inside the tangent space of
the previous constraint set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .bundles import H0, LagrangianTheory, SectionSample, euler_lagrange_residual, w1_parametrization
from .connections import ConstraintSet, Formalism, rk4
from .constraints import (candidate_constraints, classify_points, formalism_setup, sample_on,
                          gauss_newton_project, SOLVE_TOL)
from .expr import compile_exprs
from .forms import ExteriorForm, Layer, VectorField, is_closed
from .linalg import lstsq_min_norm, null_space, numerical_rank

__all__ = ["ReebProblem", "Trajectory", "reeb_field", "reeb_components", "sode_defect", "integrate",
           "unified_field", "presymplectic_chain_oracle", "OracleTrace", "oracle_agreement",
           "DegenerateStructure", "NonFiniteState"]


class DegenerateStructure(ValueError):
    pass


class NonFiniteState(FloatingPointError):
    pass


@dataclass
class ReebProblem:
    omega: ExteriorForm
    eta: ExteriorForm
    check: bool = True

    def __post_init__(self):
        if self.omega.layer != self.eta.layer:
            raise ValueError("forms live on different charts")
        if self.omega.degree != 2 or self.eta.degree != 1 or self.layer.dim % 2 == 0:
            raise DegenerateStructure("need a 2-form and a 1-form on an odd-dimensional chart")
        if self.check and not (is_closed(self.omega) and is_closed(self.eta)):
            raise DegenerateStructure("forms must be closed")
        D = self.layer.dim
        self._pairs = list(self.omega.coeffs)
        self._eta_keys = list(self.eta.coeffs)
        exprs = [self.omega.coeffs[k] for k in self._pairs] + [self.eta.coeffs[k] for k in self._eta_keys]
        self._fn = compile_exprs(exprs, self.layer.symbols)

    @property
    def layer(self) -> Layer:
        return self.omega.layer

    def matrices(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Antisymmetric ``W[a, b] = Omega(d_a, d_b)`` and ``eta`` rows at each point."""
        X = np.atleast_2d(X)
        D = self.layer.dim
        vals = self._fn(X)
        W = np.zeros((len(X), D, D))
        for k, (a, b) in enumerate(self._pairs):
            W[:, a, b] += vals[k]
            W[:, b, a] -= vals[k]
        e = np.zeros((len(X), D))
        for k, (a,) in enumerate(self._eta_keys):
            e[:, a] = vals[len(self._pairs) + k]
        return W, e


def reeb_components(rp: ReebProblem, X, tol: float = 1e-10) -> np.ndarray:
    """Solve ``i_xi Omega = 0, eta(xi) = 1`` at each row of ``X``; shape (P, dim)."""
    X = rp.layer.points_array(X)
    W, e = rp.matrices(X)
    A = np.concatenate([W.transpose(0, 2, 1), e[:, None, :]], axis=1)
    b = np.zeros(A.shape[:2])
    b[:, -1] = 1.0
    xi, resid, ranks = lstsq_min_norm(A, b, tol)
    if np.any(ranks < rp.layer.dim) or np.any(resid > 1e-8):
        raise DegenerateStructure("Reeb system is singular at some point")
    return xi


def reeb_field(rp: ReebProblem, pt=None, tol: float = 1e-10):
    """Numeric components at ``pt``, or a symbolic VectorField when ``pt`` is None."""
    if pt is not None:
        return reeb_components(rp, rp.layer.point_array(pt)[None, :], tol)[0]
    D = rp.layer.dim
    W = sp.zeros(D, D)
    for (a, b), c in rp.omega.coeffs.items():
        W[a, b] += c
        W[b, a] -= c
    e = sp.zeros(1, D)
    for (a,), c in rp.eta.coeffs.items():
        e[0, a] = c
    A = W.T.col_join(e)
    rhs = sp.zeros(D, 1).col_join(sp.Matrix([[1]]))
    try:
        sol, params = A.gauss_jordan_solve(rhs)
    except ValueError as exc:
        raise DegenerateStructure("Reeb system is inconsistent") from exc
    if params.shape[0]:
        raise DegenerateStructure("Reeb system has free parameters")
    return VectorField(rp.layer, {a: sp.simplify(sol[a]) for a in range(D)})


def sode_defect(xi, pt, layer: Layer) -> float:
    """``max_i |xi^{y^i} - z^i|`` (second-order condition) for n = 1."""
    if layer.n_base != 1:
        raise ValueError("second-order condition is stated for a one-dimensional base")
    x = layer.point_array(pt)
    comps = xi.array(x) if isinstance(xi, VectorField) else np.asarray(xi, dtype=float)
    from .expr import Space
    fib = {cid.indices[0]: s for s, cid in layer.roles.items() if cid.space is Space.FIBER}
    jet = {cid.indices[0]: s for s, cid in layer.roles.items() if cid.space is Space.JET}
    return float(max(abs(comps[layer.index(fib[i])] - x[layer.index(jet[i])]) for i in fib))


@dataclass
class Trajectory:
    names: list
    times: np.ndarray
    states: np.ndarray
    step: float
    method: str = "rk4"

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "step": self.step, "method": self.method,
                "times": [float(f"{t:.12g}") for t in self.times],
                "states": [[float(f"{v:.12g}") for v in row] for row in self.states]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        d = json.loads(text)
        return cls(d["names"], np.array(d["times"]), np.array(d["states"]), d["step"], d.get("method", "rk4"))


def integrate(fieldfn, layer: Layer, x0, horizon: float, step: float) -> Trajectory:
    """RK4 integral curve of ``fieldfn`` (callable on a state, VectorField or ReebProblem)."""
    if step <= 0 or horizon < 0:
        raise ValueError("step must be positive and horizon non-negative")
    if isinstance(fieldfn, ReebProblem):
        try:
            fieldfn = reeb_field(fieldfn)
        except DegenerateStructure:
            rp = fieldfn
            fieldfn = lambda x: reeb_components(rp, x[None, :])[0]
    if isinstance(fieldfn, VectorField):
        keys = list(fieldfn.comps)
        fn = compile_exprs([fieldfn.comps[k] for k in keys], layer.symbols)

        def f(x):
            v = np.zeros_like(x)
            v[keys] = fn(x[None, :])[:, 0]
            return v
    else:
        f = fieldfn
    try:
        t, xs = rk4(f, layer.point_array(x0), horizon, step)
    except FloatingPointError as exc:
        raise NonFiniteState(str(exc)) from exc
    return Trajectory(layer.names, t, xs, step)


# ------------------------------------------------------ unified dynamics

def _dense_unified(th: LagrangianTheory):
    """Dense ``Omega_{H_0}`` for n = 1 built from its coordinate formula."""
    c = th.chart
    W0 = c.W0
    if c.n != 1:
        raise ValueError("the dense unified form is built for n = 1")
    D = W0.dim
    t, p = W0.index(c.x[0]), W0.index(c.p)
    h0 = H0(th)
    grad = compile_exprs([sp.diff(h0, s) for s in W0.symbols], W0.symbols)

    def wedge(a, b):
        return np.einsum("pi,pj->pij", a, b) - np.einsum("pi,pj->pij", b, a)

    def matrix(X):
        X = np.atleast_2d(X)
        P = len(X)
        e = lambda k: np.broadcast_to(np.eye(D)[k], (P, D))
        W = -wedge(e(p), e(t))
        for i in range(c.m):
            W -= wedge(e(W0.index(c.pmu[i, 0])), e(W0.index(c.y[i])))
        W += wedge(grad(X).T, e(t))
        return W

    return matrix


def _oracle_solve(Wfn, t_index: int, cs: ConstraintSet, X: np.ndarray, tol: float = SOLVE_TOL):
    """``xi = N c`` with ``N`` spanning the tangent space of ``cs``; returns
    (accepted, xi, relative residual)."""
    W = Wfn(X)
    G = cs.gradients(X)
    D = X.shape[1]
    ok = np.zeros(len(X), dtype=bool)
    xis = np.zeros((len(X), D))
    rel = np.zeros(len(X))
    for k in range(len(X)):
        N = null_space(G[:, k, :]) if len(cs) else np.eye(D)
        A = np.vstack([W[k].T @ N, N[t_index][None, :]])
        b = np.zeros(D + 1)
        b[-1] = 1.0
        sol, res, _ = lstsq_min_norm(A[None], b[None], 1e-10)
        rel[k] = res[0]
        ok[k] = np.isfinite(res[0]) and res[0] <= tol
        xis[k] = N @ sol[0]
    return ok, xis, rel


def unified_field(th: LagrangianTheory, cs: ConstraintSet | None = None):
    """Minimum-norm solution of ``i_xi Omega_{H_0} = 0, dt(xi) = 1`` tangent to ``cs``."""
    setup = formalism_setup(Formalism.UNIFIED, th)
    cs = cs or setup.base
    Wfn = _dense_unified(th)
    t = th.chart.W0.index(th.chart.x[0])

    def f(x):
        ok, xi, rel = _oracle_solve(Wfn, t, cs, x[None, :], tol=1e-6)
        if not ok[0]:
            raise DegenerateStructure(f"no tangent Reeb-type vector (residual {rel[0]:.2e})")
        return xi[0]

    return f


@dataclass
class OracleTrace:
    steps: list = field(default_factory=list)    # (r, ConstraintSet, points, accepted)
    stabilized: bool = False
    final_step: int | None = None


def presymplectic_chain_oracle(th: LagrangianTheory, samples: int = 1000, max_steps: int = 5,
                               seed: int = 0) -> OracleTrace:
    """Brute-force unified chain for n = 1 (independent of the projector equation)."""
    if th.chart.n != 1:
        raise ValueError("the oracle handles one-dimensional bases")
    setup = formalism_setup(Formalism.UNIFIED, th)
    Wfn = _dense_unified(th)
    t = th.chart.W0.index(th.chart.x[0])
    rng = np.random.default_rng(seed)
    out = OracleTrace()
    current = setup.base
    out.steps.append((1, current, None, None))
    for r in range(2, max_steps + 1):
        new, mode = candidate_constraints(Formalism.UNIFIED, th, r)
        cand = current.extend(new, mode) if new else current
        half = samples // 2
        X = np.concatenate([sample_on(setup, current, samples - half, rng),
                            sample_on(setup, cand, half, rng)])
        ok, _, _ = _oracle_solve(Wfn, t, current, X)
        out.steps.append((r, cand if not ok.all() else current, X, ok))
        if ok.all():
            out.stabilized, out.final_step = True, r - 1
            return out
        if not new:
            return out
        current = cand
    return out


def oracle_agreement(th: LagrangianTheory, oracle: OracleTrace) -> list[dict]:
    """Classify the oracle's sample points with the projector engine, per step."""
    setup = formalism_setup(Formalism.UNIFIED, th)
    rows = []
    for k in range(1, len(oracle.steps)):
        r, _, X, ok = oracle.steps[k]
        prev = oracle.steps[k - 1][1]
        eng, _, _, _ = classify_points(setup, X, prev)
        rows.append({"r": r, "samples": int(len(X)), "oracle_accepted": int(ok.sum()),
                     "engine_accepted": int(eng.sum()), "disagreements": int(np.sum(ok != eng))})
    return rows
