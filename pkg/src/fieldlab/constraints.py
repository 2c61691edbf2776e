"""Pointwise projector equations and the iterated constraint algorithm.

For a chart with base coordinates ``x^mu`` and any closed form ``Omega``,
the unknown projector is ``h = dx^mu (x) (d_mu + G^a_mu d_a)`` with one
unknown ``G^a_mu`` per non-base coordinate ``a`` and base index ``mu``.
Because the slot-sum contraction is linear in ``h``,

    i_h Omega - (n-1) Omega = F0 + sum_{a,mu} G^a_mu dx^mu ^ i_{d_a} Omega,
    F0 = sum_mu dx^mu ^ i_{d_mu} Omega - (n-1) Omega,

so each basis coefficient gives one affine equation. The coefficient
templates are symbolic and compiled once; evaluation at a batch of points
produces the stacked systems.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .bundles import (H0, Leg_map, LagrangianTheory, hamiltonian_forms, hessian,
                      legendre_hamiltonian, omega_H0, poincare_cartan, restricted_omega,
                      w1_parametrization)
from .connections import ConstraintSet, Formalism, PointOffConstraint
from .expr import compile_exprs, print_expr
from .forms import ExteriorForm, Layer, VectorField, contract_vector, wedge
from .linalg import lstsq_min_norm

__all__ = [
    "FormalismSetup", "formalism_setup", "SystemTemplate", "ProjectorSystem", "SolveResult",
    "StepRecord", "AlgorithmTrace", "assemble_system", "solve_pointwise", "classify_points",
    "primary_constraints_unified", "secondary_constraints", "candidate_constraints",
    "gauss_newton_project", "sample_on", "run_algorithm", "transport_and_compare",
    "LayerMismatch", "NoCokernelRegistered", "SamplingFailed",
]

SOLVE_TOL = 1e-8
RANK_TOL = 1e-10


class LayerMismatch(ValueError):
    pass


class NoCokernelRegistered(ValueError):
    pass


class SamplingFailed(RuntimeError):
    pass


# ------------------------------------------------------------------ setup

@dataclass
class FormalismSetup:
    formalism: Formalism
    layer: Layer
    omega: ExteriorForm
    base: ConstraintSet
    theory: LagrangianTheory
    hamiltonian: object = None
    _template: object = None

    @property
    def template(self) -> "SystemTemplate":
        if self._template is None:
            self._template = SystemTemplate(self.layer, self.omega)
        return self._template


def hamiltonian_of(th: LagrangianTheory):
    if th.hamiltonian is None:
        th.hamiltonian = legendre_hamiltonian(th)
    return th.hamiltonian


def formalism_setup(formalism, th: LagrangianTheory) -> FormalismSetup:
    formalism = Formalism(formalism)
    cache = th.__dict__.setdefault("_setups", {})
    if formalism in cache:
        return cache[formalism]
    c = th.chart
    if formalism is Formalism.LAGRANGIAN:
        s = FormalismSetup(formalism, c.Z, poincare_cartan(th)[1], ConstraintSet(c.Z), th)
    elif formalism is Formalism.HAMILTONIAN:
        hd = hamiltonian_of(th)
        s = FormalismSetup(formalism, hd.layer, hamiltonian_forms(hd)[1], ConstraintSet(hd.layer), th, hd)
    elif formalism is Formalism.UNIFIED:
        s = FormalismSetup(formalism, c.W0, omega_H0(th), primary_constraints_unified(th), th)
    else:
        s = FormalismSetup(formalism, c.Z, restricted_omega(th), ConstraintSet(c.Z), th)
    cache[formalism] = s
    return s


# ------------------------------------------------------------- templates

class SystemTemplate:
    """Symbolic row/column structure of the projector equation on one layer."""

    def __init__(self, layer: Layer, omega: ExteriorForm):
        self.layer = layer
        n = layer.n_base
        self.unknowns = [(layer.symbols[a], mu) for a in range(n, layer.dim) for mu in range(n)]
        dx = [ExteriorForm.dx(layer, mu) for mu in range(n)]
        contracted = [contract_vector(omega, VectorField.coordinate(layer, a)) for a in range(layer.dim)]
        F0 = ExteriorForm.zero(layer, omega.degree)
        for mu in range(n):
            F0 = F0 + wedge(dx[mu], contracted[mu])
        F0 = F0 - omega * (n - 1)
        cols = []
        for (s, mu) in self.unknowns:
            cols.append(wedge(dx[mu], contracted[layer.index(s)]))
        rows = sorted(set(F0.coeffs).union(*(f.coeffs for f in cols)))
        self.rows = rows
        rix = {r: k for k, r in enumerate(rows)}
        self.entries = [(rix[I], j, e) for j, f in enumerate(cols) for I, e in f.coeffs.items()]
        self.rhs = [(rix[I], -e) for I, e in F0.coeffs.items()]
        exprs = [e for *_, e in self.entries] + [e for _, e in self.rhs]
        self._fn = compile_exprs(exprs, layer.symbols)
        self.F0 = F0
        self.columns = cols

    def unknown_free_rows(self) -> list[tuple[tuple[int, ...], sp.Expr]]:
        used = {r for r, _, _ in self.entries}
        return [(self.rows[r], e) for r, e in self.rhs if r not in used]

    def evaluate(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(X)
        P, R, C = len(X), len(self.rows), len(self.unknowns)
        vals = self._fn(X)
        M = np.zeros((P, R, C))
        b = np.zeros((P, R))
        k = 0
        for r, j, _ in self.entries:
            M[:, r, j] += vals[k]
            k += 1
        for r, _ in self.rhs:
            b[:, r] += vals[k]
            k += 1
        return M, b


def _tangency_rows(template: SystemTemplate, known: ConstraintSet, X: np.ndarray):
    layer = template.layer
    n = layer.n_base
    G = known.gradients(X)                          # (K, P, D)
    K, P = G.shape[0], X.shape[0]
    M = np.zeros((P, K * n, len(template.unknowns)))
    b = np.zeros((P, K * n))
    col = {u: j for j, u in enumerate(template.unknowns)}
    for k in range(K):
        for mu in range(n):
            r = k * n + mu
            b[:, r] = -G[k, :, mu]
            for a in range(n, layer.dim):
                M[:, r, col[(layer.symbols[a], mu)]] = G[k, :, a]
    return M, b


# ---------------------------------------------------------------- systems

@dataclass
class ProjectorSystem:
    formalism: Formalism
    point: np.ndarray
    M: np.ndarray
    b: np.ndarray
    labels: list
    row_labels: list


@dataclass
class SolveResult:
    solvable: bool
    solution: np.ndarray
    residual: float
    free_parameters: int
    rank: int


def assemble_system(formalism, th: LagrangianTheory, pt, known: ConstraintSet | None = None) -> ProjectorSystem:
    setup = formalism_setup(formalism, th)
    layer = setup.layer
    if known is None:
        known = ConstraintSet(layer)
    if known.layer != layer:
        raise LayerMismatch(f"constraints live on {known.layer.name}, system on {layer.name}")
    x = layer.point_array(pt)[None, :]
    if not known.contains(x)[0]:
        raise PointOffConstraint("point violates the known constraints")
    tpl = setup.template
    M, b = tpl.evaluate(x)
    Mt, bt = _tangency_rows(tpl, known, x)
    rows = [("form", I) for I in tpl.rows] + [("tangency", k, mu) for k in range(len(known))
                                                for mu in range(layer.n_base)]
    return ProjectorSystem(setup.formalism, x[0], np.concatenate([M, Mt], 1)[0],
                           np.concatenate([b, bt], 1)[0], list(tpl.unknowns), rows)


def _solve_stack(M, b, tol, rank_tol):
    x, resid, ranks = lstsq_min_norm(M, b, rank_tol)
    rel = resid / np.maximum(np.linalg.norm(b, axis=-1), 1.0)
    ok = np.all(np.isfinite(M), axis=(1, 2)) & np.isfinite(rel) & (rel <= tol)
    return ok, x, rel, ranks


def solve_pointwise(sys: ProjectorSystem, tol: float = SOLVE_TOL, rank_tol: float = RANK_TOL) -> SolveResult:
    if sys.M.shape[0] == 0:
        return SolveResult(True, np.zeros(sys.M.shape[1]), 0.0, sys.M.shape[1], 0)
    ok, x, rel, ranks = _solve_stack(sys.M[None], sys.b[None], tol, rank_tol)
    return SolveResult(bool(ok[0]), x[0], float(rel[0]), int(sys.M.shape[1] - ranks[0]), int(ranks[0]))


def classify_points(setup: FormalismSetup, X: np.ndarray, known: ConstraintSet,
                    tol: float = SOLVE_TOL, rank_tol: float = RANK_TOL):
    """Solvability of the projector equation with tangency to ``known`` at each row of ``X``.

    Returns (accepted mask, relative residuals, ranks, min-norm solutions).
    """
    tpl = setup.template
    M, b = tpl.evaluate(X)
    Mt, bt = _tangency_rows(tpl, known, X)
    ok, x, rel, ranks = _solve_stack(np.concatenate([M, Mt], 1), np.concatenate([b, bt], 1), tol, rank_tol)
    return ok, rel, ranks, x


# ------------------------------------------------------------ constraints

def primary_constraints_unified(th: LagrangianTheory) -> ConstraintSet:
    """``p^mu_i - dL/dz^i_mu`` and ``H_0`` with momenta substituted, on ``W_0``.

    On the momentum constraints ``H_0`` reduces to ``p - (L - z dL/dz)``,
    which is the form returned for the last entry.
    """
    c = th.chart
    P = th.dL_dz()
    exprs = [c.pmu[i, mu] - P[i, mu] for i in range(c.m) for mu in range(c.n)]
    sub = {c.pmu[k]: P[k] for k in P}
    exprs.append(sp.expand(H0(th).xreplace(sub)))
    return ConstraintSet(c.W0, exprs, ["primary-symbolic"] * len(exprs))


def cokernel_basis(th: LagrangianTheory) -> list[list[sp.Expr]]:
    """Registered cokernel covectors over field indices, or an exact one for
    constant velocity Hessians. Each covector ``w`` has ``m`` entries and
    satisfies ``w_i d2L/dz^i_mu dz^j_nu = 0``."""
    if th.cokernel is not None:
        return [[sp.sympify(v) for v in w] for w in th.cokernel]
    c = th.chart
    K = hessian(th)
    if any(s in set(c.velocities()) | set(c.y) | set(c.x) for e in K for s in e.free_symbols):
        raise NoCokernelRegistered("velocity Hessian is not constant; register a cokernel basis")
    n, m = c.n, c.m
    # row i of the second-derivative block: sum_mu K[(i,mu),(j,nu)] G^j_{nu mu}
    A = sp.Matrix(m, m * n * n, lambda i, col: K[i * n + col // (m * n),
                                                 ((col % (m * n)) // n) * n + col % n])
    return [list(v) for v in A.T.nullspace()]


def _cokernel_constraints(th: LagrangianTheory) -> list[sp.Expr]:
    E = th.euler_lagrange()
    out = []
    for w in cokernel_basis(th):
        e = sp.expand(sum((w[i] * E[i] for i in range(th.chart.m)), sp.Integer(0)))
        if e != 0:
            out.append(e)
    return out


def candidate_constraints(formalism, th: LagrangianTheory, step: int) -> tuple[list, str]:
    """Symbolic candidates for the step-``step`` set and their provenance."""
    formalism = Formalism(formalism)
    reg = th.registered.get(formalism.value, {})
    if step in reg:
        return [sp.sympify(e) for e in reg[step]], "secondary-symbolic"
    if step == 2 and formalism is not Formalism.HAMILTONIAN:
        try:
            return _cokernel_constraints(th), "secondary-symbolic"
        except NoCokernelRegistered:
            pass
    return [], "numeric-only"


def secondary_constraints(formalism, th: LagrangianTheory, step: int, mode: str = "auto") -> ConstraintSet:
    """Symbolic step-``step`` constraints (new entries only).

    ``mode="symbolic"`` insists on the cokernel construction and raises
    ``NoCokernelRegistered`` when it is unavailable.
    """
    if step < 2:
        raise ValueError("secondary constraints start at step 2")
    setup = formalism_setup(formalism, th)
    if mode == "symbolic":
        exprs = _cokernel_constraints(th)
        return ConstraintSet(setup.layer, exprs, ["secondary-symbolic"] * len(exprs))
    exprs, tag = candidate_constraints(formalism, th, step)
    return ConstraintSet(setup.layer, exprs, [tag] * len(exprs))


# --------------------------------------------------------------- sampling

def gauss_newton_project(cs: ConstraintSet, X: np.ndarray, tol: float = 1e-12, accept: float = 1e-10,
                         max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm Gauss-Newton steps onto ``cs``; returns (points, converged mask)."""
    X = np.array(X, dtype=float)
    if not cs.exprs:
        return X, np.ones(len(X), dtype=bool)
    active = np.ones(len(X), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        F = cs.values(X[idx])                   # (K, P)
        bad = ~np.all(np.isfinite(F), axis=0)
        done = np.max(np.abs(np.nan_to_num(F, nan=np.inf)), axis=0) <= tol
        active[idx[done | bad]] = False
        go = ~(done | bad)
        if not go.any():
            break
        sub = idx[go]
        J = cs.gradients(X[sub]).transpose(1, 0, 2)   # (P, K, D)
        dx, _, _ = lstsq_min_norm(J, F[:, go].T, 1e-12)
        X[sub] -= dx
    F = cs.values(X)
    res = np.max(np.abs(np.nan_to_num(F, nan=np.inf)), axis=0) if len(cs.exprs) else np.zeros(len(X))
    return X, np.isfinite(res) & (res <= accept) & np.all(np.isfinite(X), axis=1)


def sample_on(setup: FormalismSetup, cs: ConstraintSet, count: int, rng, box=None,
              max_rounds: int = 40) -> np.ndarray:
    """``count`` points of ``cs`` starting from uniform draws in the sample box.

    Points where the projector system is not finite (degenerate metric and
    the like) are discarded.
    """
    layer = setup.layer
    lo, hi = box if box is not None else setup.theory.sample_box(layer)
    got = []
    total = 0
    for _ in range(max_rounds):
        need = count - total
        if need <= 0:
            break
        X = lo + (hi - lo) * rng.random((max(2 * need, 8), layer.dim))
        X, ok = gauss_newton_project(cs, X)
        X = X[ok]
        if len(X):
            M, b = setup.template.evaluate(X)
            fin = np.all(np.isfinite(M), axis=(1, 2)) & np.all(np.isfinite(b), axis=1)
            X = X[fin][:need]
            got.append(X)
            total += len(X)
    if total < count:
        raise SamplingFailed(f"only {total} of {count} points found on the {layer.name} constraint set")
    return np.concatenate(got)[:count]


# ------------------------------------------------------------- algorithm

@dataclass
class StepRecord:
    r: int
    constraints: ConstraintSet
    accepted_fraction: float
    max_residual: float
    samples: int = 0
    disagreements: int = 0
    rank_range: tuple = (0, 0)
    mode: str = "primary-symbolic"
    points: np.ndarray | None = None
    accepted: np.ndarray | None = None


@dataclass
class AlgorithmTrace:
    formalism: Formalism
    steps: list = field(default_factory=list)
    stabilized: bool = False
    final_step: int | None = None

    def constraint_set(self, r: int) -> ConstraintSet:
        """Constraints of step ``r``; steps past stabilization reuse the final set."""
        for s in self.steps:
            if s.r == r:
                return s.constraints
        return self.steps[-1].constraints

    def to_dict(self) -> dict:
        def f(v):
            return float(f"{v:.10g}")
        return {
            "formalism": self.formalism.value,
            "steps": [{"r": s.r, "constraints": s.constraints.printed(),
                       "provenance": list(s.constraints.provenance),
                       "accepted_fraction": f(s.accepted_fraction), "max_residual": f(s.max_residual),
                       "samples": s.samples, "disagreements": s.disagreements,
                       "rank_range": [int(s.rank_range[0]), int(s.rank_range[1])], "mode": s.mode}
                      for s in self.steps],
            "stabilized": self.stabilized,
            "final_step": self.final_step,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def run_algorithm(formalism, th: LagrangianTheory, max_steps: int = 4, samples: int = 256,
                  seed: int = 0, tol: float = SOLVE_TOL, keep_points: bool = False) -> AlgorithmTrace:
    """Iterate the constraint algorithm from the base set of ``formalism``.

    At step ``r`` points of the step ``r-1`` set are classified by
    solvability with tangency to that set. Half of the points are further
    projected onto the symbolic step-``r`` candidates so that both sides of
    the classification are exercised. The chain is stable at ``r-1`` when
    every point is accepted.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    setup = formalism_setup(formalism, th)
    rng = np.random.default_rng(seed)
    trace = AlgorithmTrace(setup.formalism)
    current = setup.base
    trace.steps.append(StepRecord(1, current, 1.0, 0.0, mode="primary-symbolic"))
    for r in range(2, max_steps + 1):
        new, mode = candidate_constraints(setup.formalism, th, r)
        cand = current.extend(new, mode) if new else current
        half = samples // 2
        X = np.concatenate([sample_on(setup, current, samples - half, rng),
                            sample_on(setup, cand, half, rng)])
        ok, rel, ranks, _ = classify_points(setup, X, current, tol)
        rec = StepRecord(r, cand, float(ok.mean()), float(rel[ok].max()) if ok.any() else float("nan"),
                         len(X), 0, (int(ranks.min()), int(ranks.max())), mode,
                         X if keep_points else None, ok if keep_points else None)
        if ok.all():
            rec.constraints, rec.mode = current, "stable"
            trace.steps.append(rec)
            trace.stabilized, trace.final_step = True, r - 1
            return trace
        if not new:
            trace.steps.append(rec)
            return trace
        rec.disagreements = int(np.sum(ok != cand.contains(X)))
        trace.steps.append(rec)
        current = cand
    return trace


# ---------------------------------------------------------------- transport

def _map_points(src: Layer, images, dst: Layer, X: np.ndarray) -> np.ndarray:
    """Apply a coordinate map given by expressions for each ``dst`` coordinate."""
    return compile_exprs(images, src.symbols)(X).T


def transport_and_compare(th: LagrangianTheory, traces: dict, samples: int = 200, seed: int = 0) -> dict:
    """Push sampled points of one chain through the coordinate maps and
    measure the target chain's constraints there (gradient-scaled)."""
    rng = np.random.default_rng(seed)
    c = th.chart
    lag = formalism_setup(Formalism.LAGRANGIAN, th)
    ham = formalism_setup(Formalism.HAMILTONIAN, th)
    res = formalism_setup(Formalism.UNIFIED_RESTRICTED, th)
    tl, th_, tr = (traces[Formalism.LAGRANGIAN], traces[Formalism.HAMILTONIAN],
                   traces[Formalism.UNIFIED_RESTRICTED])
    tu = traces.get(Formalism.UNIFIED)
    leg_full = dict(zip(c.Zstar.symbols, Leg_map(th)))
    leg_img = [leg_full[s] for s in ham.layer.symbols]
    w1 = dict(zip(c.W0.symbols, w1_parametrization(th)))
    pr1_img = [w1[s] for s in ham.layer.symbols]
    top = max(len(tl.steps), len(th_.steps), len(tr.steps))
    rows = []

    def worst(cs: ConstraintSet, Y):
        if not cs.exprs:
            return 0.0
        return float(np.max(cs.scaled_residuals(Y)))

    for r in range(1, top + 1):
        Xr = sample_on(res, tr.constraint_set(r), samples, rng)
        Xl = sample_on(lag, tl.constraint_set(r), samples, rng)
        rows.append({"r": r, "direction": "leg", "max_violation":
                     worst(th_.constraint_set(r), _map_points(c.Z, leg_img, ham.layer, Xl))})
        rows.append({"r": r, "direction": "pr1", "max_violation":
                     worst(th_.constraint_set(r), _map_points(c.Z, pr1_img, ham.layer, Xr))})
        rows.append({"r": r, "direction": "pr2", "max_violation": worst(tl.constraint_set(r), Xr)})
        if tu is not None:
            uni = formalism_setup(Formalism.UNIFIED, th)
            Xu = sample_on(uni, tu.constraint_set(r), samples, rng)
            idx = [c.W0.index(s) for s in c.Z.symbols]
            rows.append({"r": r, "direction": "wbar_in_what",
                         "max_violation": worst(tr.constraint_set(r), Xu[:, idx])})
    finals = {t.formalism.value: t.final_step for t in (tl, th_, tr)}
    same = len(set(finals.values())) == 1 and None not in finals.values()
    return {"transports": rows,
            "max_violation": max((row["max_violation"] for row in rows), default=0.0),
            "final_steps": finals, "same_stabilization": same}
