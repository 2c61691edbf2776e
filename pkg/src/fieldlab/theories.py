"""Built-in theories and the JSON theory-file loader."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import sympy as sp

from .bundles import BundleChart, DimensionError, HamiltonianData, LagrangianTheory
from .expr import DSLSyntaxError, ExprError, UnknownCoordinate

__all__ = ["BUILTINS", "ParseError", "free_field", "oscillator", "singular_mech", "bosonic_string",
           "string_displayed_constraints", "random_quadratic", "load_theory", "theory_from_dict"]


class ParseError(ValueError):
    def __init__(self, message: str, location: str | None = None):
        super().__init__(message if location is None else f"{location}: {message}")
        self.location = location


def free_field(n: int = 2, m: int = 1) -> LagrangianTheory:
    c = BundleChart(n, m)
    terms = " + ".join(f"y[{i},{mu}]^2" for i in range(1, m + 1) for mu in range(1, n + 1))
    return LagrangianTheory(c, c.parse(f"(1/2)*({terms})"), name="free_field")


def oscillator() -> LagrangianTheory:
    c = BundleChart(1, 1, fields=["q"], labels=["t"], base=["t"], aliases={"v": "q_t"})
    return LagrangianTheory(c, c.parse("(1/2)*v^2 - (1/2)*q^2"), name="oscillator",
                            box={"q": (-1.5, 1.5), "q_t": (-1.5, 1.5), "p_q_t": (-1.5, 1.5)})


def singular_mech() -> LagrangianTheory:
    c = BundleChart(1, 2, labels=["t"], base=["t"], aliases={"v1": "y1_t", "v2": "y2_t"})
    th = LagrangianTheory(c, c.parse("(1/2)*v1^2 + y2*v1"), name="singular_mech")
    th.registered = {
        "hamiltonian": {2: [c.parse("p_y1_t - y2")]},
        # second-order condition appearing one step later in the W0 chain
        "unified": {3: [c.parse("v2")]},
    }
    return th


def _string_chart(target_metric) -> BundleChart:
    k = len(target_metric)
    fields = [f"y{i}" for i in range(1, k + 1)] + ["h00", "h01", "h11"]
    return BundleChart(2, k + 3, fields=fields, labels=["0", "1"], groups={"h": ["h00", "h01", "h11"]},
                       matrices={"g": target_metric})


def _gyy(k: int, a: str, b: str) -> str:
    """DSL for ``g_ij y^i_a y^j_b`` with index variables ``a``, ``b``."""
    return f"sum(i,1,{k},sum(j,1,{k},g[i,j]*y[i,{a}]*y[j,{b}]))"


def string_displayed_constraints(th: LagrangianTheory) -> list[sp.Expr]:
    """The three metric-variation constraints exactly as displayed in the
    classical treatment of the string (see the decisions log for the third)."""
    c = th.chart
    k = c.m - 3
    gyy = _gyy(k, "e", "f")
    d = "(h01^2 - h00*h11)"
    rows = [f"sum(e,0,1,sum(f,0,1,(hinv[e,0]*hinv[f,0]*{d} + (1/2)*hinv[e,f]*h11)*{gyy}))",
            f"sum(e,0,1,sum(f,0,1,(hinv[e,1]*hinv[f,1]*{d} + (1/2)*hinv[e,f]*h00)*{gyy}))",
            f"sum(e,0,1,sum(f,0,1,(hinv[e,0]*hinv[f,1]*{d} - hinv[e,f]*h01)*{gyy}))"]
    return [c.parse(r) for r in rows]


def bosonic_string(target_metric=((-1, 0), (0, 1))) -> LagrangianTheory:
    """Polyakov-type string with an auxiliary 2x2 metric among the fields."""
    target_metric = [list(r) for r in target_metric]
    c = _string_chart(target_metric)
    k = len(target_metric)
    s = "sqrt(-det2(h))"
    L = c.parse(f"-(1/2)*{s}*sum(e,0,1,sum(f,0,1,hinv[e,f]*{_gyy(k, 'e', 'f')}))")
    sq = c.parse(s)
    i00, i01, i11 = (c.field_index(f) for f in ("h00", "h01", "h11"))
    cokernel = []
    for idx, w in ((i00, 2 * sq), (i11, 2 * sq), (i01, sq)):
        row = [sp.Integer(0)] * c.m
        row[idx] = w
        cokernel.append(row)
    # Hamiltonian on the reduced chart: the metric momenta vanish
    H = c.parse(f"-(1/(2*{s}))*sum(e,0,1,sum(f,0,1,h[e,f]*"
                f"sum(i,1,{k},sum(j,1,{k},ginv[i,j]*p[i,e]*p[j,f]))))")
    eliminated = {c.pmu[i, mu]: sp.Integer(0) for i in (i00, i01, i11) for mu in range(2)}
    ham2 = []
    for r, sg in ((0, 0), (1, 1), (0, 1)):
        ham2.append(c.parse(
            f"(1/{s})*sum(i,1,{k},sum(j,1,{k},ginv[i,j]*((1/2)*hinv[{r},{sg}]*"
            f"sum(e,0,1,sum(f,0,1,h[e,f]*p[i,e]*p[j,f])) - p[i,{r}]*p[j,{sg}])))"))
    what2 = []
    for r, sg in ((0, 0), (1, 1), (0, 1)):
        gyy = _gyy(k, "e", "f")
        what2.append(c.parse(
            f"sum(e,0,1,sum(f,0,1,((1/2)*{s}*hinv[{r},{sg}]*hinv[e,f] - {s}*hinv[e,{r}]*hinv[f,{sg}])*{gyy}))"))
    box = {"h00": (-2.0, -0.5), "h11": (0.5, 2.0), "h01": (-0.5, 0.5)}
    th = LagrangianTheory(c, L, name="bosonic_string", cokernel=cokernel,
                          hamiltonian=HamiltonianData(c, H, eliminated), box=box)
    th.registered = {"hamiltonian": {2: ham2}, "unified_restricted": {2: what2}}
    return th


def random_quadratic(rng, n: int = 2, m: int | None = None, regular: bool | None = None) -> LagrangianTheory:
    """``L = 1/2 z.K.z + (B y).z - 1/2 y.V.y`` with small integer data.

    Singular draws use ``K = C^T S C`` with ``C`` of deficient rank.
    """
    rng = np.random.default_rng(rng)
    m = m or int(rng.integers(1, 3))
    regular = bool(rng.integers(2)) if regular is None else regular
    c = BundleChart(n, m)
    N = n * m
    while True:
        if regular:
            A = rng.integers(-3, 4, (N, N))
            K = sp.Matrix(A + A.T)
        else:
            r = int(rng.integers(0, N))
            C = sp.Matrix(rng.integers(-2, 3, (r, N))) if r else sp.zeros(1, N)
            S = sp.diag(*rng.choice([-1, 1], max(r, 1)).tolist())
            K = C.T * S * C
        if (K.det() != 0) == regular:
            break
    zs = c.velocities()
    ys = [c.y[i] for i in range(m)]
    B = sp.Matrix(rng.integers(-2, 3, (N, m)))
    V = sp.Matrix(rng.integers(-2, 3, (m, m)))
    z, y = sp.Matrix(zs), sp.Matrix(ys)
    L = (z.T * K * z / 2 + (B * y).T * z - y.T * (V + V.T) * y / 4)[0, 0]
    return LagrangianTheory(c, sp.expand(L), name=f"quadratic_{'regular' if regular else 'singular'}")


BUILTINS = {
    "free_field": free_field,
    "bosonic_string": bosonic_string,
    "singular_mech": singular_mech,
    "oscillator": oscillator,
}


def theory_from_dict(d: dict, source: str = "<theory>") -> LagrangianTheory:
    try:
        n, m = int(d["n"]), int(d["m"])
        chart = BundleChart(n, m, fields=d.get("fields"), labels=d.get("labels"), base=d.get("base"),
                            groups=d.get("groups"), matrices=d.get("matrices"), aliases=d.get("aliases"))
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", source) from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DimensionError):
            raise
        raise ParseError(str(exc), source) from exc

    def parse(text, where):
        try:
            return chart.parse(str(text))
        except (DSLSyntaxError, UnknownCoordinate, ExprError) as exc:
            raise ParseError(str(exc), f"{source}:{where}") from exc

    if "lagrangian" not in d:
        raise ParseError("missing field 'lagrangian'", source)
    L = parse(d["lagrangian"], "lagrangian")
    cok = None
    if d.get("cokernel") is not None:
        cok = []
        for a, row in enumerate(d["cokernel"]):
            if len(row) != m:
                raise DimensionError(f"cokernel covector {a} has {len(row)} entries, expected {m}")
            cok.append([parse(v, f"cokernel[{a}]") for v in row])
    ham = None
    if d.get("hamiltonian"):
        h = d["hamiltonian"]
        elim = {chart.Zstar.symbols[chart.Zstar.index(k)]: parse(v, f"hamiltonian.eliminated.{k}")
                for k, v in h.get("eliminated", {}).items()}
        ham = HamiltonianData(chart, parse(h["H"], "hamiltonian.H"), elim)
    registered = {}
    for form, steps in d.get("constraints", {}).items():
        registered[form] = {int(r): [parse(e, f"constraints.{form}.{r}") for e in exprs]
                            for r, exprs in steps.items()}
    box = {k: tuple(map(float, v)) for k, v in d.get("box", {}).items()}
    try:
        th = LagrangianTheory(chart, L, name=d.get("name", "theory"), cokernel=cok, hamiltonian=ham, box=box)
    except ValueError as exc:
        raise ParseError(str(exc), f"{source}:lagrangian") from exc
    th.registered = registered
    return th


def load_theory(path_or_name: str) -> LagrangianTheory:
    if path_or_name in BUILTINS:
        return BUILTINS[path_or_name]()
    p = Path(path_or_name)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read theory file: {exc.strerror}", str(p)) from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{p}:{exc.lineno}:{exc.colno}") from exc
    if not isinstance(d, dict):
        raise ParseError("theory file must hold a JSON object", str(p))
    return theory_from_dict(d, str(p))
