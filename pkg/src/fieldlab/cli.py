"""``fieldlab`` command line: analyze, constraints, integrate, check-exterior.

Every command prints one JSON report (sorted keys, no timestamps) and exits
with 0 when all verdicts pass, 1 when some verdict fails and 2 on bad input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from importlib import metadata

import numpy as np
import sympy as sp

from .bundles import (DimensionError, H0, Leg_map, SectionSample, canonical_forms, euler_lagrange_residual,
                      hamiltonian_forms, is_regular_at, leg_map, legendre_jacobian_rank, poincare_cartan,
                      restricted_omega, w1_parametrization)
from .checks import forms_equal, run_exterior_suites
from .connections import (ConnectionCoeffs, Formalism, alpha_limit, beta_point, semiholonomic_defect)
from .constraints import (NoCokernelRegistered, SamplingFailed, assemble_system, formalism_setup,
                          gauss_newton_project, hamiltonian_of, run_algorithm, solve_pointwise,
                          transport_and_compare)
from .expr import ExprError
from .forms import NotClosed, is_closed, is_cosymplectic, is_multisymplectic, pullback
from .mechanics import (DegenerateStructure, NonFiniteState, ReebProblem, integrate, reeb_field, sode_defect,
                        unified_field)
from .theories import ParseError, load_theory

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _num(v):
    """Round floats for stable, diffable reports."""
    if isinstance(v, dict):
        return {str(k): _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if not np.isfinite(v) else float(f"{v:.10g}")
    return v


def make_report(command: str, inputs: dict, results: dict, verdicts: dict) -> dict:
    digest = hashlib.sha256(json.dumps(inputs, sort_keys=True, default=str).encode()).hexdigest()
    return _num({"command": command, "inputs": inputs, "inputs_digest": digest, "tool_version": _version(),
                 "results": results, "verdicts": verdicts, "passed": all(verdicts.values())})


# ------------------------------------------------------------------ analyze

def _structure_pointwise(omega, eta, pts, n) -> list[bool]:
    """Multisymplectic for n >= 2, cosymplectic with ``eta`` for n = 1, point by point."""
    if not is_closed(omega):
        raise NotClosed("form is not closed")
    if n == 1:
        return [is_cosymplectic(omega, eta, x[None, :], check_closed=False) for x in pts]
    return [is_multisymplectic(omega, x[None, :], check_closed=False) for x in pts]


def analyze(theory: str, samples: int = 8, seed: int = 0) -> dict:
    th = load_theory(theory)
    c = th.chart
    rng = np.random.default_rng(seed)
    lo, hi = th.sample_box(c.Z)
    pts = lo + (hi - lo) * rng.random((samples, c.Z.dim))
    regular = [bool(is_regular_at(th, x)) for x in pts]
    theta_L, omega_L = poincare_cartan(th)
    ranks = legendre_jacobian_rank(th, pts)
    ms_L = _structure_pointwise(omega_L, th.eta, pts, c.n)
    ms_W = _structure_pointwise(restricted_omega(th), th.eta, pts, c.n)
    full = [r == c.Z.dim for r in ranks]
    lo2, hi2 = th.sample_box(c.Lam)
    lam_pts = lo2 + (hi2 - lo2) * rng.random((samples, c.Lam.dim))
    theta2, omega2 = canonical_forms(c)
    ms_2 = is_multisymplectic(omega2, lam_pts)
    leg_ok = forms_equal(pullback(theta2, c.Z, leg_map(th)), theta_L, rng, tol=1e-10)
    results = {
        "theory": th.name, "n": c.n, "m": c.m, "dim_Z": c.Z.dim,
        "regular_fraction": float(np.mean(regular)),
        "omega_L_nondegenerate_fraction": float(np.mean(ms_L)),
        "restricted_omega_nondegenerate_fraction": float(np.mean(ms_W)),
        "canonical_multisymplectic": ms_2,
        "legendre_rank": {"min": min(ranks), "max": max(ranks), "deficiency": c.Z.dim - max(ranks)},
        "pullback_leg_theta": leg_ok,
    }
    all_reg = all(regular)
    verdicts = {
        "regularity_vs_omega_L": regular == ms_L,
        "regularity_vs_legendre_rank": regular == full,
        "regularity_vs_restricted_omega": regular == ms_W,
        "canonical_multisymplectic": ms_2,
        "pullback_leg_theta": leg_ok,
    }
    if all_reg:
        try:
            hd = hamiltonian_of(th)
        except ValueError:
            results["pullback_Leg_omega"] = "skipped: no Hamiltonian available"
        else:
            ok = forms_equal(pullback(hamiltonian_forms(hd)[1], c.Z, Leg_map(th)), omega_L, rng, tol=1e-10)
            results["pullback_Leg_omega"] = ok
            verdicts["pullback_Leg_omega"] = ok
    return make_report("analyze", {"theory": theory, "samples": samples, "seed": seed}, results, verdicts)


# -------------------------------------------------------------- constraints

FORMALISMS = ["lagrangian", "hamiltonian", "unified", "unified_restricted"]


def constraints(theory: str, formalism: str = "all", max_steps: int = 4, samples: int = 256,
                tol: float = 1e-8, seed: int = 0) -> dict:
    th = load_theory(theory)
    names = FORMALISMS if formalism == "all" else [formalism]
    traces, results, verdicts = {}, {"theory": th.name, "chains": {}}, {}
    for name in names:
        try:
            tr = run_algorithm(name, th, max_steps=max_steps, samples=samples, seed=seed, tol=tol)
        except (SamplingFailed, NoCokernelRegistered, ValueError) as exc:
            results["chains"][name] = {"error": f"{type(exc).__name__}: {exc}"}
            verdicts[f"{name}_completed"] = False
            continue
        traces[Formalism(name)] = tr
        d = tr.to_dict()
        if not tr.stabilized:
            d["error"] = "NotStabilized"
        results["chains"][name] = d
        verdicts[f"{name}_stabilized"] = tr.stabilized
        verdicts[f"{name}_no_disagreements"] = all(s["disagreements"] == 0 for s in d["steps"])
    needed = {Formalism.LAGRANGIAN, Formalism.HAMILTONIAN, Formalism.UNIFIED_RESTRICTED}
    if formalism == "all" and needed <= set(traces):
        try:
            tc = transport_and_compare(th, traces, samples=min(samples, 200), seed=seed)
        except SamplingFailed as exc:
            results["transport"] = {"error": str(exc)}
            verdicts["transport_completed"] = False
        else:
            results["transport"] = tc
            verdicts["transport_within_tolerance"] = tc["max_violation"] <= tol
            verdicts["same_stabilization"] = tc["same_stabilization"]
    inputs = {"theory": theory, "formalism": formalism, "max_steps": max_steps, "samples": samples,
              "tol": tol, "seed": seed}
    return make_report("constraints", inputs, results, verdicts)


# ---------------------------------------------------------------- integrate

def _read_ics(th, ic) -> list[np.ndarray]:
    c = th.chart
    if isinstance(ic, str):
        try:
            with open(ic) as fh:
                ic = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read initial conditions: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"initial conditions: {exc.msg} at line {exc.lineno}") from exc
    if isinstance(ic, dict):
        ic = ic.get("initial_conditions", [ic])
    out = []
    for k, row in enumerate(ic):
        x = np.zeros(c.Z.dim)
        seen = set()
        for name, v in row.items():
            try:
                s = c.parse(name)
            except ExprError as exc:
                raise InputError(f"initial condition {k}: {exc}") from exc
            if not isinstance(s, sp.Symbol) or s not in c.Z:
                raise InputError(f"initial condition {k}: {name!r} is not a jet coordinate")
            x[c.Z.index(s)] = float(v)
            seen.add(s)
        missing = [s.name for s in c.Z.symbols[c.n:] if s not in seen]
        if missing:
            raise InputError(f"initial condition {k} lacks {missing}")
        out.append(x)
    return out


def _el_residual(th, Zstates: np.ndarray, step: float) -> float:
    """Finite-difference EL residual along the uniformly spaced part of a trajectory."""
    c = th.chart
    N = len(Zstates)
    if N > 2 and not np.isclose(Zstates[-1, 0] - Zstates[-2, 0], step):
        N -= 1
    vals = {s.name: Zstates[:N, k] for k, s in enumerate(c.Z.symbols) if k >= c.n}
    s = SectionSample((N,), (Zstates[0, 0],), (step,), vals)
    return float(np.max(np.abs(euler_lagrange_residual(th, s))))


def _h0_drift(th, traj) -> float:
    W0 = th.chart.W0
    h = np.array([float(H0(th).xreplace(dict(zip(W0.symbols, row)))) for row in traj.states[:: max(1, len(traj.states) // 50)]])
    return float(np.max(np.abs(h - h[0])))


def _w0_point(th, z):
    imgs = w1_parametrization(th)
    sub = dict(zip(th.chart.Z.symbols, z))
    return np.array([float(sp.sympify(e).xreplace(sub)) for e in imgs])


def integrate_theory(theory: str, ic, horizon: float = 1.0, step: float = 1e-3, chain_steps: int = 5,
                     samples: int = 64, seed: int = 0) -> dict:
    th = load_theory(theory)
    c = th.chart
    if c.n != 1:
        raise InputError("integrate handles one-dimensional bases only")
    if step <= 0 or horizon < 0:
        raise InputError("step must be positive and horizon non-negative")
    ics = _read_ics(th, ic)
    runs, verdicts = [], {}
    final_W = final_L = None
    for k, z0 in enumerate(ics):
        run = {}
        if is_regular_at(th, z0):
            rp = ReebProblem(poincare_cartan(th)[1], th.eta)
            tr = integrate(rp, c.Z, z0, horizon, step)
            xi = reeb_field(rp)
            run.update(kind="regular", trajectory=tr.to_dict(),
                       sode_defect=max(sode_defect(xi, x, c.Z) for x in tr.states[::10]),
                       el_residual=_el_residual(th, tr.states, step))
            # drift is checked over at most a unit horizon
            uni = integrate(unified_field(th), c.W0, _w0_point(th, z0), min(horizon, 1.0), step)
            run["h0_drift"] = _h0_drift(th, uni)
            run["h0_drift_horizon"] = min(horizon, 1.0)
            verdicts[f"ic{k}_sode"] = run["sode_defect"] <= 1e-8
        else:
            if final_W is None:
                tw = run_algorithm("unified", th, max_steps=chain_steps, samples=samples, seed=seed)
                tl = run_algorithm("lagrangian", th, max_steps=chain_steps, samples=samples, seed=seed)
                if not (tw.stabilized and tl.stabilized):
                    raise DegenerateStructure("constraint chain did not stabilize; no final set to restrict to")
                final_W, final_L = tw.constraint_set(tw.final_step), tl.constraint_set(tl.final_step)
            zp, ok = gauss_newton_project(final_L, z0[None, :])
            if not ok[0]:
                raise DegenerateStructure(f"initial condition {k} cannot be projected onto the final set")
            sysm = assemble_system("lagrangian", th, zp[0], known=final_L)
            sol = solve_pointwise(sysm)
            if not sol.solvable:
                raise DegenerateStructure(f"no tangent connection at initial condition {k}")
            gam = ConnectionCoeffs.from_vector(Formalism.LAGRANGIAN, c.Z, sysm.labels, sol.solution)
            zb = beta_point(gam, zp[0], rng=seed)
            za = alpha_limit(gam, zp[0])
            w0 = _w0_point(th, zb)
            w0p, okw = gauss_newton_project(final_W, w0[None, :])
            tr = integrate(unified_field(th, final_W), c.W0, w0p[0], horizon, step)
            xi0 = unified_field(th, final_W)(w0p[0])
            zidx = [c.W0.index(s) for s in c.Z.symbols]
            run.update(kind="singular", projected_ic=zp[0].tolist(), beta_point=zb.tolist(),
                       beta_semiholonomic_defect=float(np.max(np.abs(semiholonomic_defect(gam, zb)))),
                       alpha_limit_gap=float(np.max(np.abs(za - zb))),
                       beta_on_final_set=bool(okw[0] and np.max(np.abs(w0p[0] - w0)) <= 1e-9),
                       trajectory=tr.to_dict(), sode_defect=sode_defect(xi0, w0p[0], c.W0),
                       el_residual=_el_residual(th, tr.states[:, zidx], step),
                       h0_drift=_h0_drift(th, tr),
                       constraint_drift=float(np.max(final_W.scaled_residuals(tr.states))))
            verdicts[f"ic{k}_beta_semiholonomic"] = run["beta_semiholonomic_defect"] <= 1e-10
            verdicts[f"ic{k}_alpha_limit"] = run["alpha_limit_gap"] <= 1e-9
            verdicts[f"ic{k}_beta_on_final_set"] = run["beta_on_final_set"]
            verdicts[f"ic{k}_constraint_drift"] = run["constraint_drift"] <= 1e-6
        # second-order differences of the trajectory: error ~ step^2
        run["el_tolerance"] = el_tol = max(1e-6, step**2)
        verdicts[f"ic{k}_el_residual"] = run["el_residual"] <= el_tol
        verdicts[f"ic{k}_h0_drift"] = run["h0_drift"] <= 1e-6
        runs.append(run)
    inputs = {"theory": theory, "initial_conditions": [x.tolist() for x in ics], "horizon": horizon,
              "step": step, "chain_steps": chain_steps, "samples": samples, "seed": seed}
    return make_report("integrate", inputs, {"theory": th.name, "names": c.Z.names, "runs": runs}, verdicts)


# ---------------------------------------------------------- check-exterior

def check_exterior(trials: int = 100, seed: int = 0) -> dict:
    res = run_exterior_suites(trials, seed)
    return make_report("check-exterior", {"trials": trials, "seed": seed}, res,
                       {k: v["passed"] for k, v in res.items()})


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldlab", description="First-order field theory toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--report", help="also write the JSON report to this path")

    p = sub.add_parser("analyze", help="regularity and structure verdicts")
    p.add_argument("theory", help="built-in name or theory JSON file")
    p.add_argument("--samples", type=int, default=8)
    common(p)

    p = sub.add_parser("constraints", help="run the constraint algorithm")
    p.add_argument("theory")
    p.add_argument("--formalism", choices=FORMALISMS + ["all"], default="all")
    p.add_argument("--max-steps", type=int, default=4)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--tol", type=float, default=1e-8)
    common(p)

    p = sub.add_parser("integrate", help="integrate the dynamics of a mechanical system")
    p.add_argument("theory")
    p.add_argument("--ic", required=True, help="JSON file with initial conditions")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--chain-steps", type=int, default=5)
    p.add_argument("--samples", type=int, default=64)
    common(p)

    p = sub.add_parser("check-exterior", help="randomized exterior algebra identities")
    p.add_argument("--trials", type=int, default=100)
    common(p)
    return ap


def run(argv=None) -> tuple[int, dict | None]:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            rep = analyze(args.theory, args.samples, args.seed)
        elif args.command == "constraints":
            rep = constraints(args.theory, args.formalism, args.max_steps, args.samples, args.tol, args.seed)
        elif args.command == "integrate":
            rep = integrate_theory(args.theory, args.ic, args.horizon, args.step, args.chain_steps,
                                   args.samples, args.seed)
        else:
            rep = check_exterior(args.trials, args.seed)
    except (ParseError, InputError, DimensionError, ExprError) as exc:
        print(f"fieldlab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT, None
    except (DegenerateStructure, NonFiniteState, NotClosed, SamplingFailed) as exc:
        rep = make_report(args.command, vars(args), {"error": f"{type(exc).__name__}: {exc}"}, {"completed": False})
    text = json.dumps(rep, sort_keys=True, indent=1)
    print(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    return (EXIT_OK if rep["passed"] else EXIT_FAIL), rep


def main(argv=None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
