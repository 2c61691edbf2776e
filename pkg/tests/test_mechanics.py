import numpy as np
import pytest
import sympy as sp

from fieldlab.bundles import H0, poincare_cartan
from fieldlab.connections import Formalism
from fieldlab.constraints import formalism_setup, gauss_newton_project, run_algorithm
from fieldlab.forms import ExteriorForm, Layer, VectorField
from fieldlab.mechanics import (DegenerateStructure, NonFiniteState, ReebProblem, Trajectory, integrate,
                                oracle_agreement, presymplectic_chain_oracle, reeb_components, reeb_field,
                                sode_defect, unified_field)
from fieldlab.theories import free_field, oscillator, random_quadratic, singular_mech


def _osc():
    th = oscillator()
    return th, ReebProblem(poincare_cartan(th)[1], th.eta)


def test_oscillator_reeb_field_symbolic_and_numeric():
    th, rp = _osc()
    t, q, v = th.chart.Z.symbols
    xi = reeb_field(rp)
    assert xi.comps == {0: 1, 1: v, 2: -q}
    x = np.array([0.3, 0.5, -0.2])
    assert np.allclose(reeb_components(rp, x[None, :])[0], [1, -0.2, -0.5])
    assert sode_defect(xi, x, th.chart.Z) == 0


def test_reeb_rejects_bad_structures():
    th = singular_mech()
    rp = ReebProblem(poincare_cartan(th)[1], th.eta)
    with pytest.raises(DegenerateStructure):
        reeb_components(rp, np.zeros((1, 5)))
    with pytest.raises(DegenerateStructure):
        reeb_field(rp)
    ff = free_field()
    with pytest.raises(DegenerateStructure):
        ReebProblem(poincare_cartan(ff)[1], ExteriorForm.dx(ff.chart.Z, 0))
    L = Layer("R3", tuple(sp.symbols("a b c", real=True)), 1)
    a, b, c = L.symbols
    with pytest.raises(DegenerateStructure):
        ReebProblem(ExteriorForm(L, 2, {(1, 2): a * b}), ExteriorForm.dx(L, 0))


def test_oscillator_period_and_trajectory_io():
    th, rp = _osc()
    tr = integrate(rp, th.chart.Z, [0.0, 1.0, 0.0], 2 * np.pi, 1e-3)
    assert np.isclose(tr.times[-1], 2 * np.pi)
    assert np.max(np.abs(tr.states[-1, 1:] - [1.0, 0.0])) <= 1e-8
    back = Trajectory.from_json(tr.to_json())
    assert back.names == ["t", "q", "q_t"] and np.allclose(back.states, tr.states, atol=1e-11)
    assert np.allclose(tr.column("q")[:3], np.cos(tr.times[:3]), atol=1e-12)


def test_integrate_blowup_and_bad_args():
    L = Layer("R1", (sp.Symbol("s", real=True),), 0)
    f = VectorField(L, {0: L.symbols[0] ** 2})
    with pytest.raises(NonFiniteState), np.errstate(over="ignore", invalid="ignore"):
        integrate(f, L, [1.0], 5.0, 0.1)
    with pytest.raises(ValueError):
        integrate(f, L, [1.0], 1.0, 0.0)


def test_unified_field_conserves_h0_on_primary_set():
    th = oscillator()
    setup = formalism_setup("unified", th)
    w, ok = gauss_newton_project(setup.base, np.array([[0.0, 0.8, 0.0, 0.3, 0.3]]))
    assert ok[0]
    tr = integrate(unified_field(th), th.chart.W0, w[0], 1.0, 1e-2)
    W0 = th.chart.W0
    h = [float(H0(th).xreplace(dict(zip(W0.symbols, x)))) for x in tr.states]
    assert np.max(np.abs(h)) <= 1e-6
    assert np.max(setup.base.scaled_residuals(tr.states)) <= 1e-6


def test_oracle_chain_matches_engine_on_singular_mech():
    th = singular_mech()
    orc = presymplectic_chain_oracle(th, samples=200, seed=1)
    eng = run_algorithm("unified", th, samples=200, seed=1)
    assert orc.stabilized and orc.final_step == eng.final_step == 3
    rows = oracle_agreement(th, orc)
    assert sum(r["disagreements"] for r in rows) == 0


def test_oracle_on_regular_theory_stabilizes_at_primary():
    th = random_quadratic(4, n=1, m=2, regular=True)
    orc = presymplectic_chain_oracle(th, samples=60, seed=0)
    assert orc.stabilized and orc.final_step == 1
    with pytest.raises(ValueError):
        presymplectic_chain_oracle(free_field())
