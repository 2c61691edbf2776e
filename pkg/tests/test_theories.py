import json

import numpy as np
import pytest
import sympy as sp

from fieldlab.bundles import DimensionError, hessian
from fieldlab.theories import (BUILTINS, ParseError, bosonic_string, load_theory, random_quadratic,
                               string_displayed_constraints, theory_from_dict)
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "data"


def test_builtins_load():
    for name in BUILTINS:
        th = load_theory(name)
        assert th.name == name


def test_file_theory():
    th = load_theory(str(DATA / "coupled_fields.json"))
    assert th.chart.Z.names == ["t", "s", "u", "w", "u_t", "u_s", "w_t", "w_s"]
    assert th.box["u"] == (-1.0, 1.0)
    assert hessian(th).rank() == 3


def _base():
    return {"n": 1, "m": 1, "lagrangian": "(1/2)*y[1,1]^2"}


def test_dict_theory_with_hamiltonian_and_constraints():
    d = _base() | {"m": 2, "lagrangian": "(1/2)*y[1,1]^2 + y[2]*y[1,1]",
                   "hamiltonian": {"H": "(1/2)*(p_y1_1 - y2)^2", "eliminated": {"p_y2_1": "0"}},
                   "constraints": {"hamiltonian": {"2": ["p_y1_1 - y2"]}}}
    th = theory_from_dict(d)
    assert th.hamiltonian.layer.name == "Zstar1"
    assert list(th.registered["hamiltonian"]) == [2]


def test_parse_errors_locate_the_field(tmp_path):
    with pytest.raises(ParseError) as info:
        theory_from_dict(_base() | {"lagrangian": "y[1,1]^^2"}, "t.json")
    assert info.value.location == "t.json:lagrangian"
    with pytest.raises(ParseError):
        theory_from_dict({"n": 1, "lagrangian": "0"})
    with pytest.raises(ParseError):
        theory_from_dict(_base() | {"lagrangian": "q + 1"})
    with pytest.raises(DimensionError):
        theory_from_dict(_base() | {"cokernel": [["1", "2"]]})
    bad = tmp_path / "bad.json"
    bad.write_text("{\"n\": 1,")
    with pytest.raises(ParseError) as info:
        load_theory(str(bad))
    assert str(bad) in info.value.location
    bad.write_text("[1, 2]")
    with pytest.raises(ParseError):
        load_theory(str(bad))
    with pytest.raises(ParseError):
        load_theory(str(tmp_path / "missing.json"))


def test_bosonic_string_lagrangian_value():
    """Single flat target, h = diag(-1, 1): L = -1/2 (-(y_0)^2 + (y_1)^2)."""
    th = bosonic_string(((1,),))
    c = th.chart
    vals = {c.y[1]: -1, c.y[2]: 0, c.y[3]: 1, c.z[0, 0]: 1, c.z[0, 1]: 2}
    assert sp.nsimplify(th.L.xreplace(vals)) == sp.Rational(-3, 2)
    assert len(string_displayed_constraints(th)) == 3


def test_random_quadratic_regularity_flag():
    for seed in range(10):
        assert hessian(random_quadratic(seed, regular=True)).det() != 0
        assert hessian(random_quadratic(seed, regular=False)).det() == 0
