import json
from pathlib import Path

import pytest

from fieldlab.cli import main, run

DATA = Path(__file__).resolve().parents[1] / "data"


def _report(capsys):
    return json.loads(capsys.readouterr().out)


def test_analyze_free_field(capsys):
    assert main(["analyze", "free_field", "--samples", "4"]) == 0
    rep = _report(capsys)
    assert rep["verdicts"]["pullback_Leg_omega"] and rep["results"]["legendre_rank"]["deficiency"] == 0


def test_analyze_bosonic_rank_profile(capsys):
    assert main(["analyze", "bosonic_string", "--samples", "3"]) == 0
    res = _report(capsys)["results"]
    assert res["legendre_rank"]["deficiency"] == 6 and res["regular_fraction"] == 0


def test_constraints_report_is_deterministic(tmp_path, capsys):
    args = ["constraints", "singular_mech", "--samples", "64", "--seed", "2"]
    code1, rep1 = run(args + ["--report", str(tmp_path / "a.json")])
    code2, rep2 = run(args)
    assert code1 == code2 == 0
    assert rep1 == rep2
    assert json.loads((tmp_path / "a.json").read_text()) == rep1
    assert rep1["results"]["transport"]["same_stabilization"]
    capsys.readouterr()


def test_constraints_not_stabilized_exits_one(tmp_path, capsys):
    th = {"n": 1, "m": 2, "fields": ["y1", "y2"], "labels": ["t"], "base": ["t"],
          "lagrangian": "(1/2)*y1_t^2*exp(y2) + y1*y2_t"}
    f = tmp_path / "th.json"
    f.write_text(json.dumps(th))
    assert main(["constraints", str(f), "--formalism", "lagrangian", "--samples", "32"]) == 1
    rep = _report(capsys)
    assert rep["results"]["chains"]["lagrangian"]["error"] == "NotStabilized"


def test_integrate_oscillator_and_singular(capsys):
    assert main(["integrate", "oscillator", "--ic", str(DATA / "oscillator_ic.json"), "--horizon", "0.5",
                 "--step", "0.01"]) == 0
    rep = _report(capsys)
    assert len(rep["results"]["runs"]) == 2
    assert main(["integrate", "singular_mech", "--ic", str(DATA / "singular_mech_ic.json"), "--horizon", "0.2",
                 "--step", "0.01", "--samples", "32"]) == 0
    run_ = _report(capsys)["results"]["runs"][0]
    assert run_["kind"] == "singular" and run_["beta_point"][4] == 0


@pytest.mark.parametrize("argv", [
    ["analyze", "no_such_theory.json"],
    ["integrate", "free_field", "--ic", "x.json"],
    ["integrate", "oscillator", "--ic", "missing_ic.json"],
])
def test_input_errors_exit_two(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_option_exits_two(capsys):
    with pytest.raises(SystemExit) as info:
        main(["constraints", "oscillator", "--formalism", "bogus"])
    assert info.value.code == 2
    capsys.readouterr()


def test_bad_initial_condition(tmp_path, capsys):
    f = tmp_path / "ic.json"
    f.write_text(json.dumps({"t": 0, "q": 1}))
    assert main(["integrate", "oscillator", "--ic", str(f)]) == 2
    f.write_text(json.dumps({"t": 0, "q": 1, "v": 0, "zz": 3}))
    assert main(["integrate", "oscillator", "--ic", str(f)]) == 2
    capsys.readouterr()


def test_check_exterior_small(capsys):
    assert main(["check-exterior", "--trials", "5"]) == 0
    assert _report(capsys)["passed"]
