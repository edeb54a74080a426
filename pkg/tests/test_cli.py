import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from khessian.cli import RunConfig, apply_overrides, emit_config, parse_config, run
from khessian.errors import InputError
from khessian.hessop import load_field

BALL_CFG = """\
# small ball problem
problem.n = 3
problem.k = 2
problem.domain.kind = "ball"
problem.domain.radius = 1.0
problem.f = "45*(x1^2+x2^2+x3^2)"
problem.phi = "0"
problem.exact = "sqrt(x1^2+x2^2+x3^2)^3 - 1"
grid.m = 13
"""


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_basic():
    cfg = parse_config(BALL_CFG)
    assert cfg.get("problem.n") == 3 and cfg.get("problem.domain.radius") == 1.0
    assert cfg.get("problem.theta") == 1e-6
    assert "problem.theta" not in cfg.values


def test_emit_parse_roundtrip_fixed():
    cfg = parse_config(BALL_CFG + 'schedule = [0.1, 0.01]\nseed = 4\n')
    assert parse_config(emit_config(cfg)) == cfg


values = st.fixed_dictionaries({}, optional={
    "problem.n": st.integers(1, 8),
    "problem.theta": st.floats(1e-12, 1.0),
    "problem.f": st.text(alphabet="x123+*^() .", min_size=1, max_size=12),
    "problem.domain.center": st.lists(st.floats(-5, 5), min_size=1, max_size=4),
    "grid.closure": st.sampled_from(["cut", "projection"]),
    "seed": st.integers(0, 2**31),
})


@settings(max_examples=100, deadline=None)
@given(values)
def test_emit_parse_roundtrip_property(vals):
    cfg = RunConfig(vals)
    assert parse_config(emit_config(cfg)) == cfg


def test_duplicate_key_is_named():
    with pytest.raises(InputError, match=r"line 3: duplicate key 'problem.n' \(first set on line 1\)"):
        parse_config("problem.n = 3\nproblem.k = 2\nproblem.n = 4\n")


def test_unknown_keys_listed():
    with pytest.raises(InputError, match=r"'problem.z' \(line 1\), 'foo' \(line 2\)"):
        parse_config("problem.z = 1\nfoo = 2\n")


def test_bad_json_reports_line():
    with pytest.raises(InputError, match="line 2: value of 'problem.f' is not valid JSON"):
        parse_config("problem.n = 3\nproblem.f = x1^2\n")


def test_type_mismatch():
    with pytest.raises(InputError, match="'problem.n' must be an integer"):
        parse_config('problem.n = "3"\n')
    with pytest.raises(InputError, match="must be a number"):
        parse_config("problem.theta = true\n")


def test_missing_equals_and_unknown_command():
    with pytest.raises(InputError, match="line 1"):
        parse_config("problem.n 3\n")
    with pytest.raises(InputError, match="unknown command"):
        parse_config('command = "fly"\n')


def test_schedule_string_and_list():
    a = parse_config('schedule = "1e-1, 1e-2,1e-3"\n')
    b = parse_config("schedule = [0.1, 0.01, 0.001]\n")
    assert a.get("schedule") == b.get("schedule") == [0.1, 0.01, 0.001]
    with pytest.raises(InputError):
        parse_config('schedule = "a,b"\n')


def test_constant_expression_as_number():
    assert parse_config("problem.f = 2\n").get("problem.f") == "2.0"


def test_overrides_log_provenance(caplog):
    cfg = parse_config("grid.m = 17\n")
    with caplog.at_level(logging.INFO, logger="khessian"):
        out = apply_overrides(cfg, [("grid.m", 33, "--grid-m"), ("seed", 5, "--set")])
    assert out.get("grid.m") == 33 and cfg.get("grid.m") == 17
    assert "override grid.m: 17 -> 33 (from --grid-m)" in caplog.text
    assert "set seed = 5 (from --set)" in caplog.text
    with pytest.raises(InputError, match="--set: unknown key"):
        apply_overrides(cfg, [("nope", 1, "--set")])


def test_solve_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    code = run(["solve", "--config", _write(tmp_path, BALL_CFG), "--output", str(out)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["solve"]["converged"] and rep["error_vs_exact"] < 0.05
    assert rep["config"]["output.dir"] == str(out)
    u = load_field(out / "solution.field", out / "solution.mask")
    assert u.grid.m == (13, 13, 13)
    assert (out / "series.csv").read_text().startswith("iteration,residual\n")
    assert "converged in" in capsys.readouterr().out


def test_path_command(tmp_path):
    out = tmp_path / "p"
    cfg = _write(tmp_path, BALL_CFG + 'schedule = "1e-1,1e-3"\n')
    assert run(["path", "--config", cfg, "--grid-m", "9", "--output", str(out), "--quiet"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["path"]["entries"]) == 2
    assert all(c["pointwise_leq"] for c in rep["comparisons"])
    assert len((out / "series.csv").read_text().splitlines()) == 3


def test_input_errors_exit_2(tmp_path):
    assert run(["solve", "--config", _write(tmp_path, "problem.n = 3\nproblem.n = 3\n"), "--quiet"]) == 2
    assert run(["solve", "--config", str(tmp_path / "missing.cfg"), "--quiet"]) == 2
    assert run(["solve", "--config", _write(tmp_path, "problem.n = 3\n"), "--quiet"]) == 2
    bad_k = BALL_CFG.replace("problem.k = 2", "problem.k = 5")
    assert run(["solve", "--config", _write(tmp_path, bad_k), "--quiet"]) == 2
    assert run(["solve", "--config", _write(tmp_path, 'command = "path"\n'), "--quiet"]) == 2
    assert run(["solve", "--config", _write(tmp_path, BALL_CFG), "--set", "problem.f=-1", "--quiet"]) == 2


def test_convergence_failure_exit_3(tmp_path):
    cfg = _write(tmp_path, BALL_CFG + "solver.max_iter = 1\n")
    assert run(["solve", "--config", cfg, "--quiet"]) == 3


def test_check_f(tmp_path, capsys):
    out = tmp_path / "cf"
    assert run(["check-f", "--config", _write(tmp_path, BALL_CFG), "--output", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    # f = 45 r^2, k = 2: |Df| / f^(1/2) = 90 r / (sqrt(45) r) = 2 sqrt(45) everywhere
    assert rep["audit"]["c0_gradient"] == pytest.approx(2 * 45**0.5, rel=1e-9)
    assert rep["audit"]["degenerate_failures"] == 0
    assert "c0_gradient=13.4164" in capsys.readouterr().out


def test_check_domain(tmp_path, capsys):
    out = tmp_path / "cd"
    assert run(["check-domain", "--config", _write(tmp_path, BALL_CFG), "--output", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["pass"] and rep["margin"] == pytest.approx(2.0, rel=1e-6)
    assert (out / "series.csv").exists()
    assert "(1)-convex: pass, margin 2" in capsys.readouterr().out


def test_validate_builtin_example(capsys):
    assert run(["validate"]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 6 and "FAIL" not in text


def test_validate_coarse_grid_reports_failure(capsys):
    # m = 9 is too coarse for the 1e-2 error check, so the table shows a FAIL row
    assert run(["validate", "--grid-m", "9"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_lab_command(tmp_path):
    out = tmp_path / "lab"
    cfg = 'problem.n = 3\nproblem.k = 2\nlab.experiment = "maclaurin"\nlab.samples = 2000\n'
    assert run(["lab", "--config", _write(tmp_path, cfg), "--output", str(out), "--seed", "3", "--quiet"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["seed"] == 3 and rep["violations"] == 0
