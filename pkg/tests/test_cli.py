import json

import numpy as np
import pytest

from daeflate.cli import main, read_trajectory
from daeflate.errors import ProblemError
from daeflate.problem import (
    bundled_examples,
    build_chain,
    effective_tol,
    load_chain,
    load_problem,
    problem_from_dict,
)


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def base_problem(**over):
    data = {
        "n": 2,
        "mode": "lti",
        "E": [[1, 0], [0, 0]],
        "A": [[0, 1], [1, 0]],
        "f": ["sin(t)", "t"],
        "interval": [0, 1],
    }
    data.update(over)
    return data


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_load_bundled_example1():
    p = load_problem("examples/bcp_example1.json")
    assert p.n == 3 and p.mode == "lti"


def test_all_bundled_examples_load():
    names = [p.name for p in bundled_examples()]
    assert "bcp_example1.json" in names and len(names) >= 8
    for path in bundled_examples():
        load_problem(path)


def test_schema_errors():
    with pytest.raises(ProblemError, match="f"):
        problem_from_dict(base_problem(f=["0"]))
    with pytest.raises(ProblemError, match="'lti'.*t"):
        problem_from_dict(base_problem(A=[[0, "t"], [1, 0]]))
    with pytest.raises(ProblemError, match="n"):
        problem_from_dict({k: v for k, v in base_problem().items() if k != "n"})
    with pytest.raises(ProblemError):
        problem_from_dict(base_problem(extra=1))
    with pytest.raises(ProblemError, match="column"):
        problem_from_dict(base_problem(f=["sin(", "0"]))


def test_tolerance_precedence(monkeypatch):
    p = problem_from_dict(base_problem())
    monkeypatch.delenv("DAEFLATE_TOL", raising=False)
    assert effective_tol(p) == 1e-10
    monkeypatch.setenv("DAEFLATE_TOL", "1e-8")
    assert effective_tol(p) == 1e-8
    assert effective_tol(problem_from_dict(base_problem(tol=1e-9))) == 1e-9
    assert effective_tol(p, 1e-6) == 1e-6
    monkeypatch.setenv("DAEFLATE_TOL", "abc")
    with pytest.raises(ProblemError):
        effective_tol(p)


def test_analyze_example1(capsys):
    code, out, _ = run(capsys, "analyze", "examples/bcp_example1.json")
    assert code == 0
    assert "rank(E)=2" in out and "ranks: 3,2,1,0-terminal" in out
    # Kronecker oracle gives the nilpotency index of the pencil
    assert "index=3" in out and "deflation steps 2" in out


def test_analyze_json_example4(capsys):
    code, out, _ = run(capsys, "analyze", "examples/example4_circuit.json", "--json")
    report = json.loads(out)
    assert code == 0 and report["index"] == 3 and report["steps"] == 3
    assert report["terminal_variables"] == ["x8", "x7"] or sorted(report["terminal_variables"]) == ["x7", "x8"]


@pytest.mark.parametrize("regime", [1, 2, 3])
def test_analyze_example5(capsys, regime):
    code, out, _ = run(capsys, "analyze", f"examples/example5_index{regime}.json", "--json")
    report = json.loads(out)
    assert code == 0 and report["index"] == regime and report["index_kind"] == "differentiation"


def test_exit_codes(capsys, tmp_path):
    assert run(capsys, "analyze", write(tmp_path, "bad.json", base_problem(f=["0"])))[0] == 1
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "analyze", str(tmp_path / "missing.json"))[0] == 1
    singular = write(tmp_path, "sing.json", base_problem(E=[[1, 0], [0, 0]], A=[[1, 0], [0, 0]]))
    code, _, err = run(capsys, "analyze", singular)
    assert code == 2 and "not regular" in err


def test_reduce_counts(capsys, tmp_path):
    out = str(tmp_path / "c.json")
    code, text, _ = run(capsys, "reduce", "examples/example2_nilpotent_k4.json", "-o", out)
    _, chain = load_chain(out)
    assert code == 0 and chain.index == 3
    for step in chain.steps:
        assert list(step.perm) == list(range(step.size_in))
        assert np.abs(step.M).max(initial=0) <= 1e-14
    run(capsys, "reduce", "examples/example3_index1.json", "-o", out)
    _, chain = load_chain(out)
    assert chain.index == 1 and chain.constraint_count == 3
    run(capsys, "reduce", write(tmp_path, "inv.json", base_problem(E=[[1, 0], [0, 2]])), "-o", out)
    _, chain = load_chain(out)
    assert chain.index == 0 and chain.terminal_is_ode


@pytest.mark.parametrize("name", ["bcp_example1.json", "example4_circuit.json", "example5_index2.json"])
def test_chain_round_trip(capsys, tmp_path, name):
    out = str(tmp_path / "c.json")
    assert run(capsys, "reduce", f"examples/{name}", "-o", out)[0] == 0
    problem = load_problem(f"examples/{name}")
    chain = build_chain(problem)
    _, again = load_chain(out)
    rng = np.random.default_rng(5)
    lo, hi = problem.interval
    for t in np.linspace(lo, hi, 10):
        x = rng.standard_normal(problem.n)
        for a, b in zip(chain.constraint_residuals(x, t), again.constraint_residuals(x, t)):
            assert np.abs(a - b).max() <= 1e-12


def test_reduce_output_is_deterministic(capsys, tmp_path):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    run(capsys, "reduce", "examples/example4_circuit.json", "-o", a)
    run(capsys, "reduce", "examples/example4_circuit.json", "-o", b)
    assert open(a).read() == open(b).read()


def test_solve_then_check(capsys, tmp_path):
    csv = str(tmp_path / "x.csv")
    code, out, _ = run(capsys, "solve", "examples/bcp_example1.json", "-o", csv)
    assert code == 0 and out.strip().splitlines()[-1].startswith("max residual = ")
    assert "PASS @ 1e-08" in out
    traj = read_trajectory(csv, 3)
    assert traj.times.size == 101
    assert np.abs(traj.states[:, 1] - np.exp(traj.times)).max() <= 1e-12
    code, out, _ = run(capsys, "check", "examples/bcp_example1.json", csv)
    assert code == 0 and "PASS" in out


def test_solve_example4_column(capsys, tmp_path):
    csv = str(tmp_path / "x.csv")
    assert run(capsys, "solve", "examples/example4_circuit.json", "-o", csv)[0] == 0
    traj = read_trajectory(csv, 8)
    assert np.abs(traj.states[:, 3] - np.sin(traj.times)).max() <= 1e-12


def test_solve_example5_index3(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "examples/example5_index3.json", "-o", str(tmp_path / "x.csv"))
    assert code == 0 and "PASS @ 1e-06" in out


def test_check_failures(capsys, tmp_path):
    zeros = tmp_path / "z.csv"
    zeros.write_text("t,x1,x2,x3\n" + "".join(f"{t},0,0,0\n" for t in np.linspace(0, 1, 11)))
    code, out, _ = run(capsys, "check", "examples/bcp_example1.json", str(zeros))
    assert code == 3 and "FAIL" in out
    empty = tmp_path / "e.csv"
    empty.write_text("")
    code, _, err = run(capsys, "check", "examples/bcp_example1.json", str(empty))
    assert code == 1 and "x1..x3" in err
    narrow = tmp_path / "n.csv"
    narrow.write_text("t,x1,x2\n0,0,0\n1,0,0\n")
    assert run(capsys, "check", "examples/bcp_example1.json", str(narrow))[0] == 1
