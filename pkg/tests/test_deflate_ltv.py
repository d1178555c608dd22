import numpy as np
import pytest

from daeflate.deflate_lti import run_deflation
from daeflate.deflate_ltv import check_geometric_regularity, default_probes, run_ltv_deflation
from daeflate.errors import JetOrderError, NotRegular, PivotBreakdown, RankDrop
from daeflate.expr import ExprVector, parse
from daeflate.generators import random_known_pencil
from daeflate.jets import SmoothMatrix
from daeflate.solve import solve_chain

from conftest import F1, REGIMES, example1, example4, example5


def smooth(rows):
    return SmoothMatrix([[parse(str(e)) for e in row] for row in rows])


def constant(M):
    return smooth(np.asarray(M).tolist())


def classical():
    return smooth([[1, "-t"], [0, 0]]), smooth([[0, 0], [-1, "t"]]), ExprVector(["sin(t)", "exp(t)"])


def counterexample():
    E = smooth([[1, 0, 1], [1, 1, 1], [0, 0, 0]])
    A = smooth([[0, 0, 0], [0, 0, 0], ["t", "t", "t"]])
    return E, A, ExprVector(["0"] * 3)


def test_classical_example_is_regular():
    E, A, f = classical()
    split = check_geometric_regularity(E, A, 1.0, default_probes(0.1, 3.0))
    assert split.r == 1
    chain = run_ltv_deflation(E, A, f, 1.0, default_probes(0.1, 3.0))
    assert chain.index == 1 and chain.ranks == [2, 1, 0]
    # x1 - t x2 = -f2 from the algebraic row, x2 from the differential one
    traj = solve_chain(chain, 0.1, 3.0, [], 200, 31)
    for t, x in zip(traj.times, traj.states):
        assert abs(-x[0] + t * x[1] + np.exp(t)) <= 1e-9


def test_counterexample_breaks_after_one_step():
    E, A, f = counterexample()
    with pytest.raises(NotRegular) as info:
        run_ltv_deflation(E, A, f, 1.0, default_probes(0.5, 2.0, 5))
    assert info.value.step == 1


def test_counterexample_first_deflation():
    from daeflate.deflate_ltv import LtvChain, LtvProblem, _choose_pattern

    E, A, f = counterexample()
    step = _choose_pattern(E.value(1.0), A.value(1.0), 1e-10, 0.0)
    chain = LtvChain(LtvProblem(E, A, f), [step], [3, 2], 1.0, [])
    for t in (0.5, 1.0, 2.0):
        lv = chain.levels(t)[-1]
        assert np.linalg.matrix_rank(lv.E.value) == 1
        assert np.allclose(lv.A.value, 0)
        # the deflated pencil is singular for every lambda
        for lam in (-2.0, 0.5, 3.0):
            assert abs(np.linalg.det(lam * lv.E.value + lv.A.value)) <= 1e-12


def test_counterexample_probe_at_zero():
    E, A, f = counterexample()
    with pytest.raises(PivotBreakdown) as info:
        run_ltv_deflation(E, A, f, 1.0, default_probes(0.0, 2.0, 5))
    assert info.value.t == 0.0 and info.value.step == 0
    assert "t=0" in str(info.value)


def test_rank_drop_at_probe():
    E = smooth([["t", 0], [0, 0]])
    A = smooth([[1, 0], [0, 1]])
    with pytest.raises(RankDrop) as info:
        check_geometric_regularity(E, A, 0.5, [-1.0, 0.0, 1.0])
    assert info.value.t == 0.0


def test_constant_input_reduces_to_split():
    E, A = example1()
    split = check_geometric_regularity(constant(E), constant(A), 0.0, [0.0, 1.0])
    assert split.r == 2 and np.allclose(split.N, [[-1.0]])


@pytest.mark.parametrize("case", ["example1", "example4", "random"])
def test_degeneration_to_constant_coefficients(case, rng):
    if case == "example1":
        (E, A), f = example1(), F1
    elif case == "example4":
        E, A = example4()
        f = ExprVector(["cos(t)", "t^2", "sin(t)", "exp(-t)", "0", "t", "1", "sin(2*t)"])
    else:
        p = random_known_pencil(rng, n_max=6)
        E, A = p.E, p.A
        f = ExprVector([f"sin({i + 1}*t)" for i in range(p.n)])
    lti = run_deflation(E, A, f, backend="lu")
    ltv = run_ltv_deflation(constant(E), constant(A), f, 0.5, default_probes(0, 1))
    assert ltv.ranks == lti.ranks
    assert [list(s.perm) for s in ltv.steps] == [list(s.perm) for s in lti.steps]
    for t in np.linspace(0, 1, 10):
        for lv, (Ej, Aj), fj in zip(ltv.levels(t), lti.pencils, lti.forcings):
            assert np.abs(lv.E.value - Ej).max() <= 1e-10
            assert np.abs(lv.A.value - Aj).max() <= 1e-10
            assert np.abs(lv.f.value[:, 0] - fj(t)).max() <= 1e-10


def test_jet_order_accounting():
    E, A, f = example5(*REGIMES[3])
    chain = run_ltv_deflation(E, A, f, 0.5, default_probes(0, 1))
    levels = chain.levels(0.3)
    for j, lv in enumerate(levels):
        assert lv.E.order == chain.index - j
    with pytest.raises(JetOrderError):
        levels[-1].E.derivative()
    with pytest.raises(ValueError):
        chain.levels(0.3, upto=chain.index + 1)


@pytest.mark.parametrize("regime, steps", [(1, 1), (2, 2), (3, 3)])
def test_example5_regimes(regime, steps):
    E, A, f = example5(*REGIMES[regime])
    chain = run_ltv_deflation(E, A, f, 0.5, default_probes(0, 1))
    assert chain.index == steps
    assert chain.terminal_is_ode


def _lifted_rows(chain, t, j):
    lv = chain.levels(t)[j]
    step = chain.steps[j]
    idx = np.arange(chain.n)
    for s in chain.steps[:j]:
        idx = idx[s.perm[: s.size_out]]
    rows = np.zeros((step.size_in - step.size_out, chain.n))
    rows[:, idx[step.perm]] = np.hstack([lv.M.value, lv.N.value])
    return rows


def test_example5_index_one_constraints():
    E, A, f = example5(*REGIMES[1])
    chain = run_ltv_deflation(E, A, f, 0.5, default_probes(0, 1))
    for t in np.linspace(0, 1, 6):
        R1, R2 = 1.0, 1 + t / 2
        theirs = np.array([[1, -1, 0, R1, 0], [1, 0, 0, 0, -R2]])
        ours = _lifted_rows(chain, t, 0)
        assert np.linalg.matrix_rank(np.vstack([ours, theirs]), 1e-10) == 2


def test_example5_index_two_closed_form():
    E, A, f = example5(*REGIMES[2])
    chain = run_ltv_deflation(E, A, f, 0.5, default_probes(0, 1))
    traj = solve_chain(chain, 0.0, 1.0, np.ones(chain.terminal_size), 400, 21)
    for t, x in zip(traj.times, traj.states):
        C1, dC1, C2, dC2, R2 = 1 + t**2 / 10, t / 5, 2 + np.sin(t), np.cos(t), 1 + t / 2
        c = C1 / C2
        b = -1 - dC1 * R2 + dC2 * R2 * c
        x1, x2, x3, x4, x5 = x
        assert abs((1 + c) * x4 + b * x5 + c * x3) <= 1e-8
        assert abs(x1 - x2) <= 1e-8 and abs(-R2 * x5 + x1) <= 1e-8


def test_example5_index_three_closed_form():
    E, A, f = example5(*REGIMES[3])
    chain = run_ltv_deflation(E, A, f, 0.5, default_probes(0, 1))
    assert list(chain.reduced_coordinates()) == [4]
    traj = solve_chain(chain, 0.0, 1.0, [1.0], 400, 21)
    for t, x in zip(traj.times, traj.states):
        C1, dC1, R2, L = 1 + t**2 / 10, t / 5, 1.0, 1.0
        b = C1 * R2**2 - L - dC1 * R2 * L
        x1, x2, x3, x4, x5 = x
        assert abs(b * x5 + L * x4) <= 1e-8
        assert abs(x5 + x3) <= 1e-8 and abs(x1 - x2) <= 1e-8


def test_constraints_hold_along_solution():
    E, A, f = example5(*REGIMES[2])
    chain = run_ltv_deflation(E, A, f, 0.5, default_probes(0, 1))
    traj = solve_chain(chain, 0.0, 1.0, np.ones(chain.terminal_size), 200, 11)
    for t, x in zip(traj.times, traj.states):
        for res in chain.constraint_residuals(x, t):
            assert np.abs(res).max() <= 1e-8
