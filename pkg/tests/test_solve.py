import numpy as np
import pytest

from daeflate.deflate_lti import run_deflation
from daeflate.expr import ExprVector
from daeflate.solve import (
    ReducedTrajectory,
    SolutionTrajectory,
    back_substitute,
    fd_weights,
    integrate_terminal,
    residual_check,
    sampled_derivative,
    solve_chain,
)

from conftest import F1, example1, example1_exact, example4


def exp_chain():
    return run_deflation(np.eye(1), np.eye(1), ExprVector(["0"]))


def test_constant_terminal():
    chain = run_deflation(np.eye(2), np.zeros((2, 2)), ExprVector(["0", "0"]))
    red = integrate_terminal(chain, 0.0, 2.0, [3.0, -1.5], 50)
    assert np.all(red.states == [3.0, -1.5])


def test_rk4_exponential():
    red = integrate_terminal(exp_chain(), 0.0, 1.0, [1.0], 1000)
    assert abs(red.states[-1, 0] - np.e) <= 1e-8


def test_rk4_order_four():
    errs = []
    for steps in (10, 20, 40):
        red = integrate_terminal(exp_chain(), 0.0, 1.0, [1.0], steps)
        errs.append(np.abs(red.states[:, 0] - np.exp(red.times)).max())
    assert errs[0] / errs[1] >= 12 and errs[1] / errs[2] >= 12


def test_integrate_rejects_bad_input():
    with pytest.raises(ValueError):
        integrate_terminal(exp_chain(), 0.0, 1.0, [1.0], 1)
    with pytest.raises(ValueError):
        integrate_terminal(exp_chain(), 0.0, 1.0, [1.0, 2.0], 10)


def test_example1_closed_forms():
    chain = run_deflation(*example1(), F1)
    traj = solve_chain(chain, 0.0, 1.0, [], 1000, 101)
    assert np.allclose(traj.states[0], [-1.0, 1.0, 1.0], atol=1e-14, rtol=0)
    assert np.abs(traj.states - example1_exact(traj.times)).max() <= 1e-8
    assert np.abs(traj.states[:, 1] - np.exp(traj.times)).max() <= 1e-12


def test_example1_residual_and_perturbation():
    E, A = example1()
    exact = SolutionTrajectory(np.linspace(0, 1, 101), example1_exact(np.linspace(0, 1, 101)))
    assert residual_check(E, A, F1, exact, 1e-8).passed
    bad = exact.states.copy()
    bad[:, 1] += 1e-3
    report = residual_check(E, A, F1, SolutionTrajectory(exact.times, bad), 1e-8)
    assert not report.passed and report.max_residual >= 1e-4
    assert "FAIL" in report.summary()


def test_example4_closed_forms():
    E, A = example4()
    f = ExprVector(["0", "0", "sin(t)", "0", "0", "0", "0", "0"])
    chain = run_deflation(E, A, f)
    coords = list(chain.reduced_coordinates())
    assert sorted(coords) == [6, 7]
    x0 = {6: 0.25, 7: -0.5}
    traj = solve_chain(chain, 0.0, 1.0, [x0[i] for i in coords], 1000, 101)
    t, x = traj.times, traj.states
    expected = {
        0: -np.cos(t),
        1: np.cos(t),
        2: np.cos(t),
        3: np.sin(t),
        4: np.sin(t),
        5: np.sin(t),
        6: x0[6] + 1 - np.cos(t),
        7: x0[7] + np.sin(t),
    }
    for i, col in expected.items():
        assert np.abs(x[:, i] - col).max() <= 1e-8, i
    assert residual_check(E, A, f, traj, 1e-8).passed


def test_zero_step_identity():
    chain = run_deflation(np.eye(2), np.zeros((2, 2)), ExprVector(["0", "0"]))
    states = np.array([[1.0, 2.0], [3.0, 4.0]])
    traj = back_substitute(chain, ReducedTrajectory(np.array([0.0, 1.0]), states))
    assert np.array_equal(traj.states, states)


def test_back_substitute_size_mismatch():
    chain = exp_chain()
    with pytest.raises(ValueError):
        back_substitute(chain, ReducedTrajectory(np.array([0.0, 1.0]), np.zeros((2, 2))))


def test_zero_problem_residual():
    traj = SolutionTrajectory(np.linspace(0, 1, 5), np.zeros((5, 2)))
    report = residual_check(np.eye(2), np.eye(2), lambda t: np.zeros(2), traj, 1e-12)
    assert report.max_residual == 0.0 and report.passed


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        SolutionTrajectory([0.0, 0.0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        SolutionTrajectory([0.0, 1.0], np.zeros((3, 1)))


def test_fd_weights():
    assert np.allclose(fd_weights(np.array([-1.0, 0.0, 1.0]), 0.0), [-0.5, 0.0, 0.5])
    assert np.allclose(fd_weights(np.array([-1.0, 0.0, 1.0]), 0.0, 2), [1.0, -2.0, 1.0])
    t = np.linspace(0, 1, 41)
    d = sampled_derivative(t, np.sin(t)[:, None])
    assert np.abs(d[:, 0] - np.cos(t)).max() <= 1e-10
