import numpy as np
import pytest

from daeflate.expr import ExprVector, parse
from daeflate.jets import SmoothMatrix


def example1():
    E = np.diag([1.0, 1.0, 0.0])
    A = np.array([[0.0, 0, -1], [-1, 0, 0], [0, -1, 0]])
    return E, A


def example3():
    E = np.zeros((5, 5))
    E[0, 1:3] = E[1, 1:3] = 1
    E[2, 3:5] = E[3, 3:5] = 1
    return E, -np.eye(5)


def example4(C=1.0, L=1.0, a=1.0):
    E = np.zeros((8, 8))
    A = np.zeros((8, 8))
    A[0, 0] = A[0, 1] = -1
    A[1, 4], A[1, 5] = -1, 1
    A[2, 3] = -1
    E[3, 7], A[3, 1] = C, 1
    E[4, 6], A[4, 5] = L, 1
    A[5, 0], A[5, 2] = -a, -1
    E[6, 2] = E[6, 6] = 1
    E[7, 3], E[7, 7] = 1, -1
    return E, A


def nilpotent(k):
    return np.eye(k, k, 1), np.eye(k)


def example5(C1, dC1, C2, dC2, L, dL, R1, R2):
    """Circuit with time-varying capacitances; entries are expression strings."""
    z = "0"
    E = [[C1, z, z, z, z], [z, C2, z, z, z], [z, z, L, z, z], [z] * 5, [z] * 5]
    A = [
        [f"-({dC1})", z, z, "1", "-1"],
        [z, f"-({dC2})", "-1", "-1", z],
        [z, "1", f"-({dL})", z, z],
        ["1", "-1", z, R1, z],
        ["1", z, z, z, f"-({R2})"],
    ]
    E = SmoothMatrix([[parse(e) for e in row] for row in E])
    A = SmoothMatrix([[parse(e) for e in row] for row in A])
    return E, A, ExprVector(["0"] * 5)


REGIMES = {
    1: ("1+t^2/10", "t/5", "2+sin(t)", "cos(t)", "1", "0", "1", "1+t/2"),
    2: ("1+t^2/10", "t/5", "2+sin(t)", "cos(t)", "1", "0", "0", "1+t/2"),
    3: ("1+t^2/10", "t/5", "-1-t^2/10", "-t/5", "1", "0", "0", "1"),
}

F1 = ExprVector(["sin(t)", "t^2", "exp(t)"])


def example1_exact(t):
    """Closed form x = (f2 - f3', f3, f1 - f2' + f3'') for f = (sin t, t^2, e^t)."""
    t = np.asarray(t, dtype=float)
    return np.stack([t**2 - np.exp(t), np.exp(t), np.sin(t) - 2 * t + np.exp(t)], axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
