"""Terminal integration, back-substitution and residual verification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .deflate_ltv import LtvChain


@dataclass
class ReducedTrajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), terminal size)


@dataclass
class SolutionTrajectory:
    times: np.ndarray
    states: np.ndarray
    xdot: np.ndarray | None = None
    residual_norms: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] != self.times.size:
            raise ValueError("states must have one row per time")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass
class ResidualReport:
    times: np.ndarray
    residuals: np.ndarray
    tol: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"max residual = {self.max_residual:.3e} ({verdict} @ {self.tol:g})"


def _grid(t0: float, t1: float, steps: int) -> np.ndarray:
    if steps < 2:
        raise ValueError("need at least 2 integration steps")
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    return np.linspace(t0, t1, steps + 1)


def integrate_terminal(chain, t0: float, t1: float, x0_reduced, steps: int) -> ReducedTrajectory:
    """Fixed-step RK4 on the terminal ODE ``E_k u' = A_k u + f_k``.

    An empty terminal system yields zero-width states; a terminal ``E_k = 0``
    is solved algebraically at each grid time and ``x0_reduced`` is ignored.
    """
    times = _grid(t0, t1, steps)
    m = chain.terminal_size
    if m == 0:
        return ReducedTrajectory(times, np.zeros((times.size, 0)))
    if isinstance(chain, LtvChain):
        return _integrate_ltv(chain, times, x0_reduced)
    Ek, Ak, fk = chain.terminal
    if not chain.terminal_is_ode:
        u = -np.linalg.solve(Ak, fk(times).T).T
        return ReducedTrajectory(times, u)
    x0 = np.asarray(x0_reduced, dtype=float)
    if x0.shape != (m,):
        raise ValueError(f"x0 must have {m} entries for the terminal system")
    h = times[1] - times[0]
    stage_t = np.stack([times[:-1], times[:-1] + 0.5 * h, times[:-1] + h], axis=1)
    F = fk(stage_t.ravel()).reshape(steps, 3, m)
    B = np.linalg.solve(Ek, Ak)
    G = np.linalg.solve(Ek, F.reshape(-1, m).T).T.reshape(steps, 3, m)
    return ReducedTrajectory(times, _kernels.rk4_linear(B, x0, G, h))


def _ltv_rhs(chain: LtvChain) -> Callable:
    def rhs(t, u):
        Ek, Ak, fk = chain.terminal(t)
        return np.linalg.solve(Ek, Ak @ u + fk)

    return rhs


def _rk4_step(rhs, t, u, h):
    k1 = rhs(t, u)
    k2 = rhs(t + 0.5 * h, u + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, u + 0.5 * h * k2)
    k4 = rhs(t + h, u + h * k3)
    return u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate_ltv(chain: LtvChain, times: np.ndarray, x0_reduced) -> ReducedTrajectory:
    m = chain.terminal_size
    if not chain.terminal_is_ode:
        rows = []
        for t in times:
            _, Ak, fk = chain.terminal(t)
            rows.append(-np.linalg.solve(Ak, fk))
        return ReducedTrajectory(times, np.array(rows))
    u = np.asarray(x0_reduced, dtype=float)
    if u.shape != (m,):
        raise ValueError(f"x0 must have {m} entries for the terminal system")
    rhs = _ltv_rhs(chain)
    out = np.empty((times.size, m))
    out[0] = u
    for i in range(times.size - 1):
        u = _rk4_step(rhs, times[i], u, times[i + 1] - times[i])
        out[i + 1] = u
    return ReducedTrajectory(times, out)


def back_substitute(chain, reduced: ReducedTrajectory, fd_step: float = 1e-5) -> SolutionTrajectory:
    """Recover the full state by walking the constraints from the last step to the first.

    For constant-coefficient chains ``x'`` is exact (terminal right-hand side
    plus differentiated constraints). For time-varying chains it is a central
    difference with step ``fd_step``, taking one RK4 micro-step either way.
    """
    if reduced.states.shape[1] != chain.terminal_size:
        raise ValueError("reduced trajectory does not match the terminal system size")
    if isinstance(chain, LtvChain):
        return _back_substitute_ltv(chain, reduced, fd_step)
    times, U = reduced.times, reduced.states
    Ek, Ak, fk = chain.terminal
    m = chain.terminal_size
    if m == 0:
        Ud = np.zeros_like(U)
    elif chain.terminal_is_ode:
        Ud = np.linalg.solve(Ek, Ak @ U.T + fk(times).T).T
    else:
        Ud = -np.linalg.solve(Ak, fk.derivative()(times).T).T
    for step in reversed(chain.steps):
        H = step.h(times)
        Hd = step.h.derivative()(times)
        V = step.solve_v(U, H)
        Vd = step.solve_v(Ud, Hd)
        U, Ud = step.assemble(U, V), step.assemble(Ud, Vd)
    return SolutionTrajectory(times, U, Ud)


def _back_substitute_ltv(chain: LtvChain, reduced: ReducedTrajectory, h: float) -> SolutionTrajectory:
    times, U = reduced.times, reduced.states
    ode = chain.terminal_is_ode
    rhs = _ltv_rhs(chain) if ode else None
    X = np.empty((times.size, chain.n))
    Xd = np.empty_like(X)

    def state(t, u):
        return chain.back_substitute(u, t)

    def terminal_alg(t):
        if chain.terminal_size == 0:
            return np.zeros(0)
        _, Ak, fk = chain.terminal(t)
        return -np.linalg.solve(Ak, fk)

    for i, (t, u) in enumerate(zip(times, U)):
        X[i] = state(t, u)
        if ode:
            up, um = _rk4_step(rhs, t, u, h), _rk4_step(rhs, t, u, -h)
        else:
            up, um = terminal_alg(t + h), terminal_alg(t - h)
        Xd[i] = (state(t + h, up) - state(t - h, um)) / (2 * h)
    return SolutionTrajectory(times, X, Xd)


def fd_weights(nodes: np.ndarray, x0: float, m: int = 1) -> np.ndarray:
    """Finite-difference weights for the ``m``-th derivative at ``x0`` (Fornberg's recursion)."""
    n = len(nodes)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5 = 1.0, c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def sampled_derivative(times: np.ndarray, states: np.ndarray, width: int = 9) -> np.ndarray:
    """High-order finite-difference ``x'`` from samples alone (centred where possible)."""
    T = times.size
    if T < 2:
        raise ValueError("need at least two samples to differentiate")
    w = min(width, T)
    out = np.empty_like(states)
    for i in range(T):
        lo = min(max(0, i - w // 2), T - w)
        idx = slice(lo, lo + w)
        out[i] = fd_weights(times[idx], times[i]) @ states[idx]
    return out


def _as_fn(M) -> Callable:
    if callable(M):
        return M
    arr = np.asarray(M, dtype=float)
    return lambda t: arr


def residual_check(E, A, f, traj: SolutionTrajectory, tol: float) -> ResidualReport:
    """``max_t ||E x' - A x - f|| / (1 + ||x||)`` over the trajectory samples.

    ``E``/``A`` are matrices or callables of ``t``; ``f`` is a callable of
    ``t``. When the trajectory carries no ``x'`` it is estimated from the
    samples by high-order finite differences.
    """
    Efn, Afn, ffn = _as_fn(E), _as_fn(A), f
    xdot = traj.xdot if traj.xdot is not None else sampled_derivative(traj.times, traj.states)
    res = np.empty(traj.times.size)
    for i, t in enumerate(traj.times):
        x = traj.states[i]
        r = Efn(t) @ xdot[i] - Afn(t) @ x - np.asarray(ffn(t), dtype=float)
        res[i] = np.linalg.norm(r) / (1.0 + np.linalg.norm(x))
    traj.residual_norms = res
    return ResidualReport(traj.times, res, tol)


def sample_indices(steps: int, samples: int) -> tuple[int, np.ndarray]:
    """Integration step count refined so every output sample lies on the grid."""
    if samples < 2:
        raise ValueError("need at least 2 samples")
    per = max(1, -(-steps // (samples - 1)))
    total = per * (samples - 1)
    return total, np.arange(0, total + 1, per)


def solve_chain(chain, t0: float, t1: float, x0_reduced, steps: int, samples: int) -> SolutionTrajectory:
    """Integrate, subsample to ``samples`` equispaced times, and back-substitute."""
    total, idx = sample_indices(steps, samples)
    red = integrate_terminal(chain, t0, t1, x0_reduced, total)
    return back_substitute(chain, ReducedTrajectory(red.times[idx], red.states[idx]))
