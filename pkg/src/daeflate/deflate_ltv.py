"""Deflation of time-varying DAEs ``E(t) x' = A(t) x + f(t)``.

The pivot pattern of each step (pivot rows/columns of ``E`` and the column
permutation that isolates ``N``) is chosen at a base point ``t0`` and then
kept fixed. With a fixed pattern the factor

    U(t)^{-1} = [[I, 0], [-E21 E11^{-1}, I]] (row permutation)

is a rational function of the entries of ``E(t)``, so everything the step
formulas need (including the derivatives of ``M``, ``N`` and ``h``) is
computed exactly in jet arithmetic at any evaluation time. Each step
consumes one jet order.

Geometric regularity can only be checked at finitely many probe points; a
rank change or a singular pivot block at a probe raises
:class:`~daeflate.errors.RankDrop` or :class:`~daeflate.errors.PivotBreakdown`.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EvaluationError, NotRegular, PivotBreakdown, RankDrop
from .expr import ExprVector
from .jets import MatrixJet, SmoothMatrix
from .linalg import (
    DEFAULT_TOL,
    PencilSplit,
    RankFactorization,
    block_lu_u,
    lu_pattern,
    numerical_rank,
    rcond,
    select_columns,
)


@dataclass(frozen=True)
class LtvDeflationStep:
    """Fixed pivot pattern of one time-varying deflation step.

    ``rows[:r]``/``cols[:r]`` are the pivot rows/columns of ``E`` at the base
    point; ``perm`` orders the variables as ``(u, v)``.
    """

    rows: np.ndarray
    cols: np.ndarray
    perm: np.ndarray
    size_in: int
    size_out: int
    rcond_N: float = 1.0

    @property
    def r(self) -> int:
        return self.size_out


@dataclass
class Level:
    """Jets of ``(E_j, A_j, f_j)`` at one time, plus the step blocks if any."""

    E: MatrixJet
    A: MatrixJet
    f: MatrixJet
    M: MatrixJet | None = None
    N: MatrixJet | None = None
    h: MatrixJet | None = None


def _blocks(E: MatrixJet, A: MatrixJet, f: MatrixJet, step: LtvDeflationStep):
    r, rows, cols = step.r, step.rows, step.cols
    prow, rest, pcol = rows[:r], rows[r:], cols[:r]
    all_cols = np.arange(E.shape[1])
    try:
        W = E.take(rest, pcol) @ E.take(prow, pcol).inverse()
    except EvaluationError:
        raise PivotBreakdown("pivot block of E is singular") from None

    def uinv(X: MatrixJet):
        cols_x = np.arange(X.shape[1])
        top = X.take(prow, cols_x)
        return top, X.take(rest, cols_x) - W @ top

    F = E.take(prow, all_cols)
    At, Ab = uinv(A)
    g, h = uinv(f)
    u, v = step.perm[:r], step.perm[r:]
    return F[:, u], F[:, v], At[:, u], At[:, v], Ab[:, u], Ab[:, v], g, h


def ltv_deflate_step(level: Level, step: LtvDeflationStep) -> Level:
    """Advance ``(E_j, A_j, f_j)`` jets of order ``d`` to order ``d - 1``.

    ``E1 = S - T N^-1 M``,
    ``A1 = K - L N^-1 M + T N^-1 (M' - N' N^-1 M)``,
    ``f1 = T N^-1 (h' - N' N^-1 h) - L N^-1 h + g``.
    The constraint blocks ``M``, ``N``, ``h`` are stored on ``level``.
    """
    E, A, f = level.E, level.A, level.f
    d = E.order
    S, T, K, L, M, N, g, h = _blocks(E, A, f, step)
    level.M, level.N, level.h = M, N, h
    try:
        Ninv = N.inverse()
    except EvaluationError:
        raise PivotBreakdown("N block is singular") from None
    X = Ninv @ M
    Y = Ninv @ h
    lo = d - 1
    dM, dN, dh = M.derivative(), N.derivative(), h.derivative()
    Ninv_lo, T_lo, X_lo, Y_lo = Ninv.truncate(lo), T.truncate(lo), X.truncate(lo), Y.truncate(lo)
    E1 = (S - T @ X).truncate(lo)
    A1 = (K - L @ X).truncate(lo) + T_lo @ (Ninv_lo @ (dM - dN @ X_lo))
    f1 = T_lo @ (Ninv_lo @ (dh - dN @ Y_lo)) - (L @ Y).truncate(lo) + g.truncate(lo)
    return Level(E1, A1, f1)


@dataclass
class LtvProblem:
    """Time-varying coefficients as expression matrices plus the forcing."""

    E: SmoothMatrix
    A: SmoothMatrix
    f: ExprVector
    _fmat: SmoothMatrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.E.rows

    @property
    def fmat(self) -> SmoothMatrix:
        if self._fmat is None:
            self._fmat = SmoothMatrix([[e] for e in self.f.exprs], self.f.params)
        return self._fmat

    def base(self, t: float, order: int) -> Level:
        return Level(self.E.jet(t, order), self.A.jet(t, order), self.fmat.jet(t, order))


@dataclass
class LtvChain:
    """Time-varying deflation chain; evaluators are closures over the patterns."""

    problem: LtvProblem
    steps: list[LtvDeflationStep]
    ranks: list[int]
    t0: float
    probes: list[float]
    tol: float = DEFAULT_TOL
    rconds: list[float] = field(default_factory=list)
    _memo: OrderedDict = field(default_factory=OrderedDict, init=False, repr=False, compare=False)

    MEMO_SIZE = 32

    @property
    def index(self) -> int:
        return len(self.steps)

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def terminal_size(self) -> int:
        return self.steps[-1].size_out if self.steps else self.n

    @property
    def terminal_is_ode(self) -> bool:
        return self.terminal_size > 0 and self.ranks[-1] == self.terminal_size

    @property
    def constraint_count(self) -> int:
        extra = 0 if self.terminal_is_ode else self.terminal_size
        return sum(s.size_in - s.size_out for s in self.steps) + extra

    def reduced_coordinates(self) -> np.ndarray:
        idx = np.arange(self.n)
        for step in self.steps:
            idx = idx[step.perm[: step.size_out]]
        return idx

    def levels(self, t: float, upto: int | None = None, order: int = 0) -> list[Level]:
        """Jets at ``t`` for levels ``0..upto`` with level ``upto`` at ``order``.

        The base jets carry ``upto + order`` derivatives; no more are ever
        requested from the expressions.
        """
        upto = self.index if upto is None else upto
        if upto > self.index:
            raise ValueError(f"chain has only {self.index} steps")
        # integrators revisit the same times (RK4 stages, difference stencils)
        key = (float(t), upto, order)
        if key in self._memo:
            self._memo.move_to_end(key)
            return self._memo[key]
        lv = self.problem.base(t, upto + order)
        out = [lv]
        for step in self.steps[:upto]:
            lv = ltv_deflate_step(lv, step)
            out.append(lv)
        self._memo[key] = out
        if len(self._memo) > self.MEMO_SIZE:
            self._memo.popitem(last=False)
        return out

    def terminal(self, t: float):
        """``(E_k, A_k, f_k)`` values at ``t``."""
        lv = self.levels(t)[-1]
        return lv.E.value, lv.A.value, lv.f.value[:, 0]

    def back_substitute(self, u: np.ndarray, t: float, levels: list[Level] | None = None) -> np.ndarray:
        """Full state from terminal variables ``u`` at time ``t``."""
        levels = levels or self.levels(t)
        x = np.asarray(u, dtype=float)
        for step, lv in zip(reversed(self.steps), reversed(levels[:-1])):
            M, N, h = lv.M.value, lv.N.value, lv.h.value[:, 0]
            v = -np.linalg.solve(N, M @ x + h) if N.size else np.zeros(0)
            full = np.empty(step.size_in)
            full[step.perm] = np.concatenate([x, v])
            x = full
        return x

    def constraint_residuals(self, x: np.ndarray, t: float) -> list[np.ndarray]:
        """``M_j u + N_j v + h_j`` at ``t`` for the level states derived from full ``x``."""
        levels = self.levels(t)
        out = []
        xj = np.asarray(x, dtype=float)
        for step, lv in zip(self.steps, levels):
            xp = xj[step.perm]
            u, v = xp[: step.r], xp[step.r :]
            out.append(lv.M.value @ u + lv.N.value @ v + lv.h.value[:, 0])
            xj = u
        return out


def _choose_pattern(E0: np.ndarray, A0: np.ndarray, tol: float, e_atol: float) -> LtvDeflationStep:
    n = E0.shape[0]
    r, rows, cols = lu_pattern(E0, tol, e_atol)
    U = block_lu_u(E0, r, rows, cols)
    At = np.linalg.solve(U, A0)
    A2 = At[r:]
    atol = tol * np.linalg.norm(At, 2) if At.size else 0.0
    v = select_columns(A2, tol, atol)
    u = np.setdiff1d(np.arange(n), v)
    perm = np.concatenate([u, v]).astype(int)
    return LtvDeflationStep(rows, cols, perm, n, r, rcond(A2[:, v]))


def _validate(E: np.ndarray, A: np.ndarray, step: LtvDeflationStep, t: float, tol: float, e_atol: float) -> None:
    r = step.r
    rank = numerical_rank(E, tol, "lu", e_atol)
    if rank != r:
        raise RankDrop(f"rank of E changes from {r} to {rank}", t=t)
    prow, pcol = step.rows[:r], step.cols[:r]
    if rcond(E[np.ix_(prow, pcol)]) <= tol:
        raise PivotBreakdown("pivot block of E is near-singular", t=t)
    U = block_lu_u(E, r, step.rows, step.cols)
    A2 = np.linalg.solve(U, A)[r:]
    N = A2[:, step.perm[r:]]
    if rcond(N) <= tol:
        raise PivotBreakdown("N block is near-singular", t=t)


def default_probes(t_lo: float, t_hi: float, count: int = 11) -> list[float]:
    return list(np.linspace(t_lo, t_hi, count))


def check_geometric_regularity(
    E: SmoothMatrix,
    A: SmoothMatrix,
    t0: float,
    probes: Sequence[float],
    tol: float = DEFAULT_TOL,
) -> PencilSplit:
    """Choose the split of ``(E(t0), A(t0))`` and check it at every probe.

    Returns the split at ``t0``. Raises :class:`RankDrop` or
    :class:`PivotBreakdown` at the first failing probe.
    """
    E0, A0 = E.value(t0), A.value(t0)
    e_atol = tol * np.linalg.norm(E0, 2)
    step = _choose_pattern(E0, A0, tol, e_atol)
    for p in probes:
        Ep = E.value(p)
        _validate(Ep, A.value(p), step, p, tol, tol * max(np.linalg.norm(Ep, 2), np.linalg.norm(E0, 2)))
    r = step.r
    U = block_lu_u(E0, r, step.rows, step.cols)
    At = np.linalg.solve(U, A0)
    F = E0[step.rows[:r]]
    u, v = step.perm[:r], step.perm[r:]
    fac = RankFactorization(U, F, r, "lu", step.rows, step.cols)
    return PencilSplit(fac, step.perm, F[:, u], F[:, v], At[:r][:, u], At[:r][:, v], At[r:][:, u], At[r:][:, v], step.rcond_N)


def run_ltv_deflation(
    E: SmoothMatrix,
    A: SmoothMatrix,
    f: ExprVector,
    t0: float,
    probes: Sequence[float] = (),
    tol: float = DEFAULT_TOL,
) -> LtvChain:
    """Deflate until ``E_j(t0)`` is invertible or zero, validating each level at the probes.

    The number of steps is the differentiation index under the standing
    geometric-regularity hypothesis.
    """
    problem = LtvProblem(E, A, f)
    n = problem.n
    probes = [float(p) for p in probes]
    chain = LtvChain(problem, [], [n], float(t0), probes, tol)
    e_ref = None
    while True:
        j = chain.index
        try:
            lv0 = chain.levels(t0, upto=j, order=0)[-1]
        except (EvaluationError, NotRegular) as exc:
            raise _annotate(exc, j, t0) from None
        Ej, Aj = lv0.E.value, lv0.A.value
        size = Ej.shape[0]
        if e_ref is None:
            e_base = e_ref = np.linalg.norm(Ej, 2) if Ej.size else 0.0
        e_atol = tol * e_ref
        r = numerical_rank(Ej, tol, "lu", e_atol) if size else 0
        if size == 0 or r == 0 or r == size:
            chain.ranks.append(r)
            _check_terminal(chain, r, size, tol, e_atol)
            return chain
        try:
            step = _choose_pattern(Ej, Aj, tol, e_atol)
        except NotRegular as exc:
            raise exc.at(step=j, t=t0) from None
        for p in probes:
            try:
                lp = chain.levels(p, upto=j, order=0)[-1]
                _validate(lp.E.value, lp.A.value, step, p, tol, e_atol)
            except (EvaluationError, NotRegular) as exc:
                raise _annotate(exc, j, p) from None
        chain.steps.append(step)
        chain.ranks.append(r)
        chain.rconds.append(step.rcond_N)
        # scale for the next rank decision: the terms cancelled in E_{j+1}
        lv = chain.levels(t0, upto=j, order=1)[-1]
        S, T, _, _, M, N, _, _ = _blocks(lv.E, lv.A, lv.f, step)
        X = np.linalg.solve(N.value, M.value)
        local = np.linalg.norm(S.value, 2) + (np.linalg.norm(T.value, 2) * np.linalg.norm(X, 2) if X.size else 0.0)
        e_ref = max(local, e_base)


def _annotate(exc: Exception, step: int, t: float) -> NotRegular:
    if isinstance(exc, NotRegular):
        return exc.at(step=step, t=exc.t if exc.t is not None else t)
    return NotRegular(f"evaluation failed: {exc}", step=step, t=t)


def _check_terminal(chain: LtvChain, r: int, size: int, tol: float, e_atol: float) -> None:
    if size == 0:
        return
    for p in chain.probes:
        try:
            Ep = chain.levels(p, order=0)[-1].E.value
        except (EvaluationError, NotRegular) as exc:
            raise _annotate(exc, chain.index, p) from None
        rp = numerical_rank(Ep, tol, "lu", e_atol)
        if rp != r:
            raise RankDrop(f"terminal E changes rank from {r} to {rp}", step=chain.index, t=p)
