"""Deflation of constant-coefficient DAEs ``E x' = A x + f(t)``.

Every forcing term that appears along the chain is a finite combination
``sum_d C_d f^(d)(t)`` of derivatives of the original forcing with constant
matrices, so it is carried exactly as a :class:`ForcingCombo`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NotRegular
from .expr import ExprVector
from .linalg import (
    DEFAULT_TOL,
    PencilSplit,
    find_regular_lambda,
    kronecker_index_oracle,
    numerical_rank,
    rcond,
    split_pencil,
)


@dataclass(frozen=True)
class ForcingCombo:
    """``value(t) = sum_d coeffs[d] @ f^(d)(t)``.

    ``coeffs`` has shape ``(max_order + 1, rows, n)`` where ``n = len(f)``.
    """

    coeffs: np.ndarray
    f: ExprVector

    @classmethod
    def identity(cls, f: ExprVector) -> "ForcingCombo":
        n = len(f)
        return cls(np.eye(n)[None], f)

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def max_order(self) -> int:
        return self.coeffs.shape[0] - 1

    def terms(self) -> list[tuple[int, np.ndarray]]:
        """Non-zero ``(order, matrix)`` pairs."""
        return [(d, c) for d, c in enumerate(self.coeffs) if np.any(c != 0)]

    def left(self, X: np.ndarray) -> "ForcingCombo":
        X = np.atleast_2d(X)
        return ForcingCombo(np.einsum("ij,djk->dik", X, self.coeffs), self.f)

    def take_rows(self, sl) -> "ForcingCombo":
        return ForcingCombo(self.coeffs[:, sl], self.f)

    def derivative(self) -> "ForcingCombo":
        pad = np.zeros((1,) + self.coeffs.shape[1:])
        return ForcingCombo(np.concatenate([pad, self.coeffs]), self.f)

    def _padded(self, order: int) -> np.ndarray:
        extra = order - self.max_order
        if extra <= 0:
            return self.coeffs
        pad = np.zeros((extra,) + self.coeffs.shape[1:])
        return np.concatenate([self.coeffs, pad])

    def __add__(self, other: "ForcingCombo") -> "ForcingCombo":
        order = max(self.max_order, other.max_order)
        return ForcingCombo(self._padded(order) + other._padded(order), self.f)

    def __neg__(self) -> "ForcingCombo":
        return ForcingCombo(-self.coeffs, self.f)

    def __sub__(self, other: "ForcingCombo") -> "ForcingCombo":
        return self + (-other)

    def __call__(self, t) -> np.ndarray:
        """Value at scalar ``t`` (shape ``(rows,)``) or times array (``(len(t), rows)``)."""
        derivs = self.f.derivatives(t, self.max_order)
        if np.ndim(t) == 0:
            return np.einsum("dij,dj->i", self.coeffs, derivs)
        return np.einsum("dij,dtj->ti", self.coeffs, derivs)


class ConstraintRecord:
    """Shared behaviour of a stored constraint ``0 = M u + N v + h(t)``.

    Subclasses provide ``perm``, ``M``, ``N``, ``h`` and ``size_out``.
    """

    def solve_v(self, u: np.ndarray, hval: np.ndarray) -> np.ndarray:
        """Algebraic variables from ``v = -N^{-1}(M u + h)``; ``u`` may be batched as rows."""
        rhs = u @ self.M.T + hval
        return -np.linalg.solve(self.N, rhs.T).T

    def assemble(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``x`` from ``P^{-1} x = (u, v)``; works on single vectors or row batches."""
        uv = np.concatenate([u, v], axis=-1)
        x = np.empty_like(uv)
        x[..., self.perm] = uv
        return x

    def constraint_residual(self, x: np.ndarray, t) -> np.ndarray:
        """``M u + N v + h(t)`` for this level's state ``x`` (before permutation)."""
        xp = x[..., self.perm]
        r = self.size_out
        return xp[..., :r] @ self.M.T + xp[..., r:] @ self.N.T + self.h(t)


@dataclass(frozen=True)
class DeflationStep(ConstraintRecord):
    """One deflation record with its constraint ``0 = M u + N v + h(t)``."""

    split: PencilSplit
    h: ForcingCombo
    size_in: int
    size_out: int

    @property
    def perm(self) -> np.ndarray:
        return self.split.perm

    @property
    def M(self) -> np.ndarray:
        return self.split.M

    @property
    def N(self) -> np.ndarray:
        return self.split.N

    @property
    def rcond_N(self) -> float:
        return self.split.rcond_N


@dataclass(frozen=True)
class StoredStep(ConstraintRecord):
    """A constraint record rebuilt from a chain file, without the full split."""

    perm: np.ndarray
    M: np.ndarray
    N: np.ndarray
    h: ForcingCombo
    size_in: int
    size_out: int
    rcond_N: float = 1.0


@dataclass(frozen=True)
class DeflationChain:
    """Steps of the deflation algorithm plus the terminal system.

    ``pencils[j]`` is ``(E_j, A_j)``; the last entry is the terminal pencil.
    ``ranks`` is ``[n, rank E_0, ..., rank E_k]``.
    """

    steps: list[DeflationStep]
    pencils: list[tuple[np.ndarray, np.ndarray]]
    forcings: list[ForcingCombo]
    ranks: list[int]
    tol: float = DEFAULT_TOL
    backend: str = "svd"
    scales: list[tuple[float, float]] = field(default_factory=list)

    @property
    def index(self) -> int:
        return len(self.steps)

    @property
    def n(self) -> int:
        return self.ranks[0]

    @property
    def terminal(self) -> tuple[np.ndarray, np.ndarray, ForcingCombo]:
        E, A = self.pencils[-1]
        return E, A, self.forcings[-1]

    @property
    def terminal_size(self) -> int:
        return self.pencils[-1][0].shape[0]

    @property
    def terminal_is_ode(self) -> bool:
        """True when the terminal ``E_k`` is invertible and non-empty."""
        return self.terminal_size > 0 and self.ranks[-1] == self.terminal_size

    @property
    def constraint_count(self) -> int:
        extra = 0 if self.terminal_is_ode else self.terminal_size
        return sum(s.size_in - s.size_out for s in self.steps) + extra

    def reduced_coordinates(self) -> np.ndarray:
        """Original indices of the terminal variables ``x^k``."""
        idx = np.arange(self.n)
        for step in self.steps:
            idx = idx[step.perm[: step.size_out]]
        return idx

    def constraint_residuals(self, x: np.ndarray, t) -> list[np.ndarray]:
        """Every stored constraint evaluated on the level states derived from full ``x``."""
        out = []
        xj = np.asarray(x, dtype=float)
        for step in self.steps:
            out.append(step.constraint_residual(xj, t))
            xj = xj[..., step.perm[: step.size_out]]
        return out


def deflate_step(
    E: np.ndarray,
    A: np.ndarray,
    f: ForcingCombo,
    tol: float = DEFAULT_TOL,
    backend: str = "svd",
    e_atol: float = 0.0,
    a_atol: float = 0.0,
):
    """One deflation step.

    Returns ``(step, E1, A1, f1)`` with ``E1 = S - T N^{-1} M``,
    ``A1 = K - L N^{-1} M`` and ``f1 = T N^{-1} h' - L N^{-1} h + g``.
    """
    split = split_pencil(E, A, tol, backend, e_atol, a_atol)
    n, r = E.shape[0], split.r
    if r == 0 or r == n:
        raise ValueError("deflate_step needs a singular, non-zero E")
    uf = f.left(split.factor.solve(np.eye(n)))
    g, h = uf.take_rows(slice(0, r)), uf.take_rows(slice(r, n))
    X = np.linalg.solve(split.N, split.M)
    TNi = np.linalg.solve(split.N.T, split.T.T).T
    LNi = np.linalg.solve(split.N.T, split.L.T).T
    E1 = split.S - split.T @ X
    A1 = split.K - split.L @ X
    f1 = h.derivative().left(TNi) - h.left(LNi) + g
    step = DeflationStep(split=split, h=h, size_in=n, size_out=r)
    return step, E1, A1, f1


def _scales(split: PencilSplit) -> tuple[float, float]:
    """Magnitudes of the terms cancelled in ``E1`` and ``A1``; rounding noise is relative to these."""
    X = np.linalg.solve(split.N, split.M)
    nx = np.linalg.norm(X, 2) if X.size else 0.0
    es = np.linalg.norm(split.S, 2) + np.linalg.norm(split.T, 2) * nx if split.S.size else 0.0
    as_ = np.linalg.norm(split.K, 2) + np.linalg.norm(split.L, 2) * nx if split.K.size else 0.0
    return es, as_


def run_deflation(
    E,
    A,
    f: ExprVector | Sequence | None = None,
    tol: float = DEFAULT_TOL,
    backend: str = "svd",
) -> DeflationChain:
    """Repeat :func:`deflate_step` until ``E_j`` is invertible or zero."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = E.shape[0]
    if f is None:
        f = ExprVector(["0"] * n)
    elif not isinstance(f, ExprVector):
        f = ExprVector(f)
    if len(f) != n:
        raise ValueError(f"forcing has {len(f)} entries, expected {n}")
    fc = ForcingCombo.identity(f)
    e_base = np.linalg.norm(E, 2) if E.size else 0.0
    a_base = np.linalg.norm(A, 2) if A.size else 0.0
    e_scale, a_scale = e_base, a_base
    steps, pencils, forcings, ranks, scales = [], [(E, A)], [fc], [n], [(e_scale, a_scale)]
    Ej, Aj = E, A
    while True:
        size = Ej.shape[0]
        r = numerical_rank(Ej, tol, backend, tol * e_scale)
        ranks.append(r)
        if size == 0 or r == 0 or r == size:
            break
        j = len(steps)
        try:
            step, Ej, Aj, fc = deflate_step(Ej, Aj, fc, tol, backend, tol * e_scale, tol * a_scale)
        except NotRegular as exc:
            raise exc.at(step=j) from None
        # noise is relative to the cancelled terms, but never below the input's scale
        e_scale, a_scale = _scales(step.split)
        e_scale, a_scale = max(e_scale, e_base), max(a_scale, a_base)
        steps.append(step)
        pencils.append((Ej, Aj))
        forcings.append(fc)
        scales.append((e_scale, a_scale))
    return DeflationChain(steps, pencils, forcings, ranks, tol, backend, scales)


@dataclass
class ChainReport:
    """Outcome of :func:`verify_chain_invariants`; failures are collected, not raised."""

    index_sequence: list[int | None] = field(default_factory=list)
    rank_sequence: dict[str, list[int]] = field(default_factory=dict)
    a_rank_sequence: dict[str, list[int]] = field(default_factory=dict)
    lambdas: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def verify_chain_invariants(chain: DeflationChain, E=None, A=None) -> ChainReport:
    """Check rank choice-independence, regularity, and the index drop per step."""
    tol = chain.tol
    if E is None or A is None:
        E, A = chain.pencils[0]
    E = np.atleast_2d(np.asarray(E, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    rep = ChainReport()
    if not (np.allclose(E, chain.pencils[0][0]) and np.allclose(A, chain.pencils[0][1])):
        rep.failures.append("chain was not built from the given (E, A)")

    for backend in ("svd", "lu"):
        rs, ars = [], []
        for (Ej, Aj), (es, as_) in zip(chain.pencils, chain.scales):
            rs.append(numerical_rank(Ej, tol, backend, tol * es))
            ars.append(numerical_rank(Aj, tol, backend, tol * as_))
        rep.rank_sequence[backend] = rs
        rep.a_rank_sequence[backend] = ars
    if rep.rank_sequence["svd"] != rep.rank_sequence["lu"]:
        rep.failures.append(f"rank(E_j) differs between backends: {rep.rank_sequence}")
    if rep.a_rank_sequence["svd"] != rep.a_rank_sequence["lu"]:
        rep.failures.append(f"rank(A_j) differs between backends: {rep.a_rank_sequence}")

    indices: list[int | None] = []
    for j, ((Ej, Aj), (es, _)) in enumerate(zip(chain.pencils, chain.scales)):
        nonzero = Ej.size > 0 and numerical_rank(Ej, tol, "svd", tol * es) > 0
        if not nonzero:
            indices.append(None)
            continue
        try:
            indices.append(kronecker_index_oracle(Ej, Aj, tol))
        except NotRegular as exc:
            rep.failures.append(f"pencil {j} not regular: {exc}")
            indices.append(None)
    rep.index_sequence = indices

    for j in range(chain.index):
        (Ej, Aj), (E1, A1) = chain.pencils[j], chain.pencils[j + 1]
        try:
            lam = find_regular_lambda(Ej, Aj, tol)
        except NotRegular:
            rep.failures.append(f"step {j}: no regular lambda for (E_{j}, A_{j})")
            continue
        rep.lambdas.append(lam)
        if E1.size and rcond(lam * E1 + A1) <= tol:
            rep.failures.append(f"step {j}: lambda={lam:g} makes lambda E_{j + 1} + A_{j + 1} singular")
        if indices[j] is not None and indices[j + 1] is not None and indices[j + 1] != indices[j] - 1:
            rep.failures.append(f"step {j}: index {indices[j]} -> {indices[j + 1]}, expected a drop of 1")
        if indices[j] is not None and indices[j] > 1 and chain.ranks[j + 2] >= chain.ranks[j + 1]:
            rep.failures.append(f"step {j}: rank did not decrease ({chain.ranks[j + 1]} -> {chain.ranks[j + 2]})")

    if chain.index and indices[0] is not None:
        bound = min(chain.ranks[1], indices[0])
        if chain.index > bound:
            rep.failures.append(f"{chain.index} steps exceed min(rank E, index) = {bound}")
    return rep
