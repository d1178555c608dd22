"""Dense kernels for pencil deflation.

Rank-revealing factorizations of ``E`` (SVD or complete-pivoting LU), the
block split of a pencil ``lambda E + A``, Schur complements, and the
nilpotency-chain index used as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import NotRegular

DEFAULT_TOL = 1e-10
BACKENDS = ("svd", "lu")


@dataclass(frozen=True)
class RankFactorization:
    """``E = U @ vstack([F, 0])`` with ``F`` of full row rank ``r``.

    For the LU backend ``rows``/``cols`` hold the pivot rows and columns of
    ``E`` and ``F`` is just ``E[rows[:r]]``.
    """

    U: np.ndarray
    F: np.ndarray
    r: int
    backend: str = "svd"
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None

    def solve(self, X: np.ndarray) -> np.ndarray:
        """Return ``U^{-1} X``."""
        if self.backend == "svd":
            return self.U.T @ X
        return np.linalg.solve(self.U, X)


def _svd_factorize(E: np.ndarray, tol: float, atol: float) -> RankFactorization:
    m, n = E.shape
    if E.size == 0:
        return RankFactorization(np.eye(m), np.zeros((0, n)), 0)
    W, s, Vt = np.linalg.svd(E)
    thresh = max(tol * s[0], atol)
    r = int(np.sum(s > thresh)) if s[0] > 0 else 0
    F = s[:r, None] * Vt[:r]
    if r:
        # rotate within the row space so F is in row echelon form (U stays
        # orthogonal); this removes the arbitrary order of tied singular values
        G, F = orthogonal_echelon(F, thresh)
        W = W.copy()
        W[:, :r] = W[:, :r] @ G
    return RankFactorization(W, F, r, "svd")


def orthogonal_echelon(F: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """``F = G R`` with ``G`` orthogonal and ``R`` in row echelon form.

    Householder elimination column by column, skipping columns whose
    remaining part is below ``tol``; leading entries are made positive.
    """
    R = np.array(F, dtype=float)
    m, n = R.shape
    G = np.eye(m)
    k = 0
    for j in range(n):
        if k == m:
            break
        x = R[k:, j]
        norm = np.linalg.norm(x)
        if norm <= tol:
            continue
        v = x.copy()
        v[0] += np.copysign(norm, x[0]) if x[0] != 0 else norm
        v /= np.linalg.norm(v)
        R[k:] -= 2.0 * np.outer(v, v @ R[k:])
        G[:, k:] -= 2.0 * np.outer(G[:, k:] @ v, v)
        R[k + 1 :, j] = 0.0
        if R[k, j] < 0:
            R[k] = -R[k]
            G[:, k] = -G[:, k]
        k += 1
    return G, R


def lu_pattern(E: np.ndarray, tol: float, atol: float = 0.0):
    """Pivot rows and columns of ``E`` from complete-pivoting elimination."""
    r, rows, cols = _kernels.full_pivot_lu(np.asarray(E, dtype=float), tol, atol)
    return int(r), np.asarray(rows), np.asarray(cols)


def block_lu_u(E: np.ndarray, r: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``U`` with ``U^{-1} E = [E[rows[:r]]; 0]`` for a rank-``r`` pivot pattern."""
    m = E.shape[0]
    prow, rest, pcol = rows[:r], rows[r:], cols[:r]
    up = np.eye(m)
    if r and len(rest):
        E11 = E[np.ix_(prow, pcol)]
        E21 = E[np.ix_(rest, pcol)]
        up[r:, :r] = np.linalg.solve(E11.T, E21.T).T
    U = np.empty_like(up)
    U[rows] = up
    return U


def _lu_factorize(E: np.ndarray, tol: float, atol: float) -> RankFactorization:
    m, n = E.shape
    if E.size == 0:
        return RankFactorization(np.eye(m), np.zeros((0, n)), 0, "lu", np.arange(m), np.arange(n))
    r, rows, cols = lu_pattern(E, tol, atol)
    U = block_lu_u(E, r, rows, cols)
    F = E[rows[:r]].copy()
    return RankFactorization(U, F, r, "lu", rows, cols)


def rank_factorize(
    E: np.ndarray, tol: float = DEFAULT_TOL, backend: str = "svd", atol: float = 0.0
) -> RankFactorization:
    """Rank-revealing factorization ``E = U [F; 0]``.

    The SVD backend counts singular values above ``max(tol * sigma_max, atol)``
    and returns an orthogonal ``U``. The LU backend stops complete-pivoting
    elimination when the largest remaining entry falls below
    ``max(tol * |first pivot|, atol)``.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if backend == "svd":
        return _svd_factorize(E, tol, atol)
    if backend == "lu":
        return _lu_factorize(E, tol, atol)
    raise ValueError(f"unknown rank backend {backend!r}; expected one of {BACKENDS}")


def numerical_rank(E: np.ndarray, tol: float = DEFAULT_TOL, backend: str = "svd", atol: float = 0.0) -> int:
    return rank_factorize(E, tol, backend, atol).r


def rcond(X: np.ndarray) -> float:
    """Reciprocal 2-norm condition number; 1 for empty matrices, 0 when singular."""
    if X.size == 0:
        return 1.0
    s = np.linalg.svd(X, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def select_columns(A2: np.ndarray, tol: float, atol: float = 0.0) -> np.ndarray:
    """Pick ``A2.shape[0]`` well-conditioned columns by column-pivoted QR.

    Raises :class:`NotRegular` when ``A2`` is row-rank deficient.
    """
    k, n = A2.shape
    if k == 0:
        return np.zeros(0, dtype=int)
    scale = max(np.linalg.norm(A2, 2), atol)
    _, R, piv = scipy.linalg.qr(A2, pivoting=True, mode="economic")
    if k > n or abs(R[k - 1, k - 1]) <= max(tol * scale, atol):
        raise NotRegular("the pencil is not regular: algebraic rows are rank deficient")
    return np.sort(piv[:k])


@dataclass(frozen=True)
class PencilSplit:
    """Blocks of ``lambda E + A = U [[lambda S + K, lambda T + L], [M, N]] P^{-1}``.

    ``perm`` encodes ``P``: ``P^{-1} x = x[perm]``; the first ``r`` entries
    index the differential variables ``u``, the rest the algebraic ``v``.
    """

    factor: RankFactorization
    perm: np.ndarray
    S: np.ndarray
    T: np.ndarray
    K: np.ndarray
    L: np.ndarray
    M: np.ndarray
    N: np.ndarray
    rcond_N: float = field(default=1.0)

    @property
    def r(self) -> int:
        return self.factor.r

    @property
    def U(self) -> np.ndarray:
        return self.factor.U

    def pinv_matrix(self) -> np.ndarray:
        """The matrix ``P^{-1}``."""
        return np.eye(len(self.perm))[self.perm]

    def reconstruct(self, lam: float) -> np.ndarray:
        top = np.hstack([lam * self.S + self.K, lam * self.T + self.L])
        bottom = np.hstack([self.M, self.N])
        return self.U @ np.vstack([top, bottom]) @ self.pinv_matrix()


def split_pencil(
    E: np.ndarray,
    A: np.ndarray,
    tol: float = DEFAULT_TOL,
    backend: str = "svd",
    e_atol: float = 0.0,
    a_atol: float = 0.0,
) -> PencilSplit:
    """Split ``(E, A)`` so the algebraic block ``N`` is invertible."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = E.shape[0]
    if E.shape != (n, n) or A.shape != (n, n):
        raise ValueError(f"E and A must be square of equal size, got {E.shape} and {A.shape}")
    fac = rank_factorize(E, tol, backend, e_atol)
    r = fac.r
    At = fac.solve(A)
    A2 = At[r:]
    atol = max(a_atol, tol * np.linalg.norm(At, 2)) if At.size else a_atol
    v = select_columns(A2, tol, atol)
    u = np.setdiff1d(np.arange(n), v)
    perm = np.concatenate([u, v]).astype(int)
    F = fac.F
    N = A2[:, v]
    return PencilSplit(
        factor=fac,
        perm=perm,
        S=F[:, u],
        T=F[:, v],
        K=At[:r][:, u],
        L=At[:r][:, v],
        M=A2[:, u],
        N=N,
        rcond_N=rcond(N),
    )


def schur_complement(S: np.ndarray, T: np.ndarray, M: np.ndarray, N: np.ndarray) -> np.ndarray:
    """``S - T N^{-1} M`` with one solve against ``N``."""
    if N.size == 0:
        return np.array(S, dtype=float, copy=True)
    try:
        X = np.linalg.solve(N, M)
    except np.linalg.LinAlgError:
        raise NotRegular("singular N block in Schur complement") from None
    return S - T @ X


def lambda_scan(lam_max: int = 50):
    yield 0.0
    for k in range(1, lam_max + 1):
        yield float(k)
        yield float(-k)


def find_regular_lambda(
    E: np.ndarray, A: np.ndarray, tol: float = DEFAULT_TOL, lam_max: int = 50
) -> float:
    """First ``lambda`` in ``0, 1, -1, 2, -2, ...`` with ``rcond(lambda E + A) > tol``."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    for lam in lambda_scan(lam_max):
        if rcond(lam * E + A) > tol:
            return lam
    raise NotRegular(f"lambda E + A is singular for every |lambda| <= {lam_max}")


def matrix_index(B: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    """Smallest ``k >= 0`` with ``rank(B^k) == rank(B^{k+1})``.

    Powers are never formed: ``Im(B^{k+1}) = B Im(B^k)`` is tracked with an
    orthonormal basis, and ranks are cut at ``tol * ||B||`` so a range that
    collapses to rounding noise counts as zero.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = B.shape[0]
    if n == 0:
        return 0
    atol = tol * np.linalg.norm(B, 2)
    Q = np.eye(n)
    prev = n
    for k in range(n + 1):
        fac = rank_factorize(B @ Q, tol, "svd", atol)
        r = fac.r
        if r == prev:
            return k
        prev = r
        Q = fac.U[:, :r]
    return n


def kronecker_index_oracle(E: np.ndarray, A: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    """Index of ``(lambda E + A)^{-1} E`` for the first regular ``lambda``."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if E.size == 0:
        return 0
    lam = find_regular_lambda(E, A, tol)
    B = np.linalg.solve(lam * E + A, E)
    return matrix_index(B, tol)
