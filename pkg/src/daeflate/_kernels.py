"""Inner loops: jet convolutions, full-pivot elimination and linear RK4.

Each kernel exists twice: a plain numpy version and a numba ``@njit``
compilation of the same loop. ``DAEFLATE_NUMBA=0`` (or a missing numba)
selects the numpy versions; both are always importable for benchmarking.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _flag_enabled() -> bool:
    value = os.environ.get("DAEFLATE_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off", "")


USE_NUMBA = numba is not None and _flag_enabled()


# -- numpy versions -----------------------------------------------------------


def py_jet_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated Cauchy product of matrix jets ``a`` (d+1,m,k) and ``b`` (d+1,k,n)."""
    d = a.shape[0]
    out = np.zeros((d, a.shape[1], b.shape[2]))
    for i in range(d):
        # sum_j a[j] @ b[i-j] as one batched product
        out[i] = np.einsum("jmk,jkn->mn", a[: i + 1], b[i::-1])
    return out


def py_jet_inverse(a: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Order-by-order inverse of the square matrix jet ``a`` given ``x0 = a[0]^-1``."""
    d, n, _ = a.shape
    x = np.zeros((d, n, n))
    x[0] = x0
    for i in range(1, d):
        acc = np.einsum("jmk,jkn->mn", a[1 : i + 1], x[i - 1 :: -1][:i])
        x[i] = -x0 @ acc
    return x


def py_full_pivot_lu(a: np.ndarray, tol: float, atol: float):
    """Gaussian elimination with complete pivoting.

    Returns ``(rank, rows, cols)``: the pivot rows and columns in elimination
    order, followed by the remaining indices. Elimination stops once the
    largest remaining entry is at most ``max(tol * |first pivot|, atol)``.
    """
    w = np.array(a, dtype=float, copy=True)
    m, n = w.shape
    rows = np.arange(m)
    cols = np.arange(n)
    rank = 0
    first = 0.0
    for k in range(min(m, n)):
        sub = np.abs(w[k:, k:])
        flat = int(np.argmax(sub))
        i, j = divmod(flat, n - k)
        i += k
        j += k
        piv = abs(w[i, j])
        if k == 0:
            first = piv
        if piv <= max(tol * first, atol) or piv == 0.0:
            break
        w[[k, i]] = w[[i, k]]
        rows[[k, i]] = rows[[i, k]]
        w[:, [k, j]] = w[:, [j, k]]
        cols[[k, j]] = cols[[j, k]]
        w[k + 1 :, k] /= w[k, k]
        w[k + 1 :, k + 1 :] -= np.outer(w[k + 1 :, k], w[k, k + 1 :])
        rank += 1
    return rank, rows, cols


def py_rk4_linear(b: np.ndarray, x0: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """Classical RK4 for ``x' = b x + g(t)`` on a uniform grid.

    ``g[s, 0]``, ``g[s, 1]``, ``g[s, 2]`` are the forcing values at the start,
    midpoint and end of step ``s``.
    """
    steps = g.shape[0]
    out = np.empty((steps + 1, x0.shape[0]))
    out[0] = x0
    x = x0.copy()
    for s in range(steps):
        k1 = b @ x + g[s, 0]
        k2 = b @ (x + 0.5 * h * k1) + g[s, 1]
        k3 = b @ (x + 0.5 * h * k2) + g[s, 1]
        k4 = b @ (x + h * k3) + g[s, 2]
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[s + 1] = x
    return out


# -- numba versions -----------------------------------------------------------


def _nb_jet_matmul(a, b):
    d = a.shape[0]
    m = a.shape[1]
    kk = a.shape[2]
    n = b.shape[2]
    out = np.zeros((d, m, n))
    for i in range(d):
        for j in range(i + 1):
            aj = a[j]
            bj = b[i - j]
            for r in range(m):
                for q in range(kk):
                    v = aj[r, q]
                    if v != 0.0:
                        for c in range(n):
                            out[i, r, c] += v * bj[q, c]
    return out


def _nb_jet_inverse(a, x0):
    d = a.shape[0]
    n = a.shape[1]
    x = np.zeros((d, n, n))
    x[0] = x0
    acc = np.zeros((n, n))
    for i in range(1, d):
        acc[:, :] = 0.0
        for j in range(1, i + 1):
            aj = a[j]
            xj = x[i - j]
            for r in range(n):
                for q in range(n):
                    v = aj[r, q]
                    if v != 0.0:
                        for c in range(n):
                            acc[r, c] += v * xj[q, c]
        for r in range(n):
            for c in range(n):
                s = 0.0
                for q in range(n):
                    s += x0[r, q] * acc[q, c]
                x[i, r, c] = -s
    return x


def _nb_full_pivot_lu(a, tol, atol):
    w = a.copy()
    m, n = w.shape
    rows = np.arange(m)
    cols = np.arange(n)
    rank = 0
    first = 0.0
    for k in range(min(m, n)):
        piv = -1.0
        pi = k
        pj = k
        for i in range(k, m):
            for j in range(k, n):
                v = abs(w[i, j])
                if v > piv:
                    piv = v
                    pi = i
                    pj = j
        if k == 0:
            first = piv
        if piv <= max(tol * first, atol) or piv == 0.0:
            break
        for j in range(n):
            tmp = w[k, j]
            w[k, j] = w[pi, j]
            w[pi, j] = tmp
        t = rows[k]
        rows[k] = rows[pi]
        rows[pi] = t
        for i in range(m):
            tmp = w[i, k]
            w[i, k] = w[i, pj]
            w[i, pj] = tmp
        t = cols[k]
        cols[k] = cols[pj]
        cols[pj] = t
        for i in range(k + 1, m):
            f = w[i, k] / w[k, k]
            w[i, k] = f
            for j in range(k + 1, n):
                w[i, j] -= f * w[k, j]
        rank += 1
    return rank, rows, cols


def _nb_rk4_linear(b, x0, g, h):
    steps = g.shape[0]
    m = x0.shape[0]
    out = np.empty((steps + 1, m))
    x = x0.copy()
    out[0] = x
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    y = np.empty(m)
    for s in range(steps):
        for i in range(m):
            acc = g[s, 0, i]
            for j in range(m):
                acc += b[i, j] * x[j]
            k1[i] = acc
        for i in range(m):
            y[i] = x[i] + 0.5 * h * k1[i]
        for i in range(m):
            acc = g[s, 1, i]
            for j in range(m):
                acc += b[i, j] * y[j]
            k2[i] = acc
        for i in range(m):
            y[i] = x[i] + 0.5 * h * k2[i]
        for i in range(m):
            acc = g[s, 1, i]
            for j in range(m):
                acc += b[i, j] * y[j]
            k3[i] = acc
        for i in range(m):
            y[i] = x[i] + h * k3[i]
        for i in range(m):
            acc = g[s, 2, i]
            for j in range(m):
                acc += b[i, j] * y[j]
            k4[i] = acc
        for i in range(m):
            x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            out[s + 1, i] = x[i]
    return out


if numba is not None:
    nb_jet_matmul = numba.njit(cache=True)(_nb_jet_matmul)
    nb_jet_inverse = numba.njit(cache=True)(_nb_jet_inverse)
    nb_full_pivot_lu = numba.njit(cache=True)(_nb_full_pivot_lu)
    nb_rk4_linear = numba.njit(cache=True)(_nb_rk4_linear)
else:  # pragma: no cover
    nb_jet_matmul = _nb_jet_matmul
    nb_jet_inverse = _nb_jet_inverse
    nb_full_pivot_lu = _nb_full_pivot_lu
    nb_rk4_linear = _nb_rk4_linear


def _c(x: np.ndarray) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == np.float64 and x.flags.c_contiguous:
        return x
    return np.ascontiguousarray(x, dtype=np.float64)


if USE_NUMBA:

    def jet_matmul(a, b):
        return nb_jet_matmul(_c(a), _c(b))

    def jet_inverse(a, x0):
        return nb_jet_inverse(_c(a), _c(x0))

    def full_pivot_lu(a, tol, atol=0.0):
        return nb_full_pivot_lu(_c(a), float(tol), float(atol))

    def rk4_linear(b, x0, g, h):
        return nb_rk4_linear(_c(b), _c(x0), _c(g), float(h))

else:
    jet_matmul = py_jet_matmul
    jet_inverse = py_jet_inverse

    def full_pivot_lu(a, tol, atol=0.0):
        return py_full_pivot_lu(a, tol, atol)

    rk4_linear = py_rk4_linear


def warmup() -> None:
    """Trigger JIT compilation so later timings exclude it."""
    a = np.ones((2, 2, 2))
    jet_matmul(a, a)
    jet_inverse(a + np.eye(2), np.eye(2))
    full_pivot_lu(np.eye(2), 1e-10, 0.0)
    rk4_linear(np.eye(2), np.ones(2), np.zeros((1, 3, 2)), 0.1)
