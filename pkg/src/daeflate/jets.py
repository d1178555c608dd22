"""Truncated Taylor series ("jets") of scalars and matrices at a point.

Coefficients are scaled: ``c[i] = g^(i)(t0) / i!``. A jet of order ``d``
carries ``d + 1`` coefficients. Binary operations require equal orders;
nothing ever extends the order silently.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import EvaluationError, JetOrderError
from .expr import Expr, compile_expr, depends_on_t, differentiate, evaluate


class Jet:
    """Scalar jet ``c_0 + c_1 s + ... + c_d s^d`` with ``s = t - t0``."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("a jet needs a non-empty 1-d coefficient vector")
        self.coeffs = c

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def __repr__(self) -> str:
        return f"Jet({self.coeffs.tolist()})"

    def _check(self, other: "Jet") -> None:
        if other.order != self.order:
            raise JetOrderError(f"jet orders differ: {self.order} vs {other.order}")

    def __add__(self, other):
        if not isinstance(other, Jet):
            c = self.coeffs.copy()
            c[0] += other
            return Jet(c)
        self._check(other)
        return Jet(self.coeffs + other.coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Jet(-self.coeffs)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coeffs * other)
        return jet_mul(self, other)

    __rmul__ = __mul__

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order {self.order} to {order}")
        return Jet(self.coeffs[: order + 1])

    def derivative(self) -> "Jet":
        return jet_derivative(self)


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Cauchy product truncated to the common order."""
    a._check(b)
    d = a.order
    c = np.array([np.dot(a.coeffs[: i + 1], b.coeffs[i::-1]) for i in range(d + 1)])
    return Jet(c)


def jet_derivative(a: Jet) -> Jet:
    """Jet of ``g'`` one order lower: coefficient ``i`` is ``(i+1) c_{i+1}``."""
    if a.order < 1:
        raise JetOrderError("cannot differentiate an order-0 jet")
    k = np.arange(1, a.order + 1)
    return Jet(k * a.coeffs[1:])


def jet_of_expr(
    e: Expr, t0: float, order: int, params: Mapping[str, float] | None = None
) -> Jet:
    """Scaled Taylor coefficients of ``e`` at ``t0`` up to ``order``."""
    coeffs = [
        evaluate(differentiate(e, i), t0, params) / math.factorial(i)
        for i in range(order + 1)
    ]
    return Jet(coeffs)


class MatrixJet:
    """Matrix-valued jet stored as an array of shape ``(order+1, rows, cols)``."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        if type(coeffs) is np.ndarray and coeffs.dtype == np.float64 and coeffs.ndim == 3 and coeffs.shape[0]:
            self.coeffs = coeffs
            return
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 3 or c.shape[0] == 0:
            raise ValueError("matrix jet coefficients must have shape (d+1, rows, cols)")
        self.coeffs = c

    @classmethod
    def constant(cls, matrix, order: int) -> "MatrixJet":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        c = np.zeros((order + 1,) + m.shape)
        c[0] = m
        return cls(c)

    @classmethod
    def identity(cls, n: int, order: int) -> "MatrixJet":
        return cls.constant(np.eye(n), order)

    @classmethod
    def from_jets(cls, entries: Sequence[Sequence[Jet]]) -> "MatrixJet":
        orders = {j.order for row in entries for j in row}
        if len(orders) != 1:
            raise JetOrderError(f"entries carry different orders: {sorted(orders)}")
        arr = np.array([[j.coeffs for j in row] for row in entries])
        return cls(np.moveaxis(arr, 2, 0))

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2]

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def __repr__(self) -> str:
        return f"MatrixJet(order={self.order}, shape={self.shape})"

    def entry(self, i: int, j: int) -> Jet:
        return Jet(self.coeffs[:, i, j])

    def _check(self, other: "MatrixJet") -> None:
        if other.order != self.order:
            raise JetOrderError(f"jet orders differ: {self.order} vs {other.order}")

    def __add__(self, other: "MatrixJet") -> "MatrixJet":
        self._check(other)
        return MatrixJet(self.coeffs + other.coeffs)

    def __sub__(self, other: "MatrixJet") -> "MatrixJet":
        self._check(other)
        return MatrixJet(self.coeffs - other.coeffs)

    def __neg__(self) -> "MatrixJet":
        return MatrixJet(-self.coeffs)

    def __matmul__(self, other: "MatrixJet") -> "MatrixJet":
        a, b = self.coeffs, other.coeffs
        if a.shape[0] != b.shape[0]:
            self._check(other)
        if a.shape[2] != b.shape[1]:
            raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
        return MatrixJet(_kernels.jet_matmul(a, b))

    def __getitem__(self, key) -> "MatrixJet":
        rows, cols = key
        return MatrixJet(self.coeffs[:, rows][:, :, cols])

    def take(self, rows, cols) -> "MatrixJet":
        """Submatrix jet from index arrays ``rows`` and ``cols``."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        return MatrixJet(self.coeffs[:, rows[:, None], cols])

    def truncate(self, order: int) -> "MatrixJet":
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order {self.order} to {order}")
        return MatrixJet(self.coeffs[: order + 1])

    def derivative(self) -> "MatrixJet":
        if self.order < 1:
            raise JetOrderError("cannot differentiate an order-0 jet")
        k = np.arange(1, self.order + 1, dtype=float)[:, None, None]
        return MatrixJet(k * self.coeffs[1:])

    def inverse(self) -> "MatrixJet":
        return matrix_jet_inverse(self)


def matrix_jet_inverse(m: MatrixJet) -> MatrixJet:
    """Inverse through order ``d`` by the recursion ``X_i = -X_0 sum_j M_j X_{i-j}``.

    Raises :class:`EvaluationError` when the leading matrix is singular.
    """
    rows, cols = m.shape
    if rows != cols:
        raise ValueError(f"cannot invert a {rows}x{cols} matrix jet")
    if rows == 0:
        return MatrixJet(np.zeros_like(m.coeffs))
    try:
        x0 = np.linalg.inv(m.value)
    except np.linalg.LinAlgError:
        raise EvaluationError("leading coefficient of the matrix jet is singular") from None
    if not np.all(np.isfinite(x0)):
        raise EvaluationError("leading coefficient of the matrix jet is singular")
    return MatrixJet(_kernels.jet_inverse(m.coeffs, x0))


class SmoothMatrix:
    """Matrix of expressions in ``t`` that produces :class:`MatrixJet` values.

    Derivative expressions are generated and compiled lazily per order, so
    repeated evaluation at many times stays cheap.
    """

    def __init__(self, entries: Sequence[Sequence[Expr]], params: Mapping[str, float] | None = None):
        self.entries = [list(row) for row in entries]
        self.params = dict(params or {})
        self.rows = len(self.entries)
        self.cols = len(self.entries[0]) if self.entries else 0
        # per order: constant coefficients plus (i, j, fn) for entries varying in t
        self._compiled: list[tuple[np.ndarray, list]] = []

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def _ensure(self, order: int) -> None:
        while len(self._compiled) <= order:
            k = len(self._compiled)
            scale = 1.0 / math.factorial(k)
            const = np.zeros((self.rows, self.cols))
            varying = []
            for i, row in enumerate(self.entries):
                for j, e in enumerate(row):
                    de = differentiate(e, k)
                    if depends_on_t(de):
                        varying.append((i, j, compile_expr(de, self.params), scale))
                    else:
                        const[i, j] = evaluate(de, 0.0, self.params) * scale
            self._compiled.append((const, varying))

    def jet(self, t: float, order: int) -> MatrixJet:
        self._ensure(order)
        c = np.empty((order + 1, self.rows, self.cols))
        for k in range(order + 1):
            const, varying = self._compiled[k]
            c[k] = const
            for i, j, fn, scale in varying:
                c[k, i, j] = fn(t) * scale
        if not np.all(np.isfinite(c)):
            raise EvaluationError(f"non-finite matrix entry at t={t!r}")
        return MatrixJet(c)

    def value(self, t: float) -> np.ndarray:
        return self.jet(t, 0).value
