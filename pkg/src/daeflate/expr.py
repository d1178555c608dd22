"""Scalar expressions in ``t`` with exact differentiation.

The language is deliberately tiny: rational constants, the symbol ``t``,
named parameters, ``+ - * /``, integer powers and ``sin``, ``cos``, ``exp``.
It is closed under differentiation, so every derivative the deflation chain
asks for is again an :class:`Expr`.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ('-' | '+') factor | base ('^' ['-'] integer)?
    base   := number | 't' | identifier | func '(' expr ')' | '(' expr ')'
    func   := 'sin' | 'cos' | 'exp'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .errors import EvaluationError, ExprSyntaxError

FUNCTIONS = ("sin", "cos", "exp")


class Expr:
    """Base class of the expression tree. Nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_source(self)

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: Fraction


@dataclass(frozen=True, slots=True)
class Time(Expr):
    pass


@dataclass(frozen=True, slots=True)
class Param(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True, slots=True)
class Func(Expr):
    name: str
    arg: Expr


T = Time()
ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def const(value) -> Const:
    return Const(Fraction(value))


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    if isinstance(value, float):
        return Const(Fraction(repr(value)))
    if isinstance(value, str):
        return parse(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


# -- smart constructors (constant folding only) ------------------------------


def _is_const(e: Expr, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if _is_const(a, -1):
        return neg(b)
    if _is_const(b, -1):
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0):
        # kept symbolic so evaluation reports the division by zero
        return Div(a, b)
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(base: Expr, exponent: int) -> Expr:
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if _is_const(base) and (exponent > 0 or base.value != 0):
        return Const(base.value**exponent)
    return Pow(base, exponent)


def func(name: str, arg: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if _is_const(arg, 0):
        return ONE if name in ("cos", "exp") else ZERO
    return Func(name, arg)


# -- parsing ------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _line_col(source: str, pos: int) -> tuple[int, int]:
    line = source.count("\n", 0, pos) + 1
    col = pos - (source.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            line, col = _line_col(source, pos)
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, allowed: frozenset[str] | None):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.allowed = allowed

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: _Token | None = None) -> ExprSyntaxError:
        tok = tok or self.tok
        line, col = _line_col(self.source, tok.pos)
        return ExprSyntaxError(message, line, col)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected {self.tok.text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            if self.accept("+"):
                e = Add(e, self.term())
            elif self.accept("-"):
                e = Sub(e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            if self.accept("*"):
                e = Mul(e, self.factor())
            elif self.accept("/"):
                e = Div(e, self.factor())
            else:
                return e

    def factor(self) -> Expr:
        if self.accept("-"):
            return Neg(self.factor())
        if self.accept("+"):
            return self.factor()
        base = self.base()
        if self.accept("^"):
            sign = -1 if self.accept("-") else 1
            tok = self.tok
            if tok.kind != "number" or not tok.text.isdigit():
                raise self.error("exponent must be an integer literal")
            self.i += 1
            return Pow(base, sign * int(tok.text))
        return base

    def base(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return Const(Fraction(tok.text))
        if tok.kind == "name":
            self.i += 1
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(tok.text, arg)
            if self.tok.kind == "op" and self.tok.text == "(":
                raise self.error(f"unknown function {tok.text!r}", tok)
            if tok.text == "t":
                return T
            if self.allowed is not None and tok.text not in self.allowed:
                raise self.error(f"unknown identifier {tok.text!r}", tok)
            return Param(tok.text)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r}")


def parse(source: str, allowed: set[str] | None = None) -> Expr:
    """Parse ``source`` into an :class:`Expr`.

    ``allowed`` optionally restricts the parameter names; any other identifier
    raises :class:`ExprSyntaxError`. The tree is kept as written (no folding)
    so that printing round-trips.
    """
    return _Parser(source, None if allowed is None else frozenset(allowed)).parse()


# -- printing -----------------------------------------------------------------

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _fmt_const(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def _prec(e: Expr) -> int:
    if isinstance(e, Const):
        if e.value < 0:
            return 3
        return 2 if e.value.denominator != 1 else 5
    return _PREC.get(type(e), 5)


def to_source(e: Expr) -> str:
    """Print ``e`` in the input grammar, with only the parentheses needed."""

    def wrap(child: Expr, min_prec: int) -> str:
        s = to_source(child)
        return f"({s})" if _prec(child) < min_prec else s

    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Time):
        return "t"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Add):
        return f"{wrap(e.left, 1)} + {wrap(e.right, 2)}"
    if isinstance(e, Sub):
        return f"{wrap(e.left, 1)} - {wrap(e.right, 2)}"
    if isinstance(e, Mul):
        return f"{wrap(e.left, 2)}*{wrap(e.right, 3)}"
    if isinstance(e, Div):
        return f"{wrap(e.left, 2)}/{wrap(e.right, 3)}"
    if isinstance(e, Neg):
        return f"-{wrap(e.arg, 3)}"
    if isinstance(e, Pow):
        return f"{wrap(e.base, 5)}^{e.exponent}"
    if isinstance(e, Func):
        return f"{e.name}({to_source(e.arg)})"
    raise TypeError(e)


# -- calculus -----------------------------------------------------------------


@lru_cache(maxsize=4096)
def _d(e: Expr) -> Expr:
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Time):
        return ONE
    if isinstance(e, Add):
        return add(_d(e.left), _d(e.right))
    if isinstance(e, Sub):
        return sub(_d(e.left), _d(e.right))
    if isinstance(e, Mul):
        return add(mul(_d(e.left), e.right), mul(e.left, _d(e.right)))
    if isinstance(e, Div):
        num = sub(mul(_d(e.left), e.right), mul(e.left, _d(e.right)))
        return div(num, power(e.right, 2))
    if isinstance(e, Neg):
        return neg(_d(e.arg))
    if isinstance(e, Pow):
        k = e.exponent
        return mul(mul(const(k), power(e.base, k - 1)), _d(e.base))
    if isinstance(e, Func):
        inner = _d(e.arg)
        if e.name == "sin":
            outer = func("cos", e.arg)
        elif e.name == "cos":
            outer = neg(func("sin", e.arg))
        else:
            outer = e
        return mul(outer, inner)
    raise TypeError(e)


def differentiate(e: Expr, order: int = 1) -> Expr:
    """Exact ``order``-th derivative with respect to ``t``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    for _ in range(order):
        e = _d(e)
    return e


def parameters(e: Expr) -> set[str]:
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, (Const, Time)):
        return set()
    if isinstance(e, (Add, Sub, Mul, Div)):
        return parameters(e.left) | parameters(e.right)
    if isinstance(e, (Neg, Func)):
        return parameters(e.arg)
    if isinstance(e, Pow):
        return parameters(e.base)
    raise TypeError(e)


def depends_on_t(e: Expr) -> bool:
    if isinstance(e, Time):
        return True
    if isinstance(e, (Const, Param)):
        return False
    if isinstance(e, (Add, Sub, Mul, Div)):
        return depends_on_t(e.left) or depends_on_t(e.right)
    if isinstance(e, (Neg, Func)):
        return depends_on_t(e.arg)
    if isinstance(e, Pow):
        return depends_on_t(e.base)
    raise TypeError(e)


# -- evaluation ---------------------------------------------------------------

_MATH = {"sin": math.sin, "cos": math.cos, "exp": math.exp}


def evaluate(e: Expr, t: float, params: Mapping[str, float] | None = None) -> float:
    """Evaluate ``e`` at ``t`` in IEEE double precision.

    Raises :class:`EvaluationError` on an unbound parameter or a division by
    zero.
    """
    params = params or {}

    def ev(e: Expr) -> float:
        if isinstance(e, Const):
            return float(e.value)
        if isinstance(e, Time):
            return t
        if isinstance(e, Param):
            try:
                return float(params[e.name])
            except KeyError:
                raise EvaluationError(f"unbound parameter {e.name!r}") from None
        if isinstance(e, Add):
            return ev(e.left) + ev(e.right)
        if isinstance(e, Sub):
            return ev(e.left) - ev(e.right)
        if isinstance(e, Mul):
            return ev(e.left) * ev(e.right)
        if isinstance(e, Div):
            den = ev(e.right)
            if den == 0.0:
                raise EvaluationError(f"division by zero at t={t!r}")
            return ev(e.left) / den
        if isinstance(e, Neg):
            return -ev(e.arg)
        if isinstance(e, Pow):
            b = ev(e.base)
            if b == 0.0 and e.exponent < 0:
                raise EvaluationError(f"division by zero at t={t!r}")
            return b**e.exponent
        if isinstance(e, Func):
            return _MATH[e.name](ev(e.arg))
        raise TypeError(e)

    return ev(e)


def _py_source(e: Expr, params: Mapping[str, float], mod: str) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Time):
        return "t"
    if isinstance(e, Param):
        try:
            return f"({float(params[e.name])!r})"
        except KeyError:
            raise EvaluationError(f"unbound parameter {e.name!r}") from None
    ops = {Add: "+", Sub: "-", Mul: "*", Div: "/"}
    if type(e) in ops:
        left = _py_source(e.left, params, mod)
        right = _py_source(e.right, params, mod)
        return f"({left} {ops[type(e)]} {right})"
    if isinstance(e, Neg):
        return f"(-{_py_source(e.arg, params, mod)})"
    if isinstance(e, Pow):
        base = _py_source(e.base, params, mod)
        if e.exponent < 0:
            return f"(1.0 / {base} ** {-e.exponent})"
        return f"({base} ** {e.exponent})"
    if isinstance(e, Func):
        return f"{mod}.{e.name}({_py_source(e.arg, params, mod)})"
    raise TypeError(e)


def compile_expr(
    e: Expr, params: Mapping[str, float] | None = None, vectorized: bool = False
) -> Callable:
    """Return a fast callable ``fn(t)`` for ``e`` with parameters bound.

    With ``vectorized=True`` the callable accepts numpy arrays and always
    returns an array of the same shape as ``t``; non-finite results raise
    :class:`EvaluationError`.
    """
    params = params or {}
    mod = "np" if vectorized else "math"
    src = _py_source(e, params, mod)
    code = compile(f"lambda t: {src}", "<expr>", "eval")
    fn = eval(code, {"math": math, "np": np})

    if vectorized:

        def vfn(t):
            t = np.asarray(t, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape).copy()
            if not np.all(np.isfinite(out)):
                raise EvaluationError(f"non-finite value of {to_source(e)}")
            return out

        return vfn

    def sfn(t):
        try:
            return fn(t)
        except ZeroDivisionError:
            raise EvaluationError(f"division by zero at t={t!r}") from None

    return sfn


class ExprVector:
    """A vector of expressions with cached, compiled derivatives.

    ``derivatives(t, order)`` returns the unscaled values ``f^(d)(t)`` for
    ``d = 0..order`` as an array of shape ``(order + 1, n)``, or
    ``(order + 1, len(t), n)`` when ``t`` is an array.
    """

    def __init__(self, exprs, params: Mapping[str, float] | None = None):
        self.exprs = tuple(as_expr(e) for e in exprs)
        self.params = dict(params or {})
        self._scalar: list[list[Callable]] = []
        self._vector: list[list[Callable]] = []

    def __len__(self) -> int:
        return len(self.exprs)

    def derivative_exprs(self, order: int) -> list[Expr]:
        return [differentiate(e, order) for e in self.exprs]

    def _ensure(self, order: int) -> None:
        while len(self._scalar) <= order:
            exprs = self.derivative_exprs(len(self._scalar))
            self._scalar.append([compile_expr(e, self.params) for e in exprs])
            self._vector.append([compile_expr(e, self.params, vectorized=True) for e in exprs])

    def derivatives(self, t, order: int) -> np.ndarray:
        self._ensure(order)
        if np.ndim(t) == 0:
            t = float(t)
            return np.array([[fn(t) for fn in level] for level in self._scalar[: order + 1]]).reshape(
                order + 1, len(self.exprs)
            )
        t = np.asarray(t, dtype=float)
        out = np.empty((order + 1, t.size, len(self.exprs)))
        for d, level in enumerate(self._vector[: order + 1]):
            for i, fn in enumerate(level):
                out[d, :, i] = fn(t)
        return out

    def __call__(self, t) -> np.ndarray:
        return self.derivatives(t, 0)[0]
