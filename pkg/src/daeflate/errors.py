"""Exception hierarchy shared by the library and the CLI."""


class DaeflateError(Exception):
    """Base class for all errors raised by this package."""


class ExprSyntaxError(DaeflateError, ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class EvaluationError(DaeflateError, ArithmeticError):
    """Unbound parameter, division by zero or non-finite value."""


class JetOrderError(DaeflateError, ValueError):
    """Jet orders do not match, or more derivatives were requested than carried."""


class NotRegular(DaeflateError):
    """The pencil is not regular (or not geometrically regular at a point).

    ``step`` and ``t`` locate the failure inside a deflation chain when known.
    """

    def __init__(self, message: str, step: int | None = None, t: float | None = None):
        self.message = message
        self.step = step
        self.t = t
        super().__init__(self._render())

    def _render(self) -> str:
        where = []
        if self.step is not None:
            where.append(f"step {self.step}")
        if self.t is not None:
            where.append(f"t={self.t:g}")
        return f"{self.message} [{', '.join(where)}]" if where else self.message

    def at(self, step: int | None = None, t: float | None = None) -> "NotRegular":
        """Return a copy annotated with the chain step and/or time."""
        err = type(self)(
            self.message,
            step=self.step if step is None else step,
            t=self.t if t is None else t,
        )
        return err


class RankDrop(NotRegular):
    """Rank of E(t) at a probe point differs from the rank at the base point."""


class PivotBreakdown(NotRegular):
    """The pivot pattern chosen at the base point is near-singular at a probe."""


class ProblemError(DaeflateError, ValueError):
    """Schema or consistency violation in a problem or chain file."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message
