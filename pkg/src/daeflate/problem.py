"""Problem files and chain files.

A problem file is a JSON object describing ``E(t) x' = A(t) x + f(t)``::

    {
      "n": 3, "mode": "lti",
      "E": [[1, 0, 0], [0, 1, 0], [0, 0, 0]],
      "A": [[0, 0, -1], [-1, 0, 0], [0, -1, 0]],
      "f": ["sin(t)", "t^2", "exp(t)"],
      "interval": [0, 1]
    }

Matrix entries are numbers or expression strings; ``params`` binds named
constants used in the expressions. Time-varying problems (``"mode": "ltv"``)
also take ``base_point`` and ``probes`` (a list of times or a count of
equispaced points on the interval). ``x0`` is optional and holds either the
terminal variables or a full state, from which the terminal variables are
taken.

Chain files written by :func:`write_chain` embed the problem, so a chain can
be reloaded and evaluated without the original file.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from .deflate_lti import DeflationChain, ForcingCombo, StoredStep, run_deflation
from .deflate_ltv import LtvChain, LtvDeflationStep, LtvProblem, default_probes, run_ltv_deflation
from .errors import EvaluationError, ExprSyntaxError, ProblemError
from .expr import Expr, ExprVector, as_expr, depends_on_t, evaluate, parse
from .jets import SmoothMatrix
from .linalg import BACKENDS, DEFAULT_TOL

CHAIN_FORMAT = "daeflate-chain"
CHAIN_VERSION = 1
DEFAULT_PROBES = 11
RESIDUAL_TOL = {"lti": 1e-8, "ltv": 1e-6}
BUNDLED = Path(__file__).parent / "examples"

_ENTRY = {"type": ["number", "string"]}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _ENTRY}}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["n", "mode", "E", "A", "f"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["lti", "ltv"]},
        "E": _MATRIX,
        "A": _MATRIX,
        "f": {"type": "array", "items": _ENTRY},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "interval": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "base_point": {"type": "number"},
        "probes": {
            "oneOf": [
                {"type": "integer", "minimum": 1},
                {"type": "array", "items": {"type": "number"}, "minItems": 1},
            ]
        },
        "x0": {"type": "array", "items": {"type": "number"}},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "residual_tol": {"type": "number", "exclusiveMinimum": 0},
        "backend": {"enum": list(BACKENDS)},
    },
}

_VALIDATOR = Draft202012Validator(PROBLEM_SCHEMA)


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _schema_error(data: Any) -> ProblemError | None:
    err = best_match(_VALIDATOR.iter_errors(data))
    if err is None:
        return None
    parts = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        parts.append(missing[0])
        return ProblemError(_json_path(parts), "required field is missing")
    return ProblemError(_json_path(parts) or "<root>", err.message)


@dataclass
class ProblemFile:
    """A validated problem. ``raw`` keeps the JSON object as loaded."""

    n: int
    mode: str
    E: list[list[Expr]]
    A: list[list[Expr]]
    f: list[Expr]
    params: dict[str, float]
    interval: tuple[float, float]
    base_point: float
    probes: list[float]
    x0: np.ndarray | None = None
    tol: float | None = None
    residual_tol: float | None = None
    backend: str | None = None
    name: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    def forcing(self) -> ExprVector:
        return ExprVector(self.f, self.params)

    def constant_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """``(E, A)`` as arrays; only meaningful for constant-coefficient problems."""
        return _constant(self.E, self.params), _constant(self.A, self.params)

    def smooth_matrices(self) -> tuple[SmoothMatrix, SmoothMatrix]:
        return SmoothMatrix(self.E, self.params), SmoothMatrix(self.A, self.params)

    def matrix_functions(self):
        """``E`` and ``A`` in the form the residual check takes (arrays or callables of ``t``)."""
        if self.mode == "lti":
            return self.constant_matrices()
        E, A = self.smooth_matrices()
        return E.value, A.value

    def default_residual_tol(self) -> float:
        return self.residual_tol if self.residual_tol is not None else RESIDUAL_TOL[self.mode]

    def with_probe_count(self, count: int) -> "ProblemFile":
        return replace(self, probes=default_probes(*self.interval, count))


def _constant(entries: list[list[Expr]], params) -> np.ndarray:
    return np.array([[evaluate(e, 0.0, params) for e in row] for row in entries], dtype=float)


def _expr(value, path: str, allowed: set[str]) -> Expr:
    if isinstance(value, str):
        try:
            return parse(value, allowed)
        except ExprSyntaxError as exc:
            raise ProblemError(path, str(exc)) from None
    if not math.isfinite(value):
        raise ProblemError(path, "number must be finite")
    return as_expr(value)


def _matrix(rows, name: str, n: int, allowed: set[str]) -> list[list[Expr]]:
    if len(rows) != n:
        raise ProblemError(name, f"expected {n} rows, got {len(rows)}")
    out = []
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ProblemError(f"{name}[{i}]", f"expected {n} entries, got {len(row)}")
        out.append([_expr(v, f"{name}[{i}][{j}]", allowed) for j, v in enumerate(row)])
    return out


def problem_from_dict(data: Any) -> ProblemFile:
    """Validate a decoded JSON object and build a :class:`ProblemFile`."""
    err = _schema_error(data)
    if err is not None:
        raise err
    n, mode = data["n"], data["mode"]
    params = {k: float(v) for k, v in data.get("params", {}).items()}
    if "t" in params:
        raise ProblemError("params.t", "'t' is reserved for time")
    allowed = set(params)
    E = _matrix(data["E"], "E", n, allowed)
    A = _matrix(data["A"], "A", n, allowed)
    if len(data["f"]) != n:
        raise ProblemError("f", f"expected {n} entries, got {len(data['f'])}")
    f = [_expr(v, f"f[{i}]", allowed) for i, v in enumerate(data["f"])]

    if mode == "lti":
        for name, M in (("E", E), ("A", A)):
            for i, row in enumerate(M):
                for j, e in enumerate(row):
                    if depends_on_t(e):
                        raise ProblemError(f"{name}[{i}][{j}]", "mode 'lti' requires constant entries (found t)")
                    try:
                        evaluate(e, 0.0, params)
                    except EvaluationError as exc:
                        raise ProblemError(f"{name}[{i}][{j}]", str(exc)) from None

    t0, t1 = (float(x) for x in data.get("interval", (0.0, 1.0)))
    if not t1 > t0:
        raise ProblemError("interval", "interval end must exceed its start")
    base = float(data.get("base_point", 0.5 * (t0 + t1)))
    if not t0 <= base <= t1:
        raise ProblemError("base_point", f"{base} lies outside the interval [{t0}, {t1}]")
    probes = data.get("probes", DEFAULT_PROBES)
    if isinstance(probes, int):
        probes = default_probes(t0, t1, probes)
    else:
        for i, p in enumerate(probes):
            if not t0 <= p <= t1:
                raise ProblemError(f"probes[{i}]", f"{p} lies outside the interval [{t0}, {t1}]")
        probes = [float(p) for p in probes]

    x0 = data.get("x0")
    return ProblemFile(
        n=n,
        mode=mode,
        E=E,
        A=A,
        f=f,
        params=params,
        interval=(t0, t1),
        base_point=base,
        probes=probes,
        x0=None if x0 is None else np.asarray(x0, dtype=float),
        tol=data.get("tol"),
        residual_tol=data.get("residual_tol"),
        backend=data.get("backend"),
        name=data.get("name", ""),
        raw=data,
    )


def resolve_path(path) -> Path:
    """``path`` itself, or the bundled fixture of the same name when ``path`` does not exist."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED / p.name
    if bundled.exists():
        return bundled
    raise ProblemError("", f"no such file: {path}")


def _read_json(path) -> Any:
    p = resolve_path(path)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemError("", f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ProblemError("", f"cannot read {p}: {exc.strerror}") from None


def load_problem(path) -> ProblemFile:
    """Load and validate a problem file."""
    return problem_from_dict(_read_json(path))


def bundled_examples() -> list[Path]:
    return sorted(BUNDLED.glob("*.json"))


# -- settings -----------------------------------------------------------------


def effective_tol(problem: ProblemFile | None = None, override: float | None = None) -> float:
    """Rank tolerance: explicit flag, then the problem file, then ``DAEFLATE_TOL``, then the default."""
    if override is not None:
        return float(override)
    if problem is not None and problem.tol is not None:
        return float(problem.tol)
    env = os.environ.get("DAEFLATE_TOL")
    if env:
        try:
            value = float(env)
        except ValueError:
            raise ProblemError("DAEFLATE_TOL", f"not a number: {env!r}") from None
        if not value > 0:
            raise ProblemError("DAEFLATE_TOL", "must be positive")
        return value
    return DEFAULT_TOL


def build_chain(problem: ProblemFile, tol: float | None = None, backend: str | None = None):
    """Run the deflation appropriate to the problem's mode."""
    tol = effective_tol(problem, tol)
    f = problem.forcing()
    if problem.mode == "lti":
        E, A = problem.constant_matrices()
        return run_deflation(E, A, f, tol, backend or problem.backend or "svd")
    E, A = problem.smooth_matrices()
    return run_ltv_deflation(E, A, f, problem.base_point, problem.probes, tol)


def reduced_initial(problem: ProblemFile, chain, x0=None) -> np.ndarray:
    """Initial data for the terminal variables, taken from ``x0`` or the problem file."""
    x0 = problem.x0 if x0 is None else np.asarray(x0, dtype=float)
    m = chain.terminal_size
    if not chain.terminal_is_ode:
        return np.zeros(m)
    if x0 is None:
        raise ProblemError("x0", f"initial values are required for the {m} terminal variables")
    if x0.shape == (m,):
        return x0
    if x0.shape == (chain.n,):
        return x0[chain.reduced_coordinates()]
    raise ProblemError("x0", f"expected {m} terminal values or a full state of {chain.n}, got {x0.size}")


# -- chain files --------------------------------------------------------------


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("chain files hold finite numbers only")
    s = format(x, ".17g")
    return "0" if s == "-0" else s


def _scalar(v) -> str:
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return json.dumps(v)


def dumps(obj, indent: int = 0) -> str:
    """JSON with floats at 17 significant digits; flat lists stay on one line."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        items = [inner + dumps(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _scalar(obj)


def _combo_dict(combo: ForcingCombo) -> dict:
    return {
        "rows": combo.rows,
        "terms": [{"order": d, "coeffs": c} for d, c in combo.terms()],
    }


def _combo_from(data: dict, f: ExprVector) -> ForcingCombo:
    rows, n = int(data["rows"]), len(f)
    terms = data["terms"]
    order = max((int(t["order"]) for t in terms), default=0)
    coeffs = np.zeros((order + 1, rows, n))
    for term in terms:
        c = np.asarray(term["coeffs"], dtype=float).reshape(rows, n)
        coeffs[int(term["order"])] = c
    return ForcingCombo(coeffs, f)


def chain_to_dict(chain, problem: ProblemFile) -> dict:
    """Serializable description of a chain; the problem is embedded verbatim."""
    out = {
        "format": CHAIN_FORMAT,
        "version": CHAIN_VERSION,
        "mode": problem.mode,
        "n": chain.n,
        "tol": chain.tol,
        "index": chain.index,
        "ranks": list(chain.ranks),
        "constraints": chain.constraint_count,
        "terminal_variables": [int(i) for i in chain.reduced_coordinates()],
    }
    if isinstance(chain, LtvChain):
        t0 = chain.t0
        out["base_point"] = t0
        out["probes"] = list(chain.probes)
        levels = chain.levels(t0)
        steps = []
        for step, lv in zip(chain.steps, levels):
            steps.append(
                {
                    "perm": step.perm,
                    "rows": step.rows,
                    "cols": step.cols,
                    "size_in": step.size_in,
                    "size_out": step.size_out,
                    "rcond_N": step.rcond_N,
                    "at_base_point": {"M": lv.M.value, "N": lv.N.value, "h": lv.h.value[:, 0]},
                }
            )
        last = levels[-1]
        out["steps"] = steps
        out["terminal"] = {"at_base_point": {"E": last.E.value, "A": last.A.value, "f": last.f.value[:, 0]}}
    else:
        out["backend"] = chain.backend
        out["steps"] = [
            {
                "perm": s.perm,
                "size_in": s.size_in,
                "size_out": s.size_out,
                "rcond_N": s.rcond_N,
                "M": s.M,
                "N": s.N,
                "h": _combo_dict(s.h),
            }
            for s in chain.steps
        ]
        Ek, Ak, fk = chain.terminal
        out["terminal"] = {"E": Ek, "A": Ak, "f": _combo_dict(fk)}
    out["problem"] = problem.raw
    return out


def write_chain(path, chain, problem: ProblemFile) -> None:
    Path(path).write_text(dumps(chain_to_dict(chain, problem)) + "\n")


def _matrix_of(data, shape: tuple[int, int]) -> np.ndarray:
    return np.asarray(data, dtype=float).reshape(shape)


def chain_from_dict(data: dict):
    """Rebuild a chain from :func:`chain_to_dict` output.

    Constant-coefficient chains are rebuilt from the stored matrices and
    forcing combinations; time-varying chains from the embedded problem and
    the stored pivot patterns. Neither reruns the deflation.
    """
    if not isinstance(data, dict) or data.get("format") != CHAIN_FORMAT:
        raise ProblemError("format", f"not a {CHAIN_FORMAT} file")
    if data.get("version") != CHAIN_VERSION:
        raise ProblemError("version", f"unsupported chain version {data.get('version')!r}")
    problem = problem_from_dict(data["problem"])
    f = problem.forcing()
    ranks = [int(r) for r in data["ranks"]]
    tol = float(data["tol"])
    try:
        if problem.mode == "ltv":
            steps = [
                LtvDeflationStep(
                    np.asarray(s["rows"], dtype=int),
                    np.asarray(s["cols"], dtype=int),
                    np.asarray(s["perm"], dtype=int),
                    int(s["size_in"]),
                    int(s["size_out"]),
                    float(s["rcond_N"]),
                )
                for s in data["steps"]
            ]
            E, A = problem.smooth_matrices()
            chain = LtvChain(
                LtvProblem(E, A, f),
                steps,
                ranks,
                float(data["base_point"]),
                [float(p) for p in data["probes"]],
                tol,
                [s.rcond_N for s in steps],
            )
            return problem, chain
        steps = []
        for s in data["steps"]:
            k, r = int(s["size_in"]), int(s["size_out"])
            steps.append(
                StoredStep(
                    np.asarray(s["perm"], dtype=int),
                    _matrix_of(s["M"], (k - r, r)),
                    _matrix_of(s["N"], (k - r, k - r)),
                    _combo_from(s["h"], f),
                    k,
                    r,
                    float(s["rcond_N"]),
                )
            )
        term = data["terminal"]
        m = steps[-1].size_out if steps else problem.n
        Ek, Ak = _matrix_of(term["E"], (m, m)), _matrix_of(term["A"], (m, m))
        fk = _combo_from(term["f"], f)
        chain = DeflationChain(steps, [(Ek, Ak)], [fk], ranks, tol, data.get("backend", "svd"))
        return problem, chain
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ProblemError):
            raise
        raise ProblemError("steps", f"malformed chain data: {exc}") from None


def load_chain(path):
    """Load a chain file; returns ``(problem, chain)``."""
    return chain_from_dict(_read_json(path))


def forcing_description(combo: ForcingCombo, names: list[str] | None = None) -> list[str]:
    """Readable rows such as ``"f2 - f3'"`` for a forcing combination."""
    n = len(combo.f)
    names = names or [f"f{i + 1}" for i in range(n)]
    rows = []
    for i in range(combo.rows):
        parts = []
        for d, c in enumerate(combo.coeffs):
            for j in range(n):
                coef = c[i, j]
                if abs(coef) < 1e-14:
                    continue
                term = names[j] + "'" * d if d <= 3 else f"{names[j]}^({d})"
                mag = abs(coef)
                body = term if math.isclose(mag, 1.0, rel_tol=1e-12) else f"{mag:.6g}*{term}"
                parts.append(("-" if coef < 0 else "+", body))
        if not parts:
            rows.append("0")
            continue
        s = ("-" if parts[0][0] == "-" else "") + parts[0][1]
        for sign, body in parts[1:]:
            s += f" {sign} {body}"
        rows.append(s)
    return rows


__all__ = [
    "PROBLEM_SCHEMA",
    "ProblemFile",
    "build_chain",
    "bundled_examples",
    "chain_from_dict",
    "chain_to_dict",
    "dumps",
    "effective_tol",
    "forcing_description",
    "load_chain",
    "load_problem",
    "problem_from_dict",
    "reduced_initial",
    "resolve_path",
    "write_chain",
]
