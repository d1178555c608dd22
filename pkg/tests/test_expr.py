import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daeflate.errors import EvaluationError, ExprSyntaxError
from daeflate.expr import (
    Add,
    ExprVector,
    Func,
    compile_expr,
    depends_on_t,
    differentiate,
    evaluate,
    parameters,
    parse,
    to_source,
)


@pytest.mark.parametrize("src", ["sin(t)", "t^2 + 3*exp(t)", "-t^-2", "a*(t - 1)/(1 + t^2)", "cos(exp(2*t))"])
def test_print_round_trip(src):
    e = parse(src)
    assert parse(to_source(e)) == e


def test_parse_examples():
    assert parse("sin(t)") == Func("sin", parse("t"))
    e = parse("t^2 + 3*exp(t)")
    assert isinstance(e, Add)
    assert to_source(e) == "t^2 + 3*exp(t)"


def test_syntax_error_location():
    with pytest.raises(ExprSyntaxError) as info:
        parse("2*^t")
    assert (info.value.line, info.value.column) == (1, 3)
    assert "column 3" in str(info.value)


@pytest.mark.parametrize("src", ["", "sin t", "1 +", "(t", "t^1.5", "log(t)", "2 t"])
def test_malformed(src):
    with pytest.raises(ExprSyntaxError):
        parse(src)


def test_unknown_identifier_when_restricted():
    with pytest.raises(ExprSyntaxError, match="unknown identifier 'b'"):
        parse("a + b", allowed={"a"})
    assert parameters(parse("a*t + C", allowed={"a", "C"})) == {"a", "C"}


def test_differentiate_examples():
    assert to_source(differentiate(parse("sin(t)"), 1)) == "cos(t)"
    assert to_source(differentiate(parse("t^2"), 2)) == "2"
    assert evaluate(differentiate(parse("exp(t)"), 3), 0.0) == 1.0
    e = parse("t*sin(t)")
    assert differentiate(e, 0) == e


def test_evaluate_examples():
    assert evaluate(parse("t^2"), 3.0) == 9.0
    assert evaluate(parse("sin(t)"), 0.0) == 0.0
    with pytest.raises(EvaluationError):
        evaluate(parse("1/t"), 0.0)
    with pytest.raises(EvaluationError, match="unbound"):
        evaluate(parse("a*t"), 1.0)
    assert evaluate(parse("a*t"), 2.0, {"a": 1.5}) == 3.0


def test_depends_on_t():
    assert depends_on_t(parse("a + sin(t)"))
    assert not depends_on_t(parse("a*2"))
    assert not depends_on_t(differentiate(parse("t"), 1))


def test_compiled_matches_interpreter():
    e = parse("a*sin(t)^2 - exp(-t)/(1 + t^2) + t^-1")
    params = {"a": 0.7}
    fn = compile_expr(e, params)
    vfn = compile_expr(e, params, vectorized=True)
    ts = np.linspace(0.1, 3, 17)
    expected = [evaluate(e, t, params) for t in ts]
    assert np.allclose([fn(t) for t in ts], expected, rtol=1e-14)
    assert np.allclose(vfn(ts), expected, rtol=1e-14)
    with pytest.raises(EvaluationError):
        compile_expr(parse("1/t"), {})(0.0)


def test_expr_vector_shapes():
    f = ExprVector(["sin(t)", "t^2", "exp(t)"])
    d = f.derivatives(0.0, 2)
    assert d.shape == (3, 3)
    assert np.allclose(d, [[0, 0, 1], [1, 0, 1], [0, 2, 1]])
    ts = np.linspace(0, 1, 5)
    assert f.derivatives(ts, 1).shape == (2, 5, 3)
    assert np.allclose(f(ts)[:, 2], np.exp(ts))


# -- random expressions ------------------------------------------------------

_leaves = st.one_of(
    st.just("t"),
    st.integers(-3, 3).map(str),
    st.sampled_from(["1/2", "3/4", "(-2/3)"]),
)


def _combine(children):
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda p: f"({p[0]} {p[1]} {p[2]})")
    # denominators bounded away from zero
    quotient = children.map(lambda c: f"({c})/(2 + sin({c}))")
    funcs = st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(
        lambda p: f"{p[0]}({p[1]})" if p[0] != "exp" else f"exp(sin({p[1]}))"
    )
    powers = st.tuples(children, st.integers(0, 3)).map(lambda p: f"({p[0]})^{p[1]}")
    return st.one_of(binary, quotient, funcs, powers)


expressions = st.recursive(_leaves, _combine, max_leaves=8)


@settings(max_examples=150, deadline=None)
@given(expressions, st.floats(-1.5, 1.5))
def test_derivative_matches_finite_difference(src, t):
    e = parse(src)
    h = 1e-6
    fd = (evaluate(e, t + h) - evaluate(e, t - h)) / (2 * h)
    value = evaluate(differentiate(e, 1), t)
    assert abs(value - fd) <= 1e-5 * (1 + abs(value))


@settings(max_examples=100, deadline=None)
@given(expressions)
def test_second_derivative_is_iterated_first(src):
    e = parse(src)
    d2 = differentiate(e, 2)
    dd = differentiate(differentiate(e, 1), 1)
    for t in np.linspace(-1.2, 1.2, 10):
        a, b = evaluate(d2, t), evaluate(dd, t)
        assert math.isclose(a, b, rel_tol=1e-10, abs_tol=1e-10)
