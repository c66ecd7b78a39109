from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfc import expr
from gfc.expr import (
    CaptureError,
    DomainError,
    ExprError,
    ParseError,
    SerializeError,
    SmoothFunction,
    grid_function_1d,
    grid_function_2d,
    make_cutoff,
    make_step,
    parse,
    parse_function,
    print_node,
    quadratic_form,
)


def central_diff(fn, args, i, h=1e-5):
    """Independent derivative oracle: central difference in argument i."""
    up = list(args)
    dn = list(args)
    up[i] = up[i] + h
    dn[i] = dn[i] - h
    return (fn.evaluate(*up) - fn.evaluate(*dn)) / (2 * h)


def check_gradient(fn, pts, tol=1e-6):
    for args in pts:
        for i, v in enumerate(fn.variables):
            got = fn.differentiate(v).evaluate(*args)
            ref = central_diff(fn, args, i)
            scale = max(1.0, abs(ref))
            assert abs(got - ref) <= tol * scale, (fn.variables[i], args, got, ref)


# ---------------------------------------------------------------------------
# evaluation and differentiation against finite differences


CASES = [
    ("q^2.0 + 3.0*q*v - v^3.0", [(0.3, -0.7), (1.1, 0.4), (-2.0, 1.5)]),
    ("sin(q)*cos(v) + exp(0.3*q - v)", [(0.2, 0.9), (-1.0, -0.5)]),
    ("tanh(q*v) + sqrt(q^2.0 + 1.0)", [(0.5, 2.0), (-1.2, 0.3)]),
    ("q/(v^2.0 + 1.0) - 2.0/(q - 3.0)", [(0.0, 1.0), (1.5, -2.0)]),
    ("cutoff(q,1.25,2.0)*sin(v)", [(0.0, 1.0), (1.5, -0.4), (1.9, 2.0), (3.0, 1.0)]),
    ("step(q,0.0,1.0)*v", [(0.25, 1.0), (0.5, -2.0), (0.85, 0.3)]),
]


@pytest.mark.parametrize("text,pts", CASES)
def test_gradient_matches_central_difference(text, pts):
    fn = parse_function(text, ("q", "v"))
    check_gradient(fn, pts)


def test_second_derivatives_match():
    fn = parse_function("sin(q*v) + q^3.0*v", ("q", "v"))
    fq = fn.differentiate("q")
    for args in [(0.4, 0.8), (-1.1, 0.2)]:
        got = fq.differentiate("q").evaluate(*args)
        ref = central_diff(fq, args, 0)
        assert abs(got - ref) <= 1e-5 * max(1.0, abs(ref))


def test_mixed_partials_commute():
    fn = parse_function("sin(q*v) + q^3.0*v + tanh(q - v)", ("q", "v"))
    fqv = fn.differentiate("q").differentiate("v")
    fvq = fn.differentiate("v").differentiate("q")
    qs = np.linspace(-2, 2, 17)
    vs = np.linspace(-1, 1, 17)
    assert np.allclose(fqv.evaluate(qs, vs), fvq.evaluate(qs, vs), atol=1e-12)


def test_vectorized_evaluation_broadcasts():
    fn = parse_function("q*v + 1.0", ("q", "v"))
    qs = np.linspace(0, 1, 5)
    out = fn.evaluate(qs, 2.0)
    assert out.shape == (5,)
    assert np.allclose(out, qs * 2.0 + 1.0)
    assert isinstance(fn.evaluate(0.5, 2.0), float)


# ---------------------------------------------------------------------------
# step and cutoff plateaus must be bit-exact, interiors strictly between


def test_cutoff_plateaus_exact():
    c = make_cutoff(1.25, 2.0)
    inner = np.array([-1.25, -1.0, 0.0, 0.7, 1.25])
    outer = np.array([-5.0, -2.0, 2.0, 2.1, 40.0])
    # float64 saturates tanh deep in the tail, so stay a bit inside the band
    band = np.array([-1.9, -1.3, 1.3, 1.6, 1.95])
    assert np.all(c.evaluate(inner) == 1.0)
    assert np.all(c.evaluate(outer) == 0.0)
    mid = c.evaluate(band)
    assert np.all((mid > 0.0) & (mid < 1.0))
    # even
    assert np.allclose(c.evaluate(band), c.evaluate(-band), atol=0)
    # derivatives vanish identically off the band
    d1 = c.differentiate("q")
    d2 = d1.differentiate("q")
    assert np.all(d1.evaluate(inner) == 0.0)
    assert np.all(d1.evaluate(outer) == 0.0)
    assert np.all(d2.evaluate(inner) == 0.0)
    assert np.all(d2.evaluate(outer) == 0.0)
    assert np.any(d1.evaluate(band) != 0.0)


def test_cutoff_monotone_on_band():
    c = make_cutoff(1.25, 2.0)
    qs = np.linspace(1.25, 2.0, 400)
    vals = c.evaluate(qs)
    assert np.all(np.diff(vals) <= 0)
    assert vals[0] == 1.0 and vals[-1] == 0.0


def test_step_plateaus_exact():
    s = make_step("t", -1.0, 2.0)
    assert s.evaluate(-1.0) == 0.0
    assert s.evaluate(-10.0) == 0.0
    assert s.evaluate(2.0) == 1.0
    assert s.evaluate(7.0) == 1.0
    ts = np.linspace(-1, 2, 301)
    vals = s.evaluate(ts)
    assert np.all(np.diff(vals) >= 0)
    d = s.differentiate("t")
    assert d.evaluate(-1.0) == 0.0
    assert d.evaluate(2.0) == 0.0
    assert d.evaluate(0.5) > 0.0


def test_step_halfway_value():
    s = make_step("t", 0.0, 1.0)
    assert abs(s.evaluate(0.5) - 0.5) < 1e-15


def test_profile_derivatives_have_no_nan():
    c = make_cutoff(1.0, 2.0)
    d3 = c.differentiate("q").differentiate("q").differentiate("q")
    qs = np.linspace(-3, 3, 2001)
    out = np.asarray(d3.evaluate(qs))
    assert np.all(np.isfinite(out))
    s = make_step("t", 0.0, 1.0)
    sd3 = s.differentiate("t").differentiate("t").differentiate("t")
    ts = np.linspace(-0.5, 1.5, 2001)
    assert np.all(np.isfinite(np.asarray(sd3.evaluate(ts))))


# ---------------------------------------------------------------------------
# parsing and printing


def test_parse_basic_shapes():
    assert parse("q + v*2.0") == expr.Add(
        expr.Sym("q"), expr.Mul(expr.Sym("v"), expr.Num(2.0))
    )
    assert parse("-q") == expr.Neg(expr.Sym("q"))
    assert parse("-3.5") == expr.Num(-3.5)
    assert parse("q^2.0") == expr.Pow(expr.Sym("q"), 2.0)
    assert parse("(q + v)^2.0") == expr.Pow(
        expr.Add(expr.Sym("q"), expr.Sym("v")), 2.0
    )


def test_parse_precedence():
    f = parse_function("1.0 - q*v^2.0", ("q", "v"))
    assert f.evaluate(2.0, 3.0) == 1.0 - 2.0 * 9.0
    g = parse_function("2.0*q - v/2.0 + 1.0", ("q", "v"))
    assert g.evaluate(1.0, 4.0) == 2.0 - 2.0 + 1.0
    h = parse_function("-q^2.0", ("q",))
    assert h.evaluate(3.0) == -9.0


def test_parse_errors_carry_offset():
    with pytest.raises(ParseError) as e:
        parse("q + @")
    assert e.value.offset == 4
    with pytest.raises(ParseError):
        parse("q +")
    with pytest.raises(ParseError):
        parse("foo(q)")
    with pytest.raises(ParseError):
        parse("q^v")
    with pytest.raises(ParseError):
        parse("q) + 2")
    with pytest.raises(ParseError):
        parse("cutoff(q,2.0)")
    with pytest.raises(ExprError):
        parse("cutoff(q,2.0,1.0)")


def test_unbound_variable_raises():
    fn = parse_function("q + w", ("q", "w"))
    with pytest.raises(ExprError):
        SmoothFunction(fn.node, ("q",))


def test_print_roundtrip_examples():
    for text in [
        "q + v",
        "q - (v - 1.0)",
        "q*v/(1.0 + q^2.0)",
        "-(q + v)",
        "sin(q)*cos(v) - exp(q)",
        "cutoff(q,1.25,2.0)",
        "step(q - 1.0,0.0,1.0)",
        "cutoff(q,1.0,2.0,2)",
        "q^-2.0",
    ]:
        node = parse(text)
        assert parse(print_node(node)) == node


_names = st.sampled_from(["q", "v", "t", "xi", "u_1"])
_nums = st.floats(
    min_value=-100, max_value=100, allow_nan=False, allow_infinity=False
).map(lambda x: expr.Num(x))


def _trees(depth):
    leaf = st.one_of(_nums, _names.map(expr.Sym))
    if depth == 0:
        return leaf
    sub = _trees(depth - 1)
    return st.one_of(
        leaf,
        st.tuples(sub, sub).map(lambda ab: expr._add(*ab)),
        st.tuples(sub, sub).map(lambda ab: expr._sub(*ab)),
        st.tuples(sub, sub).map(lambda ab: expr._mul(*ab)),
        st.tuples(sub, sub).map(lambda ab: expr._div(*ab)),
        sub.map(expr._neg),
        st.tuples(sub, st.sampled_from([2.0, 3.0, -1.0, 0.5])).map(
            lambda an: expr._pow(*an)
        ),
        st.tuples(st.sampled_from(expr._FN_NAMES), sub).map(
            lambda fa: expr.Fn(fa[0], fa[1])
        ),
        sub.map(lambda a: expr.Step(a, -1.0, 2.5)),
        sub.map(lambda a: expr.Cutoff(a, 1.25, 2.0, 1)),
    )


@settings(max_examples=250, deadline=None)
@given(_trees(3))
def test_print_parse_identity(tree):
    assert parse(print_node(tree)) == tree


# ---------------------------------------------------------------------------
# substitution


def test_substitute_shifts_argument():
    fn = parse_function("sin(q)*xi + q^2.0", ("q", "xi"))
    shifted = fn.substitute({"q": "q + v"})
    assert set(shifted.variables) == {"q", "xi", "v"}
    for q0, xi0, v0 in [(0.3, 1.0, -0.2), (1.0, -2.0, 0.5)]:
        args = dict(zip(shifted.variables, (None,) * 3))
        vals = {"q": q0, "xi": xi0, "v": v0}
        got = shifted.evaluate(*[vals[v] for v in shifted.variables])
        assert abs(got - fn.evaluate(q0 + v0, xi0)) < 1e-14


def test_substitute_self_reference_allowed():
    fn = parse_function("q^2.0", ("q",))
    out = fn.substitute({"q": "q - 1.0"})
    assert out.evaluate(3.0) == 4.0


def test_substitute_swap_raises_capture():
    fn = parse_function("q - v", ("q", "v"))
    with pytest.raises(CaptureError):
        fn.substitute({"q": "v", "v": "q"})


def test_rename_swaps():
    # renaming relabels variables but keeps the positional function the same
    fn = parse_function("q - 2.0*v", ("q", "v"))
    out = fn.rename({"q": "v", "v": "q"})
    assert out.variables == ("v", "q")
    assert out.evaluate(1.0, 10.0) == fn.evaluate(1.0, 10.0)
    assert out.serialize() == "v - 2.0*q"


def test_substitute_constant():
    fn = parse_function("q*v", ("q", "v"))
    out = fn.substitute({"v": 2.5})
    assert out.variables == ("q",)
    assert out.evaluate(2.0) == 5.0


def test_substitution_then_derivative_consistent():
    fn = parse_function("exp(q)*v", ("q", "v"))
    sub = fn.substitute({"q": "q + v"})
    check_gradient(sub, [(0.2, 0.4), (-0.5, 1.0)])


# ---------------------------------------------------------------------------
# quadratic forms


def test_quadratic_form_value_and_gradient():
    a = np.array([[2.0, 0.5], [0.5, -1.0]])
    g = quadratic_form(a, ("x", "y"))
    pts = np.array([[0.3, 0.7], [-1.0, 2.0], [0.0, 0.0]])
    for x, y in pts:
        xv = np.array([x, y])
        assert abs(g.evaluate(x, y) - xv @ a @ xv) < 1e-14
        grad = 2.0 * a @ xv
        assert abs(g.differentiate("x").evaluate(x, y) - grad[0]) < 1e-12
        assert abs(g.differentiate("y").evaluate(x, y) - grad[1]) < 1e-12
    assert g.kind == "quadratic"
    assert np.array_equal(g.quad, a)


def test_quadratic_form_requires_symmetry():
    with pytest.raises(ExprError):
        quadratic_form(np.array([[0.0, 1.0], [0.0, 0.0]]), ("x", "y"))


# ---------------------------------------------------------------------------
# grid interpolants


def test_grid_1d_matches_samples_and_derivative():
    xs = np.linspace(0.0, 3.0, 61)
    fn = grid_function_1d(xs, np.sin(xs), "q")
    qs = np.linspace(0.05, 2.95, 97)
    assert np.max(np.abs(fn.evaluate(qs) - np.sin(qs))) < 1e-8
    d = fn.differentiate("q")
    assert np.max(np.abs(d.evaluate(qs) - np.cos(qs))) < 1e-6
    assert fn.kind == "grid"


def test_grid_1d_domain_error():
    xs = np.linspace(-1.0, 1.0, 30)
    fn = grid_function_1d(xs, xs**2, "q")
    with pytest.raises(DomainError):
        fn.evaluate(1.5)
    # boundary itself is fine
    assert abs(fn.evaluate(1.0) - 1.0) < 1e-10


def test_grid_1d_serialize_refuses():
    xs = np.linspace(0.0, 1.0, 12)
    fn = grid_function_1d(xs, xs, "q")
    with pytest.raises(SerializeError):
        fn.serialize()


def test_grid_2d_matches_function():
    xs = np.linspace(-1.0, 1.0, 41)
    ys = np.linspace(0.0, 2.0, 41)
    zz = np.sin(xs[:, None]) * np.cos(ys[None, :])
    fn = grid_function_2d(xs, ys, zz, ("q", "t"))
    q = np.linspace(-0.9, 0.9, 23)
    t = np.linspace(0.1, 1.9, 23)
    ref = np.sin(q) * np.cos(t)
    assert np.max(np.abs(fn.evaluate(q, t) - ref)) < 1e-7
    dq = fn.differentiate("q")
    assert np.max(np.abs(dq.evaluate(q, t) - np.cos(q) * np.cos(t))) < 1e-5
    with pytest.raises(DomainError):
        fn.evaluate(-1.2, 0.5)


def test_grid_substitution_shift():
    xs = np.linspace(-2.0, 2.0, 81)
    fn = grid_function_1d(xs, np.tanh(xs), "u")
    shifted = fn.substitute({"u": "q + v"})
    assert abs(shifted.evaluate(0.3, 0.4) - math.tanh(0.7)) < 1e-8


def test_grid_roundtrip_through_named_environment():
    xs = np.linspace(-1.0, 1.0, 41)
    ys = np.linspace(0.0, 2.0, 41)
    zz = np.sin(xs[:, None]) * np.cos(ys[None, :])
    fn = grid_function_2d(xs, ys, zz, ("a", "b")).substitute(
        {"a": "q + v/2"}) - parse_function("v*t", ("v", "t"))
    env = {}
    text = fn.serialize(env)
    assert "grid2(g0,0,0," in text
    assert list(env) == ["g0"]
    back = parse_function(text, fn.variables, grids=env)
    assert back.kind == "grid"
    assert fn.variables == ("b", "q", "v", "t")
    args = (np.linspace(0.2, 1.2, 11), np.linspace(-0.4, 0.4, 11),
            np.linspace(-0.1, 0.1, 11), np.linspace(-1.0, 1.0, 11))
    assert np.max(np.abs(back.evaluate(*args) - fn.evaluate(*args))) == 0.0


def test_grid_1d_roundtrip_and_shared_data_named_once():
    xs = np.linspace(0.0, 3.0, 61)
    fn = grid_function_1d(xs, np.sin(xs), "q")
    both = fn + fn.substitute({"q": "q + 1.0"})
    env = {}
    text = both.serialize(env)
    assert text.count("grid1(g0,0,") == 2
    assert list(env) == ["g0"]
    back = parse_function(text, ("q",), grids=env)
    qs = np.linspace(0.1, 1.9, 17)
    assert np.max(np.abs(back.evaluate(qs) - both.evaluate(qs))) == 0.0


def test_grid_reference_requires_known_name():
    with pytest.raises(ParseError):
        parse_function("grid1(g0,0,q)", ("q",))
    xs = np.linspace(0.0, 1.0, 12)
    env = {"g0": grid_function_1d(xs, xs, "q").node.data}
    with pytest.raises(ParseError):
        parse_function("grid2(g0,0,0,q,t)", ("q", "t"), grids=env)


# ---------------------------------------------------------------------------
# arithmetic


def test_arithmetic_merges_variables():
    f = parse_function("q^2.0", ("q",))
    g = parse_function("v - q", ("v", "q"))
    h = f + g
    assert h.variables == ("q", "v")
    assert h.evaluate(2.0, 5.0) == 4.0 + 3.0
    assert (f - 1.0).evaluate(2.0) == 3.0
    assert (2.0 * f).evaluate(3.0) == 18.0
    assert (-f).evaluate(2.0) == -4.0
    assert (1.0 - f).evaluate(1.0) == 0.0
    assert (f / 2.0).evaluate(2.0) == 2.0


def test_parse_function_variable_order_by_appearance():
    fn = parse_function("v*q + t")
    assert fn.variables == ("v", "q", "t")
