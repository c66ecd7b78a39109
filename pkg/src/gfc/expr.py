"""Symbolic expression trees for smooth functions of finitely many variables.

Supports exact differentiation, vectorized numpy evaluation, parsing and
printing of a small grammar (+ - * / ^, sin cos exp tanh sqrt, smooth step
and cutoff profiles), spline-backed grid interpolants, and quadratic forms.
Printed expressions reparse to the identical tree.
"""

from __future__ import annotations

import math
import re

import numpy as np
from scipy.interpolate import InterpolatedUnivariateSpline, RectBivariateSpline


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class CaptureError(ExprError):
    pass


class DomainError(ExprError):
    pass


class SerializeError(ExprError):
    pass


_FN_NAMES = ("sin", "cos", "exp", "tanh", "sqrt")

# Interior clamp for the step profile.  Inside a margin of width _DELTA (in
# normalized coordinates) the true profile and all its derivatives are below
# 1e-60, and tanh has saturated in float64, so clamped evaluation returns the
# plateau values bit-exactly without dividing by zero.
_DELTA = 0.005


# ---------------------------------------------------------------------------
# nodes


class Node:
    __slots__ = ()

    def key(self):
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.key() == other.key()

    def __hash__(self):
        return hash((type(self).__name__, self.key()))

    def __repr__(self):
        return f"<{type(self).__name__} {print_node(self)!r}>"

    def names(self):
        out = set()
        _collect_names(self, out)
        return frozenset(out)

    def diff(self, name):
        return _diff(self, name)

    def eval(self, env):
        with np.errstate(all="ignore"):
            return _ev(self, env)

    def subst(self, mapping):
        return _subst(self, mapping)


class Num(Node):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def key(self):
        return (self.value,)


class Sym(Node):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def key(self):
        return (self.name,)


class _Binary(Node):
    __slots__ = ("a", "b")

    def __init__(self, a, b):
        self.a = a
        self.b = b

    def key(self):
        return (self.a, self.b)


class Add(_Binary):
    __slots__ = ()


class Sub(_Binary):
    __slots__ = ()


class Mul(_Binary):
    __slots__ = ()


class Div(_Binary):
    __slots__ = ()


class Pow(Node):
    __slots__ = ("a", "n")

    def __init__(self, a, n):
        self.a = a
        self.n = float(n)

    def key(self):
        return (self.a, self.n)


class Neg(Node):
    __slots__ = ("a",)

    def __init__(self, a):
        self.a = a

    def key(self):
        return (self.a,)


class Fn(Node):
    __slots__ = ("fname", "a")

    def __init__(self, fname, a):
        if fname not in _FN_NAMES:
            raise ExprError(f"unknown function '{fname}'")
        self.fname = fname
        self.a = a

    def key(self):
        return (self.fname, self.a)


class Step(Node):
    """Smooth step: 0 for arg <= lo, 1 for arg >= hi, C^inf monotone between.

    ``order`` is the derivative order of the profile; positive orders vanish
    identically outside (lo, hi).
    """

    __slots__ = ("a", "lo", "hi", "order")

    def __init__(self, a, lo, hi, order=0):
        lo = float(lo)
        hi = float(hi)
        if not hi > lo:
            raise ExprError(f"step needs lo < hi, got {lo}, {hi}")
        if order < 0 or order != int(order):
            raise ExprError("step order must be a nonnegative integer")
        self.a = a
        self.lo = lo
        self.hi = hi
        self.order = int(order)

    def key(self):
        return (self.a, self.lo, self.hi, self.order)


class Cutoff(Node):
    """Even plateau profile: 1 for |arg| <= inner, 0 for |arg| >= outer."""

    __slots__ = ("a", "inner", "outer", "order")

    def __init__(self, a, inner, outer, order=0):
        inner = float(inner)
        outer = float(outer)
        if not 0.0 < inner < outer:
            raise ExprError(f"cutoff needs 0 < inner < outer, got {inner}, {outer}")
        if order < 0 or order != int(order):
            raise ExprError("cutoff order must be a nonnegative integer")
        self.a = a
        self.inner = inner
        self.outer = outer
        self.order = int(order)

    def key(self):
        return (self.a, self.inner, self.outer, self.order)


class GridData1:
    """Samples of a function of one variable plus the interpolating spline."""

    def __init__(self, xs, ys, k):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ExprError("grid samples must be two equal-length 1-d arrays")
        if not np.all(np.diff(xs) > 0):
            raise ExprError("grid abscissae must be strictly increasing")
        k = int(k)
        if k < 3:
            raise ExprError("grid interpolant needs spline order >= 3")
        if xs.size <= k:
            raise ExprError(f"need more than {k} samples for spline order {k}")
        self.xs = xs
        self.ys = ys
        self.k = k
        self.spline = InterpolatedUnivariateSpline(xs, ys, k=k, ext=0)

    @property
    def bounds(self):
        return (float(self.xs[0]), float(self.xs[-1]))


class GridData2:
    """Samples of a function of two variables on a rectangular grid."""

    def __init__(self, xs, ys, zz, kx, ky):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        zz = np.asarray(zz, dtype=float)
        if xs.ndim != 1 or ys.ndim != 1 or zz.shape != (xs.size, ys.size):
            raise ExprError("2-d grid needs zz of shape (len(xs), len(ys))")
        if not (np.all(np.diff(xs) > 0) and np.all(np.diff(ys) > 0)):
            raise ExprError("grid abscissae must be strictly increasing")
        kx = int(kx)
        ky = int(ky)
        if kx < 3 or ky < 3:
            raise ExprError("grid interpolant needs spline order >= 3")
        self.xs = xs
        self.ys = ys
        self.zz = zz
        self.kx = kx
        self.ky = ky
        self.spline = RectBivariateSpline(xs, ys, zz, kx=kx, ky=ky)

    @property
    def bounds(self):
        return (
            (float(self.xs[0]), float(self.xs[-1])),
            (float(self.ys[0]), float(self.ys[-1])),
        )


class Grid1(Node):
    __slots__ = ("data", "a", "dx")

    def __init__(self, data, a, dx=0):
        if dx > data.k:
            raise ExprError(f"spline order {data.k} has no derivative of order {dx}")
        self.data = data
        self.a = a
        self.dx = int(dx)

    def key(self):
        return (id(self.data), self.a, self.dx)


class Grid2(Node):
    __slots__ = ("data", "a", "b", "dx", "dy")

    def __init__(self, data, a, b, dx=0, dy=0):
        if dx >= data.kx or dy >= data.ky:
            raise ExprError("grid derivative order exceeds spline smoothness")
        self.data = data
        self.a = a
        self.b = b
        self.dx = int(dx)
        self.dy = int(dy)

    def key(self):
        return (id(self.data), self.a, self.b, self.dx, self.dy)


# ---------------------------------------------------------------------------
# smart constructors (used by the parser and by differentiation; they fold
# constants so derivative trees stay small)


def _is_num(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def _fold(op, a, b=None):
    """Fold a constant, or return None when the result is not a finite float."""
    try:
        v = op(a) if b is None else op(a, b)
    except (ArithmeticError, ValueError):
        return None
    if isinstance(v, complex) or not math.isfinite(v):
        return None
    return Num(v)


def _add(a, b):
    if _is_num(a) and _is_num(b):
        folded = _fold(lambda x, y: x + y, a.value, b.value)
        if folded is not None:
            return folded
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Add(a, b)


def _sub(a, b):
    if _is_num(a) and _is_num(b):
        folded = _fold(lambda x, y: x - y, a.value, b.value)
        if folded is not None:
            return folded
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _mul(a, b):
    if _is_num(a) and _is_num(b):
        folded = _fold(lambda x, y: x * y, a.value, b.value)
        if folded is not None:
            return folded
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return Mul(a, b)


def _div(a, b):
    if _is_num(a, 0.0) and not _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b) and b.value != 0.0:
        folded = _fold(lambda x, y: x / y, a.value, b.value)
        if folded is not None:
            return folded
    return Div(a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def _pow(a, n):
    n = float(n)
    if n == 1.0:
        return a
    if n == 0.0:
        return Num(1.0)
    if _is_num(a):
        folded = _fold(lambda x: x**n, a.value)
        if folded is not None:
            return folded
    return Pow(a, n)


# ---------------------------------------------------------------------------
# differentiation


def _diff(node, name):
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Sym):
        return Num(1.0 if node.name == name else 0.0)
    if isinstance(node, Add):
        return _add(_diff(node.a, name), _diff(node.b, name))
    if isinstance(node, Sub):
        return _sub(_diff(node.a, name), _diff(node.b, name))
    if isinstance(node, Mul):
        return _add(
            _mul(_diff(node.a, name), node.b), _mul(node.a, _diff(node.b, name))
        )
    if isinstance(node, Div):
        da = _diff(node.a, name)
        db = _diff(node.b, name)
        if _is_num(db, 0.0):
            return _div(da, node.b)
        return _div(
            _sub(_mul(da, node.b), _mul(node.a, db)), _pow(node.b, 2.0)
        )
    if isinstance(node, Pow):
        return _mul(
            _mul(Num(node.n), _pow(node.a, node.n - 1.0)), _diff(node.a, name)
        )
    if isinstance(node, Neg):
        return _neg(_diff(node.a, name))
    if isinstance(node, Fn):
        da = _diff(node.a, name)
        if node.fname == "sin":
            outer = Fn("cos", node.a)
        elif node.fname == "cos":
            outer = _neg(Fn("sin", node.a))
        elif node.fname == "exp":
            outer = node
        elif node.fname == "tanh":
            outer = _sub(Num(1.0), _pow(Fn("tanh", node.a), 2.0))
        elif node.fname == "sqrt":
            outer = _div(Num(0.5), Fn("sqrt", node.a))
        else:  # pragma: no cover
            raise ExprError(node.fname)
        return _mul(outer, da)
    if isinstance(node, Step):
        return _mul(
            Step(node.a, node.lo, node.hi, node.order + 1), _diff(node.a, name)
        )
    if isinstance(node, Cutoff):
        return _mul(
            Cutoff(node.a, node.inner, node.outer, node.order + 1),
            _diff(node.a, name),
        )
    if isinstance(node, Grid1):
        return _mul(
            Grid1(node.data, node.a, node.dx + 1), _diff(node.a, name)
        )
    if isinstance(node, Grid2):
        da = _diff(node.a, name)
        db = _diff(node.b, name)
        parts = []
        if not _is_num(da, 0.0):
            parts.append(
                _mul(Grid2(node.data, node.a, node.b, node.dx + 1, node.dy), da)
            )
        if not _is_num(db, 0.0):
            parts.append(
                _mul(Grid2(node.data, node.a, node.b, node.dx, node.dy + 1), db)
            )
        if not parts:
            return Num(0.0)
        out = parts[0]
        for p in parts[1:]:
            out = _add(out, p)
        return out
    raise ExprError(f"cannot differentiate {type(node).__name__}")


# ---------------------------------------------------------------------------
# the step profile and its derivative trees

_S = Sym("_s")


def _build_s0():
    # (1 + tanh((1/(1-s) - 1/s)/2)) / 2 on (0, 1)
    u = Div(
        Sub(Div(Num(1.0), Sub(Num(1.0), _S)), Div(Num(1.0), _S)),
        Num(2.0),
    )
    return Div(Add(Num(1.0), Fn("tanh", u)), Num(2.0))


_S0_TREES = [_build_s0()]


def _s0_tree(order):
    while len(_S0_TREES) <= order:
        _S0_TREES.append(_diff(_S0_TREES[-1], "_s"))
    return _S0_TREES[order]


def _profile_step(x, lo, hi, order):
    """Evaluate the order-th derivative of the step profile at x (array)."""
    x = np.asarray(x, dtype=float)
    s = (x - lo) / (hi - lo)
    inside = (s > 0.0) & (s < 1.0)
    sc = np.clip(s, _DELTA, 1.0 - _DELTA)
    tree = _s0_tree(order)
    with np.errstate(all="ignore"):
        vals = np.asarray(_ev(tree, {"_s": sc}), dtype=float)
    vals = vals / (hi - lo) ** order
    if order == 0:
        plateau = np.where(s >= 1.0, 1.0, 0.0)
    else:
        plateau = np.zeros_like(s)
    return np.where(inside, vals, plateau)


_CUTOFF_TREES = {}


def _cutoff_tree(inner, outer, order):
    key = (inner, outer, order)
    tree = _CUTOFF_TREES.get(key)
    if tree is None:
        base = _CUTOFF_TREES.get((inner, outer, 0))
        if base is None:
            s_of_y = Div(
                Sub(Num(outer * outer), Pow(Sym("_y"), 2.0)),
                Num(outer * outer - inner * inner),
            )
            base = _subst(_s0_tree(0), {"_s": s_of_y})
            _CUTOFF_TREES[(inner, outer, 0)] = base
        tree = base
        for k in range(order):
            prev = _CUTOFF_TREES.get((inner, outer, k + 1))
            if prev is None:
                prev = _diff(_CUTOFF_TREES[(inner, outer, k)], "_y")
                _CUTOFF_TREES[(inner, outer, k + 1)] = prev
            tree = prev
    return tree


def _profile_cutoff(y, inner, outer, order):
    y = np.asarray(y, dtype=float)
    y2 = y * y
    span = outer * outer - inner * inner
    s = (outer * outer - y2) / span
    inside = (s > 0.0) & (s < 1.0)
    lo2 = inner * inner + _DELTA * span
    hi2 = outer * outer - _DELTA * span
    yc = np.sign(y) * np.sqrt(np.clip(y2, lo2, hi2))
    # the profile is even; sign(0) = 0 lands on sqrt(lo2) which is fine
    yc = np.where(yc == 0.0, math.sqrt(lo2), yc)
    tree = _cutoff_tree(inner, outer, order)
    with np.errstate(all="ignore"):
        vals = np.asarray(_ev(tree, {"_y": yc}), dtype=float)
    if order == 0:
        plateau = np.where(s >= 1.0, 1.0, 0.0)
    else:
        plateau = np.zeros_like(s)
    return np.where(inside, vals, plateau)


# ---------------------------------------------------------------------------
# evaluation

_GRID_SLACK = 1e-9


def _grid_coord(vals, lo, hi, what):
    vals = np.asarray(vals, dtype=float)
    slack = _GRID_SLACK * max(hi - lo, 1.0)
    bad = (vals < lo - slack) | (vals > hi + slack) | ~np.isfinite(vals)
    if np.any(bad):
        v = float(np.asarray(vals)[bad][0] if vals.ndim else vals)
        raise DomainError(
            f"{what} argument {v!r} outside sample range [{lo}, {hi}]"
        )
    return np.clip(vals, lo, hi)


def _ev(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Sym):
        try:
            return env[node.name]
        except KeyError:
            raise ExprError(f"unbound variable '{node.name}'") from None
    if isinstance(node, Add):
        return _ev(node.a, env) + _ev(node.b, env)
    if isinstance(node, Sub):
        return _ev(node.a, env) - _ev(node.b, env)
    if isinstance(node, Mul):
        return _ev(node.a, env) * _ev(node.b, env)
    if isinstance(node, Div):
        return _ev(node.a, env) / _ev(node.b, env)
    if isinstance(node, Pow):
        return np.power(_ev(node.a, env), node.n)
    if isinstance(node, Neg):
        return -_ev(node.a, env)
    if isinstance(node, Fn):
        a = _ev(node.a, env)
        if node.fname == "sin":
            return np.sin(a)
        if node.fname == "cos":
            return np.cos(a)
        if node.fname == "exp":
            return np.exp(a)
        if node.fname == "tanh":
            return np.tanh(a)
        if node.fname == "sqrt":
            return np.sqrt(a)
        raise ExprError(node.fname)  # pragma: no cover
    if isinstance(node, Step):
        return _profile_step(_ev(node.a, env), node.lo, node.hi, node.order)
    if isinstance(node, Cutoff):
        return _profile_cutoff(
            _ev(node.a, env), node.inner, node.outer, node.order
        )
    if isinstance(node, Grid1):
        lo, hi = node.data.bounds
        x = _grid_coord(_ev(node.a, env), lo, hi, "grid")
        shape = x.shape
        out = node.data.spline(np.ravel(x), nu=node.dx)
        return np.reshape(out, shape)
    if isinstance(node, Grid2):
        (xlo, xhi), (ylo, yhi) = node.data.bounds
        x = _grid_coord(_ev(node.a, env), xlo, xhi, "grid")
        y = _grid_coord(_ev(node.b, env), ylo, yhi, "grid")
        x, y = np.broadcast_arrays(x, y)
        shape = x.shape
        out = node.data.spline.ev(np.ravel(x), np.ravel(y), dx=node.dx, dy=node.dy)
        return np.reshape(out, shape)
    raise ExprError(f"cannot evaluate {type(node).__name__}")


def _collect_names(node, out):
    if isinstance(node, Sym):
        out.add(node.name)
    elif isinstance(node, (Add, Sub, Mul, Div)):
        _collect_names(node.a, out)
        _collect_names(node.b, out)
    elif isinstance(node, (Pow, Neg, Fn, Step, Cutoff, Grid1)):
        _collect_names(node.a, out)
    elif isinstance(node, Grid2):
        _collect_names(node.a, out)
        _collect_names(node.b, out)


def _subst(node, mapping):
    if isinstance(node, Sym):
        return mapping.get(node.name, node)
    if isinstance(node, Num):
        return node
    if isinstance(node, (Add, Sub, Mul, Div)):
        return type(node)(_subst(node.a, mapping), _subst(node.b, mapping))
    if isinstance(node, Pow):
        return Pow(_subst(node.a, mapping), node.n)
    if isinstance(node, Neg):
        return Neg(_subst(node.a, mapping))
    if isinstance(node, Fn):
        return Fn(node.fname, _subst(node.a, mapping))
    if isinstance(node, Step):
        return Step(_subst(node.a, mapping), node.lo, node.hi, node.order)
    if isinstance(node, Cutoff):
        return Cutoff(_subst(node.a, mapping), node.inner, node.outer, node.order)
    if isinstance(node, Grid1):
        return Grid1(node.data, _subst(node.a, mapping), node.dx)
    if isinstance(node, Grid2):
        return Grid2(
            node.data, _subst(node.a, mapping), _subst(node.b, mapping),
            node.dx, node.dy,
        )
    raise ExprError(f"cannot substitute into {type(node).__name__}")


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[a-z][a-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


class _Parser:
    def __init__(self, text, grids=None):
        self.text = text
        self.grids = grids
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                stripped = text[pos:].lstrip()
                if not stripped:
                    break
                at = len(text) - len(stripped)
                raise ParseError(f"unexpected character {text[at]!r}", at)
            pos = m.end()
            if m.group("num") is not None:
                self.tokens.append(("num", m.group("num"), m.start("num")))
            elif m.group("name") is not None:
                self.tokens.append(("name", m.group("name"), m.start("name")))
            else:
                self.tokens.append(("op", m.group("op"), m.start("op")))
        self.i = 0

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", len(self.text))

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, op):
        kind, val, off = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val!r}", off)

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing {val!r}", off)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.term()
                node = _add(node, rhs) if val == "+" else _sub(node, rhs)
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.unary()
                node = _mul(node, rhs) if val == "*" else _div(node, rhs)
            else:
                return node

    def unary(self):
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return _neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, off = self.peek()
        if kind == "op" and val == "^":
            self.next()
            return _pow(base, self.exponent())
        return base

    def exponent(self):
        kind, val, off = self.next()
        sign = 1.0
        if kind == "op" and val == "-":
            sign = -1.0
            kind, val, off = self.next()
        if kind != "num":
            raise ParseError("exponent must be a numeric constant", off)
        return sign * float(val)

    def number_arg(self):
        kind, val, off = self.next()
        sign = 1.0
        if kind == "op" and val == "-":
            sign = -1.0
            kind, val, off = self.next()
        if kind != "num":
            raise ParseError("expected a numeric constant", off)
        return sign * float(val)

    def atom(self):
        kind, val, off = self.next()
        if kind == "num":
            return Num(float(val))
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            nk, nv, noff = self.peek()
            if nk == "op" and nv == "(":
                return self.call(val, off)
            return Sym(val)
        raise ParseError(f"unexpected {val!r}", off)

    def call(self, fname, off):
        self.expect("(")
        if fname in _FN_NAMES:
            arg = self.expr()
            self.expect(")")
            return Fn(fname, arg)
        if fname in ("cutoff", "step"):
            arg = self.expr()
            self.expect(",")
            p1 = self.number_arg()
            self.expect(",")
            p2 = self.number_arg()
            order = 0
            kind, val, o2 = self.peek()
            if kind == "op" and val == ",":
                self.next()
                ov = self.number_arg()
                if ov != int(ov) or ov < 0:
                    raise ParseError("profile order must be a nonnegative integer", o2)
                order = int(ov)
            self.expect(")")
            if fname == "cutoff":
                return Cutoff(arg, p1, p2, order)
            return Step(arg, p1, p2, order)
        if fname in ("grid1", "grid2"):
            return self.grid_call(fname, off)
        raise ParseError(f"unknown function '{fname}'", off)

    def grid_call(self, fname, off):
        kind, name, noff = self.next()
        if kind != "name":
            raise ParseError("expected a grid name", noff)
        if self.grids is None or name not in self.grids:
            raise ParseError(f"unknown grid '{name}'", noff)
        data = self.grids[name]
        want = GridData1 if fname == "grid1" else GridData2
        if not isinstance(data, want):
            raise ParseError(
                f"grid '{name}' does not hold {fname} data", noff)
        self.expect(",")
        dx = self.number_arg()
        if dx != int(dx) or dx < 0:
            raise ParseError("derivative order must be a nonnegative integer",
                             noff)
        self.expect(",")
        if fname == "grid1":
            arg = self.expr()
            self.expect(")")
            return Grid1(data, arg, int(dx))
        dy = self.number_arg()
        if dy != int(dy) or dy < 0:
            raise ParseError("derivative order must be a nonnegative integer",
                             noff)
        self.expect(",")
        a = self.expr()
        self.expect(",")
        b = self.expr()
        self.expect(")")
        return Grid2(data, a, b, int(dx), int(dy))


def parse(text, grids=None):
    """Parse an expression string into a tree.

    ``grids`` maps names to GridData1/GridData2 objects that the text may
    reference via grid1(name, dx, x) and grid2(name, dx, dy, x, y).
    """
    return _Parser(text, grids).parse()


# ---------------------------------------------------------------------------
# printing

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _prec(node):
    if isinstance(node, (Add, Sub)):
        return _PREC_ADD
    if isinstance(node, (Mul, Div)):
        return _PREC_MUL
    if isinstance(node, Neg):
        return _PREC_NEG
    if isinstance(node, Pow):
        return _PREC_POW
    if isinstance(node, Num) and node.value < 0:
        return _PREC_NEG
    return _PREC_ATOM


def _num_str(v):
    return repr(v)


def _grid_name(grids, data):
    for name, known in grids.items():
        if known is data:
            return name
    name = f"g{len(grids)}"
    grids[name] = data
    return name


def print_node(node, grids=None):
    """Expression text for a tree.

    ``grids`` is an optional mutable dict collecting grid data referenced
    from the text as grid1(name, dx, x) / grid2(name, dx, dy, x, y); without
    it grid-backed trees have no expression form and raise.
    """
    if isinstance(node, Num):
        return _num_str(node.value)
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Add):
        return (f"{_wrap(node.a, _PREC_ADD, grids)} + "
                f"{_wrap(node.b, _PREC_ADD + 1, grids)}")
    if isinstance(node, Sub):
        return (f"{_wrap(node.a, _PREC_ADD, grids)} - "
                f"{_wrap(node.b, _PREC_ADD + 1, grids)}")
    if isinstance(node, Mul):
        return (f"{_wrap(node.a, _PREC_MUL, grids)}*"
                f"{_wrap(node.b, _PREC_MUL + 1, grids)}")
    if isinstance(node, Div):
        return (f"{_wrap(node.a, _PREC_MUL, grids)}/"
                f"{_wrap(node.b, _PREC_MUL + 1, grids)}")
    if isinstance(node, Neg):
        return f"-{_wrap(node.a, _PREC_NEG, grids)}"
    if isinstance(node, Pow):
        return f"{_wrap(node.a, _PREC_POW + 1, grids)}^{_num_str(node.n)}"
    if isinstance(node, Fn):
        return f"{node.fname}({print_node(node.a, grids)})"
    if isinstance(node, Step):
        tail = f",{node.order}" if node.order else ""
        return (f"step({print_node(node.a, grids)},{_num_str(node.lo)},"
                f"{_num_str(node.hi)}{tail})")
    if isinstance(node, Cutoff):
        tail = f",{node.order}" if node.order else ""
        return (
            f"cutoff({print_node(node.a, grids)},{_num_str(node.inner)},"
            f"{_num_str(node.outer)}{tail})"
        )
    if isinstance(node, Grid1):
        if grids is None:
            raise SerializeError("grid-backed functions have no expression form")
        return (f"grid1({_grid_name(grids, node.data)},{node.dx},"
                f"{print_node(node.a, grids)})")
    if isinstance(node, Grid2):
        if grids is None:
            raise SerializeError("grid-backed functions have no expression form")
        return (f"grid2({_grid_name(grids, node.data)},{node.dx},{node.dy},"
                f"{print_node(node.a, grids)},{print_node(node.b, grids)})")
    raise ExprError(f"cannot print {type(node).__name__}")


def _wrap(node, min_prec, grids=None):
    s = print_node(node, grids)
    if _prec(node) < min_prec:
        return f"({s})"
    return s


# ---------------------------------------------------------------------------
# SmoothFunction


class SmoothFunction:
    """A smooth function of named variables, with exact derivatives.

    ``kind`` is "expression", "grid", or "quadratic".  Quadratic functions
    additionally carry the symmetric matrix A with value x^T A x.
    """

    def __init__(self, node, variables, kind="expression", quad=None):
        self.node = node
        self.variables = tuple(variables)
        if len(set(self.variables)) != len(self.variables):
            raise ExprError(f"duplicate variable in {self.variables}")
        missing = node.names() - set(self.variables)
        missing -= {"_s", "_y"}
        if missing:
            raise ExprError(
                f"expression uses {sorted(missing)} not listed in variables"
            )
        self.kind = kind
        self.quad = None if quad is None else np.asarray(quad, dtype=float)
        self._dcache = {}

    def __repr__(self):
        try:
            body = print_node(self.node)
        except SerializeError:
            body = f"<{self.kind}>"
        return f"SmoothFunction({body!r}, variables={self.variables})"

    def evaluate(self, *args):
        if len(args) != len(self.variables):
            raise ExprError(
                f"expected {len(self.variables)} arguments "
                f"{self.variables}, got {len(args)}"
            )
        arrs = [np.asarray(a, dtype=float) for a in args]
        if len(arrs) > 1:
            arrs = list(np.broadcast_arrays(*arrs))
        env = dict(zip(self.variables, arrs))
        with np.errstate(all="ignore"):
            out = _ev(self.node, env)
        out = np.asarray(out, dtype=float)
        if arrs and out.shape != arrs[0].shape:
            out = np.broadcast_to(out, arrs[0].shape).copy()
        if out.ndim == 0:
            return float(out)
        return out

    def differentiate(self, var):
        if var not in self.variables:
            raise ExprError(f"no variable {var!r} in {self.variables}")
        cached = self._dcache.get(var)
        if cached is None:
            node = _diff(self.node, var)
            kind = "grid" if self.kind == "grid" else "expression"
            cached = SmoothFunction(node, self.variables, kind=kind)
            self._dcache[var] = cached
        return cached

    def substitute(self, mapping):
        """Simultaneously replace variables.

        Values may be strings, nodes, or SmoothFunctions.  A replacement may
        mention its own key but not another key of the same mapping.
        """
        node_map = {}
        for key, val in mapping.items():
            if key not in self.variables:
                raise ExprError(f"no variable {key!r} in {self.variables}")
            if isinstance(val, SmoothFunction):
                val = val.node
            elif isinstance(val, str):
                val = parse(val)
            elif not isinstance(val, Node):
                val = Num(val)
            node_map[key] = val
        for key, val in node_map.items():
            clash = (val.names() & set(node_map)) - {key}
            if clash:
                raise CaptureError(
                    f"replacement for {key!r} introduces {sorted(clash)}, "
                    "which are themselves being replaced"
                )
        new_node = _subst(self.node, node_map)
        new_names = new_node.names() - {"_s", "_y"}
        ordered = [v for v in self.variables if v in new_names]
        for key in mapping:
            val = node_map[key]
            for name in sorted(val.names()):
                if name in new_names and name not in ordered:
                    ordered.append(name)
        for name in sorted(new_names):
            if name not in ordered:
                ordered.append(name)
        kind = "grid" if self.kind == "grid" else "expression"
        return SmoothFunction(new_node, ordered, kind=kind)

    def rename(self, mapping):
        """Rename variables (bijectively on the affected names)."""
        node = _subst(self.node, {k: Sym(v) for k, v in mapping.items()})
        variables = tuple(mapping.get(v, v) for v in self.variables)
        return SmoothFunction(node, variables, kind=self.kind, quad=self.quad)

    def with_variables(self, variables):
        """Same function viewed with a different (superset) variable list."""
        return SmoothFunction(self.node, variables, kind=self.kind, quad=self.quad)

    def serialize(self, grids=None):
        """Expression text; pass a dict to collect referenced grid data."""
        return print_node(self.node, grids)

    # arithmetic; variable tuples merge keeping left order then new rights
    def _coerce(self, other):
        if isinstance(other, SmoothFunction):
            return other
        return SmoothFunction(Num(other), ())

    def _merge_vars(self, other):
        merged = list(self.variables)
        for v in other.variables:
            if v not in merged:
                merged.append(v)
        return tuple(merged)

    def _binop(self, other, ctor):
        other = self._coerce(other)
        variables = self._merge_vars(other)
        kind = "expression"
        if "grid" in (self.kind, other.kind):
            kind = "grid"
        return SmoothFunction(ctor(self.node, other.node), variables, kind=kind)

    def __add__(self, other):
        return self._binop(other, _add)

    def __radd__(self, other):
        return self._coerce(other)._binop(self, _add)

    def __sub__(self, other):
        return self._binop(other, _sub)

    def __rsub__(self, other):
        return self._coerce(other)._binop(self, _sub)

    def __mul__(self, other):
        return self._binop(other, _mul)

    def __rmul__(self, other):
        return self._coerce(other)._binop(self, _mul)

    def __truediv__(self, other):
        return self._binop(other, _div)

    def __neg__(self):
        return SmoothFunction(_neg(self.node), self.variables, kind=self.kind)


def parse_function(text, variables=None, grids=None):
    """Parse an expression into a SmoothFunction.

    With ``variables=None`` the variables are the free names in order of
    first appearance in the text.  ``grids`` names grid data the text may
    reference (see parse).
    """
    node = parse(text, grids)
    gridded = []
    seen = []

    def walk(n):
        if isinstance(n, Sym) and n.name not in seen:
            seen.append(n.name)
        if isinstance(n, (Grid1, Grid2)):
            gridded.append(n)
        for attr in ("a", "b"):
            child = getattr(n, attr, None)
            if isinstance(child, Node):
                walk(child)

    walk(node)
    if variables is None:
        variables = tuple(seen)
    kind = "grid" if gridded else "expression"
    return SmoothFunction(node, tuple(variables), kind=kind)


def quadratic_form(matrix, variables):
    """The quadratic function x^T A x (no 1/2) for symmetric A."""
    a = np.asarray(matrix, dtype=float)
    variables = tuple(variables)
    n = len(variables)
    if a.shape != (n, n):
        raise ExprError(f"matrix shape {a.shape} does not match {n} variables")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ExprError("quadratic form matrix must be symmetric")
    node = Num(0.0)
    for i in range(n):
        if a[i, i] != 0.0:
            node = _add(node, _mul(Num(a[i, i]), _pow(Sym(variables[i]), 2.0)))
        for j in range(i + 1, n):
            c = a[i, j] + a[j, i]
            if c != 0.0:
                node = _add(
                    node, _mul(Num(c), _mul(Sym(variables[i]), Sym(variables[j])))
                )
    return SmoothFunction(node, variables, kind="quadratic", quad=a)


def grid_function_1d(xs, ys, var, k=None):
    """Spline interpolant of samples (xs, ys) as a function of ``var``."""
    xs = np.asarray(xs, dtype=float)
    if k is None:
        k = 5 if xs.size > 5 else 3
    data = GridData1(xs, ys, k)
    fn = SmoothFunction(Grid1(data, Sym(var)), (var,), kind="grid")
    fn.grid_data = data
    return fn


def grid_function_2d(xs, ys, zz, variables, k=None):
    """Spline interpolant on a rectangular grid; variables = (xvar, yvar)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if k is None:
        k = 5 if min(xs.size, ys.size) > 5 else 3
    data = GridData2(xs, ys, zz, k, k)
    xv, yv = variables
    fn = SmoothFunction(Grid2(data, Sym(xv), Sym(yv)), (xv, yv), kind="grid")
    fn.grid_data = data
    return fn


def make_step(var, lo, hi):
    """Monotone C^inf step in ``var``: 0 below lo, 1 above hi."""
    return SmoothFunction(Step(Sym(var), lo, hi), (var,))


def make_cutoff(inner, outer, var="q"):
    """Even C^inf plateau in ``var``: 1 on [-inner, inner], 0 outside (-outer, outer)."""
    return SmoothFunction(Cutoff(Sym(var), inner, outer), (var,))


def zero_function(variables=()):
    return SmoothFunction(Num(0.0), tuple(variables))
