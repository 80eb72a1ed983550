"""Symbolic scalar fields on coordinate charts of R^d.

Expressions are immutable, hash-consed DAGs.  Every operation that builds a
node goes through :func:`_mk`, so structurally identical subtrees are the same
Python object; differentiation is memoised per (node, coordinate) and
evaluation compiles the DAG into straight-line numpy code with one temporary
per distinct node.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.polynomial import Polynomial

__all__ = [
    "FieldExpr", "FieldBundle", "Box", "Profile", "SupNorm",
    "FieldDomainError", "ParseError", "DimensionError",
    "parse_field", "differentiate", "sup_norm", "c1_seminorm",
    "default_coords", "constant", "coordinate", "apply", "compose_profile", "bump", "smoothstep",
    "plateau", "grid_max",
]


class FieldDomainError(ValueError):
    """Evaluation left the domain of a primitive (sqrt of a negative, ...)."""


class DimensionError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------

class Node:
    __slots__ = ("op", "args", "data", "__weakref__")

    def __init__(self, op, args, data):
        self.op = op
        self.args = args
        self.data = data

    def __repr__(self):
        return f"Node({self.op!r}, {self.data!r}, nargs={len(self.args)})"


_INTERN: dict = {}


def _mk(op: str, args: tuple = (), data=None) -> Node:
    key = (op, args, data)
    node = _INTERN.get(key)
    if node is None:
        node = Node(op, args, data)
        _INTERN[key] = node
    return node


def _const(v) -> Node:
    v = float(v)
    if v == 0.0:
        v = 0.0  # fold -0.0
    return _mk("const", (), v)


ZERO = _const(0.0)
ONE = _const(1.0)


def _is_const(n: Node, v=None) -> bool:
    return n.op == "const" and (v is None or n.data == v)


def _add(*terms: Node) -> Node:
    flat = []
    c = 0.0
    for t in terms:
        parts = t.args if t.op == "add" else (t,)
        for p in parts:
            if p.op == "const":
                c += p.data
            else:
                flat.append(p)
    if c != 0.0:
        flat.append(_const(c))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return _mk("add", tuple(flat))


def _mul(*factors: Node) -> Node:
    flat = []
    c = 1.0
    for f in factors:
        parts = f.args if f.op == "mul" else (f,)
        for p in parts:
            if p.op == "const":
                c *= p.data
            else:
                flat.append(p)
    if c == 0.0:
        return ZERO
    if not flat:
        return _const(c)
    if c == -1.0:
        inner = flat[0] if len(flat) == 1 else _mk("mul", tuple(flat))
        return _neg(inner)
    if c != 1.0:
        flat.insert(0, _const(c))
    if len(flat) == 1:
        return flat[0]
    return _mk("mul", tuple(flat))


def _neg(a: Node) -> Node:
    if a.op == "const":
        return _const(-a.data)
    if a.op == "neg":
        return a.args[0]
    return _mk("neg", (a,))


def _div(a: Node, b: Node) -> Node:
    if _is_const(b, 0.0):
        raise FieldDomainError("division by the constant zero")
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    if a.op == "const" and b.op == "const":
        return _const(a.data / b.data)
    return _mk("div", (a, b))


def _pow(a: Node, b: Node) -> Node:
    if b.op == "const":
        if b.data == 0.0:
            return ONE
        if b.data == 1.0:
            return a
        if a.op == "const":
            return _const(_eval_numeric(a.data ** b.data))
    if _is_const(a, 1.0):
        return ONE
    return _mk("pow", (a, b))


def _eval_numeric(v):
    if isinstance(v, complex) or not math.isfinite(v):
        raise FieldDomainError("constant folding produced a non-real value")
    return v


# univariate primitives --------------------------------------------------------

def _flat_poly(order: int) -> Polynomial:
    """p_k with d^k/du^k exp(-1/u) = exp(-1/u) p_k(1/u) for u > 0."""
    p = Polynomial([1.0])
    w2 = Polynomial([0.0, 0.0, 1.0])
    for _ in range(order):
        p = w2 * (p - p.deriv())
    return p


_FLAT_CACHE: dict[int, Polynomial] = {}


def _flat(order: int, u):
    p = _FLAT_CACHE.get(order)
    if p is None:
        p = _FLAT_CACHE[order] = _flat_poly(order)
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    live = u > 1e-3  # exp(-1000) underflows anyway
    if np.any(live):
        w = 1.0 / u[live]
        out[live] = np.exp(-w) * p(w)
    return out


def _sqrt(a):
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise FieldDomainError("sqrt of a negative argument")
    return np.sqrt(a)


def _log(a):
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise FieldDomainError("log of a non-positive argument")
    return np.log(a)


def _power(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    nonint = b != np.round(b)
    if np.any((a < 0) & nonint):
        raise FieldDomainError("fractional power of a negative base")
    with np.errstate(divide="ignore"):
        return np.power(a, b)


_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": _sqrt,
    "log": _log,
}


def _func(name: str, a: Node, order: int = 0) -> Node:
    if a.op == "const":
        if name == "flat":
            return _const(float(_flat(order, np.array([a.data]))[0]))
        return _const(_eval_numeric(float(_FUNCS[name](np.array(a.data)))))
    return _mk("func", (a,), (name, order))


def _profile(p: "Profile", a: Node, order: int = 0) -> Node:
    if a.op == "const":
        return _const(float(p(np.array([a.data]), order)[0]))
    return _mk("profile", (a,), (p, order))


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

_DIFF_CACHE: dict = {}


def _d(n: Node, i: int) -> Node:
    key = (n, i)
    hit = _DIFF_CACHE.get(key)
    if hit is not None:
        return hit
    op = n.op
    if op == "const":
        r = ZERO
    elif op == "var":
        r = ONE if n.data == i else ZERO
    elif op == "add":
        r = _add(*(_d(t, i) for t in n.args))
    elif op == "neg":
        r = _neg(_d(n.args[0], i))
    elif op == "mul":
        terms = []
        for j, fj in enumerate(n.args):
            dj = _d(fj, i)
            if _is_const(dj, 0.0):
                continue
            others = n.args[:j] + n.args[j + 1:]
            terms.append(_mul(*others, dj))
        r = _add(*terms)
    elif op == "div":
        a, b = n.args
        da, db = _d(a, i), _d(b, i)
        if _is_const(db, 0.0):
            r = _div(da, b)
        else:
            r = _div(_add(_mul(da, b), _neg(_mul(a, db))), _pow(b, _const(2.0)))
    elif op == "pow":
        a, b = n.args
        da = _d(a, i)
        if b.op == "const":
            r = _mul(b, _pow(a, _const(b.data - 1.0)), da)
        else:
            db = _d(b, i)
            r = _mul(n, _add(_mul(db, _func("log", a)), _div(_mul(b, da), a)))
    elif op == "func":
        (a,) = n.args
        name, order = n.data
        da = _d(a, i)
        if _is_const(da, 0.0):
            r = ZERO
        elif name == "sin":
            r = _mul(_func("cos", a), da)
        elif name == "cos":
            r = _neg(_mul(_func("sin", a), da))
        elif name == "exp":
            r = _mul(n, da)
        elif name == "sqrt":
            r = _div(da, _mul(_const(2.0), n))
        elif name == "log":
            r = _div(da, a)
        elif name == "flat":
            r = _mul(_func("flat", a, order + 1), da)
        else:  # pragma: no cover - closed set
            raise AssertionError(name)
    elif op == "profile":
        (a,) = n.args
        prof, order = n.data
        da = _d(a, i)
        r = ZERO if _is_const(da, 0.0) else _mul(_profile(prof, a, order + 1), da)
    else:  # pragma: no cover
        raise AssertionError(op)
    _DIFF_CACHE[key] = r
    return r


# ---------------------------------------------------------------------------
# compilation to numpy
# ---------------------------------------------------------------------------

def _topo(root) -> list[Node]:
    order, seen = [], set()
    roots = root if isinstance(root, (list, tuple)) else [root]
    stack = [(r, False) for r in reversed(roots)]
    while stack:
        n, done = stack.pop()
        if done:
            order.append(n)
            continue
        if id(n) in seen:
            continue
        seen.add(id(n))
        stack.append((n, True))
        for a in n.args:
            if id(a) not in seen:
                stack.append((a, False))
    return order


def _compile(root) -> Callable:
    """Straight-line numpy code for one node, or a list of nodes sharing temporaries."""
    names: dict[int, str] = {}
    ns: dict = {"np": np, "_sqrt": _sqrt, "_log": _log, "_flat": _flat,
                "_power": _power}
    lines = ["def _f(c):"]
    for k, n in enumerate(_topo(root)):
        op = n.op
        if op == "const":
            names[id(n)] = repr(n.data)
            continue
        if op == "var":
            names[id(n)] = f"c[{n.data}]"
            continue
        a = [names[id(x)] for x in n.args]
        if op == "add":
            expr = " + ".join(a)
        elif op == "mul":
            expr = " * ".join(a)
        elif op == "neg":
            expr = f"-({a[0]})"
        elif op == "div":
            expr = f"({a[0]}) / ({a[1]})"
        elif op == "pow":
            b = n.args[1]
            if b.op == "const" and b.data == round(b.data) and abs(b.data) <= 16:
                e = int(b.data)
                expr = f"({a[0]}) ** {e}" if e > 0 else f"1.0 / (({a[0]}) ** {-e})"
            else:
                expr = f"_power({a[0]}, {a[1]})"
        elif op == "func":
            name, order = n.data
            if name == "flat":
                expr = f"_flat({order}, {a[0]})"
            elif name in ("sqrt", "log"):
                expr = f"_{name}({a[0]})"
            else:
                expr = f"np.{name}({a[0]})"
        elif op == "profile":
            pname = f"_p{k}"
            ns[pname] = n.data[0]
            expr = f"{pname}({a[0]}, {n.data[1]})"
        else:  # pragma: no cover
            raise AssertionError(op)
        tmp = f"t{k}"
        lines.append(f"    {tmp} = {expr}")
        names[id(n)] = tmp
    if isinstance(root, (list, tuple)):
        lines.append("    return [" + ", ".join(names[id(r)] for r in root) + "]")
    else:
        lines.append(f"    return {names[id(root)]}")
    exec("\n".join(lines), ns)
    return ns["_f"]


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_PREC = {"add": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _fmt_const(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _to_text(n: Node, coords: Sequence[str]) -> str:
    memo: dict[int, tuple[str, int]] = {}

    def go(n: Node) -> tuple[str, int]:
        hit = memo.get(id(n))
        if hit is not None:
            return hit
        op = n.op
        if op == "const":
            r = (_fmt_const(n.data), 5 if n.data >= 0 else 3)
        elif op == "var":
            r = (coords[n.data], 5)
        elif op == "add":
            parts = []
            for j, t in enumerate(n.args):
                if t.op == "neg" and j > 0:
                    s, p = go(t.args[0])
                    parts.append(" - " + (s if p > 1 else f"({s})"))
                elif t.op == "const" and t.data < 0 and j > 0:
                    parts.append(" - " + _fmt_const(-t.data))
                else:
                    s, p = go(t)
                    parts.append((" + " if j else "") + (s if p > 1 else f"({s})"))
            r = ("".join(parts), 1)
        elif op == "mul":
            parts = []
            for t in n.args:
                s, p = go(t)
                parts.append(s if p > 3 else f"({s})")
            r = ("*".join(parts), 2)
        elif op == "div":
            sa, pa = go(n.args[0])
            sb, pb = go(n.args[1])
            r = ((sa if pa >= 2 else f"({sa})") + "/" + (sb if pb > 2 else f"({sb})"), 2)
        elif op == "neg":
            s, p = go(n.args[0])
            r = ("-" + (s if p > 2 else f"({s})"), 3)
        elif op == "pow":
            sa, pa = go(n.args[0])
            sb, pb = go(n.args[1])
            r = ((sa if pa > 4 else f"({sa})") + "^" + (sb if pb > 4 else f"({sb})"), 4)
        elif op == "func":
            name, order = n.data
            s, _ = go(n.args[0])
            fname = name if order == 0 else f"{name}_d{order}"
            r = (f"{fname}({s})", 5)
        elif op == "profile":
            prof, order = n.data
            s, _ = go(n.args[0])
            fname = prof.name if order == 0 else f"{prof.name}_d{order}"
            r = (f"{fname}({s})", 5)
        else:  # pragma: no cover
            raise AssertionError(op)
        memo[id(n)] = r
        return r

    return go(n)[0]


# ---------------------------------------------------------------------------
# public expression type
# ---------------------------------------------------------------------------

def default_coords(dim: int) -> tuple[str, ...]:
    """Coordinate names used when a chart does not name its own."""
    if dim == 2:
        return ("x", "y")
    if dim == 3:
        return ("x", "y", "z")
    if dim == 4:
        return ("x", "y", "z", "u")
    if dim % 2 == 0:
        return tuple(s for i in range(1, dim // 2 + 1) for s in (f"x{i}", f"y{i}"))
    return tuple(f"x{i}" for i in range(1, dim + 1))


class FieldExpr:
    """A smooth scalar field on a chart with named coordinates.

    Supports ``+ - * / **`` with other fields on the same chart and with
    real scalars.  Calling the field evaluates it: ``f(x, y)`` for scalars or
    broadcastable arrays, or ``f.evaluate(points)`` for an ``(..., dim)``
    array.
    """

    __slots__ = ("node", "coords", "_fn")

    def __init__(self, node: Node, coords: Sequence[str]):
        self.node = node
        self.coords = tuple(coords)
        self._fn = None

    @property
    def dim(self) -> int:
        return len(self.coords)

    # -- construction helpers ---------------------------------------------
    def _wrap(self, node: Node) -> "FieldExpr":
        return FieldExpr(node, self.coords)

    def _other(self, other) -> Node:
        if isinstance(other, FieldExpr):
            if other.coords != self.coords:
                raise DimensionError(
                    f"chart mismatch: {self.coords} vs {other.coords}")
            return other.node
        if isinstance(other, (int, float, np.floating, np.integer)):
            return _const(other)
        return NotImplemented

    def __add__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_add(self.node, n))

    def __radd__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_add(n, self.node))

    def __sub__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_add(self.node, _neg(n)))

    def __rsub__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_add(n, _neg(self.node)))

    def __mul__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_mul(self.node, n))

    def __rmul__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_mul(n, self.node))

    def __truediv__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_div(self.node, n))

    def __rtruediv__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_div(n, self.node))

    def __pow__(self, o):
        n = self._other(o)
        return NotImplemented if n is NotImplemented else self._wrap(_pow(self.node, n))

    def __neg__(self):
        return self._wrap(_neg(self.node))

    def __pos__(self):
        return self

    def same_as(self, other: "FieldExpr") -> bool:
        """Structural identity (hash-consed nodes)."""
        return self.node is other.node and self.coords == other.coords

    @property
    def is_zero(self) -> bool:
        return _is_const(self.node, 0.0)

    @property
    def is_constant(self) -> bool:
        return self.node.op == "const"

    # -- calculus -----------------------------------------------------------
    def index(self, coord) -> int:
        if isinstance(coord, str):
            try:
                return self.coords.index(coord)
            except ValueError:
                raise DimensionError(f"unknown coordinate {coord!r}") from None
        i = int(coord)
        if not 0 <= i < self.dim:
            raise DimensionError(f"coordinate index {i} out of range for dim {self.dim}")
        return i

    def diff(self, coord) -> "FieldExpr":
        return self._wrap(_d(self.node, self.index(coord)))

    def gradient(self) -> list["FieldExpr"]:
        return [self.diff(i) for i in range(self.dim)]

    # -- evaluation ---------------------------------------------------------
    def evaluate(self, points) -> np.ndarray:
        """Evaluate on an array of shape ``(..., dim)``."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim:
            raise DimensionError(f"points have {pts.shape[-1]} coords, field has {self.dim}")
        cols = [pts[..., i] for i in range(self.dim)]
        return self._eval_cols(cols, pts.shape[:-1])

    def _eval_cols(self, cols, shape) -> np.ndarray:
        if self._fn is None:
            self._fn = _compile(self.node)
        with np.errstate(all="ignore"):
            out = self._fn(cols)
        out = np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
        if not np.all(np.isfinite(out)):
            raise FieldDomainError("field is not finite at some evaluation point")
        return out

    def __call__(self, *args):
        if len(args) == 1 and self.dim != 1:
            return self.evaluate(args[0])
        if len(args) != self.dim:
            raise DimensionError(f"expected {self.dim} coordinates, got {len(args)}")
        arrs = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        out = self._eval_cols(list(arrs), arrs[0].shape)
        return float(out) if out.ndim == 0 else out

    def at(self, point) -> float:
        return float(self.evaluate(np.asarray(point, dtype=float)[None, :])[0])

    # -- text ---------------------------------------------------------------
    def __str__(self):
        return _to_text(self.node, self.coords)

    def __repr__(self):
        return f"FieldExpr({str(self)!r}, coords={self.coords})"

    def profiles(self) -> dict[str, "Profile"]:
        """Profiles referenced anywhere in the expression, by name."""
        return {n.data[0].name: n.data[0] for n in _topo(self.node) if n.op == "profile"}

    def node_count(self) -> int:
        return len(_topo(self.node))


class FieldBundle:
    """Several fields on one chart evaluated together with shared subexpressions."""

    def __init__(self, fields: Sequence[FieldExpr]):
        fields = list(fields)
        if not fields or any(f.coords != fields[0].coords for f in fields):
            raise DimensionError("bundle members must share a chart")
        self.coords = fields[0].coords
        self._fn = _compile([f.node for f in fields])
        self.size = len(fields)

    def evaluate(self, points) -> np.ndarray:
        """Array of shape ``(..., size)``."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != len(self.coords):
            raise DimensionError("points do not match the chart dimension")
        cols = [pts[..., i] for i in range(len(self.coords))]
        with np.errstate(all="ignore"):
            outs = self._fn(cols)
        shape = pts.shape[:-1]
        out = np.empty(shape + (len(outs),))
        for k, o in enumerate(outs):
            out[..., k] = o
        if not np.all(np.isfinite(out)):
            raise FieldDomainError("field is not finite at some evaluation point")
        return out


def constant(value: float, coords: Sequence[str]) -> FieldExpr:
    return FieldExpr(_const(value), coords)


def coordinate(name_or_index, coords: Sequence[str]) -> FieldExpr:
    coords = tuple(coords)
    i = coords.index(name_or_index) if isinstance(name_or_index, str) else int(name_or_index)
    return FieldExpr(_mk("var", (), i), coords)


def apply(name: str, f: FieldExpr, order: int = 0) -> FieldExpr:
    """Compose a library primitive (sin, cos, exp, sqrt, log, flat) with ``f``."""
    if name not in _FUNCS and name != "flat":
        raise ParseError(f"unknown function {name!r}", 0)
    return f._wrap(_func(name, f.node, order))


def compose_profile(p: "Profile", f: FieldExpr, order: int = 0) -> FieldExpr:
    """p^(order)(f) as a field."""
    return f._wrap(_profile(p, f.node, order))


def bump(f: FieldExpr) -> FieldExpr:
    """exp(1 - 1/(1 - t^2)) on |t| < 1, zero outside; equals 1 at t = 0."""
    return math.e * apply("flat", 1.0 - f * f)


def smoothstep(f: FieldExpr) -> FieldExpr:
    """C-infinity transition: 0 for t <= 0, 1 for t >= 1."""
    a = apply("flat", f)
    b = apply("flat", 1.0 - f)
    return a / (a + b)


def plateau(f: FieldExpr, inner: float, outer: float) -> FieldExpr:
    """1 on |t| <= inner, 0 on |t| >= outer, monotone in |t| between."""
    w = outer - inner
    return smoothstep((f + outer) / w) * smoothstep((outer - f) / w)


def differentiate(f: FieldExpr, i) -> FieldExpr:
    """Exact partial derivative of ``f`` along coordinate ``i`` (name or 0-based index)."""
    return f.diff(i)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))")

_MACROS = {"bump": bump, "smoothstep": smoothstep}


class _Parser:
    def __init__(self, text, coords, profiles):
        self.text = text
        self.coords = tuple(coords)
        self.profiles = profiles or {}
        self.toks = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                if text[pos:].strip() == "":
                    break
                j = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
                raise ParseError(f"unexpected character {text[j]!r}", j)
            kind = m.lastgroup
            start = m.start(kind)
            val = m.group(kind)
            if val == "**":
                val = "^"
            self.toks.append((kind, val, start))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("end", None, len(self.text))

    def take(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, val):
        kind, v, pos = self.take()
        if v != val:
            raise ParseError(f"expected {val!r}", pos)

    def parse(self) -> FieldExpr:
        e = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {v!r}", pos)
        return e

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op, _ = self.take()
            right = self.term()
            left = left + right if op == "+" else left - right
        return left

    def term(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/"):
            _, op, _ = self.take()
            right = self.unary()
            left = left * right if op == "*" else left / right
        return left

    def unary(self):
        if self.peek()[1] in ("-", "+"):
            _, op, _ = self.take()
            u = self.unary()
            return -u if op == "-" else u
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^":
            self.take()
            return base ** self.unary()
        return base

    def primary(self):
        kind, v, pos = self.take()
        if kind == "num":
            return constant(float(v), self.coords)
        if kind == "id":
            if self.peek()[1] == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                return self.call(v, arg, pos)
            if v in self.coords:
                return coordinate(v, self.coords)
            if v == "pi":
                return constant(math.pi, self.coords)
            if v == "e":
                return constant(math.e, self.coords)
            raise ParseError(f"unknown symbol {v!r}", pos)
        if v == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            raise ParseError("unexpected end of input", pos)
        raise ParseError(f"unexpected token {v!r}", pos)

    def call(self, name, arg, pos):
        if name in _FUNCS or name == "flat":
            return apply(name, arg)
        if name in _MACROS:
            return _MACROS[name](arg)
        m = re.fullmatch(r"(\w+?)_d(\d+)", name)
        base, order = (m.group(1), int(m.group(2))) if m else (name, 0)
        if base == "flat" and m:
            return apply("flat", arg, order)
        if base in self.profiles:
            return arg._wrap(_profile(self.profiles[base], arg.node, order))
        raise ParseError(f"unknown function {name!r}", pos)


def parse_field(text: str, dim: int | None = None, coords: Sequence[str] | None = None,
                profiles: dict[str, "Profile"] | None = None) -> FieldExpr:
    """Parse an expression such as ``"x - x^3/3 - x*y^2"``.

    Grammar::

        expr    := term (('+' | '-') term)*
        term    := unary (('*' | '/') unary)*
        unary   := ('-' | '+') unary | power
        power   := primary (('^' | '**') unary)?
        primary := number | name | name '(' expr ')' | '(' expr ')'

    ``coords`` names the chart coordinates; by default they come from
    :func:`default_coords`.  Function names: sin, cos, exp, sqrt, log, flat,
    bump, smoothstep, plus any ``profiles`` passed in (``name_dK`` selects
    the K-th derivative).
    """
    if coords is None:
        if dim is None:
            raise DimensionError("either dim or coords must be given")
        coords = default_coords(dim)
    elif dim is not None and len(coords) != dim:
        raise DimensionError(f"{len(coords)} coordinate names for dim {dim}")
    return _Parser(text, coords, profiles).parse()


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

class Profile:
    """Univariate piecewise-polynomial function.

    ``pieces[k]`` is a polynomial in the local variable ``t - breaks[k]`` and
    is used on ``[breaks[k], breaks[k+1]]``.  Outside the breakpoints the
    profile is continued by its end values (derivatives zero), or, when
    ``period`` is set, by ``p(t + period) = p(t) + step``.
    """

    def __init__(self, breaks, pieces, name: str = "phi", period: float | None = None,
                 step: float = 0.0, bound: float | None = None,
                 monotone: str | None = None):
        self.breaks = np.asarray(breaks, dtype=float)
        self.pieces = [p if isinstance(p, Polynomial) else Polynomial(p) for p in pieces]
        if len(self.pieces) != len(self.breaks) - 1 or np.any(np.diff(self.breaks) <= 0):
            raise ValueError("need increasing breakpoints and one piece per interval")
        if period is not None and not np.isclose(self.breaks[-1] - self.breaks[0], period):
            raise ValueError("periodic profile must span exactly one period")
        self.name = name
        self.period = period
        self.step = step
        self.bound = bound
        self.monotone = monotone
        self._derivs: dict[int, list[Polynomial]] = {0: self.pieces}

    def __repr__(self):
        return f"Profile({self.name!r}, {len(self.pieces)} pieces)"

    def _pieces(self, order):
        ps = self._derivs.get(order)
        if ps is None:
            ps = self._derivs[order] = [p.deriv(order) for p in self.pieces]
        return ps

    def __call__(self, t, order: int = 0):
        t = np.asarray(t, dtype=float)
        b = self.breaks
        shift = np.zeros_like(t)
        if self.period is not None:
            k = np.floor((t - b[0]) / self.period)
            t = t - k * self.period
            if order == 0:
                shift = k * self.step
        idx = np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty_like(t)
        pieces = self._pieces(order)
        if self.period is None:
            tc = np.clip(t, b[0], b[-1])
        else:
            tc = t
        for k, p in enumerate(pieces):
            m = idx == k
            if np.any(m):
                out[m] = p(tc[m] - b[k])
        if self.period is None and order > 0:
            out[(t < b[0]) | (t > b[-1])] = 0.0
        return out + shift

    def check_continuity(self) -> float:
        """Largest one-sided jump in value or first derivative at any breakpoint."""
        worst = 0.0
        b = self.breaks
        for order in (0, 1):
            ps = self._pieces(order)
            for k in range(1, len(ps)):
                left = ps[k - 1](b[k] - b[k - 1])
                right = ps[k](0.0)
                worst = max(worst, abs(left - right))
            if self.period is not None:
                end = ps[-1](b[-1] - b[-2]) + (self.step if order == 0 else 0.0)
                worst = max(worst, abs(end - ps[0](0.0)))
            elif order == 1:
                worst = max(worst, abs(ps[0](0.0)), abs(ps[-1](b[-1] - b[-2])))
        return worst

    def check_bound(self, n: int = 10_000) -> float:
        """Max |p| over a fine grid of the breakpoint span."""
        t = np.linspace(self.breaks[0], self.breaks[-1], n)
        return float(np.max(np.abs(self(t))))


# ---------------------------------------------------------------------------
# boxes and grid norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box with a per-axis grid resolution."""

    lows: tuple
    highs: tuple
    resolution: tuple = field(default=None)

    def __post_init__(self):
        lows = tuple(float(a) for a in self.lows)
        highs = tuple(float(b) for b in self.highs)
        if len(lows) != len(highs):
            raise DimensionError("lows and highs differ in length")
        if any(a >= b for a, b in zip(lows, highs)):
            raise ValueError("box needs a_i < b_i on every axis")
        res = self.resolution
        if res is None:
            res = (101,) * len(lows)
        elif isinstance(res, (int, np.integer)):
            res = (int(res),) * len(lows)
        res = tuple(int(r) for r in res)
        if len(res) != len(lows) or any(r < 2 for r in res):
            raise ValueError("resolution must be >= 2 on every axis")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        object.__setattr__(self, "resolution", res)

    @classmethod
    def cube(cls, center, half_width, resolution=None) -> "Box":
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - half_width), tuple(c + half_width), resolution)

    @property
    def dim(self) -> int:
        return len(self.lows)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.highs) - np.array(self.lows)) / (np.array(self.resolution) - 1)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, r) for a, b, r in zip(self.lows, self.highs, self.resolution)]

    def grid(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        lo = np.array(self.lows) - tol
        hi = np.array(self.highs) + tol
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def with_resolution(self, resolution) -> "Box":
        return Box(self.lows, self.highs, resolution)

    def sub(self, lows, highs, resolution=None) -> "Box":
        lo = np.maximum(np.asarray(lows, float), self.lows)
        hi = np.minimum(np.asarray(highs, float), self.highs)
        return Box(tuple(lo), tuple(hi), resolution or self.resolution)

    def inside(self, other: "Box") -> bool:
        return all(a >= c and b <= d for a, b, c, d in zip(self.lows, self.highs, other.lows, other.highs))


class SupNorm(NamedTuple):
    value: float
    argmax: np.ndarray
    spacing: np.ndarray  # spacing of the refinement grid


_CHUNK = 400_000


def grid_max(fn: Callable[[np.ndarray], np.ndarray], box: Box, refine: int = 10,
             mask: Callable[[np.ndarray], np.ndarray] | None = None) -> SupNorm:
    """Max of ``fn`` on the grid of ``box`` with one local refinement pass.

    The refinement grid spans one coarse cell on either side of the coarse
    argmax at ``refine`` times finer spacing.  ``mask`` restricts both passes
    to points where it is true.
    """
    pts = box.grid()
    best, arg = -np.inf, None
    for s in range(0, len(pts), _CHUNK):
        chunk = pts[s:s + _CHUNK]
        vals = fn(chunk)
        if mask is not None:
            vals = np.where(mask(chunk), vals, -np.inf)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, arg = float(vals[k]), chunk[k]
    if arg is None or not np.isfinite(best):
        raise ValueError("empty grid region")
    h = box.spacing
    fine = box.sub(arg - h, arg + h, tuple(2 * refine + 1 for _ in h))
    fpts = fine.grid()
    vals = fn(fpts)
    if mask is not None:
        vals = np.where(mask(fpts), vals, -np.inf)
    k = int(np.argmax(vals))
    if vals[k] > best:
        best, arg = float(vals[k]), fpts[k]
    return SupNorm(best, np.array(arg), h / refine)


def sup_norm(f: FieldExpr, box: Box) -> SupNorm:
    """Max of |f| over the grid of ``box`` (refined once around the argmax)."""
    if box.dim != f.dim:
        raise DimensionError("box and field dimensions differ")
    return grid_max(lambda p: np.abs(f.evaluate(p)), box)


def c1_seminorm(f: FieldExpr, box: Box) -> SupNorm:
    """Sup over the grid of the Euclidean gradient norm of f."""
    if box.dim != f.dim:
        raise DimensionError("box and field dimensions differ")
    grad = f.gradient()

    def gnorm(p):
        return np.sqrt(sum(g.evaluate(p) ** 2 for g in grad))

    return grid_max(gnorm, box)
