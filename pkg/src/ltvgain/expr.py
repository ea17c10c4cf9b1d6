"""
Expression language for scalar functions of time.

Matrix entries, envelope functions and weights are written as short
expression strings, e.g. ``"a1*exp(-t)"`` or ``"a2*(1+t)"``.  This module
parses them into an immutable tree, prints them back in canonical form,
evaluates them (scalar or vectorised over numpy arrays) and enumerates
their discontinuities so that integrators can split steps there.

Grammar
-------
::

    expr    := sum
    sum     := product (("+" | "-") product)*
    product := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?                  # right associative
    atom    := NUMBER | NAME | NAME "(" args ")" | "(" expr ")" | pulses
    args    := expr ("," expr)*
    pulses  := "pulses" "(" NAME ">=" INT ";" "[" expr "," expr ")" "->" expr ")"

``t`` is the time variable; every other bare name is a parameter.  The
built-in functions are ``exp``, ``log``, ``sqrt``, ``abs``, ``floor``,
``max`` and ``min`` (the last two take two or more arguments).

A pulse train ``pulses(n >= 2; [n, n + 1/n) -> n)`` equals the value
expression on each interval ``[start(n), end(n))`` for ``n = 2, 3, ...``
and zero elsewhere.  Inside the brackets the index name is bound; the
start and end expressions must not depend on ``t`` and the starts must be
strictly increasing in ``n``.
"""

from __future__ import annotations

import bisect

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Expr", "Const", "Var", "Param", "Neg", "Binary", "Call", "PulseTrain",
    "ExprError", "ExprSyntaxError", "UnknownFunctionError", "EvaluationError",
    "UnboundParameterError", "parse", "to_string", "evaluate", "breakpoints",
    "free_params", "depends_on_t",
]

# Safety cap on pulse enumeration; starts must grow with n.
MAX_PULSES = 1_000_000

FUNCTIONS = {
    "exp": (1, 1),
    "log": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "floor": (1, 1),
    "max": (2, None),
    "min": (2, None),
}


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownFunctionError(ExprSyntaxError):
    pass


class EvaluationError(ExprError):
    pass


class UnboundParameterError(EvaluationError):
    def __init__(self, name: str):
        super().__init__(f"unbound parameter {name!r}")
        self.name = name


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Expr:
    """Base class of expression nodes.  Nodes are frozen dataclasses."""

    def __str__(self) -> str:
        return to_string(self)

    def __call__(self, t, params: Mapping[str, float] | None = None):
        return evaluate(self, t, params)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    """The time variable ``t``."""


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple


@dataclass(frozen=True)
class PulseTrain(Expr):
    index: str
    n_min: int
    start: Expr
    end: Expr
    value: Expr


Number = Union[float, np.ndarray]

# ---------------------------------------------------------------------------
# Tokenizer and parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>->|>=|[-+*/^(),;\[\]])"
    r")"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.bound: list[str] = []

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.tok
        if text != value or kind == "end":
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", pos)
        return self.advance()

    def parse(self) -> Expr:
        e = self.sum()
        kind, text, pos = self.tok
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return e

    def sum(self) -> Expr:
        left = self.product()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            op = self.advance()[1]
            left = Binary(op, left, self.product())
        return left

    def product(self) -> Expr:
        left = self.unary()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            op = self.advance()[1]
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.tok == ("op", "-", self.tok[2]):
            self.advance()
            arg = self.unary()
            if isinstance(arg, Const):
                return Const(-arg.value)
            return Neg(arg)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.tok
        if kind == "num":
            self.advance()
            return Const(float(text))
        if kind == "name":
            self.advance()
            if text == "pulses" and self.tok[1] == "(":
                return self.pulses(pos)
            if self.tok[0] == "op" and self.tok[1] == "(":
                return self.call(text, pos)
            if text == "t" and "t" not in self.bound:
                return Var()
            return Param(text)
        if kind == "op" and text == "(":
            self.advance()
            e = self.sum()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", pos)

    def call(self, name: str, pos: int) -> Expr:
        if name not in FUNCTIONS:
            raise UnknownFunctionError(f"unknown function {name!r}", pos)
        self.expect("(")
        args = [self.sum()]
        while self.tok[1] == ",":
            self.advance()
            args.append(self.sum())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ExprSyntaxError(f"wrong number of arguments to {name}", pos)
        return Call(name, tuple(args))

    def pulses(self, pos: int) -> Expr:
        self.expect("(")
        kind, index, ipos = self.tok
        if kind != "name" or index == "t":
            raise ExprSyntaxError("expected pulse index name", ipos)
        self.advance()
        self.expect(">=")
        kind, text, npos = self.tok
        if kind != "num" or not float(text).is_integer():
            raise ExprSyntaxError("expected integer lower index", npos)
        self.advance()
        n_min = int(float(text))
        self.expect(";")
        self.bound.append(index)
        try:
            self.expect("[")
            start = self.sum()
            self.expect(",")
            end = self.sum()
            self.expect(")")
            self.expect("->")
            value = self.sum()
        finally:
            self.bound.pop()
        self.expect(")")
        for part in (start, end):
            if depends_on_t(part):
                raise ExprSyntaxError("pulse bounds must not depend on t", pos)
        return PulseTrain(index, n_min, start, end, value)


def parse(source: str) -> Expr:
    """Parse expression text into an :class:`Expr` tree.

    Raises
    ------
    ExprSyntaxError
        With the character offset of the offending token.
    UnknownFunctionError
        If a call names a function outside the built-in set.
    """
    if isinstance(source, (int, float)):
        return Const(float(source))
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_UNARY = 3
_POWER = 4
_ATOM = 5


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _POWER if e.op == "^" else _PREC[e.op]
    if isinstance(e, Neg):
        return _UNARY
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1, e.value) < 0):
        return _UNARY
    return _ATOM


def _fmt_num(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x)) if x != 0 or math.copysign(1, x) > 0 else "-0"
    return repr(float(x))


def _wrap(e: Expr, min_prec: int) -> str:
    s = to_string(e)
    return f"({s})" if _prec(e) < min_prec else s


def to_string(e: Expr) -> str:
    """Canonical text of ``e``; ``parse(to_string(e)) == e``."""
    if isinstance(e, Const):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return "t"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _UNARY)
    if isinstance(e, Binary):
        if e.op == "^":
            return f"{_wrap(e.left, _ATOM)}^{_wrap(e.right, _UNARY)}"
        p = _PREC[e.op]
        return f"{_wrap(e.left, p)} {e.op} {_wrap(e.right, p + 1)}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_string(a) for a in e.args)})"
    if isinstance(e, PulseTrain):
        return (f"pulses({e.index} >= {e.n_min}; [{to_string(e.start)}, "
                f"{to_string(e.end)}) -> {to_string(e.value)})")
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def free_params(e: Expr) -> set[str]:
    """Names of parameters ``e`` needs (pulse indices excluded)."""
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, Neg):
        return free_params(e.arg)
    if isinstance(e, Binary):
        return free_params(e.left) | free_params(e.right)
    if isinstance(e, Call):
        return set().union(*(free_params(a) for a in e.args))
    if isinstance(e, PulseTrain):
        inner = free_params(e.start) | free_params(e.end) | free_params(e.value)
        return inner - {e.index}
    return set()


def depends_on_t(e: Expr) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Neg):
        return depends_on_t(e.arg)
    if isinstance(e, Binary):
        return depends_on_t(e.left) or depends_on_t(e.right)
    if isinstance(e, Call):
        return any(depends_on_t(a) for a in e.args)
    if isinstance(e, PulseTrain):
        return True
    return False


_BINOPS = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}

_UNOPS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "floor": np.floor,
}


def _pulse_intervals(p: PulseTrain, upto: float, env: Mapping[str, float],
                     lower: float = -np.inf):
    """Pulse indices and intervals with start <= upto and end > lower."""
    ns, starts, ends = [], [], []
    n = p.n_min
    prev = -np.inf
    while n - p.n_min < MAX_PULSES:
        local = dict(env)
        local[p.index] = float(n)
        a = float(_eval(p.start, 0.0, local))
        if a > upto:
            break
        if not a > prev:
            raise EvaluationError("pulse starts must increase strictly with the index")
        b = float(_eval(p.end, 0.0, local))
        if b < a:
            raise EvaluationError(f"pulse {n} has end before start")
        if b > lower:
            ns.append(n)
            starts.append(a)
            ends.append(b)
        prev = a
        n += 1
    else:
        raise EvaluationError("pulse enumeration exceeded the safety cap")
    return np.array(ns, dtype=float), np.array(starts), np.array(ends)


def _eval(e: Expr, t, env: Mapping[str, float]):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return t
    if isinstance(e, Param):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundParameterError(e.name) from None
    if isinstance(e, Neg):
        return np.negative(_eval(e.arg, t, env))
    if isinstance(e, Binary):
        return _BINOPS[e.op](_eval(e.left, t, env), _eval(e.right, t, env))
    if isinstance(e, Call):
        args = [_eval(a, t, env) for a in e.args]
        if e.func == "max":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        if e.func == "min":
            out = args[0]
            for a in args[1:]:
                out = np.minimum(out, a)
            return out
        return _UNOPS[e.func](args[0])
    if isinstance(e, PulseTrain):
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        hi = float(np.max(tt)) if tt.size else -np.inf
        lo = float(np.min(tt)) if tt.size else np.inf
        ns, starts, ends = _pulse_intervals(e, hi, env, lower=lo)
        out = np.zeros_like(tt)
        if len(ns):
            k = np.searchsorted(starts, tt, side="right") - 1
            inside = (k >= 0) & (tt < ends[np.clip(k, 0, None)])
            if np.any(inside):
                local = dict(env)
                local[e.index] = ns[k[inside]]
                val = _eval(e.value, tt[inside], local)
                out[inside] = np.broadcast_to(val, tt[inside].shape)
        return float(out[0]) if scalar else out
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, t: Number, params: Mapping[str, float] | None = None) -> Number:
    """Evaluate ``e`` at time ``t`` (float or array) with parameter bindings.

    Array input gives an array of the same shape.  Raises
    :class:`UnboundParameterError` for a missing binding and
    :class:`EvaluationError` for a non-finite result.
    """
    env = dict(params or {})
    scalar = np.ndim(t) == 0
    with np.errstate(all="ignore"):
        val = _eval(e, t if scalar else np.asarray(t, dtype=float), env)
    val = np.asarray(val, dtype=float)
    if not scalar:
        val = np.broadcast_to(val, np.shape(t)).copy()
    if not np.all(np.isfinite(val)):
        where = t if scalar else np.asarray(t)[~np.isfinite(val)][0]
        raise EvaluationError(f"non-finite value of {to_string(e)!r} at t={where}")
    return float(val) if scalar else val


# ---------------------------------------------------------------------------
# Breakpoints
# ---------------------------------------------------------------------------

def _floor_crossings(arg: Expr, a: float, b: float, env) -> list[float]:
    if not depends_on_t(arg):
        return []
    n = max(64, int(64 * (b - a)) + 1)
    ts = np.linspace(a, b, n + 1)
    with np.errstate(all="ignore"):
        u = np.broadcast_to(np.asarray(_eval(arg, ts, env), dtype=float), ts.shape)
    out = []
    fl = np.floor(u)
    if abs(u[0] - round(u[0])) < 1e-12:
        out.append(float(a))
    for k in range(n):
        if fl[k] == fl[k + 1]:
            continue
        lo_i, hi_i = sorted((fl[k], fl[k + 1]))
        for level in np.arange(lo_i + 1, hi_i + 1):
            root = brentq(lambda x: float(_eval(arg, x, env)) - level,
                          ts[k], ts[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            out.append(float(root))
    return out


def _collect(e: Expr, a: float, b: float, env, acc: list):
    if isinstance(e, Neg):
        _collect(e.arg, a, b, env, acc)
    elif isinstance(e, Binary):
        _collect(e.left, a, b, env, acc)
        _collect(e.right, a, b, env, acc)
    elif isinstance(e, Call):
        for arg in e.args:
            _collect(arg, a, b, env, acc)
        if e.func == "floor":
            acc.extend(_floor_crossings(e.args[0], a, b, env))
    elif isinstance(e, PulseTrain):
        ns, starts, ends = _pulse_intervals(e, b, env, lower=a)
        acc.extend(starts.tolist())
        acc.extend(ends.tolist())
        for n, s, f in zip(ns, starts, ends):
            local = dict(env)
            local[e.index] = n
            inner: list = []
            _collect(e.value, max(a, s), min(b, f), local, inner)
            acc.extend(inner)


def breakpoints(e: Expr, a: float, b: float,
                params: Mapping[str, float] | None = None) -> list[float]:
    """Sorted, deduplicated discontinuity points of ``e`` in ``[a, b)``.

    Pulse-train edges are enumerated exactly; jumps of ``floor`` are
    located by sampling its argument and bisecting.  Smooth expressions
    give an empty list.
    """
    if b < a:
        raise ValueError("need a <= b")
    acc: list[float] = []
    _collect(e, float(a), float(b), dict(params or {}), acc)
    pts = sorted(x for x in acc if a <= x < b)
    out: list[float] = []
    for x in pts:
        if not out or x - out[-1] > 1e-12 * max(1.0, abs(x)):
            out.append(x)
    return out


def pulse_supported(e: Expr) -> bool:
    """True when ``e`` vanishes identically outside the pulses of its trains.

    Decided structurally: a pulse train qualifies, products and quotients
    qualify when one factor (the numerator for ``/``) does, sums when both
    terms do, and ``abs``/negation preserve the property.
    """
    if isinstance(e, PulseTrain):
        return True
    if isinstance(e, Neg):
        return pulse_supported(e.arg)
    if isinstance(e, Call):
        return e.func == "abs" and pulse_supported(e.args[0])
    if isinstance(e, Binary):
        if e.op == "*":
            return pulse_supported(e.left) or pulse_supported(e.right)
        if e.op == "/":
            return pulse_supported(e.left)
        if e.op in "+-":
            return pulse_supported(e.left) and pulse_supported(e.right)
    return False


def pulse_trains(e: Expr) -> list[PulseTrain]:
    """Every pulse-train node inside ``e``."""
    if isinstance(e, PulseTrain):
        return [e]
    if isinstance(e, Neg):
        return pulse_trains(e.arg)
    if isinstance(e, Binary):
        return pulse_trains(e.left) + pulse_trains(e.right)
    if isinstance(e, Call):
        return [p for a in e.args for p in pulse_trains(a)]
    return []


def pulse_support(exprs, a: float, b: float,
                  params: Mapping[str, float] | None = None) -> np.ndarray:
    """Union of the pulse intervals of all trains in ``exprs`` meeting ``[a, b]``.

    Returns an ``(m, 2)`` array of disjoint, sorted ``[start, end)``
    intervals; overlapping pulses of different trains are merged.
    """
    env = dict(params or {})
    spans = []
    for e in exprs:
        for p in pulse_trains(e):
            _, starts, ends = _pulse_intervals(p, b, env, lower=a)
            spans.extend(zip(starts.tolist(), ends.tolist()))
    spans.sort()
    merged: list[list[float]] = []
    for s, f in spans:
        if f <= s:
            continue
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], f)
        else:
            merged.append([s, f])
    return np.array(merged, dtype=float).reshape(-1, 2)


# ---------------------------------------------------------------------------
# Compiled evaluation for hot loops
# ---------------------------------------------------------------------------

class _PulseTable:
    """Pulse intervals of one train under fixed bindings, extended lazily."""

    def __init__(self, p: PulseTrain, env: Mapping[str, float]):
        self.p = p
        self.env = dict(env)
        self.upto = -np.inf
        self.ns = np.empty(0)
        self.starts = np.empty(0)
        self.ends = np.empty(0)
        self.value = lambdify(p.value, self.env, bound=(p.index,))

    def ensure(self, hi: float):
        if hi < self.upto:
            return
        target = max(hi + 1.0, 2.0 * abs(hi) + 16.0)
        self.ns, self.starts, self.ends = _pulse_intervals(self.p, target, self.env)
        self._starts, self._ends = self.starts.tolist(), self.ends.tolist()
        self.upto = target

    def __call__(self, t):
        if isinstance(t, float):
            # scalar fast path for ODE right-hand sides
            self.ensure(t)
            k = bisect.bisect_right(self._starts, t) - 1
            if k >= 0 and t < self._ends[k]:
                return float(self.value(t, self.ns[k]))
            return 0.0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        if tt.size:
            self.ensure(float(np.max(tt)))
        out = np.zeros_like(tt)
        if len(self.ns):
            k = np.searchsorted(self.starts, tt, side="right") - 1
            inside = (k >= 0) & (tt < self.ends[np.clip(k, 0, None)])
            if np.any(inside):
                val = self.value(tt[inside], self.ns[k[inside]])
                out[inside] = np.broadcast_to(val, tt[inside].shape)
        return float(out[0]) if np.ndim(t) == 0 else out


def lambdify(e: Expr, params: Mapping[str, float] | None = None, bound: tuple = ()):
    """Compile ``e`` into a fast callable ``f(t, *bound_values)``.

    Parameters are bound at compile time (missing ones raise
    :class:`UnboundParameterError` here, not at call time).  No finiteness
    check is done on the result; use :func:`evaluate` for checked calls.
    """
    env = dict(params or {})

    def build(node: Expr):
        if isinstance(node, Const):
            v = node.value
            return lambda t, *b: v
        if isinstance(node, Var):
            return lambda t, *b: t
        if isinstance(node, Param):
            if node.name in bound:
                idx = bound.index(node.name)
                return lambda t, *b: b[idx]
            if node.name not in env:
                raise UnboundParameterError(node.name)
            v = env[node.name]
            return lambda t, *b: v
        if isinstance(node, Neg):
            f = build(node.arg)
            return lambda t, *b: -f(t, *b)
        if isinstance(node, Binary):
            f, g, op = build(node.left), build(node.right), _BINOPS[node.op]
            return lambda t, *b: op(f(t, *b), g(t, *b))
        if isinstance(node, Call):
            fs = [build(a) for a in node.args]
            if node.func in ("max", "min"):
                red = np.maximum if node.func == "max" else np.minimum

                def call(t, *b):
                    out = fs[0](t, *b)
                    for f in fs[1:]:
                        out = red(out, f(t, *b))
                    return out
                return call
            f, op = fs[0], _UNOPS[node.func]
            return lambda t, *b: op(f(t, *b))
        if isinstance(node, PulseTrain):
            if bound:
                raise ExprError("nested pulse trains are not supported")
            table = _PulseTable(node, env)
            return lambda t, *b: table(t)
        raise TypeError(f"not an expression: {node!r}")

    return build(e)
