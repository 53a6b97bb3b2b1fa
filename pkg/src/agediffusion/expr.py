"""Arithmetic expressions in the variables t, a, x.

Grammar (whitespace is ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := primary ("^" unary)?
    primary := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"

``^`` binds tighter than unary minus and associates to the right, so
``-2^2`` is ``-4`` and ``2^3^2`` is ``512``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

VARIABLES = ("t", "a", "x")
FUNCTIONS = ("sin", "cos", "exp", "sqrt")


class ExprSyntaxError(ArgumentError):
    """Parse failure at a byte offset of the source text."""

    def __init__(self, message: str, offset: int, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class EvaluationError(ArgumentError):
    """Division by zero or a domain violation during evaluation."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (node at offset {offset})")


@dataclass(frozen=True)
class Number:
    value: float
    label: str | None = None
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str  # one of FUNCTIONS or "neg"
    arg: "Node"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"
    pos: int = field(default=0, compare=False)


Node = Number | Var | Unary | Binary

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str):
    """Token list of (kind, text, byte offset), terminated by an end token."""

    def boff(i):
        return len(src[:i].encode("utf-8"))

    toks = []
    i = 0
    while i < len(src):
        if src[i:].strip() == "":
            break
        m = _TOKEN.match(src, i)
        if m is None:
            j = i
            while src[j].isspace():
                j += 1
            raise ExprSyntaxError(f"unexpected character {src[j]!r}", boff(j))
        kind = m.lastgroup
        toks.append((kind, m.group(kind), boff(m.start(kind))))
        i = m.end()
    toks.append(("end", "", boff(len(src))))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, val, pos = self.peek()
        if val != text or kind != "op":
            raise ExprSyntaxError(f"expected {text!r}", pos, {text})
        return self.take()

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = Binary(op, node, self.term(), pos)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = Binary(op, node, self.unary(), pos)
        return node

    def unary(self):
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Unary("neg", self.unary(), pos)
        return self.power()

    def power(self):
        base = self.primary()
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return Binary("^", base, self.unary(), pos)
        return base

    def primary(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return Number(float(val), None, pos)
        if kind == "id":
            self.take()
            if val == "pi":
                return Number(math.pi, "pi", pos)
            if val in VARIABLES:
                return Var(val, pos)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(val, arg, pos)
            raise UnknownIdentifierError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(
            f"unexpected {what}", pos, {"number", "identifier", "(", "-"}
        )


def parse(src: str) -> Node:
    """Parse ``src``; the whole input must be consumed."""
    p = _Parser(src)
    node = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected {val!r}", pos, {"+", "-", "*", "/", "^"})
    return node


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt(node: Node) -> tuple[str, int]:
    if isinstance(node, Number):
        if node.label is not None:
            return node.label, 5
        return repr(float(node.value)), 5
    if isinstance(node, Var):
        return node.name, 5
    if isinstance(node, Unary):
        inner, p = _fmt(node.arg)
        if node.op == "neg":
            return "-" + (inner if p >= 3 else f"({inner})"), 3
        return f"{node.op}({inner})", 5
    lt, lp = _fmt(node.left)
    rt, rp = _fmt(node.right)
    prec = _PREC[node.op]
    if node.op == "^":
        left_paren, right_paren = lp <= prec, rp < 3
    else:
        left_paren, right_paren = lp < prec, rp <= prec
    if left_paren:
        lt = f"({lt})"
    if right_paren:
        rt = f"({rt})"
    return f"{lt}{node.op}{rt}", prec


def to_source(node: Node) -> str:
    """Canonical text form; ``parse(to_source(n)) == n``."""
    return _fmt(node)[0]


_SCALAR_FUNCS = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "sqrt": math.sqrt}


def evaluate(node: Node, t: float = 0.0, a: float = 0.0, x: float = 0.0) -> float:
    """Evaluate at one point in IEEE double precision."""
    env = {"t": float(t), "a": float(a), "x": float(x)}

    def ev(n):
        if isinstance(n, Number):
            return n.value
        if isinstance(n, Var):
            return env[n.name]
        if isinstance(n, Unary):
            v = ev(n.arg)
            if n.op == "neg":
                return -v
            if n.op == "sqrt" and v < 0:
                raise EvaluationError("sqrt of negative value", n.pos)
            try:
                return _SCALAR_FUNCS[n.op](v)
            except (OverflowError, ValueError) as exc:
                raise EvaluationError(f"{n.op} failed: {exc}", n.pos) from None
        lv, rv = ev(n.left), ev(n.right)
        if n.op == "+":
            return lv + rv
        if n.op == "-":
            return lv - rv
        if n.op == "*":
            return lv * rv
        if n.op == "/":
            if rv == 0.0:
                raise EvaluationError("division by zero", n.pos)
            return lv / rv
        try:
            return math.pow(lv, rv)
        except ZeroDivisionError:
            raise EvaluationError("zero raised to a negative power", n.pos) from None
        except (OverflowError, ValueError) as exc:
            raise EvaluationError(f"power failed: {exc}", n.pos) from None

    return ev(node)


_ARRAY_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}


def evaluate_array(node: Node, t=0.0, a=0.0, x=0.0) -> np.ndarray:
    """Broadcasting evaluation over numpy arrays, same error rules as ``evaluate``."""
    env = {"t": np.asarray(t, float), "a": np.asarray(a, float), "x": np.asarray(x, float)}
    shape = np.broadcast_shapes(*(v.shape for v in env.values()))

    def ev(n):
        if isinstance(n, Number):
            return np.full(shape, n.value)
        if isinstance(n, Var):
            return np.broadcast_to(env[n.name], shape)
        if isinstance(n, Unary):
            v = ev(n.arg)
            if n.op == "neg":
                return -v
            if n.op == "sqrt" and np.any(v < 0):
                raise EvaluationError("sqrt of negative value", n.pos)
            with np.errstate(over="ignore"):
                out = _ARRAY_FUNCS[n.op](v)
            if not np.all(np.isfinite(out)) and np.all(np.isfinite(v)):
                raise EvaluationError(f"{n.op} overflowed", n.pos)
            return out
        lv, rv = ev(n.left), ev(n.right)
        if n.op == "+":
            return lv + rv
        if n.op == "-":
            return lv - rv
        if n.op == "*":
            return lv * rv
        if n.op == "/":
            if np.any(rv == 0.0):
                raise EvaluationError("division by zero", n.pos)
            return lv / rv
        if np.any((lv == 0.0) & (rv < 0)):
            raise EvaluationError("zero raised to a negative power", n.pos)
        if np.any((lv < 0) & (rv != np.round(rv))):
            raise EvaluationError("negative base with non-integer exponent", n.pos)
        with np.errstate(over="ignore"):
            return np.power(lv, rv)

    return np.array(ev(node), dtype=float)


def variables_used(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Number):
        return set()
    if isinstance(node, Unary):
        return variables_used(node.arg)
    return variables_used(node.left) | variables_used(node.right)
