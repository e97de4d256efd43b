"""Closed-form functions of ``(x, t)``: parsing, evaluation, differentiation.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' exponent)?
    exponent:= INTEGER | '(' INTEGER ')'
    atom    := NUMBER | 'x' | 't' | 'pi' | FUNC '(' expr ')' | '(' expr ')'
    FUNC    := 'sin' | 'cos' | 'exp' | 'sqrt'

Exponents are nonnegative integer literals, so ``-x^2`` means ``-(x^2)``
and ``x^(-1)`` is rejected.  There is no implicit multiplication.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt")
VARIABLES = ("x", "t")


class ExprSyntaxError(ValueError):
    """Parse failure with the byte offset of the offending token."""

    def __init__(self, message: str, offset: int, text: str):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}: {text!r}")


class ExprDomainWarning(RuntimeWarning):
    """Division by zero during evaluation; affected values are NaN."""


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


Expr = Union[Const, Pi, Var, Neg, Call, BinOp, Pow]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            stripped = len(text) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[stripped]!r}", stripped, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: str):
        kind, val, off = self.peek()
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"expected {expected}, found {found}", off, self.text)

    def expect_op(self, op: str):
        kind, val, _ = self.peek()
        if kind != "op" or val != op:
            self.fail(repr(op))
        self.take()

    def parse(self) -> Expr:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("operator or end of input")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> int:
        kind, val, _ = self.peek()
        paren = kind == "op" and val == "("
        if paren:
            self.take()
            kind, val, _ = self.peek()
        if kind != "num" or not val.isdigit():
            self.fail("nonnegative integer exponent")
        self.take()
        if paren:
            self.expect_op(")")
        return int(val)

    def atom(self) -> Expr:
        kind, val, off = self.peek()
        if kind == "num":
            self.take()
            return Const(float(val))
        if kind == "name":
            self.take()
            if val in VARIABLES:
                return Var(val)
            if val == "pi":
                return Pi()
            if val in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(val, arg)
            raise ExprSyntaxError(f"unknown name {val!r}", off, self.text)
        if kind == "op" and val == "(":
            self.take()
            node = self.expr()
            self.expect_op(")")
            return node
        self.fail("number, variable, function or '('")


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not isinstance(text, str):
        raise TypeError(f"expected a string, got {type(text).__name__}")
    return _Parser(text).parse()


def as_expr(obj) -> Expr:
    """Accept an expression tree, a DSL string, or a plain number."""
    if isinstance(obj, (Const, Pi, Var, Neg, Call, BinOp, Pow)):
        return obj
    if isinstance(obj, str):
        return parse(obj)
    if isinstance(obj, (int, float)):
        return Const(float(obj))
    raise TypeError(f"cannot interpret {obj!r} as an expression")


_FUNC_IMPL = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}


def _eval(node: Expr, x, t, flags: list):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Pi):
        return math.pi
    if isinstance(node, Var):
        return x if node.name == "x" else t
    if isinstance(node, Neg):
        return -_eval(node.arg, x, t, flags)
    if isinstance(node, Call):
        return _FUNC_IMPL[node.func](_eval(node.arg, x, t, flags))
    if isinstance(node, Pow):
        base = _eval(node.base, x, t, flags)
        return base**node.exponent if node.exponent else np.ones_like(base) * 1.0
    a = _eval(node.left, x, t, flags)
    b = _eval(node.right, x, t, flags)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    zero = np.asarray(b) == 0
    if np.any(zero):
        flags.append(node)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(a, dtype=float) / np.where(zero, 1.0, b)
        return np.where(zero, np.nan, out)
    return a / b


def evaluate(node: Expr, x=0.0, t=0.0):
    """Evaluate at ``(x, t)``; arrays broadcast like numpy.

    Division by zero yields NaN and raises an :class:`ExprDomainWarning`.
    """
    x_arr = np.asarray(x, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    flags: list = []
    out = _eval(node, x_arr, t_arr, flags)
    if flags:
        warnings.warn(f"division by zero in {to_string(node)!r}", ExprDomainWarning, stacklevel=2)
    out = np.broadcast_to(np.asarray(out, dtype=float), np.broadcast_shapes(x_arr.shape, t_arr.shape))
    return float(out) if out.ndim == 0 else np.array(out)


# --- construction helpers with light constant folding ---------------------

ZERO = Const(0.0)
ONE = Const(1.0)


def _is(node: Expr, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        return Const(a.value**n)
    return Pow(a, n)


def differentiate(node: Expr, var: str) -> Expr:
    """Exact derivative with respect to ``var`` (``'x'`` or ``'t'``)."""
    if var not in VARIABLES:
        raise ValueError(f"can only differentiate in x or t, not {var!r}")
    if isinstance(node, (Const, Pi)):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == var else ZERO
    if isinstance(node, Neg):
        return neg(differentiate(node.arg, var))
    if isinstance(node, Call):
        inner = differentiate(node.arg, var)
        if _is(inner, 0.0):
            return ZERO
        u = node.arg
        if node.func == "sin":
            outer = Call("cos", u)
        elif node.func == "cos":
            outer = neg(Call("sin", u))
        elif node.func == "exp":
            outer = node
        else:  # sqrt
            outer = div(ONE, mul(Const(2.0), node))
        return mul(outer, inner)
    if isinstance(node, Pow):
        inner = differentiate(node.base, var)
        if _is(inner, 0.0) or node.exponent == 0:
            return ZERO
        return mul(mul(Const(float(node.exponent)), power(node.base, node.exponent - 1)), inner)
    da = differentiate(node.left, var)
    db = differentiate(node.right, var)
    if node.op == "+":
        return add(da, db)
    if node.op == "-":
        return sub(da, db)
    if node.op == "*":
        return add(mul(da, node.right), mul(node.left, db))
    # quotient rule
    return div(sub(mul(da, node.right), mul(node.left, db)), power(node.right, 2))


def substitute(node: Expr, **repl: Expr) -> Expr:
    """Replace variables by expressions, e.g. ``substitute(e, x=mul(Const(2), Var('x')))``."""
    if isinstance(node, Var):
        return as_expr(repl[node.name]) if node.name in repl else node
    if isinstance(node, (Const, Pi)):
        return node
    if isinstance(node, Neg):
        return Neg(substitute(node.arg, **repl))
    if isinstance(node, Call):
        return Call(node.func, substitute(node.arg, **repl))
    if isinstance(node, Pow):
        return Pow(substitute(node.base, **repl), node.exponent)
    return BinOp(node.op, substitute(node.left, **repl), substitute(node.right, **repl))


def variables(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, (Const, Pi)):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables(node.arg)
    if isinstance(node, Pow):
        return variables(node.base)
    return variables(node.left) | variables(node.right)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_string(node: Expr) -> str:
    """Render in the DSL grammar; ``parse(to_string(e))`` evaluates like ``e``."""
    return _show(node, 0)


def _show(node: Expr, ctx: int) -> str:
    # ctx: 0 free, 1 rhs of +/-, 2 lhs of * or /, 3 rhs of * or / and
    # operand of unary minus, 4 base of a power
    if isinstance(node, Const):
        text = repr(float(node.value))
        if text in ("inf", "-inf", "nan"):
            raise ValueError(f"constant {text} has no DSL spelling")
        if node.value < 0 or text.startswith("-"):
            return f"({text})"
        return text
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_show(node.arg, 0)})"
    if isinstance(node, Pow):
        text = f"{_show(node.base, 4)}^{node.exponent}"
        return f"({text})" if ctx == 4 else text
    if isinstance(node, Neg):
        text = f"-{_show(node.arg, 3)}"
        return f"({text})" if ctx == 4 else text
    prec = _PREC[node.op]
    left = _show(node.left, 0 if prec == 1 else 2)
    right = _show(node.right, 1 if prec == 1 else 3)
    text = f"{left} {node.op} {right}"
    wrap = ctx >= 3 or (ctx in (1, 2) and prec == 1)
    return f"({text})" if wrap else text
