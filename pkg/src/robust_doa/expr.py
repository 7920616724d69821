"""Scalar expressions over state variables ``x1..xn`` and inputs ``u1..um``.

Grammar is parsed with precedence climbing. Binding powers, loosest first:

    ==========  =========  =============
    operator    power      associativity
    ==========  =========  =============
    ``+ -``     10         left
    ``* /``     20         left
    unary ``-`` 25         prefix
    ``^``       30         right
    ==========  =========  =============

So ``-x1^2`` is ``-(x1^2)``, ``2^3^2`` is ``2^(3^2) = 512`` and ``2*-3`` is
legal. When ``n == 1`` (``m == 1``) the bare names ``x`` (``u``) alias
``x1`` (``u1``). Constants ``pi`` and ``e`` are predefined.

Evaluation is vectorized: variables may be scalars or equally shaped numpy
arrays. Any non-finite intermediate raises :class:`DomainError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(ExpressionError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier {name!r} at position {position}")
        self.name = name
        self.position = position


class DomainError(ArithmeticError):
    """Raised when an expression leaves the real domain.

    ``index`` is the flat position of the first offending element for
    vectorized evaluation (``None`` for scalars).
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def _check(ok, message):
    ok = np.asarray(ok)
    if not ok.all():
        index = None if ok.ndim == 0 else int(np.flatnonzero(~ok.ravel())[0])
        raise DomainError(message, index)


FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}
CONSTANTS = {"pi": math.pi, "e": math.e}


class Node:
    def eval(self, env):
        raise NotImplementedError

    def to_source(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Node):
    value: float

    def eval(self, env):
        return self.value

    def to_source(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Var(Node):
    kind: str  # "x" or "u"
    index: int  # zero based

    def eval(self, env):
        return env[self.kind][self.index]

    def to_source(self):
        return f"{self.kind}{self.index + 1}"


@dataclass(frozen=True)
class Neg(Node):
    operand: Node

    def eval(self, env):
        return -self.operand.eval(env)

    def to_source(self):
        return f"(-{self.operand.to_source()})"


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            _check(np.asarray(b) != 0, "division by zero")
            return a / b
        # power: negative bases only with integral exponents
        a_arr = np.asarray(a, dtype=float)
        b_arr = np.asarray(b, dtype=float)
        _check((a_arr >= 0) | (b_arr == np.round(b_arr)),
               "negative base with non-integer exponent")
        _check((a_arr != 0) | (b_arr >= 0), "zero raised to a negative power")
        with np.errstate(over="ignore"):
            out = np.power(a_arr, b_arr)
        return out if out.ndim else float(out)

    def to_source(self):
        return f"({self.left.to_source()} {self.op} {self.right.to_source()})"


@dataclass(frozen=True)
class Call(Node):
    name: str
    arg: Node

    def eval(self, env):
        v = np.asarray(self.arg.eval(env), dtype=float)
        if self.name == "log":
            _check(v > 0, "log of non-positive value")
        elif self.name == "sqrt":
            _check(v >= 0, "sqrt of negative value")
        with np.errstate(over="ignore"):
            out = FUNCTIONS[self.name](v)
        return out if out.ndim else float(out)

    def to_source(self):
        return f"{self.name}({self.arg.to_source()})"


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)

_INFIX = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_PREFIX_POWER = 25


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    pos: int


def _tokenize(source: str) -> list[_Tok]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            pos = len(source)
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            stripped = len(source[pos:]) - len(source[pos:].lstrip())
            raise ExpressionSyntaxError(
                f"unexpected character {source[pos + stripped]!r}", pos + stripped)
        kind = m.lastgroup
        tokens.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Tok("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, n: int, m: int):
        self.tokens = _tokenize(source)
        self.i = 0
        self.n = n
        self.m = m

    def peek(self) -> _Tok:
        return self.tokens[self.i]

    def advance(self) -> _Tok:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.advance()
        if tok.text != text:
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExpressionSyntaxError(f"expected {text!r}, found {found}", tok.pos)

    def expression(self, rbp: int = 0) -> Node:
        left = self.prefix()
        while True:
            tok = self.peek()
            lbp = _INFIX.get(tok.text, 0) if tok.kind == "op" else 0
            if lbp <= rbp:
                break
            self.advance()
            # right associativity for ^
            right = self.expression(lbp - 1 if tok.text == "^" else lbp)
            left = BinOp(tok.text, left, right)
        return left

    def prefix(self) -> Node:
        tok = self.advance()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            return self.identifier(tok)
        if tok.text == "-":
            return Neg(self.expression(_PREFIX_POWER))
        if tok.text == "+":
            return self.expression(_PREFIX_POWER)
        if tok.text == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExpressionSyntaxError(f"unexpected {found}", tok.pos)

    def identifier(self, tok: _Tok) -> Node:
        name = tok.text
        if name in FUNCTIONS:
            self.expect("(")
            arg = self.expression()
            self.expect(")")
            return Call(name, arg)
        if name in CONSTANTS:
            return Const(CONSTANTS[name])
        m = re.fullmatch(r"([xu])(\d*)", name)
        if m is None:
            raise UnknownIdentifierError(name, tok.pos)
        kind, digits = m.groups()
        limit = self.n if kind == "x" else self.m
        if digits == "":
            if limit != 1:
                raise UnknownIdentifierError(name, tok.pos)
            return Var(kind, 0)
        k = int(digits)
        if not 1 <= k <= limit:
            raise ExpressionError(
                f"variable {name} out of range (declared {kind}1..{kind}{limit}) "
                f"at position {tok.pos}")
        return Var(kind, k - 1)


@dataclass(frozen=True)
class Expression:
    """A parsed expression bound to declared dimensions ``(n, m)``."""

    source: str
    root: Node
    n: int
    m: int

    def __call__(self, x, u=None):
        return evaluate(self, x, u)

    def to_source(self) -> str:
        return self.root.to_source()


def parse(source: str, n: int, m: int = 0) -> Expression:
    if not source or not source.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    p = _Parser(source, n, m)
    root = p.expression()
    tok = p.peek()
    if tok.kind != "end":
        raise ExpressionSyntaxError(f"unexpected {tok.text!r}", tok.pos)
    return Expression(source, root, n, m)


def pretty(e: Expression) -> str:
    """Fully parenthesized source that reparses to the same tree."""
    return e.to_source()


def _columns(values, dim: int, label: str):
    if dim == 0:
        return []
    a = np.asarray(values, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.shape[-1] != dim:
        raise ValueError(f"{label} has trailing dimension {a.shape[-1]}, expected {dim}")
    return [a[..., k] if a.ndim > 1 else float(a[k]) for k in range(dim)]


def evaluate(e: Expression, x, u=None):
    """Evaluate at state ``x`` (shape ``(n,)`` or ``(N, n)``) and input ``u``.

    Returns a float for single points and an array for batches.
    """
    env = {"x": _columns(x, e.n, "x"), "u": _columns(u if u is not None else [], e.m, "u")}
    with np.errstate(all="ignore"):
        out = e.root.eval(env)
    out_arr = np.asarray(out, dtype=float)
    _check(np.isfinite(out_arr), "non-finite result")
    batch = np.asarray(x).ndim > 1
    if batch:
        shape = np.asarray(x).shape[:-1]
        return np.broadcast_to(out_arr, shape).copy()
    return float(out_arr)
