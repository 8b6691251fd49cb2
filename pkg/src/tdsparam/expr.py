"""Scalar expression mini-language.

Expressions are immutable trees over the Laplace variable ``s`` and named
real parameters.  They are used to write coefficient and delay functions
of characteristic quasi-polynomials, e.g. ``exp(-t2*(k+s))``.

Grammar (whitespace-insensitive, standard precedence, left-associative)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("-" | "+") unary | power ;
    power   = atom [ "^" exponent ] ;
    exponent= ["-" | "+"] INTEGER | "(" ["-" | "+"] INTEGER ")" ;
    atom    = NUMBER | IDENT | "exp" "(" expr ")" | "(" expr ")" ;

Only constant folding and zero/one elimination are applied; there is no
general simplification.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import (
    ExprSyntaxError,
    ExprZeroDivisionError,
    IntervalError,
    UnboundVariableError,
)

LAPLACE = "s"


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    def __str__(self):
        return unparse(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


# Folding constructors ------------------------------------------------------

def const(value) -> Const:
    return Const(float(value))


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(b) and not _is_const(a):
        a, b = b, a
    if _is_const(a) and isinstance(b, Mul) and _is_const(b.left):
        return mul(Const(a.value * b.left.value), b.right)
    if _is_const(a) and isinstance(b, Neg):
        return mul(Const(-a.value), b.arg)
    if isinstance(a, Neg) and isinstance(b, Neg):
        return mul(a.arg, b.arg)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b) and b.value != 0.0:
        if _is_const(a):
            return Const(a.value / b.value)
        if b.value == 1.0:
            return a
        if _is_const(a, 0.0):
            return ZERO
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    if isinstance(a, Mul) and _is_const(a.left):
        return mul(Const(-a.left.value), a.right)
    return Neg(a)


def power(base: Expr, n: int) -> Expr:
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return base
    if _is_const(base) and not (base.value == 0.0 and n < 0):
        try:
            return Const(base.value ** n)
        except OverflowError:
            pass
    return Pow(base, n)


def exp(arg: Expr) -> Expr:
    if _is_const(arg):
        if arg.value == 0.0:
            return ONE
        if arg.value < 700.0:
            return Const(math.exp(arg.value))
    return Exp(arg)


# Parsing -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)

_ATOM_START = {"number", "identifier", "'('", "'-'", "'+'"}


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num', 'ident', 'op', 'eof'
    text: str
    offset: int  # byte offset


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            # only trailing whitespace left
            rest = text[pos:]
            stripped = rest.lstrip()
            if not stripped:
                byte_pos += len(rest.encode("utf-8"))
                pos = n
                break
            skip = len(rest) - len(stripped)
            off = byte_pos + len(rest[:skip].encode("utf-8"))
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", off)
        kind = m.lastgroup
        start = m.start(kind)
        off = byte_pos + len(text[pos:start].encode("utf-8"))
        tokens.append(_Token(kind, m.group(kind), off))
        byte_pos = off + len(m.group(kind).encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("eof", "", byte_pos))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def _advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def _is_op(self, *ops):
        return self.tok.kind == "op" and self.tok.text in ops

    def _fail(self, expected, message=None):
        t = self.tok
        if message is None:
            found = "end of input" if t.kind == "eof" else repr(t.text)
            message = f"unexpected {found}"
        raise ExprSyntaxError(message, t.offset, expected)

    def _expect(self, op):
        if not self._is_op(op):
            self._fail({f"'{op}'"})
        return self._advance()

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "eof":
            self._fail({"operator", "end of input"})
        return e

    def expr(self):
        e = self.term()
        while self._is_op("+", "-"):
            op = self._advance().text
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self._is_op("*", "/"):
            op = self._advance().text
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self):
        if self._is_op("-"):
            self._advance()
            return neg(self.unary())
        if self._is_op("+"):
            self._advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self._is_op("^"):
            self._advance()
            return power(base, self.exponent())
        return base

    def exponent(self):
        paren = self._is_op("(")
        if paren:
            self._advance()
        sign = 1
        if self._is_op("-", "+"):
            sign = -1 if self._advance().text == "-" else 1
        t = self.tok
        if t.kind == "num":
            if not re.fullmatch(r"\d+", t.text):
                raise ExprSyntaxError(
                    f"non-integer exponent {t.text!r}", t.offset, {"integer"}
                )
            self._advance()
            n = sign * int(t.text)
        elif t.kind in ("ident",) or self._is_op("("):
            raise ExprSyntaxError("non-integer exponent", t.offset, {"integer"})
        else:
            self._fail({"integer"})
        if paren:
            self._expect(")")
        return n

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self._advance()
            return Const(float(t.text))
        if t.kind == "ident":
            self._advance()
            if t.text == "exp":
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return exp(arg)
            return Var(t.text)
        if self._is_op("("):
            self._advance()
            e = self.expr()
            self._expect(")")
            return e
        self._fail(_ATOM_START)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises :class:`ExprSyntaxError` carrying the byte offset of the
    offending token and the set of acceptable token kinds.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0, _ATOM_START)
    return _Parser(text).parse()


# Unparsing -----------------------------------------------------------------

def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, (Add, Sub)):
        return 1
    if isinstance(e, (Mul, Div)):
        return 2
    if isinstance(e, Neg) or (isinstance(e, Const) and (e.value < 0 or str(e.value)[0] == "-")):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def unparse(e: Expr) -> str:
    """Render ``e`` in the input grammar; ``parse(unparse(e))`` evaluates identically."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Exp):
        return f"exp({unparse(e.arg)})"
    if isinstance(e, Neg):
        inner = unparse(e.arg)
        if _prec(e.arg) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Pow):
        base = unparse(e.base)
        if _prec(e.base) <= 4:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    ops = {Add: "+", Sub: "-", Mul: "*", Div: "/"}
    p = _prec(e)
    left, right = unparse(e.left), unparse(e.right)
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {ops[type(e)]} {right}"


# Queries -------------------------------------------------------------------

def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, (Neg, Exp)):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base)
    return free_vars(e.left) | free_vars(e.right)


def parameters(e: Expr) -> frozenset:
    """Free variables other than the Laplace symbol."""
    return free_vars(e) - {LAPLACE}


# Evaluation ----------------------------------------------------------------

def evaluate(e: Expr, s=None, params: Mapping[str, float] | None = None):
    """Evaluate ``e`` exactly by recursion.

    ``s`` may be a complex scalar or numpy array; parameters are real.  A
    parameter-only expression evaluated at real inputs returns a real value.
    """
    params = params or {}

    def ev(node):
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Var):
            if node.name == LAPLACE and s is not None:
                return s
            if node.name in params:
                return params[node.name]
            raise UnboundVariableError(node.name)
        if isinstance(node, Neg):
            return -ev(node.arg)
        if isinstance(node, Add):
            return ev(node.left) + ev(node.right)
        if isinstance(node, Sub):
            return ev(node.left) - ev(node.right)
        if isinstance(node, Mul):
            return ev(node.left) * ev(node.right)
        if isinstance(node, Div):
            num, den = ev(node.left), ev(node.right)
            if np.any(np.asarray(den) == 0):
                raise ExprZeroDivisionError(unparse(node))
            return num / den
        if isinstance(node, Pow):
            b = ev(node.base)
            if node.exponent < 0 and np.any(np.asarray(b) == 0):
                raise ExprZeroDivisionError(unparse(node))
            if node.exponent < 0:
                return 1.0 / (b ** (-node.exponent))
            return b ** node.exponent
        if isinstance(node, Exp):
            return np.exp(ev(node.arg))
        raise TypeError(f"not an expression node: {node!r}")

    return ev(e)


def compile_expr(e: Expr):
    """Compile ``e`` to a numpy-vectorised callable ``fn(s, params)``.

    Used on hot paths; :func:`evaluate` remains the reference evaluator.
    """

    def src(node):
        if isinstance(node, Const):
            return f"({node.value!r})"
        if isinstance(node, Var):
            return "s" if node.name == LAPLACE else f"p[{node.name!r}]"
        if isinstance(node, Neg):
            return f"(-{src(node.arg)})"
        if isinstance(node, Exp):
            return f"_np.exp({src(node.arg)})"
        if isinstance(node, Pow):
            if node.exponent < 0:
                return f"(1.0/({src(node.base)})**{-node.exponent})"
            return f"(({src(node.base)})**{node.exponent})"
        op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(node)]
        return f"({src(node.left)} {op} {src(node.right)})"

    code = f"lambda s, p: {src(e)}"
    return eval(code, {"_np": np})  # noqa: S307 - source built from our own tree


# Differentiation -----------------------------------------------------------

def diff(e: Expr, name: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to parameter ``name``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == name else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, name))
    if isinstance(e, Add):
        return add(diff(e.left, name), diff(e.right, name))
    if isinstance(e, Sub):
        return sub(diff(e.left, name), diff(e.right, name))
    if isinstance(e, Mul):
        return add(mul(diff(e.left, name), e.right), mul(e.left, diff(e.right, name)))
    if isinstance(e, Div):
        da, db = diff(e.left, name), diff(e.right, name)
        if _is_const(db, 0.0):
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, 2))
    if isinstance(e, Pow):
        db = diff(e.base, name)
        if _is_const(db, 0.0):
            return ZERO
        return mul(mul(const(e.exponent), power(e.base, e.exponent - 1)), db)
    if isinstance(e, Exp):
        da = diff(e.arg, name)
        if _is_const(da, 0.0):
            return ZERO
        return mul(e, da)
    raise TypeError(f"not an expression node: {e!r}")


# Interval enclosure --------------------------------------------------------

def _mul_iv(a, b):
    def m(x, y):
        if x == 0.0 or y == 0.0:
            return 0.0
        return x * y

    prods = [m(a[0], b[0]), m(a[0], b[1]), m(a[1], b[0]), m(a[1], b[1])]
    return min(prods), max(prods)


def _pow_iv(a, n):
    lo, hi = a
    if n < 0:
        lo2, hi2 = _pow_iv(a, -n)
        if lo2 <= 0.0 <= hi2:
            raise IntervalError("negative power of an interval containing zero")
        return 1.0 / hi2, 1.0 / lo2
    if n % 2 == 1:
        return lo ** n, hi ** n
    if lo >= 0.0:
        return lo ** n, hi ** n
    if hi <= 0.0:
        return hi ** n, lo ** n
    return 0.0, max(lo ** n, hi ** n)


def bounds(e: Expr, box: Mapping[str, tuple]) -> tuple[float, float]:
    """Enclose the range of a parameter-only expression over an axis box.

    ``box`` maps parameter names to ``(lo, hi)``; ``hi`` may be ``inf``.
    """

    def ev(node):
        if isinstance(node, Const):
            return node.value, node.value
        if isinstance(node, Var):
            if node.name not in box:
                raise UnboundVariableError(node.name)
            lo, hi = box[node.name]
            return float(lo), float(hi)
        if isinstance(node, Neg):
            lo, hi = ev(node.arg)
            return -hi, -lo
        if isinstance(node, Add):
            a, b = ev(node.left), ev(node.right)
            return a[0] + b[0], a[1] + b[1]
        if isinstance(node, Sub):
            a, b = ev(node.left), ev(node.right)
            return a[0] - b[1], a[1] - b[0]
        if isinstance(node, Mul):
            return _mul_iv(ev(node.left), ev(node.right))
        if isinstance(node, Div):
            a, b = ev(node.left), ev(node.right)
            if b[0] <= 0.0 <= b[1]:
                raise IntervalError(f"denominator range contains zero in ({unparse(node)})")
            return _mul_iv(a, (1.0 / b[1], 1.0 / b[0]))
        if isinstance(node, Pow):
            return _pow_iv(ev(node.base), node.exponent)
        if isinstance(node, Exp):
            lo, hi = ev(node.arg)
            with np.errstate(over="ignore"):
                return float(np.exp(lo)), float(np.exp(hi))
        raise TypeError(f"not an expression node: {node!r}")

    lo, hi = ev(e)
    if math.isnan(lo) or math.isnan(hi):
        raise IntervalError(f"interval evaluation undefined for ({unparse(e)})")
    return lo, hi


def abs_bound(e: Expr, box: Mapping[str, tuple]) -> float:
    """Upper bound of ``|e|`` over ``box``."""
    lo, hi = bounds(e, box)
    return max(abs(lo), abs(hi))
