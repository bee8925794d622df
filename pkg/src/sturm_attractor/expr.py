"""Coefficient expressions ``a(x, u, p)`` and ``f(x, u, p)``.

Small infix language over the variables ``x``, ``u`` and ``p`` (``p`` stands for
``u_x``), numeric literals and named parameters, which are replaced by their
values while parsing.  Grammar, loosest binding first::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := primary (("^" | "**") unary)?
    primary := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

``FUNC`` is one of sin, cos, tan, exp, ln (alias log), tanh, abs, sqrt.  The
exponent of ``^`` must reduce to a constant.  ``NAME`` is a variable, a
parameter or the built-in constant ``pi``.

Trees are immutable.  :func:`to_string` and :func:`parse` round-trip exactly:
the parser never rewrites the tree, and negative constants are always stored
as ``Unary("neg", Const(c))`` so that printing them is unambiguous.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from .errors import (
    ArityError,
    DomainError,
    ExpressionSyntaxError,
    NonDifferentiable,
    UnknownIdentifier,
)

VARIABLES = ("x", "u", "p")
FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "tanh", "abs", "sqrt")
_ALIASES = {"log": "ln"}
BINARY_OPS = ("+", "-", "*", "/")
# built-in names; a parameter of the same name takes precedence
CONSTANTS = {"pi": math.pi}


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"Const holds finite non-negative values, got {self.value!r}")


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise UnknownIdentifier(self.name)


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Node"

    def __post_init__(self):
        if self.op != "neg" and self.op not in FUNCTIONS:
            raise ArityError(f"{self.op!r} is not a unary operator")


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ArityError(f"{self.op!r} is not a binary operator")


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: float

    def __post_init__(self):
        if not math.isfinite(self.exponent):
            raise ValueError("power exponent must be finite")


Node = Union[Const, Var, Unary, Binary, Pow]


def number(value: float) -> Node:
    """Constant node for any finite real (negative values become ``neg(c)``)."""
    value = float(value)
    if value < 0:
        return Unary("neg", Const(-value))
    return Const(value + 0.0)  # normalises -0.0


def constant_value(node: Node) -> float | None:
    """Value of a literal constant node, ``None`` for anything else."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Unary) and node.op == "neg" and isinstance(node.arg, Const):
        return -node.arg.value
    return None


# -- parsing ----------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r")"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


@dataclass(frozen=True)
class _Name:
    """Identifier leaf awaiting resolution against variables and parameters."""

    name: str
    pos: int


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        start = m.start(kind)
        tok = m.group(kind)
        if tok == "**":
            tok = "^"
        tokens.append(_Token(kind, tok, start))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def _fail(self, message, tok=None):
        tok = tok or self.tok
        raise ExpressionSyntaxError(message, tok.pos, self.text)

    def _expect(self, text):
        if self.tok.text != text or self.tok.kind == "num":
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            self._fail(f"expected {text!r}, found {found}")
        self.i += 1

    def parse(self):
        if self.tok.kind == "end":
            self._fail("empty expression")
        node = self.expr()
        if self.tok.kind != "end":
            self._fail(f"unexpected {self.tok.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.kind == "op" and self.tok.text == "-":
            self.i += 1
            return Unary("neg", self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self.i += 1
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            start = self.tok
            self.i += 1
            exponent = self.unary()
            return _PendingPow(base, exponent, start.pos)
        return base

    def primary(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            name = _ALIASES.get(tok.text, tok.text)
            if name in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.text == "("):
                    self._fail(f"function {tok.text!r} must be followed by '('")
                self.i += 1
                args = [self.expr()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.i += 1
                    args.append(self.expr())
                self._expect(")")
                if len(args) != 1:
                    raise ArityError(
                        f"{name} takes 1 argument, got {len(args)} (position {tok.pos})"
                    )
                return Unary(name, args[0])
            return _Name(tok.text, tok.pos)
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self._expect(")")
            return node
        if tok.kind == "end":
            self._fail("unexpected end of input")
        self._fail(f"unexpected {tok.text!r}")


@dataclass(frozen=True)
class _PendingPow:
    base: object
    exponent: object
    pos: int


def _resolve(node, params):
    if isinstance(node, _Name):
        if node.name in VARIABLES:
            return Var(node.name)
        if node.name in params:
            return number(params[node.name])
        if node.name in CONSTANTS:
            return number(CONSTANTS[node.name])
        raise UnknownIdentifier(node.name, node.pos)
    if isinstance(node, Const):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, _resolve(node.arg, params))
    if isinstance(node, Binary):
        return Binary(node.op, _resolve(node.left, params), _resolve(node.right, params))
    if isinstance(node, _PendingPow):
        base = _resolve(node.base, params)
        exponent = _resolve(node.exponent, params)
        if free_variables(exponent):
            raise ExpressionSyntaxError("exponent must be constant", node.pos)
        try:
            value = evaluate(exponent, 0.0, 0.0, 0.0)
        except DomainError as exc:
            raise ExpressionSyntaxError(f"invalid exponent ({exc})", node.pos) from None
        return Pow(base, value)
    raise TypeError(f"unexpected node {node!r}")


def parse(text: str, params: Mapping[str, float] | None = None) -> Node:
    """Parse ``text`` into an expression tree, substituting ``params``.

    Syntax is checked before identifiers are resolved, so a malformed text
    reports its ExpressionSyntaxError even when it also names an unknown
    identifier.
    """
    params = dict(params or {})
    for name, value in params.items():
        if name in VARIABLES or name in FUNCTIONS or name in _ALIASES:
            raise ValueError(f"parameter name {name!r} is reserved")
        if not math.isfinite(float(value)):
            raise ValueError(f"parameter {name!r} must be finite")
    raw = _Parser(text).parse()
    return _resolve(raw, params)


# -- printing ---------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_NEG_PREC = 3
_POW_PREC = 4
_ATOM_PREC = 5


def _prec(node):
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _NEG_PREC
    if isinstance(node, Pow):
        return _POW_PREC
    return _ATOM_PREC


def _fmt_number(value):
    text = repr(float(value))
    return text


def to_string(node: Node) -> str:
    """Infix text that parses back to an identical tree."""
    if isinstance(node, Const):
        return _fmt_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = to_string(node.arg)
            if _prec(node.arg) < _NEG_PREC:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{node.op}({to_string(node.arg)})"
    if isinstance(node, Binary):
        p = _PREC[node.op]
        left = to_string(node.left)
        if _prec(node.left) < p:
            left = f"({left})"
        right = to_string(node.right)
        if _prec(node.right) <= p:
            right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Pow):
        base = to_string(node.base)
        if _prec(node.base) < _ATOM_PREC:
            base = f"({base})"
        exponent = _fmt_number(node.exponent)
        if node.exponent < 0:
            exponent = f"({exponent})"
        return f"{base}^{exponent}"
    raise TypeError(f"not an expression node: {node!r}")


def free_variables(node: Node) -> frozenset:
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Const):
        return frozenset()
    if isinstance(node, Unary):
        return free_variables(node.arg)
    if isinstance(node, Binary):
        return free_variables(node.left) | free_variables(node.right)
    if isinstance(node, Pow):
        return free_variables(node.base)
    raise TypeError(f"not an expression node: {node!r}")


# -- evaluation -------------------------------------------------------------------

_UFUNC = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
}


def _build(node, checked):
    if isinstance(node, Const):
        c = node.value
        return lambda x, u, p: c
    if isinstance(node, Var):
        if node.name == "x":
            return lambda x, u, p: x
        if node.name == "u":
            return lambda x, u, p: u
        return lambda x, u, p: p
    if isinstance(node, Unary):
        g = _build(node.arg, checked)
        if node.op == "neg":
            return lambda x, u, p: -g(x, u, p)
        if node.op == "ln":
            if not checked:
                return lambda x, u, p: np.log(g(x, u, p))

            def ln(x, u, p):
                v = g(x, u, p)
                if np.any(np.asarray(v) <= 0):
                    raise DomainError("ln of a non-positive value")
                return np.log(v)

            return ln
        if node.op == "sqrt":
            if not checked:
                return lambda x, u, p: np.sqrt(g(x, u, p))

            def sqrt(x, u, p):
                v = g(x, u, p)
                if np.any(np.asarray(v) < 0):
                    raise DomainError("sqrt of a negative value")
                return np.sqrt(v)

            return sqrt
        fn = _UFUNC[node.op]
        return lambda x, u, p: fn(g(x, u, p))
    if isinstance(node, Binary):
        lf = _build(node.left, checked)
        rf = _build(node.right, checked)
        if node.op == "+":
            return lambda x, u, p: lf(x, u, p) + rf(x, u, p)
        if node.op == "-":
            return lambda x, u, p: lf(x, u, p) - rf(x, u, p)
        if node.op == "*":
            return lambda x, u, p: lf(x, u, p) * rf(x, u, p)
        if not checked:
            return lambda x, u, p: np.divide(lf(x, u, p), rf(x, u, p))

        def div(x, u, p):
            den = rf(x, u, p)
            if np.any(np.asarray(den) == 0):
                raise DomainError("division by zero")
            return np.divide(lf(x, u, p), den)

        return div
    if isinstance(node, Pow):
        g = _build(node.base, checked)
        e = node.exponent
        if e == 2.0:
            def square(x, u, p):
                v = g(x, u, p)
                return v * v

            return square
        if float(e).is_integer() and e > 0:
            k = int(e)
            return lambda x, u, p: np.power(g(x, u, p), k)
        if not checked:
            return lambda x, u, p: np.power(np.asarray(g(x, u, p), dtype=float), e)

        def power(x, u, p):
            v = np.asarray(g(x, u, p), dtype=float)
            if e < 0 and np.any(v == 0):
                raise DomainError("zero raised to a negative power")
            if not float(e).is_integer() and np.any(v < 0):
                raise DomainError("negative base with a fractional exponent")
            return np.power(v, e)

        return power
    raise TypeError(f"not an expression node: {node!r}")


def compile_expr(node: Node, checked: bool = True) -> Callable:
    """Turn a tree into a numpy-vectorised function ``fn(x, u, p)``.

    With ``checked=True`` operator-domain violations and non-finite results
    raise :class:`DomainError`.  ``checked=False`` lets NaN/Inf through; the
    batch integrator uses it and handles non-finite lanes itself.  Constant
    expressions are broadcast to the shape of the inputs.
    """
    inner = _build(node, checked)

    if not checked:
        def raw(x, u, p):
            with np.errstate(all="ignore"):
                v = inner(x, u, p)
            return np.broadcast_to(v, np.broadcast(x, u, p).shape) if np.ndim(v) == 0 and (
                np.ndim(x) or np.ndim(u) or np.ndim(p)) else v

        return raw

    def fn(x, u, p):
        with np.errstate(all="ignore"):
            v = inner(x, u, p)
        if not np.all(np.isfinite(v)):
            raise DomainError("expression evaluated to a non-finite value")
        if np.ndim(v) == 0 and (np.ndim(x) or np.ndim(u) or np.ndim(p)):
            v = np.full(np.broadcast(x, u, p).shape, float(v))
        return v

    return fn


def evaluate(node: Node, x: float, u: float, p: float) -> float:
    """Scalar value of ``node`` at ``(x, u, p)``; raises DomainError on failure."""
    for v in (x, u, p):
        if not math.isfinite(v):
            raise DomainError("non-finite argument")
    return float(compile_expr(node)(float(x), float(u), float(p)))


# -- differentiation --------------------------------------------------------------

def _fold(node):
    """Replace a variable-free node by its value, when that value is finite."""
    if isinstance(node, (Const, Var)) or free_variables(node):
        return node
    try:
        value = evaluate(node, 0.0, 0.0, 0.0)
    except DomainError:
        return node
    return number(value)


def _add(a, b):
    if constant_value(a) == 0:
        return b
    if constant_value(b) == 0:
        return a
    return _fold(Binary("+", a, b))


def _sub(a, b):
    if constant_value(b) == 0:
        return a
    if constant_value(a) == 0:
        return _neg(b)
    return _fold(Binary("-", a, b))


def _neg(a):
    c = constant_value(a)
    if c is not None:
        return number(-c)
    return Unary("neg", a)


def _mul(a, b):
    ca, cb = constant_value(a), constant_value(b)
    if ca == 0 or cb == 0:
        return Const(0.0)
    if ca == 1:
        return b
    if cb == 1:
        return a
    if ca == -1:
        return _neg(b)
    if cb == -1:
        return _neg(a)
    return _fold(Binary("*", a, b))


def _div(a, b):
    if constant_value(b) == 1:
        return a
    if constant_value(a) == 0 and constant_value(b) not in (None, 0):
        return Const(0.0)
    return _fold(Binary("/", a, b))


def _pow(a, e):
    if e == 0:
        return Const(1.0)
    if e == 1:
        return a
    return _fold(Pow(a, e))


def differentiate(node: Node, var: str) -> Node:
    """Exact symbolic partial derivative with respect to ``var``.

    Only constant folding and 0/1 identities are applied to the result.
    ``abs`` is rejected with :class:`NonDifferentiable`.
    """
    if var not in VARIABLES:
        raise UnknownIdentifier(var)
    return _diff(node, var)


def _diff(node, var):
    if isinstance(node, Const):
        return Const(0.0)
    if isinstance(node, Var):
        return Const(1.0 if node.name == var else 0.0)
    if isinstance(node, Binary):
        a, b = node.left, node.right
        da, db = _diff(a, var), _diff(b, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        # (a/b)' = a'/b - a b' / b^2
        return _sub(_div(da, b), _div(_mul(a, db), _pow(b, 2.0)))
    if isinstance(node, Pow):
        dg = _diff(node.base, var)
        e = node.exponent
        return _mul(_mul(number(e), _pow(node.base, e - 1.0)), dg)
    if isinstance(node, Unary):
        g = node.arg
        dg = _diff(g, var)
        if node.op == "neg":
            return _neg(dg)
        if node.op == "abs":
            raise NonDifferentiable("abs is not differentiable")
        if constant_value(dg) == 0:
            return Const(0.0)
        if node.op == "sin":
            outer = Unary("cos", g)
        elif node.op == "cos":
            outer = _neg(Unary("sin", g))
        elif node.op == "tan":
            outer = _add(Const(1.0), _pow(Unary("tan", g), 2.0))
        elif node.op == "exp":
            outer = Unary("exp", g)
        elif node.op == "ln":
            return _div(dg, g)
        elif node.op == "tanh":
            outer = _sub(Const(1.0), _pow(Unary("tanh", g), 2.0))
        elif node.op == "sqrt":
            return _div(dg, _mul(Const(2.0), Unary("sqrt", g)))
        else:  # pragma: no cover - guarded by Unary.__post_init__
            raise NonDifferentiable(node.op)
        return _mul(outer, dg)
    raise TypeError(f"not an expression node: {node!r}")


@dataclass(frozen=True)
class Coefficient:
    """A parsed coefficient together with its compiled value and partials.

    Partials that do not exist (``abs``) are left as ``None`` and only fail
    when a stage actually needs them.
    """

    text: str
    node: Node

    @classmethod
    def from_text(cls, text, params=None):
        return cls(text, parse(text, params))

    def __post_init__(self):
        object.__setattr__(self, "_fn", compile_expr(self.node))
        object.__setattr__(self, "_raw", compile_expr(self.node, checked=False))
        object.__setattr__(self, "bare", _build(self.node, False))
        partials = {}
        for var in VARIABLES:
            try:
                d = differentiate(self.node, var)
            except NonDifferentiable:
                partials[var] = None
            else:
                partials[var] = (d, compile_expr(d), _build(d, False))
        object.__setattr__(self, "_partials", partials)

    def __call__(self, x, u, p):
        return self._fn(x, u, p)

    def raw(self, x, u, p):
        return self._raw(x, u, p)

    def derivative(self, var) -> Node:
        entry = self._partials[var]
        if entry is None:
            raise NonDifferentiable(f"{self.text!r} is not differentiable in {var}")
        return entry[0]

    def partial(self, var, x, u, p):
        entry = self._partials[var]
        if entry is None:
            raise NonDifferentiable(f"{self.text!r} is not differentiable in {var}")
        return entry[1](x, u, p)

    def bare_partial(self, var):
        """Unguarded partial: no error-state handling, no finiteness check.

        For hot loops that wrap many evaluations in one ``np.errstate`` and
        check the combined result themselves.
        """
        entry = self._partials[var]
        if entry is None:
            raise NonDifferentiable(f"{self.text!r} is not differentiable in {var}")
        return entry[2]

    def depends_on(self, var) -> bool:
        return var in free_variables(self.node)
