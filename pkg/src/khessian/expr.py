"""Arithmetic expressions in x1..x3 with exact first and second derivatives.

Grammar (whitespace-insensitive)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?          # exponent must be an integer constant
    atom   := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"
    VAR    := x1 | x2 | x3
    FUNC   := sqrt | exp | log | abs

``-x1^2`` parses as ``-(x1^2)`` and ``^`` is right-associative.
Derivatives are propagated forward through the tree as second-order jets
(value, gradient, Hessian), so they are exact up to rounding.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

__all__ = ["Expression", "parse"]

MAX_VARS = 3
FUNCS = ("sqrt", "exp", "log", "abs")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise InputError(f"unexpected character {text[bad]!r} at column {bad + 1} in {text!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            self.fail(f"expected {value!r}")
        self.i += 1
        return tok

    def fail(self, msg):
        kind, val, col = self.peek()
        got = "end of input" if kind == "end" else repr(val)
        raise InputError(f"{msg} but found {got} at column {col + 1} in {self.text!r}")

    def parse(self):
        if self.peek()[0] == "end":
            raise InputError("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("expected an operator")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = ("mul" if op == "*" else "div", node, self.unary())
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.take()
            inner = self.unary()
            return ("neg", inner) if val == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^", self.peek()[2]):
            col = self.take()[2]
            exponent = self.unary()
            p = _constant(exponent)
            if p is None or p != int(p):
                raise InputError(f"exponent after '^' at column {col + 1} must be an integer constant in {self.text!r}")
            return ("pow", base, int(p))
        return base

    def atom(self):
        kind, val, col = self.peek()
        if kind == "num":
            self.take()
            return ("const", float(val))
        if kind == "name":
            self.take()
            if val in FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return (val, arg)
            m = re.fullmatch(r"x([1-9])", val)
            if m and int(m.group(1)) <= MAX_VARS:
                return ("var", int(m.group(1)) - 1)
            raise InputError(f"unknown name {val!r} at column {col + 1} in {self.text!r}")
        if (kind, val) == ("op", "("):
            self.take()
            node = self.expr()
            self.take(")")
            return node
        self.fail("expected a number, variable, function or '('")


def _constant(node):
    tag = node[0]
    if tag == "const":
        return node[1]
    if tag == "neg":
        v = _constant(node[1])
        return None if v is None else -v
    if tag == "pow":
        v = _constant(node[1])
        return None if v is None or (v == 0 and node[2] < 0) else v ** node[2]
    return None


def _max_var(node) -> int:
    if node[0] == "var":
        return node[1] + 1
    return max([_max_var(c) for c in node[1:] if isinstance(c, tuple)] + [0])


@dataclass(frozen=True)
class _Jet:
    v: np.ndarray
    g: np.ndarray  # (..., n)
    H: np.ndarray  # (..., n, n)

    def chain(self, f0, f1, f2):
        # composition with a scalar function: f(v), f'(v), f''(v)
        outer = self.g[..., :, None] * self.g[..., None, :]
        return _Jet(f0, f1[..., None] * self.g, f1[..., None, None] * self.H + f2[..., None, None] * outer)


def _ipow(v, p):
    with np.errstate(divide="ignore", invalid="ignore"):
        f0 = v ** p
        f1 = p * v ** (p - 1) if p != 1 else np.ones_like(v)
        if p in (0, 1):
            f2 = np.zeros_like(v)
        elif p == 2:
            f2 = np.full_like(v, 2.0)
        else:
            f2 = p * (p - 1) * v ** (p - 2)
    if p == 0:
        f1 = np.zeros_like(v)
    return f0, f1, f2


class Expression:
    """A parsed expression; evaluate with ``expr(x)`` or ``expr.jet(x)``.

    ``x`` has shape ``(..., n)``; ``n`` must cover every variable used.
    """

    def __init__(self, text: str):
        self.text = text
        self._tree = _Parser(text).parse()
        self.nvars = _max_var(self._tree)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and other.text == self.text

    def __hash__(self):
        return hash(self.text)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] < self.nvars:
            n = 0 if x.ndim == 0 else x.shape[-1]
            raise ConfigurationError(f"expression {self.text!r} uses x{self.nvars} but points are {n}-dimensional")
        return x

    def __call__(self, x):
        x = self._check(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.broadcast_to(self._value(self._tree, x), x.shape[:-1]).astype(float)

    def _value(self, node, x):
        tag = node[0]
        if tag == "const":
            return np.float64(node[1])
        if tag == "var":
            return x[..., node[1]]
        if tag == "neg":
            return -self._value(node[1], x)
        if tag == "pow":
            return self._value(node[1], x) ** float(node[2])
        if tag in FUNCS:
            a = self._value(node[1], x)
            return {"sqrt": np.sqrt, "exp": np.exp, "log": np.log, "abs": np.abs}[tag](a)
        a, b = self._value(node[1], x), self._value(node[2], x)
        return {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}[tag](a, b)

    def jet(self, x):
        """Return ``(value, gradient, hessian)`` with shapes ``(...), (..., n), (..., n, n)``."""
        x = self._check(x)
        n = x.shape[-1]
        shape = x.shape[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            j = self._jet(self._tree, x, n, shape)
        return (np.broadcast_to(j.v, shape).astype(float),
                np.broadcast_to(j.g, shape + (n,)).astype(float),
                np.broadcast_to(j.H, shape + (n, n)).astype(float))

    def gradient(self, x):
        return self.jet(x)[1]

    def hessian(self, x):
        return self.jet(x)[2]

    def _jet(self, node, x, n, shape) -> _Jet:
        tag = node[0]
        if tag == "const":
            return _Jet(np.full(shape, node[1]), np.zeros(shape + (n,)), np.zeros(shape + (n, n)))
        if tag == "var":
            g = np.zeros(shape + (n,))
            g[..., node[1]] = 1.0
            return _Jet(x[..., node[1]].copy(), g, np.zeros(shape + (n, n)))
        if tag == "neg":
            a = self._jet(node[1], x, n, shape)
            return _Jet(-a.v, -a.g, -a.H)
        if tag == "pow":
            a = self._jet(node[1], x, n, shape)
            return a.chain(*_ipow(a.v, node[2]))
        if tag in FUNCS:
            a = self._jet(node[1], x, n, shape)
            v = a.v
            if tag == "sqrt":
                s = np.sqrt(v)
                return a.chain(s, 0.5 / s, -0.25 / (s * v))
            if tag == "exp":
                e = np.exp(v)
                return a.chain(e, e, e)
            if tag == "log":
                return a.chain(np.log(v), 1.0 / v, -1.0 / v**2)
            return a.chain(np.abs(v), np.sign(v), np.zeros_like(v))
        a = self._jet(node[1], x, n, shape)
        b = self._jet(node[2], x, n, shape)
        if tag == "add":
            return _Jet(a.v + b.v, a.g + b.g, a.H + b.H)
        if tag == "sub":
            return _Jet(a.v - b.v, a.g - b.g, a.H - b.H)
        cross = a.g[..., :, None] * b.g[..., None, :]
        if tag == "mul":
            return _Jet(a.v * b.v,
                        a.g * b.v[..., None] + b.g * a.v[..., None],
                        a.H * b.v[..., None, None] + b.H * a.v[..., None, None] + cross + np.swapaxes(cross, -1, -2))
        # a / b = a * (1/b)
        inv = b.chain(1.0 / b.v, -1.0 / b.v**2, 2.0 / b.v**3)
        cross = a.g[..., :, None] * inv.g[..., None, :]
        return _Jet(a.v * inv.v,
                    a.g * inv.v[..., None] + inv.g * a.v[..., None],
                    a.H * inv.v[..., None, None] + inv.H * a.v[..., None, None] + cross + np.swapaxes(cross, -1, -2))


def parse(text) -> Expression:
    if isinstance(text, Expression):
        return text
    if isinstance(text, (int, float)):
        text = repr(float(text))
    if not isinstance(text, str):
        raise InputError(f"expected an expression string, got {type(text).__name__}")
    return Expression(text)
