"""Arithmetic expressions: parsing, evaluation and symbolic differentiation.

Expressions define metric components over chart coordinates and the
nonlinearities ``f(u)``, ``h(u)``.  The grammar is::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := number | name | name '(' expr ')' | '(' expr ')'

so ``^`` binds tighter than unary minus (``-u^2 == -(u^2)``).

Evaluation works on plain floats and on numpy arrays alike; domain
violations raise :class:`ExprDomainError` instead of producing NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "tanh", "atan")
CONSTANTS = {"pi": math.pi}


class ParseError(ValueError):
    """Malformed expression source.

    ``offset`` is the character offset of the offending token (or
    ``len(source)`` when input ended early).
    """

    def __init__(self, offset: int, message: str, expected: str = ""):
        self.offset = offset
        self.message = message
        self.expected = expected
        text = f"{message} at offset {offset}"
        if expected:
            text += f" (expected {expected})"
        super().__init__(text)


class ExprDomainError(ArithmeticError):
    """Evaluation left the real domain of an operation."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Ast"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Ast"
    right: "Ast"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Ast"


Ast = Union[Num, Var, Neg, BinOp, Call]


def variables(ast: Ast) -> set[str]:
    """Names of all variables referenced in ``ast``."""
    if isinstance(ast, Var):
        return {ast.name}
    if isinstance(ast, Num):
        return set()
    if isinstance(ast, (Neg, Call)):
        return variables(ast.arg)
    return variables(ast.left) | variables(ast.right)


def is_constant(ast: Ast) -> bool:
    return not variables(ast)


# ---------------------------------------------------------------------------
# Tokenizer / parser


@dataclass(frozen=True)
class _Token:
    kind: str  # "num", "name", "op", "lparen", "rparen", "end"
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            start = i
            while i < n and (source[i].isdigit() or source[i] == "."):
                i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j
                    while i < n and source[i].isdigit():
                        i += 1
            text = source[start:i]
            try:
                float(text)
            except ValueError:
                raise ParseError(start, f"malformed number {text!r}", "a number") from None
            tokens.append(_Token("num", text, start))
            continue
        if c.isalpha() or c == "_":
            start = i
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            tokens.append(_Token("name", source[start:i], start))
            continue
        if c in "+-*/^":
            tokens.append(_Token("op", c, i))
        elif c == "(":
            tokens.append(_Token("lparen", c, i))
        elif c == ")":
            tokens.append(_Token("rparen", c, i))
        else:
            raise ParseError(i, f"unexpected character {c!r}")
        i += 1
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str, allowed: Sequence[str]):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.allowed = set(allowed)

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expression(self) -> Ast:
        left = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Ast:
        left = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Ast:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Ast:
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Ast:
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if tok.text in FUNCTIONS:
                if self.peek().kind != "lparen":
                    raise ParseError(self.peek().offset, f"function {tok.text!r} needs an argument", "'('")
                self.advance()
                arg = self.expression()
                self._close()
                return Call(tok.text, arg)
            if tok.text in self.allowed:
                return Var(tok.text)
            if tok.text in CONSTANTS:
                return Num(CONSTANTS[tok.text])
            raise ParseError(tok.offset, f"unknown identifier {tok.text!r}",
                             "one of " + ", ".join(sorted(self.allowed)) if self.allowed else "")
        if tok.kind == "lparen":
            self.advance()
            inner = self.expression()
            self._close()
            return inner
        raise ParseError(tok.offset, "empty operand", "a number, variable or '('")

    def _close(self) -> None:
        tok = self.peek()
        if tok.kind != "rparen":
            if tok.kind == "end":
                raise ParseError(tok.offset, "unbalanced parentheses", "')'")
            raise ParseError(tok.offset, f"unexpected token {tok.text!r}", "')'")
        self.advance()


def parse(source: str, allowed_vars: Sequence[str] = ()) -> Ast:
    """Parse ``source`` into an :data:`Ast` over ``allowed_vars``.

    ``pi`` is accepted as a named constant unless shadowed by a variable.
    """
    if not source or not source.strip():
        raise ParseError(0, "empty expression", "an operand")
    p = _Parser(source, allowed_vars)
    ast = p.expression()
    tok = p.peek()
    if tok.kind != "end":
        if tok.kind == "rparen":
            raise ParseError(tok.offset, "unbalanced parentheses", "end of input")
        raise ParseError(tok.offset, f"trailing token {tok.text!r}", "an operator or end of input")
    return ast


# ---------------------------------------------------------------------------
# Printing


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _fmt_num(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        text = str(int(v))
    else:
        text = repr(float(v))
    return text


def to_source(ast: Ast) -> str:
    """Serialize ``ast`` so that ``parse(to_source(a))`` evaluates like ``a``."""
    return _print(ast, 0)


def _print(ast: Ast, parent: int) -> str:
    if isinstance(ast, Num):
        text = _fmt_num(ast.value)
        # negative literals (from folding) and exponent notation need guarding
        return f"({text})" if parent > 0 and (ast.value < 0 or "e" in text) else text
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Call):
        return f"{ast.func}({_print(ast.arg, 0)})"
    if isinstance(ast, Neg):
        text = "-" + _print(ast.arg, 3)
        return f"({text})" if parent >= 3 else text
    prec = _PREC[ast.op]
    if ast.op == "^":
        text = f"{_print(ast.left, 5)}^{_print(ast.right, 3)}"
    else:
        # left-associative: right operand of equal precedence needs parens
        text = f"{_print(ast.left, prec)} {ast.op} {_print(ast.right, prec + 1)}"
    return f"({text})" if prec < parent else text


# ---------------------------------------------------------------------------
# Evaluation


def _check(cond, message: str) -> None:
    if np.any(cond):
        raise ExprDomainError(message)


def evaluate(ast: Ast, bindings: Mapping[str, object]):
    """Evaluate ``ast`` with variables taken from ``bindings``.

    Values may be floats or numpy arrays (broadcast together).
    """
    if isinstance(ast, Num):
        return ast.value
    if isinstance(ast, Var):
        try:
            return bindings[ast.name]
        except KeyError:
            raise ExprDomainError(f"missing binding for {ast.name!r}") from None
    if isinstance(ast, Neg):
        return -evaluate(ast.arg, bindings)
    if isinstance(ast, Call):
        x = evaluate(ast.arg, bindings)
        if ast.func == "log":
            _check(np.asarray(x) <= 0, "log of nonpositive value")
            return np.log(x)
        if ast.func == "sqrt":
            _check(np.asarray(x) < 0, "sqrt of negative value")
            return np.sqrt(x)
        if ast.func == "tan":
            _check(np.abs(np.cos(x)) < 1e-300, "tan at a pole")
        with np.errstate(all="ignore"):
            out = getattr(np, "arctan" if ast.func == "atan" else ast.func)(x)
        _check(~np.isfinite(out), f"{ast.func} overflow")
        return out
    a = evaluate(ast.left, bindings)
    b = evaluate(ast.right, bindings)
    if ast.op == "+":
        return a + b
    if ast.op == "-":
        return a - b
    if ast.op == "*":
        return a * b
    if ast.op == "/":
        _check(np.asarray(b) == 0, "division by zero")
        with np.errstate(all="ignore"):
            out = a / b
        _check(~np.isfinite(out), "division overflow")
        return out
    # power
    if is_constant(ast.right):
        c = float(b)
        if not c.is_integer():
            _check(np.asarray(a) < 0, "non-integer power of negative value")
        if c < 0:
            _check(np.asarray(a) == 0, "negative power of zero")
    else:
        _check(np.asarray(a) <= 0, "variable exponent needs positive base")
    with np.errstate(all="ignore"):
        out = np.power(np.asarray(a, dtype=float), b)
    _check(~np.isfinite(out), "power overflow")
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


# conventional name used throughout the package
eval_expr = evaluate


# ---------------------------------------------------------------------------
# Construction helpers with constant folding


def _num(v: float) -> Num:
    return Num(float(v))


def add(a: Ast, b: Ast) -> Ast:
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value + b.value)
    if isinstance(a, Num) and a.value == 0:
        return b
    if isinstance(b, Num) and b.value == 0:
        return a
    return BinOp("+", a, b)


def sub(a: Ast, b: Ast) -> Ast:
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value - b.value)
    if isinstance(b, Num) and b.value == 0:
        return a
    if isinstance(a, Num) and a.value == 0:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Ast, b: Ast) -> Ast:
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value * b.value)
    for x, y in ((a, b), (b, a)):
        if isinstance(x, Num):
            if x.value == 0:
                return Num(0.0)
            if x.value == 1:
                return y
            if x.value == -1:
                return neg(y)
    return BinOp("*", a, b)


def div(a: Ast, b: Ast) -> Ast:
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0:
        return _num(a.value / b.value)
    if isinstance(a, Num) and a.value == 0:
        return Num(0.0)
    if isinstance(b, Num) and b.value == 1:
        return a
    return BinOp("/", a, b)


def power(a: Ast, b: Ast) -> Ast:
    if isinstance(b, Num):
        if b.value == 0:
            return Num(1.0)
        if b.value == 1:
            return a
        if isinstance(a, Num):
            try:
                return _num(evaluate(BinOp("^", a, b), {}))
            except ExprDomainError:
                pass
    return BinOp("^", a, b)


def neg(a: Ast) -> Ast:
    if isinstance(a, Num):
        return _num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(func: str, a: Ast) -> Ast:
    if isinstance(a, Num):
        try:
            return _num(evaluate(Call(func, a), {}))
        except ExprDomainError:
            pass
    return Call(func, a)


def substitute(ast: Ast, replacements: Mapping[str, Ast]) -> Ast:
    """Replace variables by sub-expressions (with constant folding)."""
    if isinstance(ast, Var):
        return replacements.get(ast.name, ast)
    if isinstance(ast, Num):
        return ast
    if isinstance(ast, Neg):
        return neg(substitute(ast.arg, replacements))
    if isinstance(ast, Call):
        return call(ast.func, substitute(ast.arg, replacements))
    build = {"+": add, "-": sub, "*": mul, "/": div, "^": power}[ast.op]
    return build(substitute(ast.left, replacements), substitute(ast.right, replacements))


def simplify(ast: Ast) -> Ast:
    """Constant folding only; no algebraic rewriting."""
    return substitute(ast, {})


# ---------------------------------------------------------------------------
# Differentiation


def differentiate(ast: Ast, var: str) -> Ast:
    """Symbolic derivative of ``ast`` with respect to ``var``."""
    return simplify(_d(simplify(ast), var))


def _d(a: Ast, x: str) -> Ast:
    if isinstance(a, Num):
        return Num(0.0)
    if isinstance(a, Var):
        return Num(1.0 if a.name == x else 0.0)
    if x not in variables(a):
        return Num(0.0)
    if isinstance(a, Neg):
        return neg(_d(a.arg, x))
    if isinstance(a, Call):
        u, du = a.arg, _d(a.arg, x)
        f = a.func
        if f == "sin":
            outer = call("cos", u)
        elif f == "cos":
            outer = neg(call("sin", u))
        elif f == "tan":
            outer = add(Num(1.0), power(call("tan", u), Num(2.0)))
        elif f == "exp":
            outer = call("exp", u)
        elif f == "log":
            return div(du, u)
        elif f == "sqrt":
            return div(du, mul(Num(2.0), call("sqrt", u)))
        elif f == "sinh":
            outer = call("cosh", u)
        elif f == "cosh":
            outer = call("sinh", u)
        elif f == "tanh":
            outer = sub(Num(1.0), power(call("tanh", u), Num(2.0)))
        elif f == "atan":
            return div(du, add(Num(1.0), power(u, Num(2.0))))
        else:  # pragma: no cover - parser rejects unknown functions
            raise ValueError(f"unknown function {f}")
        return mul(outer, du)
    l, r = a.left, a.right
    if a.op == "+":
        return add(_d(l, x), _d(r, x))
    if a.op == "-":
        return sub(_d(l, x), _d(r, x))
    if a.op == "*":
        return add(mul(_d(l, x), r), mul(l, _d(r, x)))
    if a.op == "/":
        # (l' r - l r') / r^2
        return div(sub(mul(_d(l, x), r), mul(l, _d(r, x))), power(r, Num(2.0)))
    # power
    if x not in variables(r):
        c = simplify(r)
        exponent = sub(c, Num(1.0))
        return mul(mul(c, power(l, exponent)), _d(l, x))
    # general a^b = exp(b log a); log(a) enforces a > 0 at evaluation time
    dl = _d(l, x)
    inner = add(mul(_d(r, x), call("log", l)), div(mul(r, dl), l))
    return mul(a, inner)
