"""Random expression trees and the malformed-source corpus shared by tests."""

import numpy as np

from stablerobin import expr
from stablerobin.expr import BinOp, Call, Neg, Num, Var

# (source, offset, message fragment): positions are exact
MALFORMED = [
    ("u + ", 4, "empty operand"),
    ("", 0, "empty expression"),
    ("u - u^", 6, "empty operand"),
    ("(u + 1", 6, "unbalanced"),
    ("u + 1)", 5, "unbalanced"),
    ("u v", 2, "trailing"),
    ("u + w", 4, "unknown identifier"),
    ("foo(u)", 0, "unknown identifier"),
    ("sin u", 4, "("),
    ("u * * 2", 4, "empty operand"),
]


FUNCS = ["sin", "cos", "exp", "tanh", "atan", "sinh", "cosh"]


def random_ast(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        return Var("u") if rng.random() < 0.6 else Num(round(float(rng.uniform(-2, 2)), 3))
    kind = rng.integers(0, 6)
    if kind == 0:
        return Neg(random_ast(rng, depth - 1))
    if kind == 1:
        return Call(FUNCS[rng.integers(len(FUNCS))], random_ast(rng, depth - 1))
    if kind == 2:
        return BinOp("^", random_ast(rng, depth - 1), Num(float(rng.integers(1, 4))))
    op = "+-*/"[rng.integers(0, 4)]
    return BinOp(op, random_ast(rng, depth - 1), random_ast(rng, depth - 1))


def safe_eval(a, u):
    try:
        v = expr.evaluate(a, {"u": u})
    except expr.ExprDomainError:
        return None
    return v if abs(v) < 1e6 else None


def derivative_agreement(rng, trees: int, points: int = 10):
    """Compare symbolic derivatives with step-1e-5 central differences.

    Returns ``(checked, failures)``.  Points where either side leaves the
    real domain, or where the central difference is itself unreliable
    (large curvature relative to the step), are skipped.
    """
    checked, failures, made = 0, [], 0
    while made < trees:
        a = random_ast(rng, 6)
        if "u" not in expr.variables(a):
            continue
        made += 1
        d = expr.differentiate(a, "u")
        for u in rng.uniform(-2, 2, points):
            vals = [safe_eval(a, u + s) for s in (-1e-5, 0.0, 1e-5)]
            if any(v is None for v in vals):
                continue
            try:
                dv = expr.evaluate(d, {"u": u})
            except expr.ExprDomainError:
                continue
            if abs(vals[2] - 2 * vals[1] + vals[0]) / 1e-5 > 1e-3 * (1 + abs(dv)):
                continue
            fd = (vals[2] - vals[0]) / 2e-5
            checked += 1
            if abs(dv - fd) > 1e-6 * (1 + abs(vals[1])) + 1e-6 * abs(dv):
                failures.append((expr.to_source(a), float(u), float(dv), float(fd)))
    return checked, failures
