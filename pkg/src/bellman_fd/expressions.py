"""Tiny arithmetic grammar for user-supplied coefficient expressions.

Supported: numbers, ``pi``, variables ``t`` and ``x1..xd``, the operators
``+ - * /`` and unary minus, and the functions ``min, max, abs, sin, cos,
exp, sqrt``.  Expressions compile to vectorized numpy callables ``fn(t, x)``
with ``x`` of shape (n, d).
"""

from __future__ import annotations

import ast
import re
from functools import reduce
from typing import Callable

import numpy as np

from .errors import ConfigurationError

_FUNCS: dict[str, Callable] = {
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "min": lambda *a: reduce(np.minimum, a),
    "max": lambda *a: reduce(np.maximum, a),
}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}
_VAR = re.compile(r"x([1-9][0-9]*)$")


def _check(node: ast.AST, dim: int) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, dim)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ConfigurationError(f"unsupported literal {node.value!r}")
    elif isinstance(node, ast.Name):
        m = _VAR.match(node.id)
        if node.id not in ("t", "pi") and not (m and int(m.group(1)) <= dim):
            raise ConfigurationError(f"unknown variable {node.id!r} (dimension {dim})")
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ConfigurationError(f"unsupported operator {type(node.op).__name__}")
        _check(node.left, dim)
        _check(node.right, dim)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ConfigurationError(f"unsupported operator {type(node.op).__name__}")
        _check(node.operand, dim)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
            raise ConfigurationError(f"unsupported call in expression: {ast.dump(node.func)}")
        if not node.args:
            raise ConfigurationError(f"{node.func.id}() needs arguments")
        if node.func.id not in ("min", "max") and len(node.args) != 1:
            raise ConfigurationError(f"{node.func.id}() takes one argument")
        for arg in node.args:
            _check(arg, dim)
    else:
        raise ConfigurationError(f"unsupported syntax: {type(node).__name__}")


def _eval(node: ast.AST, t, x):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "t":
            return t
        if node.id == "pi":
            return np.pi
        return x[:, int(node.id[1:]) - 1]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, t, x), _eval(node.right, t, x))
    if isinstance(node, ast.UnaryOp):
        value = _eval(node.operand, t, x)
        return -value if isinstance(node.op, ast.USub) else value
    return _FUNCS[node.func.id](*(_eval(a, t, x) for a in node.args))


def compile_expression(source: str | float, dim: int) -> Callable:
    """Compile ``source`` to ``fn(t, x) -> array of shape (n,)``."""
    text = str(source)
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc.msg}") from None
    _check(tree, dim)
    body = tree.body

    def fn(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(np.asarray(_eval(body, t, x), dtype=float), (x.shape[0],))

    fn.source = text
    return fn
