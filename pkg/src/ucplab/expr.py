"""Closed-form fields in x1..xn, parsed from text and differentiated with sympy.

Only numbers, the coordinates, + - * / ** and the functions sin, cos, exp,
sqrt, log, plus the constant pi are accepted; the text is checked with
:mod:`ast` before sympy sees it.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy

FUNCTIONS = {"sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp, "sqrt": sympy.sqrt, "log": sympy.log}
CONSTANTS = {"pi": sympy.pi}
_OPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _check(node: ast.AST, names: set[str]) -> None:
    if isinstance(node, ast.Expression):
        return _check(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return
    if isinstance(node, ast.Name):
        if node.id not in names and node.id not in CONSTANTS:
            raise ValueError(f"unknown name {node.id!r} in expression")
        return
    if isinstance(node, ast.BinOp) and isinstance(node.op, _OPS):
        _check(node.left, names)
        _check(node.right, names)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, _OPS):
        _check(node.operand, names)
        return
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in FUNCTIONS:
        if node.keywords or len(node.args) != 1:
            raise ValueError(f"{node.func.id} takes exactly one argument")
        _check(node.args[0], names)
        return
    raise ValueError(f"unsupported syntax in expression: {ast.dump(node)[:60]}")


@dataclass(frozen=True)
class Field:
    """A closed-form scalar field u(x1, ..., xn)."""

    dim: int
    expr: sympy.Expr
    text: str = ""

    @property
    def symbols(self) -> tuple[sympy.Symbol, ...]:
        return sympy.symbols(f"x1:{self.dim + 1}")

    @cached_property
    def _fn(self):
        return sympy.lambdify(self.symbols, self.expr, modules="numpy")

    def __call__(self, *coords):
        out = self._fn(*coords)
        shape = np.broadcast(*coords).shape if coords else ()
        return np.broadcast_to(np.asarray(out, dtype=complex), shape)

    def diff(self, j: int, k: int = 1) -> "Field":
        if not 0 <= j < self.dim:
            raise ValueError(f"axis {j} out of range for dim {self.dim}")
        return Field(self.dim, sympy.diff(self.expr, self.symbols[j], k))

    def __str__(self) -> str:
        return self.text or str(self.expr)


def parse_field(text: str, dim: int) -> Field:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    names = {f"x{j + 1}" for j in range(dim)}
    src = text.replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None
    _check(tree, names)
    local = {nm: sympy.Symbol(nm) for nm in names} | FUNCTIONS | CONSTANTS
    expr = sympy.sympify(src, locals=local, rational=True)
    return Field(dim, expr, text)


__all__ = ["Field", "parse_field", "FUNCTIONS", "CONSTANTS"]
