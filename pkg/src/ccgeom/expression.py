"""Scalar expression trees used for candidate functions ``u``.

An expression is a nested tuple ``(op, *children)``. Supported operators:
``const``, ``coord``, ``add``, ``sub``, ``mul``, ``pow`` (integer exponent),
``abs``, ``max``, ``min``, ``sqrt``. The JSON form is the same structure
with lists instead of tuples, e.g. ``["add", ["pow", ["coord", 0], 2], 1]``.

:func:`parse` also accepts a small infix language (``"x^2 + y^2"``) read with
:mod:`ast`; coordinates are ``x0, x1, ...`` or the aliases ``x, y, z/t, w``.
"""

from __future__ import annotations

import ast
from numbers import Number

import numpy as np

_ARITY = {
    "const": 1,
    "coord": 1,
    "add": 2,
    "sub": 2,
    "mul": 2,
    "pow": 2,
    "abs": 1,
    "max": 2,
    "min": 2,
    "sqrt": 1,
}
_NONSMOOTH = {"abs", "max", "min", "sqrt"}
ALIASES = {"x": 0, "y": 1, "z": 2, "t": 2, "w": 3}


class ExpressionDomainError(ValueError):
    """Raised when ``sqrt`` is evaluated at a negative argument."""


class Expression:
    """Immutable expression tree over points of R^n."""

    __slots__ = ("node",)

    def __init__(self, node):
        self.node = _validate(node)

    # -- construction helpers ---------------------------------------
    @staticmethod
    def const(value: float) -> "Expression":
        return Expression(("const", float(value)))

    @staticmethod
    def coord(j: int) -> "Expression":
        return Expression(("coord", int(j)))

    def _wrap(self, other) -> tuple:
        if isinstance(other, Expression):
            return other.node
        if isinstance(other, Number):
            return ("const", float(other))
        raise TypeError(f"cannot combine Expression with {type(other).__name__}")

    def __add__(self, other):
        return Expression(("add", self.node, self._wrap(other)))

    def __radd__(self, other):
        return Expression(("add", self._wrap(other), self.node))

    def __sub__(self, other):
        return Expression(("sub", self.node, self._wrap(other)))

    def __rsub__(self, other):
        return Expression(("sub", self._wrap(other), self.node))

    def __mul__(self, other):
        return Expression(("mul", self.node, self._wrap(other)))

    def __rmul__(self, other):
        return Expression(("mul", self._wrap(other), self.node))

    def __neg__(self):
        return Expression(("mul", ("const", -1.0), self.node))

    def __pow__(self, k: int):
        return Expression(("pow", self.node, int(k)))

    def __abs__(self):
        return Expression(("abs", self.node))

    def __eq__(self, other):
        return isinstance(other, Expression) and self.node == other.node

    def __hash__(self):
        return hash(self.node)

    def __repr__(self):
        return f"Expression({self.to_json()!r})"

    # -- queries ---------------------------------------------------------
    def max_coord(self) -> int:
        """Largest coordinate index referenced, or -1 for constants."""
        return _max_coord(self.node)

    def is_smooth(self) -> bool:
        return not _contains(self.node, _NONSMOOTH)

    def check_dim(self, n: int) -> None:
        if self.max_coord() >= n:
            raise ValueError(
                f"expression uses coordinate {self.max_coord()} but ambient dimension is {n}"
            )

    # -- evaluation -----------------------------------------------------
    def __call__(self, x) -> float:
        return self.eval(x)

    def eval(self, x) -> float:
        x = np.asarray(x, dtype=float)
        self.check_dim(x.shape[-1])
        return float(np.broadcast_to(_eval(self.node, x[None, :]), (1,))[0])

    def eval_many(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2:
            raise ValueError("points must have shape (k, n)")
        self.check_dim(points.shape[1])
        return np.asarray(_eval(self.node, points), dtype=float) * np.ones(points.shape[0])

    # -- serialization -------------------------------------------------
    def to_json(self):
        return _to_json(self.node)

    @staticmethod
    def from_json(data) -> "Expression":
        return Expression(_from_json(data))


def _validate(node):
    if not isinstance(node, tuple) or not node or node[0] not in _ARITY:
        raise ValueError(f"malformed expression node {node!r}")
    op, args = node[0], node[1:]
    if len(args) != _ARITY[op]:
        raise ValueError(f"operator {op!r} expects {_ARITY[op]} arguments, got {len(args)}")
    if op == "const":
        return ("const", float(args[0]))
    if op == "coord":
        j = args[0]
        if not isinstance(j, (int, np.integer)) or j < 0:
            raise ValueError(f"coordinate index must be a non-negative integer, got {j!r}")
        return ("coord", int(j))
    if op == "pow":
        k = args[1]
        if isinstance(k, float) and k.is_integer():
            k = int(k)
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError(f"pow exponent must be a non-negative integer, got {k!r}")
        return ("pow", _validate(args[0]), int(k))
    return (op, *(_validate(a) for a in args))


def _max_coord(node) -> int:
    op = node[0]
    if op == "coord":
        return node[1]
    if op == "const":
        return -1
    if op == "pow":
        return _max_coord(node[1])
    return max(_max_coord(a) for a in node[1:])


def _contains(node, ops) -> bool:
    op = node[0]
    if op in ops:
        return True
    if op in ("const", "coord"):
        return False
    if op == "pow":
        return _contains(node[1], ops)
    return any(_contains(a, ops) for a in node[1:])


def _eval(node, pts):
    op = node[0]
    if op == "const":
        return node[1]
    if op == "coord":
        return pts[:, node[1]]
    if op == "pow":
        return _eval(node[1], pts) ** node[2]
    a = _eval(node[1], pts)
    if op == "abs":
        return np.abs(a)
    if op == "sqrt":
        arr = np.asarray(a)
        if np.any(arr < 0):
            raise ExpressionDomainError(f"sqrt of negative argument {arr.min()!r}")
        return np.sqrt(a)
    b = _eval(node[2], pts)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "max":
        return np.maximum(a, b)
    if op == "min":
        return np.minimum(a, b)
    raise AssertionError(op)


def _to_json(node):
    op = node[0]
    if op in ("const", "coord"):
        return [op, node[1]]
    if op == "pow":
        return ["pow", _to_json(node[1]), node[2]]
    return [op, *(_to_json(a) for a in node[1:])]


def _from_json(data):
    if isinstance(data, bool):
        raise ValueError("booleans are not expressions")
    if isinstance(data, Number):
        return ("const", float(data))
    if not isinstance(data, list) or not data or not isinstance(data[0], str):
        raise ValueError(f"malformed expression {data!r}")
    op, args = data[0], data[1:]
    if op not in _ARITY:
        raise ValueError(f"unknown expression operator {op!r}")
    if op in ("const", "coord"):
        return (op, *args)
    if op == "pow":
        if len(args) != 2:
            raise ValueError("pow expects [base, exponent]")
        return ("pow", _from_json(args[0]), args[1])
    return (op, *(_from_json(a) for a in args))


# -- infix parsing ----------------------------------------------------------

_BINOPS = {ast.Add: "add", ast.Sub: "sub", ast.Mult: "mul"}


def parse(source) -> Expression:
    """Build an :class:`Expression` from JSON data or an infix string."""
    if isinstance(source, Expression):
        return source
    if isinstance(source, str):
        tree = ast.parse(source.replace("^", "**"), mode="eval")
        return Expression(_from_ast(tree.body))
    return Expression.from_json(source)


def _from_ast(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return ("const", float(node.value))
    if isinstance(node, ast.Name):
        name = node.id
        if name in ALIASES:
            return ("coord", ALIASES[name])
        if name.startswith("x") and name[1:].isdigit():
            return ("coord", int(name[1:]))
        raise ValueError(f"unknown variable {name!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return ("mul", ("const", -1.0), _from_ast(node.operand))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.UAdd):
        return _from_ast(node.operand)
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            k = node.right
            if not (isinstance(k, ast.Constant) and isinstance(k.value, int)):
                raise ValueError("exponents must be integer literals")
            return ("pow", _from_ast(node.left), k.value)
        if isinstance(node.op, ast.Div):
            d = node.right
            if not (isinstance(d, ast.Constant) and isinstance(d.value, (int, float)) and d.value):
                raise ValueError("only division by a non-zero numeric literal is supported")
            return ("mul", _from_ast(node.left), ("const", 1.0 / d.value))
        if type(node.op) in _BINOPS:
            return (_BINOPS[type(node.op)], _from_ast(node.left), _from_ast(node.right))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        name = node.func.id
        args = [_from_ast(a) for a in node.args]
        if name in ("abs", "sqrt") and len(args) == 1:
            return (name, args[0])
        if name in ("max", "min") and len(args) == 2:
            return (name, args[0], args[1])
    raise ValueError(f"unsupported syntax in expression: {ast.dump(node)}")


def expr_eval(e: Expression, x) -> float:
    return e.eval(x)
