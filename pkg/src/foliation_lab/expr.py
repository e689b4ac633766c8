"""Closed-form test functions over chart coordinates.

Expressions are small trees with nodes constant, coordinate, sum, product,
integer power, sin, cos and exp.  The same tree evaluates on plain floats or
numpy arrays (for lifting onto grids) and on :class:`~foliation_lab.jets.Jet`
objects (for exact derivatives).
"""

from __future__ import annotations

import ast
from dataclasses import dataclass

import numpy as np

from .jets import MAX_ORDER, Jet, coordinate_jets, jet_space


class Expr:
    def __add__(self, other):
        return Add((self, as_expr(other)))

    __radd__ = __add__

    def __mul__(self, other):
        return Mul((self, as_expr(other)))

    __rmul__ = __mul__

    def __neg__(self):
        return Mul((Const(-1.0), self))

    def __sub__(self, other):
        return self + (-as_expr(other))

    def __pow__(self, k):
        return Pow(self, int(k))

    def evaluate(self, coords):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Const(Expr):
    value: float

    def evaluate(self, coords):
        return self.value * _one_like(coords[0])

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True, eq=False)
class Coord(Expr):
    index: int
    name: str = ""

    def evaluate(self, coords):
        return coords[self.index]

    def __str__(self):
        return self.name or f"x{self.index}"


@dataclass(frozen=True, eq=False)
class Add(Expr):
    terms: tuple

    def evaluate(self, coords):
        out = self.terms[0].evaluate(coords)
        for t in self.terms[1:]:
            out = out + t.evaluate(coords)
        return out

    def __str__(self):
        return "(" + " + ".join(map(str, self.terms)) + ")"


@dataclass(frozen=True, eq=False)
class Mul(Expr):
    factors: tuple

    def evaluate(self, coords):
        out = self.factors[0].evaluate(coords)
        for t in self.factors[1:]:
            out = out * t.evaluate(coords)
        return out

    def __str__(self):
        return "*".join(map(str, self.factors))


@dataclass(frozen=True, eq=False)
class Pow(Expr):
    base: Expr
    exponent: int

    def evaluate(self, coords):
        return self.base.evaluate(coords) ** self.exponent

    def __str__(self):
        return f"{self.base}**{self.exponent}"


@dataclass(frozen=True, eq=False)
class Func(Expr):
    name: str
    arg: Expr

    def evaluate(self, coords):
        v = self.arg.evaluate(coords)
        if isinstance(v, Jet):
            return getattr(v, self.name)()
        return getattr(np, self.name)(v)

    def __str__(self):
        return f"{self.name}({self.arg})"


def sin(e):
    return Func("sin", as_expr(e))


def cos(e):
    return Func("cos", as_expr(e))


def exp(e):
    return Func("exp", as_expr(e))


def as_expr(obj) -> Expr:
    if isinstance(obj, Expr):
        return obj
    return Const(float(obj))


def _one_like(x):
    if isinstance(x, Jet):
        return Jet.constant(np.ones(x.shape), x.space, x.order)
    return np.ones_like(np.asarray(x, dtype=float))


class TestFunction:
    """A smooth function on a chart, given by an expression tree."""

    __test__ = False  # not a pytest class

    def __init__(self, expr: Expr, dim: int = 3, periodic: bool = False, label: str = ""):
        self.expr = as_expr(expr)
        self.dim = dim
        self.periodic = periodic
        self.label = label or str(self.expr)

    def __call__(self, *coords):
        """Evaluate on floats or arrays: ``f(x, y, z)`` or ``f(points)``."""
        if len(coords) == 1:
            pts = np.asarray(coords[0], dtype=float)
            coords = [pts[..., mu] for mu in range(self.dim)]
        return self.expr.evaluate([np.asarray(c, dtype=float) for c in coords])

    def jet(self, point, order: int = 3) -> Jet:
        point = np.asarray(point, dtype=float)
        if not 0 <= order <= MAX_ORDER:
            raise ValueError(f"jet order must be in [0, {MAX_ORDER}], got {order}")
        space = jet_space(self.dim, order)
        return self.expr.evaluate(coordinate_jets(point, order, space))

    def __repr__(self):
        return f"TestFunction({self.label})"


# -- parsing ------------------------------------------------------------

_FUNCS = {"sin", "cos", "exp"}


def parse(text: str, coordinates=("x", "y", "z")) -> Expr:
    """Parse an arithmetic expression over named coordinates.

    Supports ``+ - * /`` (division by constants only), integer ``**``,
    unary minus, numeric literals, ``pi`` and the functions sin, cos, exp.
    """
    names = {name: i for i, name in enumerate(coordinates)}
    tree = ast.parse(str(text), mode="eval")
    return _convert(tree.body, names, text)


def _convert(node, names, text):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return Const(float(node.value))
    if isinstance(node, ast.Name):
        if node.id in names:
            return Coord(names[node.id], node.id)
        if node.id == "pi":
            return Const(float(np.pi))
        raise ValueError(f"unknown symbol {node.id!r} in {text!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _convert(node.operand, names, text)
        return -inner if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp):
        left = _convert(node.left, names, text)
        right = _convert(node.right, names, text)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if not isinstance(right, Const):
                raise ValueError(f"division by non-constant in {text!r}")
            return left * Const(1.0 / right.value)
        if isinstance(node.op, ast.Pow):
            if not isinstance(right, Const) or right.value != int(right.value) or right.value < 0:
                raise ValueError(f"only non-negative integer powers allowed in {text!r}")
            return Pow(left, int(right.value))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1:
            raise ValueError(f"{node.func.id} takes one argument in {text!r}")
        return Func(node.func.id, _convert(node.args[0], names, text))
    raise ValueError(f"unsupported syntax in {text!r}: {ast.dump(node)}")


# -- random test functions ----------------------------------------------


def random_polynomial(rng: np.random.Generator, dim: int = 3, degree: int = 3) -> Expr:
    from .jets import multi_indices

    coords = [Coord(i) for i in range(dim)]
    terms = []
    for alpha in multi_indices(dim, degree):
        c = rng.uniform(-1.0, 1.0)
        factors = [Const(c)] + [Pow(coords[i], k) for i, k in enumerate(alpha) if k]
        terms.append(Mul(tuple(factors)))
    return Add(tuple(terms))


def random_test_function(rng: np.random.Generator, dim: int = 3, degree: int = 3) -> TestFunction:
    """Sum of two (cubic polynomial) x (sin|cos of a random affine form) terms."""
    coords = [Coord(i) for i in range(dim)]
    terms = []
    for trig in (sin, cos):
        omega = rng.uniform(-1.0, 1.0, size=dim)
        phase = rng.uniform(-1.0, 1.0)
        arg = Add(tuple([Const(phase)] + [Mul((Const(w), c)) for w, c in zip(omega, coords)]))
        terms.append(Mul((random_polynomial(rng, dim, degree), trig(arg))))
    return TestFunction(Add(tuple(terms)), dim=dim, label="random")
