"""
Expression trees for system dynamics.

The grammar is closed: constants, state variables x1..xn, disturbance
variables θ1..θm, +, -, *, non-negative integer powers, sin and cos. Every
expression is total and smooth, so point evaluation, interval evaluation
and symbolic differentiation are all available.
"""
from dataclasses import dataclass
from typing import FrozenSet, Sequence, Tuple

import numpy as np

from app.core.interval import Interval

STATE = 'x'
DISTURBANCE = 'theta'


class Expr:
    def evaluate(self, x: np.ndarray, theta: np.ndarray):
        """Evaluate on arrays shaped (..., n) and (..., m); broadcasting applies"""
        raise NotImplementedError

    def evaluate_interval(self, x: Sequence[Interval], theta: Sequence[Interval]) -> Interval:
        raise NotImplementedError

    def derivative(self, var: 'Var') -> 'Expr':
        raise NotImplementedError

    def variables(self) -> FrozenSet['Var']:
        raise NotImplementedError

    def is_const(self, value: float = None) -> bool:
        return False


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def evaluate(self, x, theta):
        return self.value

    def evaluate_interval(self, x, theta):
        return Interval.point(self.value)

    def derivative(self, var):
        return ZERO

    def variables(self):
        return frozenset()

    def is_const(self, value=None):
        return value is None or self.value == value

    def __str__(self):
        return repr(float(self.value)) if self.value >= 0 else f"({float(self.value)!r})"


ZERO = Const(0.0)
ONE = Const(1.0)


@dataclass(frozen=True)
class Var(Expr):
    kind: str
    index: int  # zero-based

    def evaluate(self, x, theta):
        source = x if self.kind == STATE else theta
        return np.asarray(source, dtype=float)[..., self.index]

    def evaluate_interval(self, x, theta):
        return (x if self.kind == STATE else theta)[self.index]

    def derivative(self, var):
        return ONE if var == self else ZERO

    def variables(self):
        return frozenset([self])

    def __str__(self):
        return f"x{self.index + 1}" if self.kind == STATE else f"θ{self.index + 1}"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def evaluate(self, x, theta):
        return -self.arg.evaluate(x, theta)

    def evaluate_interval(self, x, theta):
        return -self.arg.evaluate_interval(x, theta)

    def derivative(self, var):
        return neg(self.arg.derivative(var))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr

    def evaluate(self, x, theta):
        return self.left.evaluate(x, theta) + self.right.evaluate(x, theta)

    def evaluate_interval(self, x, theta):
        return self.left.evaluate_interval(x, theta) + self.right.evaluate_interval(x, theta)

    def derivative(self, var):
        return add(self.left.derivative(var), self.right.derivative(var))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"({self.left} + {self.right})"


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr

    def evaluate(self, x, theta):
        return self.left.evaluate(x, theta) - self.right.evaluate(x, theta)

    def evaluate_interval(self, x, theta):
        return self.left.evaluate_interval(x, theta) - self.right.evaluate_interval(x, theta)

    def derivative(self, var):
        return sub(self.left.derivative(var), self.right.derivative(var))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"({self.left} - {self.right})"


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr

    def evaluate(self, x, theta):
        return self.left.evaluate(x, theta) * self.right.evaluate(x, theta)

    def evaluate_interval(self, x, theta):
        return self.left.evaluate_interval(x, theta) * self.right.evaluate_interval(x, theta)

    def derivative(self, var):
        return add(mul(self.left.derivative(var), self.right),
                   mul(self.left, self.right.derivative(var)))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"({self.left} * {self.right})"


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def evaluate(self, x, theta):
        return self.base.evaluate(x, theta) ** self.exponent

    def evaluate_interval(self, x, theta):
        return self.base.evaluate_interval(x, theta) ** self.exponent

    def derivative(self, var):
        inner = self.base.derivative(var)
        if self.exponent == 0 or inner.is_const(0.0):
            return ZERO
        outer = mul(Const(float(self.exponent)), power(self.base, self.exponent - 1))
        return mul(outer, inner)

    def variables(self):
        return self.base.variables()

    def __str__(self):
        return f"({self.base} ^ {self.exponent})"


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr

    def evaluate(self, x, theta):
        return np.sin(self.arg.evaluate(x, theta))

    def evaluate_interval(self, x, theta):
        return self.arg.evaluate_interval(x, theta).sin()

    def derivative(self, var):
        return mul(Cos(self.arg), self.arg.derivative(var))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"sin({self.arg})"


@dataclass(frozen=True)
class Cos(Expr):
    arg: Expr

    def evaluate(self, x, theta):
        return np.cos(self.arg.evaluate(x, theta))

    def evaluate_interval(self, x, theta):
        return self.arg.evaluate_interval(x, theta).cos()

    def derivative(self, var):
        return neg(mul(Sin(self.arg), self.arg.derivative(var)))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"cos({self.arg})"


# Smart constructors fold the constants produced by differentiation.

def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if a.is_const(0.0):
        return b
    if b.is_const(0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if b.is_const(0.0):
        return a
    if a.is_const(0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_const(0.0) or b.is_const(0.0):
        return ZERO
    if a.is_const(1.0):
        return b
    if b.is_const(1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def power(base: Expr, exponent: int) -> Expr:
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value ** exponent)
    return Pow(base, exponent)


def state_var(index: int) -> Var:
    return Var(STATE, index)


def disturbance_var(index: int) -> Var:
    return Var(DISTURBANCE, index)


def jacobian(exprs: Sequence[Expr], kind: str, dim: int) -> Tuple[Tuple[Expr, ...], ...]:
    """Symbolic Jacobian of `exprs` with respect to the variables of one kind"""
    return tuple(tuple(e.derivative(Var(kind, j)) for j in range(dim)) for e in exprs)
