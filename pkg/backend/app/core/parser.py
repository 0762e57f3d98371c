from lark import Lark, Transformer, v_args
from lark.exceptions import LarkError, VisitError
from typing import List

from app.core.errors import ExpressionSyntaxError
from app.core.expression import (
    Add, Const, Cos, Expr, Mul, Neg, Pow, Sin, Sub,
    DISTURBANCE, STATE, Var,
)

# Lark grammar for dynamics expressions, one per state coordinate
GRAMMAR = r"""
start: expr

?expr: expr "+" term        -> add
     | expr "-" term        -> sub
     | term

?term: term "*" factor      -> mul
     | factor

?factor: "-" factor         -> neg
       | power

?power: atom ("^" | "**") NUMBER -> pow
      | atom

?atom: NUMBER               -> number
     | VARIABLE             -> variable
     | "sin" "(" expr ")"   -> sin
     | "cos" "(" expr ")"   -> cos
     | "(" expr ")"

VARIABLE: /x[0-9]+/ | /θ[0-9]*/ | /theta[0-9]*/

%import common.NUMBER
%import common.WS
%ignore WS
"""


@v_args(inline=True)
class ExpressionTransformer(Transformer):
    def __init__(self, state_dim: int, disturbance_dim: int):
        super().__init__()
        self.state_dim = state_dim
        self.disturbance_dim = disturbance_dim

    def start(self, expr):
        return expr

    def add(self, left, right):
        return Add(left, right)

    def sub(self, left, right):
        return Sub(left, right)

    def mul(self, left, right):
        return Mul(left, right)

    def neg(self, arg):
        return Neg(arg)

    def pow(self, base, exponent):
        value = float(exponent)
        if value != int(value) or value < 0:
            raise ExpressionSyntaxError(f"Exponent must be a non-negative integer, got {exponent}")
        return Pow(base, int(value))

    def sin(self, arg):
        return Sin(arg)

    def cos(self, arg):
        return Cos(arg)

    def number(self, token):
        return Const(float(token))

    def variable(self, token):
        name = str(token)
        if name.startswith('x'):
            kind, digits, limit = STATE, name[1:], self.state_dim
        else:
            kind = DISTURBANCE
            digits = name[len('theta'):] if name.startswith('theta') else name[1:]
            limit = self.disturbance_dim
            digits = digits or '1'
        index = int(digits)
        if not 1 <= index <= limit:
            raise ExpressionSyntaxError(f"Variable '{name}' is out of range (1..{limit})")
        return Var(kind, index - 1)


class ExpressionParser:
    def __init__(self):
        self.parser = Lark(GRAMMAR, parser='lalr')

    def parse(self, text: str, state_dim: int, disturbance_dim: int) -> Expr:
        """Parse one dynamics coordinate into an expression tree"""
        try:
            tree = self.parser.parse(text.strip())
            return ExpressionTransformer(state_dim, disturbance_dim).transform(tree)
        except VisitError as e:
            if isinstance(e.orig_exc, ExpressionSyntaxError):
                raise e.orig_exc
            raise ExpressionSyntaxError(f"Invalid expression {text!r}: {e.orig_exc}")
        except LarkError as e:
            raise ExpressionSyntaxError(f"Invalid expression {text!r}: {e}")

    def parse_all(self, texts: List[str], state_dim: int, disturbance_dim: int) -> List[Expr]:
        return [self.parse(t, state_dim, disturbance_dim) for t in texts]


# Global parser instance
expression_parser = ExpressionParser()
