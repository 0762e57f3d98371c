import numpy as np
import pytest

from app.core.errors import ExpressionSyntaxError
from app.core.expression import Var, state_var
from app.core.parser import expression_parser


def test_parse_and_evaluate():
    expr = expression_parser.parse('x2 + 0.2*(sin(x1) - x2 - 3*x1 - 0.5*x2 + θ1)', 2, 1)
    x = np.array([0.25, 0.1])
    theta = np.array([0.02])
    expected = 0.1 + 0.2 * (np.sin(0.25) - 0.1 - 0.75 - 0.05 + 0.02)
    assert expr.evaluate(x, theta) == pytest.approx(expected, abs=1e-15)


def test_powers_and_negation():
    expr = expression_parser.parse('-x1^2 + x2**3', 2, 1)
    assert expr.evaluate(np.array([2.0, 3.0]), np.array([0.0])) == pytest.approx(23.0)


def test_disturbance_aliases():
    assert expression_parser.parse('θ', 1, 1) == Var('theta', 0)
    assert expression_parser.parse('theta2', 1, 2) == Var('theta', 1)
    assert expression_parser.parse('θ1', 1, 1) == Var('theta', 0)


@pytest.mark.parametrize('text', ['x3 + x1', 'x1 +', 'x1 ^ 1.5', 'tan(x1)', 'θ2'])
def test_invalid_expressions(text):
    with pytest.raises(ExpressionSyntaxError):
        expression_parser.parse(text, 2, 1)


def test_symbolic_derivative_matches_closed_form():
    expr = expression_parser.parse('sin(x1)*x2 + x1^3', 2, 1)
    d1 = expr.derivative(state_var(0))
    d2 = expr.derivative(state_var(1))
    x = np.array([0.7, -1.3])
    theta = np.zeros(1)
    assert d1.evaluate(x, theta) == pytest.approx(np.cos(0.7) * -1.3 + 3 * 0.7 ** 2)
    assert d2.evaluate(x, theta) == pytest.approx(np.sin(0.7))


def test_derivative_of_independent_variable_folds_to_zero():
    expr = expression_parser.parse('0.5*x1 + θ1', 2, 1)
    assert expr.derivative(state_var(1)).is_const(0.0)


def test_evaluation_broadcasts_over_batches():
    expr = expression_parser.parse('x1*x2 + θ1', 2, 1)
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    theta = np.array([[0.5], [0.25]])
    np.testing.assert_allclose(expr.evaluate(x, theta), [2.5, 12.25])
