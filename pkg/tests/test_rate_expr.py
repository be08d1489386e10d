import math

import numpy as np
import pytest

from errors import DegenerateModelError, ExpressionError, ModelValidationError
from presets import K_CHOICES
from rate_expr import DensityDependence, PiecewiseExpr, evaluate, parse_constant, parse_rate


@pytest.mark.parametrize("source, a, expected", [
    ("tan(a)", 0.3, math.tan(0.3)),
    ("2 + 3*a^2", 2.0, 14.0),
    ("-a^2", 3.0, -9.0),
    ("2^3^2", 0.0, 512.0),
    ("(1 - a)/(1 + a)", 0.5, 1.0 / 3.0),
    ("max(1 - a/18, 0)", 20.0, 0.0),
    ("1.5*sin(2*a)", math.pi / 4, 1.5),
    ("exp(-a) + e - pi", 0.0, 1.0 + math.e - math.pi),
    ("1-4*a^2/3", 3.0, -11.0),
    ("2+3*4", 0.0, 14.0),
    ("10-4-3", 0.0, 3.0),
    ("64/4/2", 0.0, 8.0),
    ("8/2*4", 0.0, 16.0),
    ("-2^2", 0.0, -4.0),
    ("2^-1", 0.0, 0.5),
    ("1 - -1", 0.0, 2.0),
    ("3*-a", 2.0, -6.0),
    ("a/2^2", 8.0, 2.0),
    ("(-4*3^2-8*3-3)/3", 0.0, -21.0),
    ("(1-4*4^2)/3", 0.0, -21.0),
])
def test_expression_values(source, a, expected):
    assert parse_rate(source)(a) == pytest.approx(expected, rel=1e-14, abs=1e-14)


def test_vectorized_evaluation_keeps_shape():
    ages = np.linspace(0.0, 1.0, 7)
    out = parse_rate("1")(ages)
    assert out.shape == ages.shape
    assert np.all(out == 1.0)


def test_to_source_reparses_to_same_function():
    ages = np.linspace(0.0, 1.4, 50)
    for source in ("a - (a - 1)", "2/(a + 1)^2", "-(a + 1)*3", "max(sin(a), cos(a), 0.2)"):
        expr = parse_rate(source)
        again = parse_rate(expr.to_source())
        assert np.allclose(again(ages), expr(ages), rtol=0, atol=1e-15)


def test_piecewise_pieces_and_breakpoints():
    k = parse_rate(K_CHOICES)
    assert isinstance(k, PiecewiseExpr)
    assert k.breakpoints() == pytest.approx((math.pi / 6, math.pi / 3))
    assert k(0.1) == 1.0
    assert k(0.6) == 0.0
    assert k(math.pi / 2) == 1.0
    k.check_coverage(math.pi / 2)


def test_piecewise_coverage_gap_rejected():
    k = parse_rate("piecewise{[0, 1): 1; [1.2, pi/2]: 1}")
    with pytest.raises(ModelValidationError, match="gap"):
        k.check_coverage(math.pi / 2, key_path="model.k")


def test_unknown_identifier_reports_byte_offset():
    with pytest.raises(ExpressionError) as info:
        parse_rate("1 + b")
    assert info.value.offset == 4
    assert "unknown identifier 'b'" in str(info.value)


@pytest.mark.parametrize("source", ["1 +", "max(a)", "sqrt(a)", "", "a a"])
def test_malformed_expressions(source):
    with pytest.raises(ExpressionError):
        parse_rate(source)


def test_parse_constant():
    assert parse_constant("pi/2") == pytest.approx(math.pi / 2, rel=1e-15)
    assert parse_constant(3) == 3.0
    with pytest.raises(ExpressionError):
        parse_constant("a/2")


def test_non_finite_allowed_only_at_upper_end():
    expr = parse_rate("1/(1 - a)")
    values = evaluate(expr, np.array([0.0, 0.5, 1.0]), a_dagger=1.0)
    assert values[1] == pytest.approx(2.0)
    with pytest.raises(ExpressionError, match="non-finite"):
        evaluate(expr, np.array([0.5, 1.0]))


def test_linear_capped_density_dependence():
    phi = DensityDependence.from_source("max(1 - x/18, 0)")
    assert phi.is_linear_capped and phi.cap == 18.0
    assert phi(9.0) == pytest.approx(0.5)
    assert phi(30.0) == 0.0
    assert phi.derivative(5.0) == pytest.approx(-1.0 / 18.0)
    assert phi.derivative(25.0) == 0.0
    with pytest.raises(DegenerateModelError):
        phi.derivative(18.0)
    assert DensityDependence.from_source(phi.to_source()).cap == 18.0


def test_general_density_dependence():
    phi = DensityDependence.from_source("exp(-x)")
    assert not phi.is_linear_capped
    assert phi.derivative(0.0) == pytest.approx(-1.0, rel=1e-8)
    phi.validate()


@pytest.mark.parametrize("source", ["1 + x", "2 - x"])
def test_density_dependence_validation(source):
    with pytest.raises(ModelValidationError):
        DensityDependence.from_source(source).validate()
