import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from scripts.indexset import IndexSet, uplus
from scripts.phg_series import (
    Derivative,
    PhgSeries,
    SeriesOperator,
    SigmaRelation,
    Variable,
    apply_b_derivative,
    oscillatory_tail_integral,
    poly,
    resonant_integral,
    sigma_rewrite,
    sigma_rewrite_series,
    solve_indicial,
)

half = sp.Rational(1, 2)


def mono(j, k=0, c=1.0, err=math.inf, var=Variable.RHO):
    return PhgSeries.monomial(j, k, c, var, err)


### Algebra

def test_multiply_and_error_order():
    assert (mono(1) * mono(2)).as_dict() == {(sp.Integer(3), 0): 1.0}
    product = mono(1, err=2) * mono(1)
    assert product.as_dict() == {(sp.Integer(2), 0): 1.0}
    assert product.error_order == 3


def test_add_merges_keys():
    total = mono(1, 1) + mono(1)
    assert total.as_dict() == {(sp.Integer(1), 0): 1.0, (sp.Integer(1), 1): 1.0}
    assert (mono(2) - mono(2)).is_zero()


def test_variable_mismatch():
    with pytest.raises(ValueError):
        mono(1) + mono(1, var=Variable.R)


def test_terms_beyond_error_order_are_dropped():
    s = PhgSeries.build({(1, 0): 1.0, (3, 0): 2.0}, error_order=3)
    assert s.as_dict() == {(sp.Integer(1), 0): 1.0}


### Derivatives

def test_b_derivative():
    out = apply_b_derivative(Derivative.B, mono(2, 1))
    assert out.as_dict() == {(sp.Integer(2), 1): 2.0, (sp.Integer(2), 0): 1.0}
    assert apply_b_derivative(Derivative.B, mono(0)).is_zero()


def test_radial_derivative_in_reciprocal_variable():
    # ∂r(1/r) = -1/r²
    out = apply_b_derivative(Derivative.DR, mono(1))
    assert out.as_dict() == {(sp.Integer(2), 0): -1.0}
    out_r = apply_b_derivative(Derivative.DR, mono(-1, var=Variable.R))
    assert out_r.as_dict() == {(sp.Integer(-2), 0): -1.0}


def test_second_radial_derivative_matches_numeric():
    s = mono(3, 1, 2.0) + mono(half, 0, 1j)
    d2 = apply_b_derivative(Derivative.DR2, s)
    r = np.array([2.0, 5.0, 11.0])
    h = 1e-3
    f = lambda x: s.evaluate(1.0 / x)
    numeric = (f(r + h) - 2 * f(r) + f(r - h)) / h**2
    assert np.allclose(d2.evaluate(1.0 / r), numeric, rtol=1e-5)


def test_multiply_by_power():
    out = apply_b_derivative(Derivative.MULTIPLY, mono(1), gamma=2, kappa=1)
    assert out.as_dict() == {(sp.Integer(3), 1): 1.0}


### Frobenius solver

def test_solve_indicial_simple_root():
    # (D - 1)(x L a_1) = x  =>  a_1 = 1
    assert solve_indicial(poly(-1, 1), sp.Integer(1), {0: 1.0}) == {1: 1.0}


def test_solve_indicial_double_root():
    # D²(a_2 L²) = 2 a_2 = 1
    out = solve_indicial(poly(0, 0, 1), sp.Integer(0), {0: 1.0})
    assert out == {2: pytest.approx(0.5)}


def test_operator_solve_is_right_inverse():
    # L = ρ²(-D² + D) for d=3, l=0; forcing with several exponents
    op = SeriesOperator(((2, poly(0, 1, -1)),), Variable.RHO)
    f = PhgSeries.build({(3, 0): 1.0, (4, 1): 2.0, (half + 3, 0): -1.0}, error_order=6)
    u = op.solve(f)
    residual = op.apply(u) - f
    assert residual.max_abs_coeff() < 1e-12
    assert u.error_order == 4


def test_operator_solve_with_multiplier():
    eps = 0.1
    V = mono(3, c=eps, err=8)
    op = SeriesOperator(((2, poly(0, 1, -1)),), Variable.RHO, V)
    f = PhgSeries.build({(4, 0): 1.0}, error_order=8)
    u = op.solve(f)
    assert u.coefficient(2) == pytest.approx(-0.5)
    assert u.coefficient(3) == pytest.approx(-eps / 12)
    residual = (op.apply(u) - f).truncate(u.error_order + 2)
    assert residual.max_abs_coeff() < 1e-12


def test_homogeneous_series_solves_operator():
    # head form of a Bessel-type operator: x^-2 p0(D) + x^-1 p1(D)
    op = SeriesOperator(((-2, poly(0, -1, -1)), (-1, poly(-2j, -2j))), Variable.X)
    w = op.homogeneous(0, order=6)
    assert w.coefficient(0) == 1.0
    residual = op.apply(w).truncate(3.5)
    assert residual.max_abs_coeff() < 1e-12
    # e^{-ix} sin(x)/x = 1 - i x - (2/3) x² + ...
    assert w.coefficient(1) == pytest.approx(-1j)
    assert w.coefficient(2) == pytest.approx(-2.0 / 3.0)


def test_rejects_nonroot_homogeneous_start():
    op = SeriesOperator(((2, poly(0, 1, -1)),), Variable.RHO)
    with pytest.raises(ValueError):
        op.homogeneous(half, 4)


### Resonant integral

def test_resonant_integral_vectors():
    out = resonant_integral(0, mono(0))
    assert out.as_dict() == {(sp.Integer(0), 1): -1.0}
    out = resonant_integral(1, mono(2))
    assert out.as_dict() == {(sp.Integer(1), 0): 1.0, (sp.Integer(2), 0): -1.0}
    out = resonant_integral(1, mono(1))
    assert out.as_dict() == {(sp.Integer(1), 1): -1.0}


def test_resonant_integral_matches_quadrature():
    from scipy.integrate import quad

    f = mono(2, 1, 1.5) + mono(half + 1, 0, -0.5)
    u = resonant_integral(1, f)
    rho = 0.3
    re = quad(lambda s: s ** (-2) * f.evaluate(s).real, rho, 1.0)[0]
    assert u.evaluate(rho).real == pytest.approx(rho * re, rel=1e-10)


exponents = st.sampled_from([sp.Integer(0), half, sp.Integer(1), sp.Integer(2), 1 + half])


@settings(max_examples=60, deadline=None)
@given(
    a=exponents,
    items=st.lists(st.tuples(exponents, st.integers(0, 2), st.floats(-2, 2).filter(lambda c: abs(c) > 1e-3)), min_size=1, max_size=4),
)
def test_resonant_integral_properties(a, items):
    f = PhgSeries.build(items, error_order=6)
    u = resonant_integral(a, f)
    lhs = u.b_derivative() - u.scale(float(a))
    assert (lhs + f).max_abs_coeff() < 1e-9 * max(1.0, f.max_abs_coeff())
    predicted = uplus(a, 0, f.index_set().with_horizon(6.0))
    assert u.index_set().issubset(predicted)


### Oscillatory tails

def fourier_tail(g, omega, R):
    """∫_R^∞ e^{iωs} g(s) ds for real g by QAWF"""
    from scipy.integrate import quad

    c = quad(g, R, np.inf, weight="cos", wvar=omega, epsabs=1e-15)[0]
    s = quad(g, R, np.inf, weight="sin", wvar=omega, epsabs=1e-15)[0]
    return complex(c, s)


@pytest.mark.parametrize(
    "series, g",
    [
        (mono(3), lambda s: s**-3),
        (mono(3, 1, 2.0) + mono(4), lambda s: -2.0 * math.log(s) / s**3 + s**-4),
    ],
)
def test_oscillatory_tail_integral_matches_quadrature(series, g):
    R = 100.0
    out = oscillatory_tail_integral(series, 0.5j, R)
    assert out == pytest.approx(fourier_tail(g, 0.5, R), rel=1e-6)


def test_oscillatory_tail_integral_rejects_growth():
    assert oscillatory_tail_integral(PhgSeries.zero(), 1j, 10.0) == 0j
    with pytest.raises(ValueError):
        oscillatory_tail_integral(mono(0), 1j, 10.0)
    with pytest.raises(ValueError):
        oscillatory_tail_integral(mono(3, var=Variable.R), 1j, 10.0)


### σ re-expansion

def test_sigma_rewrite_vectors():
    assert sigma_rewrite(1, 0, relation=SigmaRelation.QUOTIENT) == [(1, 0, -1, 0, 1.0)]
    terms = sigma_rewrite(1, 1, relation=SigmaRelation.QUOTIENT)
    assert [(t.sigma_logpower, t.exponent, t.logpower, t.coeff) for t in terms] == [(0, -1, 1, -1.0), (1, -1, 0, 1.0)]
    assert [t.coeff for t in sigma_rewrite(1, 2)] == [1.0, 2.0, 1.0]


@pytest.mark.parametrize("relation", [SigmaRelation.PRODUCT, SigmaRelation.QUOTIENT])
def test_sigma_rewrite_round_trip(relation, rng):
    s = PhgSeries.build({(1, 2): 0.7, (half + 2, 1): -1.3j, (3, 0): 2.0})
    strata = sigma_rewrite_series(s, Variable.RHO_HAT, relation)
    for sigma, y in zip(rng.uniform(1e-3, 0.5, 100), rng.uniform(0.05, 5.0, 100)):
        rho = sigma * y if relation is SigmaRelation.PRODUCT else sigma / y
        direct = s.evaluate(rho)
        rebuilt = complex(sum(
            complex(sigma ** float(p)) * math.log(sigma) ** kappa * series.evaluate(y)
            for (p, kappa), series in strata.items()
        ))
        assert rebuilt == pytest.approx(complex(direct), rel=1e-11)


### Serialization

def test_text_round_trip():
    s = PhgSeries.build({(1, 0): 1.5 - 2j, (half, 2): 0.25}, error_order=4.5, variable=Variable.RHO_HAT)
    back = PhgSeries.from_text(s.to_text())
    assert back == s
