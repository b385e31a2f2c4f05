import math

import numpy as np
import pytest
import sympy as sp
from scipy.special import gamma

from scripts.bessel import hankel_leading_constant
from scripts.errors import FitConditioningError
from scripts.indexset import ConeData, IndexSet, IndexSetKind, b_ge
from scripts.mode_profile import ModeProfile
from scripts.phg_series import PhgSeries, Variable
from scripts.tf_solver import (
    GREEN_FACTOR,
    End,
    KernelBranch,
    TfProblem,
    TfSettings,
    _outer_remainder,
    cutoff_commutator,
    far_operator,
    fit_exponent,
    kernel_derivatives,
    tf_asymptotic_fit,
    tf_kernel,
    tf_solve,
)
from scripts.utils import SmoothCutoff, geometric_grid

window = SmoothCutoff(1.0, 3.0)


@pytest.fixture
def settings():
    return TfSettings()


def bump(x, center=3.0, mode=0):
    return ModeProfile(x, np.exp(-4.0 * (x - center) ** 2), mode, "rhat")


def stencil_residual(problem, branch, x):
    """|L k| and the size of its terms, with k', k'' from a five-point stencil"""
    h = min(1e-3 * x, 0.02)
    k = tf_kernel(problem, branch)(x + h * np.arange(-2, 3))
    d1 = (k[0] - 8 * k[1] + 8 * k[3] - k[4]) / (12 * h)
    d2 = (-k[0] + 16 * k[1] - 30 * k[2] + 16 * k[3] - k[4]) / (12 * h**2)
    d = problem.cone.d
    lam = float(problem.mode.eigenvalue)
    parts = (-d2, -((d - 1) / x + 2j) * d1, (lam / x**2 - 1j * (d - 1) / x) * k[2])
    return abs(sum(parts)), sum(abs(p) for p in parts)


### Kernels

@pytest.mark.parametrize("d", [3, 4, 5])
@pytest.mark.parametrize("branch", list(KernelBranch))
def test_kernels_are_annihilated(d, branch):
    cone = ConeData.sphere(d, 12)
    for l in range(5):
        problem = TfProblem(cone, l)
        for x in (0.05, 0.3, 1.0, 2.5, 5.0, 9.0, 15.0, 30.0, 80.0):
            residual, size = stencil_residual(problem, branch, x)
            assert residual < 1e-5 * size, (l, x)


def test_three_dimensional_monopole_kernels(cone3):
    problem = TfProblem(cone3, 0)
    x = np.array([0.1, 1.0, 7.0, 40.0])
    out = tf_kernel(problem, KernelBranch.OUTGOING)(x)
    rec = tf_kernel(problem, KernelBranch.RECESSIVE)(x)
    assert np.allclose(out, -1j * math.sqrt(2 / math.pi) / x, rtol=1e-12)
    assert np.allclose(rec, math.sqrt(2 / math.pi) * np.exp(-1j * x) * np.sin(x) / x, rtol=1e-10)


def test_green_factor_inverts_the_wronskian(cone4):
    problem = TfProblem(cone4, 2)
    x = np.array([0.7, 4.0, 20.0])
    k_rec, dk_rec, _ = kernel_derivatives(problem, KernelBranch.RECESSIVE, x)
    k_out, dk_out, _ = kernel_derivatives(problem, KernelBranch.OUTGOING, x)
    # e^{2ix} x^{d-1} W(k_rec, k_out) is constant
    scaled = np.exp(2j * x) * x**3 * (k_rec * dk_out - dk_rec * k_out)
    assert np.allclose(scaled * GREEN_FACTOR, -1.0, rtol=1e-9)


### Green operator

def test_manufactured_recessive_solution(cone3, settings):
    problem = TfProblem(cone3, 1)
    x = settings.grid()
    k, dk, _ = kernel_derivatives(problem, KernelBranch.RECESSIVE, x)
    chi, chi_d1, chi_d2 = window.derivatives(x)
    f = ModeProfile(x, cutoff_commutator(3, x, chi_d1, chi_d2, k, dk), 1, "rhat")
    u = tf_solve(problem.with_forcing(f), settings)
    expected = chi * k
    assert np.max(np.abs(u.values - expected)) < 1e-6 * np.max(np.abs(expected))
    nu = 1.5
    assert u.head.coefficient(1) == pytest.approx(1 / (2**nu * gamma(nu + 1)), rel=1e-6)
    assert u.head.coefficient(1) == pytest.approx(math.sqrt(2 / math.pi) / 3, rel=1e-6)


def test_manufactured_outgoing_solution(cone3, settings):
    problem = TfProblem(cone3, 0)
    x = settings.grid()
    k, dk, _ = kernel_derivatives(problem, KernelBranch.OUTGOING, x)
    chi, chi_d1, chi_d2 = window.derivatives(x)
    f = ModeProfile(x, -cutoff_commutator(3, x, chi_d1, chi_d2, k, dk), 0, "rhat")
    u = tf_solve(problem.with_forcing(f), settings)
    expected = (1.0 - chi) * k
    assert np.max(np.abs(u.values - expected)) < 1e-6 * np.max(np.abs(expected))
    assert u.tail.coefficient(1) == pytest.approx(-1j * math.sqrt(2 / math.pi), rel=1e-6)


@pytest.mark.parametrize("d, l, expected", [(3, 1, 1.0), (4, 0, 1.5)])
def test_bump_forcing_decays_at_the_outgoing_rate(d, l, expected, cone3, cone4, settings):
    cone = cone3 if d == 3 else cone4
    x = settings.grid()
    u = tf_solve(TfProblem(cone, l, bump(x, mode=l)), settings)
    assert fit_exponent(u, End.INFINITY) == pytest.approx(expected, rel=0.02)
    assert u.tail.pi_min() == pytest.approx(expected)


def test_zero_forcing(cone3, settings):
    x = settings.grid()
    u = tf_solve(TfProblem(cone3, 2, ModeProfile.zeros(x, 2, "rhat")), settings)
    assert np.all(u.values == 0)
    assert u.tail.is_zero()
    assert u.head.is_zero()


def test_solve_is_linear(cone4, settings):
    x = settings.grid()
    f1, f2 = bump(x, 2.0, 1), bump(x, 5.0, 1)
    u1 = tf_solve(TfProblem(cone4, 1, f1), settings)
    u2 = tf_solve(TfProblem(cone4, 1, f2), settings)
    both = tf_solve(TfProblem(cone4, 1, f1 + f2.scale(-0.5j)), settings)
    combined = u1.values - 0.5j * u2.values
    assert np.allclose(both.values, combined, rtol=1e-10, atol=1e-14 * np.max(np.abs(combined)))


def test_head_lies_in_recessive_index_set(cone3, settings):
    x = settings.grid()
    u = tf_solve(TfProblem(cone3, 2, bump(x, mode=2)), settings)
    allowed = b_ge(cone3, 0, IndexSet.empty(settings.horizon, IndexSetKind.INDEX))
    assert u.head.index_set().issubset(allowed)


def test_forcing_must_live_in_the_scaled_variable(cone3, grid):
    with pytest.raises(ValueError):
        TfProblem(cone3, 0, ModeProfile.zeros(grid, 0, "r"))
    with pytest.raises(ValueError):
        TfProblem(cone3, 1, ModeProfile.zeros(grid, 0, "rhat"))
    with pytest.raises(ValueError):
        tf_solve(TfProblem(cone3, 0))


def test_outer_remainder_of_a_power_tail(cone3, settings):
    from scipy.integrate import quad

    x = geometric_grid(1e-2, 50.0, 512)
    tail = PhgSeries.monomial(3, variable=Variable.RHO_HAT)
    f = ModeProfile(x, x**-3.0, 1, "rhat", tail)
    problem = TfProblem(cone3, 1, f)
    outgoing = far_operator(cone3, 1).homogeneous(sp.Integer(1), settings.horizon)
    kernel = tf_kernel(problem, KernelBranch.OUTGOING)

    def part(fn, weight):
        return quad(lambda s: fn(kernel(np.array([s]))[0]) / s, 50.0, np.inf, weight=weight, wvar=2.0, epsabs=1e-15)[0]

    re = part(np.real, "cos") - part(np.imag, "sin")
    im = part(np.imag, "cos") + part(np.real, "sin")
    assert _outer_remainder(problem, f, outgoing) == pytest.approx(complex(re, im), rel=1e-6)


### Asymptotic fits

def test_exact_power_fit(settings):
    x = settings.grid()
    profile = ModeProfile(x, x**-2.0, 0, "rhat")
    (term,) = tf_asymptotic_fit(profile, End.INFINITY, [(2, 0)])
    assert term.coeff == pytest.approx(1.0, abs=1e-10)
    assert term.residual < 1e-12


def test_recessive_fit_at_zero(cone3, settings):
    x = settings.grid()
    problem = TfProblem(cone3, 1)
    profile = ModeProfile(x, tf_kernel(problem, KernelBranch.RECESSIVE)(x), 1, "rhat")
    (term,) = tf_asymptotic_fit(profile, "zero", [(1, 0)])
    assert term.coeff == pytest.approx(math.sqrt(2 / math.pi) / 3, rel=2e-3)
    assert term.residual < 1e-3


def test_outgoing_fit_at_infinity(cone4, settings):
    x = settings.grid()
    problem = TfProblem(cone4, 0)
    profile = ModeProfile(x, tf_kernel(problem, KernelBranch.OUTGOING)(x), 0, "rhat")
    lead, _ = tf_asymptotic_fit(profile, End.INFINITY, [(1.5, 0), (2.5, 0)])
    assert lead.coeff == pytest.approx(hankel_leading_constant(1.0), rel=1e-2)


def test_collinear_candidates_are_rejected(settings):
    x = settings.grid()
    profile = ModeProfile(x, x**-2.0, 0, "rhat")
    with pytest.raises(FitConditioningError):
        tf_asymptotic_fit(profile, End.INFINITY, [(2, 0), (2 + 1e-15, 0)])
