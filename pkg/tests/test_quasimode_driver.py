import dataclasses
import math

import numpy as np
import pytest
import sympy as sp

from scripts import quasimode_driver as driver
from scripts.errors import InvariantViolation, PositivityError
from scripts.indexset import ConeData
from scripts.mode_profile import ModeProfile
from scripts.oracle import compare, fit_rate
from scripts.phg_series import PhgSeries, Variable
from scripts.quasimode_driver import (
    DriverSettings,
    Face,
    QuasimodeState,
    QuasimodeTerm,
    Stratum,
    conjugated_operator_apply,
    evaluate,
    flip_variable,
    iterate,
    residual_norm,
)
from scripts.utils import geometric_grid
from scripts.zf_solver import RadialOperator


@pytest.fixture(scope="module")
def zf_grid():
    return geometric_grid(1e-3, 1e3, 2048)


def gaussian(grid, mode=0):
    return ModeProfile(grid, np.exp(-grid**2), mode, "r", PhgSeries.zero(Variable.RHO))


@pytest.fixture(scope="module")
def free_state(zf_grid):
    """V = 0 in R^3, Gaussian monopole forcing, two orders"""
    op = RadialOperator(ConeData.sphere(3, 12))
    return iterate(op, 0, gaussian(zf_grid), target_order=2.0)


def term(state, face, power, logpower=0):
    matches = [t for t in state.terms if t.face is face and t.sigma_power == power and t.sigma_logpower == logpower]
    assert len(matches) == 1
    return matches[0]


### Conjugated operator

def test_constant_is_mapped_to_the_first_order_term(cone3, grid):
    sigma = 0.3
    r, values = conjugated_operator_apply(RadialOperator(cone3), 0, sigma, grid, np.ones(len(grid)))
    np.testing.assert_allclose(values, -2j * sigma / r, rtol=1e-12)


def test_outgoing_monopole_is_annihilated(cone3, grid):
    # e^{iσr}/r solves (Δ - σ²)U = 0 away from 0, so P(σ)(1/r) = 0
    r, values = conjugated_operator_apply(RadialOperator(cone3), 0, 0.2, grid, 1.0 / grid)
    assert np.max(np.abs(values) * r**3) < 1e-6


def test_zero_energy_limit_matches_the_radial_operator(cone4, grid):
    op = RadialOperator(cone4, ((0.5, 3, 0),))
    u = ModeProfile(grid, grid / (1 + grid**2) ** 2, 1, "r")
    r, values = conjugated_operator_apply(op, 1, 0.0, grid, u.values)
    expected = op.apply(u).values[2:-2]
    mask = (r > 0.1) & (r < 10.0)
    scale = np.max(np.abs(expected[mask]))
    assert np.max(np.abs(values - expected)[mask]) < 1e-3 * scale


### Strata

def test_flip_variable_reverses_exponents_and_log_signs():
    s = PhgSeries.build([(-3, 1, 2.0), (-2, 0, 1.0)], math.inf, Variable.R)
    flipped = flip_variable(s, Variable.RHO)
    assert flipped.coefficient(3, 1) == pytest.approx(-2.0)
    assert flipped.coefficient(2, 0) == pytest.approx(1.0)
    assert flipped.variable is Variable.RHO


def test_low_tail_moves_to_the_transition_face(cone3, zf_grid):
    op = RadialOperator(cone3)
    state = QuasimodeState.create(op, 0, ModeProfile.zeros(zf_grid, 0, "r"))
    assert not state.pending
    tail = PhgSeries.build([(2, 0, 1.0), (3, 0, 1.0)], math.inf, Variable.RHO)
    values = np.exp(-zf_grid) + zf_grid**-2.0 + zf_grid**-3.0
    state.insert(Stratum(Face.ZF, 0, 0, ModeProfile(zf_grid, values, 0, "r", tail)))

    zf = state.pending[(Face.ZF, sp.Integer(0), 0)].profile
    assert zf.tail.coefficient(2) == 0
    assert zf.tail.coefficient(3) == pytest.approx(1.0)
    chi1 = state.settings.outer_cutoff.inverted(zf_grid)
    np.testing.assert_allclose(zf.values, values - chi1 * zf_grid**-2.0)

    tf = state.pending[(Face.TF, sp.Integer(2), 0)]
    assert tf.order == pytest.approx(0.0)
    assert tf.profile.head.coefficient(-2) == pytest.approx(1.0)
    x = tf.profile.grid
    np.testing.assert_allclose(tf.profile.values, state.settings.inner_cutoff(x) * x**-2.0)


def test_singular_head_moves_to_the_zero_face(cone3, zf_grid):
    state = QuasimodeState.create(RadialOperator(cone3), 0, ModeProfile.zeros(zf_grid, 0, "r"))
    x = state.tf_grid
    head = PhgSeries.build([(-3, 0, 1.0), (-1, 0, 1.0)], math.inf, Variable.X)
    h = ModeProfile(x, x**-3.0 + x**-1.0, 0, "rhat", PhgSeries.zero(Variable.RHO_HAT), head)
    state.insert(Stratum(Face.TF, 4, 0, h))

    kept = state.pending[(Face.TF, sp.Integer(4), 0)].profile
    assert kept.head.coefficient(-3) == 0
    assert kept.head.coefficient(-1) == pytest.approx(1.0)
    moved = state.pending[(Face.ZF, sp.Integer(1), 0)].profile
    assert moved.tail.coefficient(3) == pytest.approx(1.0)


def test_equal_strata_merge_and_high_strata_drop(cone3, zf_grid):
    state = QuasimodeState.create(RadialOperator(cone3), 0, ModeProfile.zeros(zf_grid, 0, "r"))
    g = gaussian(zf_grid)
    state.insert(Stratum(Face.ZF, 1, 0, g))
    state.insert(Stratum(Face.ZF, 1, 0, g))
    np.testing.assert_allclose(state.pending[(Face.ZF, sp.Integer(1), 0)].profile.values, 2 * g.values)
    state.insert(Stratum(Face.ZF, 5, 0, g))
    assert (Face.ZF, sp.Integer(5), 0) not in state.pending


def test_forcing_is_expanded_in_taylor_strata(cone3, zf_grid):
    state = QuasimodeState.create(RadialOperator(cone3), 0, gaussian(zf_grid), DriverSettings(target_order=1.5))
    assert sorted(float(s.power) for s in state.pending.values()) == [0.0, 1.0, 2.0]
    second = state.pending[(Face.ZF, sp.Integer(2), 0)].profile
    np.testing.assert_allclose(second.values, -0.5 * zf_grid**2 * np.exp(-zf_grid**2))


### Validation

def test_problem_validation(cone3, zf_grid):
    op = RadialOperator(cone3)
    with pytest.raises(ValueError):
        QuasimodeState.create(op, 0, ModeProfile(zf_grid, np.zeros(len(zf_grid)), 0, "rhat"))
    with pytest.raises(ValueError):
        QuasimodeState.create(op, 1, gaussian(zf_grid, 0))
    with pytest.raises(ValueError):
        QuasimodeState.create(op, 0, gaussian(zf_grid), DriverSettings(target_order=-1.0))
    with pytest.raises(ValueError):
        # potential switched on inside the outer cutoff transition
        QuasimodeState.create(RadialOperator(cone3, ((1.0, 3, 0),), potential_cutoff=3.0), 0, gaussian(zf_grid))


### Iteration

def test_zero_forcing_gives_no_terms(cone3, zf_grid):
    state = iterate(RadialOperator(cone3), 0, ModeProfile.zeros(zf_grid, 0, "r"), target_order=2.0)
    assert state.terms == []
    assert residual_norm(state, 0.01) == 0.0


def test_order_zero_takes_one_round(cone3, zf_grid):
    state = iterate(RadialOperator(cone3), 0, gaussian(zf_grid), target_order=0.0)
    assert len(state.rounds) == 1
    assert [(t.face, t.sigma_power) for t in state.terms] == [(Face.ZF, 0)]


def test_free_monopole_rounds(free_state):
    assert len(free_state.rounds) == 2
    assert [r.start for r in free_state.rounds] == [0.0, 1.0]
    assert free_state.achieved_order == pytest.approx(2.0)
    keys = {(t.face, float(t.sigma_power), t.sigma_logpower) for t in free_state.terms}
    assert keys == {(Face.ZF, 0.0, 0), (Face.ZF, 1.0, 0), (Face.TF, 1.0, 0)}


def test_leading_term_is_the_newtonian_potential(free_state):
    w0 = term(free_state, Face.ZF, 0).profile
    assert w0.tail.coefficient(1) == pytest.approx(math.sqrt(math.pi) / 4, rel=1e-6)


def test_transition_term_is_the_cut_off_monopole(free_state):
    A = term(free_state, Face.ZF, 0).profile.tail.coefficient(1)
    v = term(free_state, Face.TF, 1).profile
    x = v.grid
    expected = (1.0 - free_state.settings.inner_cutoff(x)) * A / x
    assert np.max(np.abs(v.values - expected)) < 1e-6 * abs(A)


def test_first_order_term_has_no_monopole(free_state):
    w1 = term(free_state, Face.ZF, 1).profile
    assert abs(w1.tail.coefficient(1)) < 1e-6


def test_face_index_sets(free_state):
    sets = free_state.face_sets()
    assert (0, 0) in sets[Face.ZF] and (1, 0) in sets[Face.ZF]
    assert (1, 0) in sets[Face.TF]
    assert (2, 0) in sets[Face.BF]
    # the tail prediction of w₀ reaches past the single emitted transition term
    assert (2, 0) in sets[Face.TF]
    assert free_state.uncovered_terms() == []


def test_taylor_strata_are_predicted_before_any_solve(zf_grid):
    state = QuasimodeState.create(RadialOperator(ConeData.sphere(3, 12)), 0, gaussian(zf_grid), DriverSettings(target_order=2.0))
    sets = state.face_sets()
    assert {(float(j), k) for j, k in sets[Face.ZF].pairs()} == {(0.0, 0), (1.0, 0), (2.0, 0)}
    assert len(sets[Face.TF]) == 0


def test_iteration_consults_both_step_rules(zf_grid, monkeypatch):
    calls = {"zf": 0, "tf": 0}

    def counting(name, rule):
        def wrapped(*args, **kwargs):
            calls[name] += 1
            return rule(*args, **kwargs)

        return wrapped

    monkeypatch.setattr(driver, "zf_step_sets", counting("zf", driver.zf_step_sets))
    monkeypatch.setattr(driver, "tf_step_sets", counting("tf", driver.tf_step_sets))
    iterate(RadialOperator(ConeData.sphere(3, 12)), 0, gaussian(zf_grid), target_order=1.5)
    assert calls["zf"] >= 2
    assert calls["tf"] >= 1


def test_nonpositive_transition_stratum_is_rejected_before_solving(zf_grid, monkeypatch):
    state = QuasimodeState.create(RadialOperator(ConeData.sphere(3, 12)), 0, ModeProfile.zeros(zf_grid, 0, "r"))
    x = state.tf_grid
    h = ModeProfile(x, np.exp(-((x - 3.0) ** 2)), 0, "rhat", PhgSeries.zero(Variable.RHO_HAT), PhgSeries.zero(Variable.X))

    def no_solve(*args, **kwargs):
        raise AssertionError("solved a stratum the step rules reject")

    monkeypatch.setattr(driver, "tf_solve", no_solve)
    with pytest.raises(PositivityError):
        driver.tf_step(state, Stratum(Face.TF, 2, 0, h))


def test_unpredicted_terms_are_flagged(free_state):
    stray = QuasimodeTerm(sp.Rational(1, 2), 0, Face.ZF, 0, term(free_state, Face.ZF, 0).profile)
    state = dataclasses.replace(free_state, terms=free_state.terms + [stray])
    assert [t.sigma_power for t in state.uncovered_terms()] == [sp.Rational(1, 2)]
    with pytest.raises(InvariantViolation):
        state.check_containment()


### Evaluation

def test_evaluate_is_linear_in_the_terms(free_state, zf_grid):
    sigma = 0.01
    whole = evaluate(free_state, sigma, zf_grid)
    parts = sum(evaluate(dataclasses.replace(free_state, terms=[t]), sigma, zf_grid) for t in free_state.terms)
    np.testing.assert_allclose(whole, parts, rtol=1e-12, atol=1e-14)


def test_single_term_evaluation(cone3, zf_grid):
    state = iterate(RadialOperator(cone3), 0, gaussian(zf_grid), target_order=0.0)
    sigma = 0.01
    w0 = state.terms[0].profile
    expected = state.settings.inner_cutoff(sigma * zf_grid) * w0.values
    np.testing.assert_allclose(evaluate(state, sigma, zf_grid), expected, rtol=1e-10, atol=1e-14)


def test_small_sigma_recovers_the_zero_energy_solution(free_state):
    r = np.array([0.01, 0.1, 1.0, 10.0])
    w0 = term(free_state, Face.ZF, 0).profile.evaluate(r)
    np.testing.assert_allclose(evaluate(free_state, 1e-6, r), w0, rtol=1e-5)


def test_residual_shrinks_with_sigma(free_state):
    assert residual_norm(free_state, 0.005) < residual_norm(free_state, 0.02)


@pytest.mark.slow
def test_residual_decays_at_the_declared_order(free_state):
    sigmas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
    p, _ = fit_rate(sigmas, [residual_norm(free_state, s) for s in sigmas])
    assert p >= 0.85 * free_state.achieved_order


### Against the oracle

@pytest.mark.slow
def test_free_monopole_converges_at_the_predicted_rate(free_state):
    report = compare(free_state, [0.06, 0.03, 0.015])
    assert report.exponent > 1.5
    errors = [row.error for row in report.rows]
    assert errors[0] > errors[1] > errors[2]


@pytest.mark.slow
def test_wider_cutoff_windows_agree(zf_grid):
    op = RadialOperator(ConeData.sphere(3, 12))
    base = DriverSettings(target_order=2.0)
    narrow = iterate(op, 0, gaussian(zf_grid), settings=base)
    wide = iterate(op, 0, gaussian(zf_grid), settings=base.with_windows(2.0))
    sigma = 0.01
    a = evaluate(narrow, sigma, zf_grid)
    b = evaluate(wide, sigma, zf_grid)
    assert np.max(np.abs(a - b)) < 1e-3 * np.max(np.abs(a))


@pytest.mark.slow
def test_short_range_potential_passes_the_index_audits(zf_grid):
    op = RadialOperator(ConeData.sphere(3, 12), ((0.1, 3, 0),))
    state = iterate(op, 0, gaussian(zf_grid), target_order=1.5)
    assert state.achieved_order >= 1.5
    assert all(t.order >= 0 for t in state.terms)
    assert state.uncovered_terms() == []
