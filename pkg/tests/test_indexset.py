import math

import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from scripts.errors import InsufficientModesError, PositivityError
from scripts.indexset import (
    ConeData,
    IndexSet,
    IndexSetKind,
    Side,
    SymmetryOrders,
    b_ge,
    c_uplus,
    fixed_point_zf,
    fixed_point_zf_iterates,
    indicial_roots,
    is_pre_index_set,
    nested_union_zf,
    pi_min,
    shift,
    tf_step_sets,
    truncate,
    uplus,
    zf_iteration_bound,
    zf_step_sets,
)

INDEX = IndexSetKind.INDEX
half = sp.Rational(1, 2)


def pairs(*items):
    return {(sp.sympify(j), k) for j, k in items}


### Elementary operations

def test_is_pre_index_set():
    assert is_pre_index_set([])
    assert is_pre_index_set([(0, 0), (0, 1), (1, 0)])
    assert not is_pre_index_set([(0, 1)])


def test_uplus_without_resonance():
    assert set(uplus(2, 0, IndexSet.empty()).pairs()) == pairs((2, 0))
    assert set(uplus(1, 0, IndexSet.of([(2, 0)])).pairs()) == pairs((1, 0), (2, 0))


def test_uplus_resonance_creates_logs():
    E = IndexSet.of([(1, 0)], horizon=3.5)
    out = uplus(1, 0, E)
    for delta in range(3):
        assert (1 + delta, 1) in out
    assert (1, 0) in out
    assert is_pre_index_set(out.terms)
    assert E.issubset(out)


def test_uplus_resonance_needs_finite_horizon():
    with pytest.raises(ValueError):
        uplus(1, 0, IndexSet.of([(1, 0)]))


def test_shift():
    assert set(shift(IndexSet.of([(1, 0)]), 2, 0).pairs()) == pairs((3, 0))
    assert set(shift(IndexSet.of([(1, 0)]), 0, 1).pairs()) == pairs((1, 0), (1, 1))
    assert len(shift(IndexSet.empty(), 3, 2)) == 0


def test_truncate():
    E = IndexSet.of([(1, 0), (2, 0)])
    assert set(truncate(E, 1.5, Side.BELOW).pairs()) == pairs((1, 0))
    assert len(truncate(IndexSet.empty(), 1.0, "below")) == 0
    F = IndexSet.of([(1, 0), (1, 1), (2, 0)])
    assert truncate(F, 1, Side.AT_OR_ABOVE) == F


def test_truncate_rejects_threshold_beyond_horizon():
    with pytest.raises(ValueError):
        truncate(IndexSet.empty(2.0), 3.0)


def test_pi_min():
    assert pi_min(IndexSet.of([(1, 0), (2, 3)])) == 1
    assert pi_min(IndexSet.empty()) == math.inf
    assert pi_min(IndexSet.of([(0.5 + 1j, 0)])) == pytest.approx(0.5)


def test_index_kind_closes_under_integer_shifts():
    E = IndexSet.of([(half, 1)], horizon=3.0, kind=INDEX)
    assert set(E.pairs()) == pairs(
        (half, 0), (half, 1), (1 + half, 0), (1 + half, 1), (2 + half, 0), (2 + half, 1)
    )


def test_text_serialization():
    E = IndexSet.of([(1, 0), (half, 1)])
    text = E.to_text()
    assert text.splitlines() == ["0.5 0 0", "0.5 0 1", "1 0 0"]
    assert IndexSet.from_text(text) == E


### Cone data

def test_indicial_roots():
    assert indicial_roots(3, 0) == (0, 1)
    assert indicial_roots(3, 2) == (1, 2)
    assert indicial_roots(4, 0) == (0, 2)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_sphere_modes_satisfy_root_relations(d):
    cone = ConeData.sphere(d, 6)
    for mode in cone.modes:
        assert sp.simplify(mode.c - mode.b - (d - 2)) == 0
        assert sp.simplify(mode.b * mode.c - mode.eigenvalue) == 0
        assert mode.b == mode.l
        assert mode.c == d - 2 + mode.l


def test_irrational_roots_are_exact():
    cone = ConeData(3, (0, 3))
    mode = cone.mode(1)
    assert sp.expand(mode.b * mode.c) == 3
    assert sp.expand(mode.c - mode.b) == 1


def test_cone_rejects_decreasing_eigenvalues():
    with pytest.raises(ValueError):
        ConeData(3, (2, 0))


### Extended unions

def test_c_uplus(cone3):
    assert set(c_uplus(cone3, 0, IndexSet.empty(3.5)).pairs()) == pairs((1, 0), (2, 0), (3, 0))
    assert set(c_uplus(cone3, 1, IndexSet.empty(3.5)).pairs()) == pairs((2, 0), (3, 0))
    E = IndexSet.of([(1, 0)], horizon=2.5)
    assert set(c_uplus(cone3, 0, E).pairs()) == pairs((1, 0), (2, 0), (1, 1), (2, 1))


def test_c_uplus_insufficient_modes():
    with pytest.raises(InsufficientModesError):
        c_uplus(ConeData.sphere(3, 1), 0, IndexSet.empty(3.5))


def test_b_ge(cone3):
    G = IndexSet.of([(1, 0)], horizon=2.5)
    assert set(b_ge(cone3, 1, G).pairs()) == pairs((1, 0), (1, 1), (2, 0), (2, 1))
    assert set(b_ge(cone3, 0, IndexSet.empty(2.5)).pairs()) == pairs((0, 0), (1, 0), (2, 0))
    assert len(b_ge(cone3, 3, IndexSet.empty(2.5))) == 0


### Zero-energy fixed point

def test_fixed_point_multipole_case(cone3):
    I, I_l = fixed_point_zf(cone3, 1, IndexSet.empty(3.5), [IndexSet.empty(3.5)], math.inf, math.inf, 3.5)
    assert set(I.pairs()) == pairs((2, 0), (3, 0))
    assert set(I_l[0].pairs()) == pairs((1, 0), (2, 0), (3, 0))


def test_fixed_point_with_symmetry_breaking(cone3):
    E = IndexSet.of([(1, 0)], horizon=2.5)
    I, I_l = fixed_point_zf(cone3, 1, E, [E], 0, math.inf, 2.5)
    assert set(I_l[0].pairs()) == pairs((1, 0), (1, 1), (2, 0), (2, 1))
    assert set(I.pairs()) == pairs((1, 0), (2, 0), (2, 1))


def test_fixed_point_ignores_forcing_beyond_horizon(cone3):
    _, I_l = fixed_point_zf(cone3, 1, IndexSet.empty(2.5), [IndexSet.of([(5, 0)])], math.inf, math.inf, 2.5)
    assert set(I_l[0].pairs()) == pairs((1, 0), (2, 0))


@pytest.mark.parametrize("ell", [0, 1, 2, 3])
def test_fixed_point_reproduces_multipole_expansion(ell):
    cone = ConeData.sphere(3, 8)
    E_l = [IndexSet.empty(6.0) for _ in range(ell)]
    I, I_l = fixed_point_zf(cone, ell, IndexSet.empty(6.0), E_l, math.inf, math.inf, 6.0)
    assert set(I.pairs()) == {(sp.Integer(n), 0) for n in range(ell + 1, 7)}
    for l, I_mode in enumerate(I_l):
        assert set(I_mode.pairs()) == {(sp.Integer(n), 0) for n in range(l + 1, 7)}


def test_iteration_bound():
    cone = ConeData.sphere(3, 4)
    assert zf_iteration_bound(cone, IndexSet.empty(), 0, 0.5) == 0
    assert zf_iteration_bound(cone, IndexSet.empty(), math.inf, 4.0) == 1
    assert zf_iteration_bound(cone, IndexSet.empty(), 0, 4.0) == 4


### Step rules

def test_tf_step_sets_per_mode(cone3):
    F = IndexSet.empty(3.5)
    F_0 = IndexSet.of([(2, 0)], horizon=3.5)
    sets = tf_step_sets(cone3, 1, F, [F_0], 5.0, [5.0], SymmetryOrders())
    assert set(sets.zf_modes[0].pairs()) == pairs((1, 0), (2, 0), (2, 1), (3, 0), (3, 1))
    assert len(sets.zf) == 0


def test_tf_step_sets_threshold_leaves_term_unsolved(cone3):
    F = IndexSet.of([(1, 0)], horizon=3.5)
    sets = tf_step_sets(cone3, 1, F, [IndexSet.empty(3.5)], 0.5, [0.5], SymmetryOrders())
    assert len(sets.zf) == 0
    assert (1, 0) in sets.tf


def test_tf_step_sets_empty_forcing(cone3):
    sets = tf_step_sets(cone3, 0, IndexSet.empty(3.0), [], 2.0, [], SymmetryOrders(beth=0, beth0=0))
    assert len(sets.zf) == 0
    assert len(sets.tf) == 0


def test_tf_step_sets_zf_positivity_bound(cone3):
    F = IndexSet.of([(1, 0)], horizon=3.5)
    sets = tf_step_sets(cone3, 0, F, [], 5.0, [], SymmetryOrders())
    assert pi_min(sets.zf) >= min(1, cone3.mode(0).b + pi_min(F))
    assert (1, 1) in sets.zf


def test_tf_step_sets_rejects_nonpositive_forcing(cone3):
    F = IndexSet.of([(0, 0)], horizon=3.0)
    with pytest.raises(PositivityError):
        tf_step_sets(cone3, 0, F, [], 5.0, [], SymmetryOrders())


def test_bf_update_pins_leading_term(cone3):
    sets = tf_step_sets(cone3, 0, IndexSet.empty(4.0), [], 1.0, [], SymmetryOrders())
    E_plus, E_plus_plus = sets.bf_update(IndexSet.empty(4.0))
    assert set(E_plus.pairs()) == pairs((1, 0))
    assert len(E_plus_plus) == 0


def test_zf_step_sets_without_symmetry_breaking(cone3):
    F, F_0 = IndexSet.of([(2, 0)], horizon=4.0), IndexSet.of([(1, 0)], horizon=4.0)
    I, I_0 = IndexSet.of([(3, 0)], horizon=4.0), IndexSet.of([(2, 1)], horizon=4.0)
    I_plus, I_plus_modes = zf_step_sets(cone3, F, [F_0], I, [I_0], SymmetryOrders())
    assert set(I_plus.pairs()) == pairs((2, 0), (3, 0))
    assert set(I_plus_modes[0].pairs()) == pairs((1, 0), (2, 0), (2, 1))


def test_zf_step_sets_cross_and_mixed_orders(cone3):
    F, F_0 = IndexSet.of([(2, 0)], horizon=4.0), IndexSet.of([(1, 0)], horizon=4.0)
    I, I_0 = IndexSet.of([(3, 0)], horizon=4.0), IndexSet.of([(2, 1)], horizon=4.0)
    I_plus, I_plus_modes = zf_step_sets(cone3, F, [F_0], I, [I_0], SymmetryOrders(beth=0, beth0=0))
    # 1 + ℶ₀ moves the whole union up by one
    assert set(I_plus.pairs()) == pairs((2, 0), (3, 0), (3, 1), (4, 0))
    assert set(I_plus_modes[0].pairs()) == pairs((1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (4, 0))

    mixed, mixed_modes = zf_step_sets(cone3, F, [F_0], I, [I_0], SymmetryOrders(beth=0, beth0=0, beth2=1))
    assert (4, 1) in mixed
    assert (4, 1) not in mixed_modes[0]


def test_zf_step_sets_keep_the_solved_residual(cone3):
    residual = IndexSet.of([(1, 0)], horizon=3.0)
    _, modes = zf_step_sets(cone3, IndexSet.empty(3.0), [residual], IndexSet.empty(3.0), [IndexSet.empty(3.0)], SymmetryOrders())
    assert set(modes[0].pairs()) == pairs((1, 0))


def test_symmetry_orders_require_ordering():
    with pytest.raises(ValueError):
        SymmetryOrders(beth=2, beth0=1)


### Properties

exponent_pool = [sp.Integer(0), half, sp.Integer(1), 1 + half, sp.Integer(2), sp.Integer(3)]
index_terms = st.lists(st.tuples(st.sampled_from(exponent_pool), st.integers(0, 2)), max_size=4)
horizons = st.sampled_from([3.0, 4.5, 6.0])


@settings(max_examples=200, deadline=None)
@given(a=st.sampled_from(exponent_pool + [sp.Integer(-1), sp.Rational(5, 2)]), items=index_terms, h=horizons)
def test_uplus_absorbs_shifted_resonance(a, items, h):
    E = IndexSet.of(items, horizon=h, kind=INDEX)
    inner = uplus(1 + a, 0, shift(E, 1, 0)) | E
    assert uplus(a, 0, inner) == uplus(a, 0, E)


@settings(max_examples=50, deadline=None)
@given(items=index_terms, extra=index_terms, beth=st.integers(0, 2), h=horizons)
def test_fixed_point_is_monotone(items, extra, beth, h):
    cone = ConeData.sphere(3, 10)
    small = IndexSet.of(items, horizon=h, kind=INDEX)
    large = small | IndexSet.of(extra, horizon=h, kind=INDEX)
    I_small, I_l_small = fixed_point_zf(cone, 1, small, [small], beth, beth + 1, h)
    I_large, I_l_large = fixed_point_zf(cone, 1, large, [large], beth, beth + 1, h)
    assert I_small.issubset(I_large)
    assert I_l_small[0].issubset(I_l_large[0])


@settings(max_examples=50, deadline=None)
@given(items=index_terms, beth=st.one_of(st.integers(0, 2), st.just(math.inf)), h=horizons)
def test_fixed_point_matches_nested_union(items, beth, h):
    cone = ConeData.sphere(3, 10)
    E = IndexSet.of(items, horizon=h, kind=INDEX)
    I, _ = fixed_point_zf(cone, 2, E, [], beth, math.inf, h)
    assert I == nested_union_zf(cone, 2, E, beth, h)


@settings(max_examples=30, deadline=None)
@given(items=index_terms, beth=st.integers(0, 2), alpha=st.sampled_from([1.5, 2.5, 3.5]))
def test_fixed_point_below_threshold_is_final_after_bound(items, beth, alpha):
    cone = ConeData.sphere(3, 10)
    h = 6.0
    E = IndexSet.of(items, horizon=h, kind=INDEX)
    k_alpha = zf_iteration_bound(cone, E, beth, alpha)
    snapshots = []
    for k, (I, _) in enumerate(fixed_point_zf_iterates(cone, 1, E, [E], beth, math.inf, h)):
        if k > k_alpha + 4:
            break
        if k >= k_alpha + 1:
            snapshots.append(truncate(I, alpha, Side.BELOW))
    assert all(s == snapshots[0] for s in snapshots)
