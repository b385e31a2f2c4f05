"""
Quasimode driver
Builds u ~ Σ σ^α (log σ)^κ u_{α,κ} with P(σ)u = e^{-iσr}f up to a target order
by alternating zero-energy and transition-face solves on one harmonic.

P(σ) = e^{-iσr}(Δ + V - σ²)e^{iσr} = N_zf + σP₁ with P₁ = -2i∂r - i(d-1)/r, and
P(σ) = σ²L_tf + V on functions of r̂ = rσ.

A pending zero-face stratum (α, κ, g) stands for σ^α (log σ)^κ χ₀(rσ) g(r);
a pending transition-face stratum (β, κ, h) for σ^β (log σ)^κ χ₁(1/r) h(rσ).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from math import factorial
from typing import Dict, List, Optional, Tuple

import numpy as np
import sympy as sp

from scripts.errors import InvariantViolation, PositivityError, StagnationError
from scripts.indexset import (
    IndexSet,
    IndexSetKind,
    SymmetryOrders,
    as_complex,
    exponent,
    fixed_point_zf,
    re_part,
    shift,
    tf_step_sets,
    uplus,
    zf_step_sets,
)
from scripts.mode_profile import ModeProfile
from scripts.phg_series import PhgSeries, SeriesOperator, SigmaRelation, Variable, poly, sigma_rewrite_series
from scripts.tf_solver import TfProblem, TfSettings, cutoff_commutator, tf_solve
from scripts.utils import SmoothCutoff, log_step
from scripts.zf_solver import NumericSettings, RadialOperator, solve_perturbed

logger = logging.getLogger(__name__)

ORDER_TOLERANCE = 1e-9
MAX_STEPS_PER_ROUND = 500
LOW_TAIL_LIMIT = 2  # zero-face tails up to ρ² go to the transition face


class Face(Enum):
    ZF = "zf"
    TF = "tf"
    BF = "bf"


@dataclass(frozen=True)
class DriverSettings:
    """Everything the iteration needs besides the operator and forcing"""

    zf: NumericSettings = field(default_factory=NumericSettings)
    tf: TfSettings = field(default_factory=TfSettings)
    inner_cutoff: SmoothCutoff = field(default_factory=SmoothCutoff)
    outer_cutoff: SmoothCutoff = field(default_factory=SmoothCutoff)
    target_order: float = 2.0
    coefficient_tol: float = 1e-10
    stagnation_gain: float = 1e-3
    stagnation_rounds: int = 3
    audit: bool = True

    @classmethod
    def from_config(cls, run) -> "DriverSettings":
        """Build from a RunConfig"""
        n = run.numerics
        window = SmoothCutoff(*n.cutoff_window)
        return cls(
            zf=NumericSettings.from_config(n),
            tf=TfSettings.from_config(n),
            inner_cutoff=window,
            outer_cutoff=window,
            target_order=n.target_order,
        )

    @property
    def order_cap(self) -> float:
        """Strata at or above this order are never solved and are dropped"""
        return self.target_order + 1

    @property
    def sigma_exact(self) -> float:
        """Largest σ for which the cutoff commutators are disjoint from the other cutoff's transition"""
        return self.inner_cutoff.lo * self.outer_cutoff.lo

    def with_windows(self, factor: float) -> "DriverSettings":
        """Same settings with both transition windows widened by factor"""
        return DriverSettings(
            self.zf,
            self.tf,
            self.inner_cutoff.widened(factor),
            self.outer_cutoff.widened(factor),
            self.target_order,
            self.coefficient_tol,
            self.stagnation_gain,
            self.stagnation_rounds,
            self.audit,
        )


@dataclass
class Stratum:
    """One pending piece of the forcing"""

    face: Face
    power: sp.Expr
    logpower: int
    profile: ModeProfile

    def __post_init__(self):
        self.power = sp.expand(exponent(self.power))
        expected = "r" if self.face is Face.ZF else "rhat"
        if self.profile.coordinate != expected:
            raise ValueError(f"{self.face.value} stratum needs a profile in {expected}")

    @property
    def key(self) -> Tuple[Face, sp.Expr, int]:
        return (self.face, self.power, self.logpower)

    @property
    def order(self) -> float:
        """Order of the term this stratum is solved into"""
        shift = 0 if self.face is Face.ZF else 2
        return re_part(self.power) - shift


@dataclass
class QuasimodeTerm:
    """σ^power (log σ)^logpower times a cut-off profile"""

    sigma_power: sp.Expr
    sigma_logpower: int
    face: Face
    mode: int
    profile: ModeProfile

    @property
    def order(self) -> float:
        return re_part(self.sigma_power)

    def sigma_factor(self, sigma: float) -> complex:
        log_sigma = math.log(sigma)
        return complex(np.exp(as_complex(self.sigma_power) * log_sigma)) * log_sigma**self.sigma_logpower

    def to_row(self, profile_file: str = "") -> List:
        return [f"{re_part(self.sigma_power):.12g}", self.sigma_logpower, self.face.value, self.mode, profile_file]


@dataclass
class RoundRecord:
    index: int
    start: float
    epsilon: float
    achieved: float
    solved: List[Tuple[str, str, int]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "round": self.index,
            "start": self.start,
            "epsilon": self.epsilon,
            "achieved": self.achieved,
            "solved": [list(s) for s in self.solved],
        }


# ============================================================================
# Series helpers
# ============================================================================

def flip_variable(s: PhgSeries, variable: Variable) -> PhgSeries:
    """Rewrite a series in the reciprocal variable: x^j (log x)^k = y^{-j} (-log y)^k"""
    return PhgSeries.build(
        [(sp.expand(-t.exponent), t.logpower, t.coeff * (-1) ** t.logpower) for t in s.terms],
        math.inf,
        variable,
    )


def split_series(s: PhgSeries, limit: float, below: bool = True, inclusive: bool = True) -> Tuple[PhgSeries, PhgSeries]:
    """(terms on the requested side of limit, the rest)"""
    low, high = [], []
    for t in s.terms:
        j = re_part(t.exponent)
        is_low = j <= limit + ORDER_TOLERANCE if inclusive else j < limit - ORDER_TOLERANCE
        (low if is_low == below else high).append((t.exponent, t.logpower, t.coeff))
    return PhgSeries.build(low, math.inf, s.variable), PhgSeries.build(high, s.error_order, s.variable)


def first_order_part(d: int) -> SeriesOperator:
    """P₁ = -2i∂r - i(d-1)/r in ρ = 1/r"""
    return SeriesOperator(((1, poly(-1j * (d - 1), 2j)),), Variable.RHO)


# ============================================================================
# State
# ============================================================================

@dataclass
class QuasimodeState:
    """
    Accumulated terms, pending strata and round history of one harmonic

    `forcing` is f in (Δ + V - σ²)U = f, sampled on the zero-energy grid; the
    driver works with P(σ)u = e^{-iσr}f and U = e^{iσr}u.
    """

    operator: RadialOperator
    l: int
    forcing: ModeProfile
    settings: DriverSettings = field(default_factory=DriverSettings)
    terms: List[QuasimodeTerm] = field(default_factory=list)
    pending: Dict[Tuple[Face, sp.Expr, int], Stratum] = field(default_factory=dict)
    rounds: List[RoundRecord] = field(default_factory=list)
    forcing_order: float = math.inf
    predicted: Dict[Face, IndexSet] = field(default_factory=dict)
    _zf_audit_cache: Dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, operator: RadialOperator, l: int, forcing: ModeProfile, settings: Optional[DriverSettings] = None) -> "QuasimodeState":
        """
        Validate the problem and seed the Taylor strata of e^{-iσr}f

        Raises:
            ValueError: forcing not a zero-energy profile of mode l, or a
                potential whose cutoff reaches into the transition region
        """
        settings = settings or DriverSettings()
        if forcing.coordinate != "r":
            raise ValueError("forcing must be a profile in r")
        if forcing.mode != l:
            raise ValueError(f"forcing is mode {forcing.mode}, iteration is mode {l}")
        if settings.target_order < 0:
            raise ValueError(f"target order must be >= 0, got {settings.target_order}")
        if not operator.is_free:
            reach = operator.potential_cutoff * operator.cutoff.hi
            if reach > 1.0 / settings.outer_cutoff.hi + 1e-12:
                raise ValueError(
                    f"potential cutoff ends at r={reach:g}, inside the outer cutoff transition (r < {1 / settings.outer_cutoff.hi:g})"
                )
        state = cls(operator, l, forcing, settings)
        cap = settings.order_cap
        state.predicted = {
            Face.ZF: IndexSet.empty(cap),
            Face.TF: IndexSet.empty(cap),
            Face.BF: IndexSet.of([(sp.Rational(operator.cone.d + 1, 2), 0)]),
        }
        tail = forcing.tail if forcing.tail is not None else PhgSeries.zero(Variable.RHO)
        if not tail.is_zero():
            state.forcing_order = tail.pi_min()
            logger.warning(
                f"forcing has a ρ^{tail.pi_min():g} tail; e^(-iσr)f is expanded under χ₀ only, "
                f"so the residual is capped at order {state.forcing_order:g}"
            )
        n = 0
        while n < settings.order_cap - ORDER_TOLERANCE:
            c = (-1j) ** n / factorial(n)
            values = c * forcing.grid**n * forcing.values
            shifted = tail.times_power(-n)
            state.predict_zf_stratum(n, 0, shifted.index_set())
            state.insert(Stratum(Face.ZF, n, 0, ModeProfile(forcing.grid, values, l, "r", shifted.scale(c))))
            n += 1
        return state

    # ------------------------------------------------------------------
    # properties

    @property
    def cone(self):
        return self.operator.cone

    @cached_property
    def tf_grid(self) -> np.ndarray:
        return self.settings.tf.grid()

    @property
    def achieved_order(self) -> float:
        """Order of the lowest pending stratum, capped by the forcing and the drop threshold"""
        lowest = min((s.order for s in self.pending.values()), default=math.inf)
        return min(lowest, self.settings.order_cap, self.forcing_order)

    @cached_property
    def orders(self) -> SymmetryOrders:
        """Symmetry-breaking orders of the operator; a radial potential never couples harmonics"""
        beth = self.operator.beth
        if beth == math.inf or abs(beth - round(beth)) > ORDER_TOLERANCE:
            return SymmetryOrders()
        return SymmetryOrders(beth=int(round(beth)))

    def face_sets(self) -> Dict[Face, IndexSet]:
        """Predicted (σ power, σ log power) index sets per face"""
        return dict(self.predicted)

    # ------------------------------------------------------------------
    # predicted index sets

    def _face(self, face: Face) -> IndexSet:
        return self.predicted.get(face, IndexSet.empty(self.settings.order_cap))

    def _predict(self, face: Face, pairs) -> None:
        pairs = list(pairs)
        if pairs:
            cap = self.settings.order_cap
            self.predicted[face] = self._face(face) | IndexSet.of(pairs, cap, IndexSetKind.PRE)

    def predict_zf_stratum(self, power, logpower: int, tail: IndexSet) -> None:
        """A zero-face stratum with tail index set `tail`, and the transition-face strata its low tail becomes"""
        self._predict(Face.ZF, [(power, logpower)])
        self._predict(
            Face.TF,
            [(power + t.exponent - 2, logpower + t.logpower) for t in tail.terms if t.real <= LOW_TAIL_LIMIT + ORDER_TOLERANCE],
        )

    def predict_tf_stratum(self, power, logpower: int, head: IndexSet) -> None:
        """A transition-face stratum with head index set `head`, and the zero-face strata its singular head becomes"""
        self._predict(Face.TF, [(power - 2, logpower)])
        self._predict(Face.ZF, [(power + t.exponent, logpower + t.logpower) for t in head.terms if t.real < -2 - ORDER_TOLERANCE])

    def uncovered_terms(self) -> List[QuasimodeTerm]:
        """Emitted terms above the coefficient tolerance whose (σ power, σ log power) was never predicted"""
        tol = self._tolerance(self.forcing)
        return [
            t
            for t in self.terms
            if t.profile.max_abs() > tol and (t.sigma_power, t.sigma_logpower) not in self._face(t.face)
        ]

    def check_containment(self) -> None:
        uncovered = self.uncovered_terms()
        if uncovered:
            listing = ", ".join(f"{t.face.value}({t.sigma_power},{t.sigma_logpower})" for t in uncovered)
            raise InvariantViolation(f"emitted terms outside the predicted face index sets: {listing}")

    # ------------------------------------------------------------------
    # strata

    def _tolerance(self, profile: ModeProfile) -> float:
        return self.settings.coefficient_tol * max(profile.max_abs(), 1.0)

    def insert(self, stratum: Stratum) -> None:
        """
        Add a stratum, moving the parts the other face has to solve

        Zero-face tails up to ρ² become transition-face heads; transition-face
        heads below r̂^{-2} become zero-face tails. Strata at or above the order
        cap are dropped; strata with equal keys are merged.
        """
        if stratum.order >= self.settings.order_cap - ORDER_TOLERANCE:
            logger.debug(f"dropping {stratum.face.value} stratum at order {stratum.order:g}")
            return
        if stratum.face is Face.ZF:
            stratum = self._split_zf(stratum)
        else:
            stratum = self._split_tf(stratum)
        p = stratum.profile
        series_zero = all(s is None or s.is_zero() for s in (p.tail, p.head))
        if series_zero and p.max_abs() == 0:
            return
        existing = self.pending.get(stratum.key)
        if existing is not None:
            stratum = Stratum(stratum.face, stratum.power, stratum.logpower, existing.profile + stratum.profile)
        self.pending[stratum.key] = stratum

    def _split_zf(self, stratum: Stratum) -> Stratum:
        g = stratum.profile
        if g.tail is None or g.tail.is_zero():
            return stratum
        low, high = split_series(g.tail, LOW_TAIL_LIMIT)
        if low.is_zero():
            return stratum
        r = g.grid
        values = g.values - self.settings.outer_cutoff.inverted(r) * low.evaluate(1.0 / r)
        x = self.tf_grid
        chi0 = self.settings.inner_cutoff(x)
        for (power, logpower), S in sigma_rewrite_series(low, Variable.X, SigmaRelation.QUOTIENT).items():
            h = ModeProfile(x, chi0 * S.evaluate(x), self.l, "rhat", PhgSeries.zero(Variable.RHO_HAT), S)
            self.insert(Stratum(Face.TF, stratum.power + power, stratum.logpower + logpower, h))
        return Stratum(stratum.face, stratum.power, stratum.logpower, ModeProfile(r, values, self.l, "r", high))

    def _split_tf(self, stratum: Stratum) -> Stratum:
        h = stratum.profile
        if h.head is None or h.head.is_zero():
            return stratum
        low, high = split_series(h.head, -2, inclusive=False)
        if low.is_zero():
            return stratum
        x = h.grid
        values = h.values - self.settings.inner_cutoff(x) * low.evaluate(x)
        r = self.forcing.grid
        chi1 = self.settings.outer_cutoff.inverted(r)
        for (power, logpower), S in sigma_rewrite_series(low, Variable.R, SigmaRelation.PRODUCT).items():
            g = ModeProfile(r, chi1 * S.evaluate(r), self.l, "r", flip_variable(S, Variable.RHO))
            self.insert(Stratum(Face.ZF, stratum.power + power, stratum.logpower + logpower, g))
        return Stratum(stratum.face, stratum.power, stratum.logpower, ModeProfile(x, values, self.l, "rhat", h.tail, high))

    def emit(self, term: QuasimodeTerm) -> None:
        for i, old in enumerate(self.terms):
            if (old.face, old.sigma_power, old.sigma_logpower) == (term.face, term.sigma_power, term.sigma_logpower):
                self.terms[i] = QuasimodeTerm(term.sigma_power, term.sigma_logpower, term.face, term.mode, old.profile + term.profile)
                return
        self.terms.append(term)

    # ------------------------------------------------------------------
    # step rules

    def zf_tail_prediction(self, forcing_tail: PhgSeries, w: ModeProfile) -> IndexSet:
        """
        Index set of the tail of a zero-energy solve, from the fixed-point recursion on its forcing

        Raises:
            InvariantViolation: audits are on and the solved tail leaves the prediction
        """
        tol = self._tolerance(w)
        beth = self.operator.beth
        if beth != math.inf and abs(beth - round(beth)) > ORDER_TOLERANCE:
            logger.debug(f"no fixed-point prediction for non-integer ℶ = {beth:g}; using the solved tail")
            return w.tail.index_set(tol)
        beth = math.inf if beth == math.inf else int(round(beth))
        h = self.settings.zf.horizon
        forcing_set = forcing_tail.index_set(tol)
        key = (forcing_set.terms, beth)
        predicted = self._zf_audit_cache.get(key)
        if predicted is None:
            shifted = IndexSet.of([(t.exponent - 2, t.logpower) for t in forcing_set], h, IndexSetKind.INDEX)
            E_l = [IndexSet.empty(h, IndexSetKind.INDEX)] * self.l + [shifted]
            _, per_mode = fixed_point_zf(self.cone, self.l + 1, IndexSet.empty(h, IndexSetKind.INDEX), E_l, beth, math.inf, h)
            predicted = per_mode[self.l]
            self._zf_audit_cache[key] = predicted
        if self.settings.audit:
            actual = w.tail.index_set(tol)
            if not actual.issubset(predicted):
                extra = sorted(set(actual.terms) - set(predicted.terms), key=lambda t: t.sort_key())
                raise InvariantViolation(f"zero-face tail has terms outside the predicted index set: {extra}")
        return predicted

    def tf_head_prediction(self, forcing_head: PhgSeries, v: ModeProfile, order: float) -> IndexSet:
        """
        Index set (b_l, 0) ⊎ (forcing head + 2) of the head of a transition-face solve

        Raises:
            PositivityError: the term reaches the zero face at a nonpositive order
            InvariantViolation: audits are on and the solved head leaves the prediction
        """
        head = v.head if v.head is not None else PhgSeries.zero(Variable.X)
        lowest = order + head.prune(self._tolerance(v)).pi_min()
        if lowest <= ORDER_TOLERANCE:
            raise PositivityError(f"transition-face term of order {order:g} reaches the zero face at order {lowest:g}")
        horizon = head.error_order if math.isfinite(head.error_order) else self.settings.tf.horizon
        shifted = IndexSet.of(
            [(t.exponent + 2, t.logpower) for t in forcing_head.index_set(self._tolerance(v))],
            horizon,
            IndexSetKind.INDEX,
        )
        predicted = uplus(self.cone.mode(self.l).b, 0, shifted)
        if self.settings.audit:
            actual = head.index_set(self._tolerance(v))
            if not actual.issubset(predicted):
                extra = sorted(set(actual.terms) - set(predicted.terms), key=lambda t: t.sort_key())
                raise InvariantViolation(f"transition-face head has terms outside the predicted index set: {extra}")
        return predicted

    def advance_zf_sets(self, stratum: Stratum, tail: IndexSet) -> None:
        """Carry the predictions through a zero-face solve whose solution tail lies in `tail`"""
        h, l = self.settings.order_cap, self.l
        pad = [IndexSet.empty(h)] * l
        residual = IndexSet.of([(stratum.power + 1, stratum.logpower)], h)
        _, per_mode = zf_step_sets(self.cone, IndexSet.empty(h), pad + [residual], IndexSet.empty(h), pad + [self._face(Face.ZF)], self.orders)
        self.predicted[Face.ZF] = per_mode[l].with_horizon(h)
        # σP₁w keeps the tail shape one power down
        self.predict_zf_stratum(stratum.power + 1, stratum.logpower, shift(tail, 1))
        for t in tail.terms:
            self.predict_tf_stratum(stratum.power + t.exponent + 2, stratum.logpower + t.logpower, IndexSet.empty())

    def advance_tf_sets(self, stratum: Stratum) -> None:
        """
        Transition-step sets for one stratum: 𝓚_l joins the zero face, 𝓕_l⁺ the transition face

        Raises:
            PositivityError: the stratum or its zero-face image has nonpositive order
        """
        h, l = self.settings.order_cap, self.l
        pad = [IndexSet.empty(h)] * l
        F_mode = IndexSet.of([(stratum.power - 2, stratum.logpower)], h)
        sets = tf_step_sets(self.cone, l + 1, IndexSet.empty(h), pad + [F_mode], h, [h] * (l + 1), self.orders, h)
        self.predicted[Face.ZF] = self._face(Face.ZF) | sets.zf_modes[l].with_horizon(h)
        self.predicted[Face.TF] = self._face(Face.TF) | sets.tf_modes[l].with_horizon(h)

    def advance_tf_heads(self, stratum: Stratum, head: IndexSet) -> None:
        """Carry the predictions through a transition-face solve whose solution head lies in `head`"""
        base = stratum.power - 2
        for t in head.terms:
            for step in (0, 1):
                self.predict_zf_stratum(base + t.exponent + step, stratum.logpower + t.logpower, IndexSet.empty())
        if self.operator.is_free:
            return
        for m in self.operator.tail.index_set().terms:
            product = IndexSet.of([(s.exponent - m.exponent, s.logpower + m.logpower) for s in head.terms])
            self.predict_tf_stratum(base + m.exponent, stratum.logpower + m.logpower, product)


# ============================================================================
# Steps
# ============================================================================

def zf_step(state: QuasimodeState, stratum: Stratum) -> QuasimodeTerm:
    """
    Solve N_zf w = g and queue what χ₀(rσ)w leaves behind

    Residual pieces: σχ₀P₁w at the zero face and the commutator [σ²L_tf, χ₀]
    applied to the tail of w, which lives where χ₁ = 1.
    """
    op, l, d = state.operator, state.l, state.cone.d
    g = stratum.profile
    w = solve_perturbed(op, l, g, state.settings.zf.horizon, state.settings.zf)
    g_tail = g.tail if g.tail is not None else PhgSeries.zero(Variable.RHO)
    tail_set = state.zf_tail_prediction(g_tail, w)
    term = QuasimodeTerm(stratum.power, stratum.logpower, Face.ZF, l, w)
    state.emit(term)
    state.advance_zf_sets(stratum, tail_set)

    r = w.grid
    tail = w.tail.prune(state._tolerance(w))
    p1_values = 2j * w.grid_slopes() + 1j * (d - 1) * w.values / r
    p1_tail = -first_order_part(d).apply(tail)
    state.insert(Stratum(Face.ZF, stratum.power + 1, stratum.logpower, ModeProfile(r, p1_values, l, "r", p1_tail)))

    x = state.tf_grid
    _, chi_d1, chi_d2 = state.settings.inner_cutoff.derivatives(x)
    for (power, logpower), S in sigma_rewrite_series(tail, Variable.X, SigmaRelation.QUOTIENT).items():
        s, s1, _ = S.derivatives(x)
        h = -cutoff_commutator(d, x, chi_d1, chi_d2, s, s1)
        profile = ModeProfile(x, h, l, "rhat", PhgSeries.zero(Variable.RHO_HAT), PhgSeries.zero(Variable.X))
        state.insert(Stratum(Face.TF, stratum.power + power + 2, stratum.logpower + logpower, profile))
    logger.debug(f"zf step at σ^{stratum.power} (log σ)^{stratum.logpower}: tail {w.tail!r}")
    return term


def tf_step(state: QuasimodeState, stratum: Stratum) -> QuasimodeTerm:
    """
    Solve L_tf v = h and queue what χ₁(1/r)v(rσ) leaves behind

    Residual pieces: the commutator of χ₁ with N_zf + σP₁ on the head of v
    (compactly supported, so zero-face strata without tails) and V·v moved
    to the transition face through the σ re-expansion of the potential tail.

    Raises:
        PositivityError: from the transition-step index sets or the solved head
    """
    op, l, d = state.operator, state.l, state.cone.d
    h = stratum.profile
    state.advance_tf_sets(stratum)
    v = tf_solve(TfProblem(state.cone, l, h), state.settings.tf, state.settings.tf.horizon)
    head_set = state.tf_head_prediction(h.head if h.head is not None else PhgSeries.zero(Variable.X), v, stratum.order)
    term = QuasimodeTerm(sp.expand(stratum.power - 2), stratum.logpower, Face.TF, l, v)
    state.emit(term)
    state.advance_tf_heads(stratum, head_set)

    r = state.forcing.grid
    _, c1, c2 = state.settings.outer_cutoff.inverted_derivatives(r)
    head = v.head.prune(state._tolerance(v))
    for (power, logpower), S in sigma_rewrite_series(head, Variable.R, SigmaRelation.PRODUCT).items():
        s, s1, _ = S.derivatives(r)
        second = c2 * s + 2.0 * c1 * s1 + (d - 1) / r * c1 * s
        zero = PhgSeries.zero(Variable.RHO)
        base = term.sigma_power + power
        state.insert(Stratum(Face.ZF, base, stratum.logpower + logpower, ModeProfile(r, second, l, "r", zero)))
        state.insert(Stratum(Face.ZF, base + 1, stratum.logpower + logpower, ModeProfile(r, 2j * c1 * s, l, "r", zero)))

    if not op.is_free:
        x = v.grid
        for (power, logpower), s_m in sigma_rewrite_series(op.tail, Variable.X, SigmaRelation.QUOTIENT).items():
            values = -s_m.evaluate(x) * v.values
            v_head = -(s_m.multiply(head))
            v_tail = -(flip_variable(s_m, Variable.RHO_HAT).multiply(v.tail))
            profile = ModeProfile(x, values, l, "rhat", v_tail, v_head)
            state.insert(Stratum(Face.TF, term.sigma_power + power, stratum.logpower + logpower, profile))
    return term


# ============================================================================
# Iteration
# ============================================================================

def _next_stratum(state: QuasimodeState, top: float) -> Optional[Stratum]:
    band = [s for s in state.pending.values() if s.order < top - ORDER_TOLERANCE]
    if not band:
        return None
    # transition-face strata first: their zero-face residue may land at the same order
    return min(band, key=lambda s: (s.order, s.face is Face.ZF, s.logpower))


def run_round(state: QuasimodeState) -> RoundRecord:
    """Solve every pending stratum below a + ε, a the lowest order and ε ≤ 1 the gap to the next level"""
    start = min(s.order for s in state.pending.values())
    levels = sorted({round(s.order, 9) for s in state.pending.values() if s.order > start + ORDER_TOLERANCE})
    epsilon = min(1.0, levels[0] - start) if levels else 1.0
    top = start + epsilon
    record = RoundRecord(len(state.rounds) + 1, start, epsilon, start)
    logger.info(f"🚀 round {record.index}: solving strata of order [{start:g}, {top:g})")

    for _ in range(MAX_STEPS_PER_ROUND):
        stratum = _next_stratum(state, top)
        if stratum is None:
            break
        del state.pending[stratum.key]
        step = zf_step if stratum.face is Face.ZF else tf_step
        term = step(state, stratum)
        record.solved.append((stratum.face.value, str(stratum.power), stratum.logpower))
        logger.debug(f"emitted {term.face.value} term σ^{term.sigma_power} (log σ)^{term.sigma_logpower}")
    else:
        raise InvariantViolation(f"round {record.index} did not clear its band in {MAX_STEPS_PER_ROUND} solves")

    state.check_containment()
    record.achieved = state.achieved_order
    if record.achieved <= start + ORDER_TOLERANCE:
        raise InvariantViolation(f"round {record.index} did not raise the residual order above {start:g}")
    state.rounds.append(record)
    logger.info(f"✅ round {record.index}: residual order {record.achieved:g} (ε = {epsilon:g})")
    return record


def iterate(
    operator: RadialOperator,
    l: int,
    forcing: ModeProfile,
    target_order: Optional[float] = None,
    settings: Optional[DriverSettings] = None,
) -> QuasimodeState:
    """
    Alternate zero-energy and transition-face solves until the residual order reaches the target

    At least one round runs. Round orders strictly increase.

    Raises:
        StagnationError: the residual order gains less than the stagnation
            threshold for several rounds in a row
        InvariantViolation: an audit fails or an emitted term leaves the predicted index sets
        PositivityError: a transition-face step reaches the zero face at a nonpositive order
    """
    settings = settings or DriverSettings()
    if target_order is not None and target_order != settings.target_order:
        settings = DriverSettings(
            settings.zf,
            settings.tf,
            settings.inner_cutoff,
            settings.outer_cutoff,
            target_order,
            settings.coefficient_tol,
            settings.stagnation_gain,
            settings.stagnation_rounds,
            settings.audit,
        )
    state = QuasimodeState.create(operator, l, forcing, settings)
    logger.info(f"📋 mode {l}: iterating to order {settings.target_order:g} with {len(state.pending)} forcing strata")

    slow = 0
    while state.pending:
        if state.rounds and state.achieved_order >= settings.target_order - ORDER_TOLERANCE:
            break
        if state.forcing_order <= state.achieved_order and state.rounds:
            break
        record = run_round(state)
        gain = record.achieved - record.start
        slow = slow + 1 if gain < settings.stagnation_gain else 0
        if slow >= settings.stagnation_rounds:
            raise StagnationError(
                f"residual order stuck near {record.achieved:g} for {slow} rounds; pending strata: "
                + ", ".join(f"{s.face.value}({s.power},{s.logpower})" for s in state.pending.values())
            )
    logger.info(f"✅ mode {l}: {len(state.terms)} terms, residual order {state.achieved_order:g}")
    return state


# ============================================================================
# Evaluation
# ============================================================================

def evaluate(state: QuasimodeState, sigma: float, r) -> np.ndarray:
    """
    Σ σ^α (log σ)^κ χ₀(rσ)w(r) + Σ σ^p (log σ)^κ χ₁(1/r)v(rσ) at points r

    Raises:
        OutOfHullError: a profile is needed outside its grid and series
    """
    if not sigma > 0:
        raise ValueError(f"σ must be positive, got {sigma}")
    if sigma > state.settings.sigma_exact:
        logger.warning(f"σ={sigma:g} exceeds {state.settings.sigma_exact:g}; the cutoff bookkeeping is not exact there")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.zeros(r.shape, dtype=complex)
    chi0 = state.settings.inner_cutoff(sigma * r)
    chi1 = state.settings.outer_cutoff.inverted(r)
    for term in state.terms:
        if term.face is Face.ZF:
            mask = chi0 > 0
            if np.any(mask):
                out[mask] += term.sigma_factor(sigma) * chi0[mask] * term.profile.evaluate(r[mask])
        else:
            mask = chi1 > 0
            if np.any(mask):
                out[mask] += term.sigma_factor(sigma) * chi1[mask] * term.profile.evaluate(sigma * r[mask])
    return out


def conjugated_operator_apply(
    operator: RadialOperator, l: int, sigma: float, r: np.ndarray, u: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    P(σ)u on a geometric grid by fourth-order differences in log r

    Returns:
        (interior points, values) with two points dropped at each end
    """
    if sigma < 0:
        raise ValueError(f"σ must be >= 0, got {sigma}")
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=complex)
    if len(r) < 5 or r.shape != u.shape:
        raise ValueError("need matching arrays of at least five points")
    dt = log_step(r)
    u_t = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * dt)
    u_tt = (-u[:-4] + 16 * u[1:-3] - 30 * u[2:-2] + 16 * u[3:-1] - u[4:]) / (12 * dt**2)
    rc, uc = r[2:-2], u[2:-2]
    u_r = u_t / rc
    u_rr = (u_tt - u_t) / rc**2
    d = operator.cone.d
    lam = float(operator.cone.mode(l).eigenvalue)
    values = (
        -u_rr
        - (d - 1) / rc * u_r
        + (lam / rc**2 + operator.potential_values(rc)) * uc
        - 2j * sigma * u_r
        - 1j * sigma * (d - 1) / rc * uc
    )
    return rc, values


def residual_norm(state: QuasimodeState, sigma: float, weight: float = 0.0) -> float:
    """Weighted sup of P(σ)u - e^{-iσr}f over the zero-energy grid"""
    r = state.forcing.grid
    rc, Pu = conjugated_operator_apply(state.operator, state.l, sigma, r, evaluate(state, sigma, r))
    target = np.exp(-1j * sigma * rc) * state.forcing.values[2:-2]
    w = (1.0 + rc**2) ** (-weight / 2)
    return float(np.max(w * np.abs(Pu - target)))


def manifest_text(state: QuasimodeState) -> str:
    """Plain-text run manifest: operator, horizons, per-round orders and face index sets"""
    s = state.settings
    lines = [
        f"d = {state.cone.d}",
        f"mode = {state.l}",
        f"potential = {state.operator.potential}",
        f"potential_cutoff = {state.operator.potential_cutoff:g}",
        f"beth = {state.operator.beth:g}",
        f"zf_horizon = {s.zf.horizon:g}",
        f"tf_horizon = {s.tf.horizon:g}",
        f"inner_cutoff = {s.inner_cutoff.lo:g}, {s.inner_cutoff.hi:g}",
        f"outer_cutoff = {s.outer_cutoff.lo:g}, {s.outer_cutoff.hi:g}",
        f"target_order = {s.target_order:g}",
        f"achieved_order = {state.achieved_order:g}",
        "",
    ]
    for record in state.rounds:
        lines.append(
            f"round {record.index}: start {record.start:g} epsilon {record.epsilon:g} "
            f"achieved {record.achieved:g} solves {len(record.solved)}"
        )
    lines.append("")
    for face, index_set in state.face_sets().items():
        lines.append(f"{face.value}: {index_set.to_text().strip()}")
    return "\n".join(lines) + "\n"
