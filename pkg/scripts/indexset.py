"""
Index set calculus
Exact (exponent, log-power) bookkeeping for polyhomogeneous expansions on the
three faces of the resolved low-energy space: the uplus operation, shifts,
truncations and the fixed-point recursions that predict which terms appear.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import sympy as sp

from scripts.errors import InsufficientModesError, InvariantViolation, PositivityError

logger = logging.getLogger(__name__)

Number = Union[int, float, complex, Fraction, str, sp.Basic]
Order = Union[int, float]  # symmetry-breaking orders: naturals or math.inf

REAL_TOLERANCE = 1e-12


def exponent(value: Number) -> sp.Expr:
    """
    Convert a number to an exact exponent

    Floats are read through their shortest decimal representation, so 0.1
    becomes 1/10. Complex inputs become a + b*I.

    Args:
        value: int, float, complex, Fraction, numeric string or sympy number

    Returns:
        Canonical (expanded) sympy expression
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not exponents")
    if isinstance(value, sp.Basic):
        return sp.expand(value)
    if isinstance(value, int):
        return sp.Integer(value)
    if isinstance(value, Fraction):
        return sp.Rational(value.numerator, value.denominator)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"exponent must be finite, got {value}")
        return sp.Rational(repr(value))
    if isinstance(value, complex):
        return sp.expand(exponent(value.real) + sp.I * exponent(value.imag))
    if isinstance(value, str):
        try:
            return sp.Rational(value.strip())
        except (TypeError, ValueError):
            return sp.expand(sp.nsimplify(sp.sympify(value), rational=True))
    raise TypeError(f"cannot interpret {value!r} as an exponent")


@lru_cache(maxsize=None)
def re_part(value: sp.Expr) -> float:
    """Real part of an exact exponent as a float"""
    return float(sp.re(value))


@lru_cache(maxsize=None)
def im_part(value: sp.Expr) -> float:
    """Imaginary part of an exact exponent as a float"""
    return float(sp.im(value))


@lru_cache(maxsize=None)
def as_complex(value: sp.Expr) -> complex:
    """Numeric value of an exact exponent"""
    return complex(sp.N(value, 17))


def order_shift(order: Order) -> Optional[sp.Expr]:
    """
    Exact value of 1 + order, or None for an infinite order

    Args:
        order: natural number or math.inf

    Returns:
        sympy exponent, None when the shift empties the set
    """
    if order == math.inf:
        return None
    if isinstance(order, float) and not order.is_integer():
        raise ValueError(f"symmetry-breaking orders must be natural numbers or inf, got {order}")
    if order < 0:
        raise ValueError(f"symmetry-breaking orders must be nonnegative, got {order}")
    return sp.Integer(1 + int(order))


def order_min(*orders: Optional[sp.Expr]) -> Optional[sp.Expr]:
    """Minimum of exact shifts, None standing for +infinity"""
    finite = [o for o in orders if o is not None]
    if not finite:
        return None
    return min(finite, key=re_part)


# ============================================================================
# Index terms and sets
# ============================================================================

@dataclass(frozen=True)
class IndexTerm:
    """Data class representing one (exponent, log-power) pair"""

    exponent: sp.Expr
    logpower: int = 0

    def __post_init__(self):
        if self.logpower < 0:
            raise ValueError(f"logpower must be >= 0, got {self.logpower}")
        object.__setattr__(self, "exponent", exponent(self.exponent))

    @property
    def real(self) -> float:
        return re_part(self.exponent)

    def sort_key(self) -> Tuple[float, float, int]:
        return (self.real, im_part(self.exponent), self.logpower)

    def to_text(self) -> str:
        return f"{self.real:.12g} {im_part(self.exponent):.12g} {self.logpower}"

    def __repr__(self) -> str:
        return f"({self.exponent}, {self.logpower})"


class IndexSetKind(Enum):
    """Closure level of an index set"""

    PRE = "pre-index-set"
    INDEX = "index-set"


TermLike = Union[IndexTerm, Tuple[Number, int]]


def _as_term(item: TermLike) -> IndexTerm:
    if isinstance(item, IndexTerm):
        return item
    j, k = item
    return IndexTerm(exponent(j), int(k))


def _close(terms: Iterable[IndexTerm], horizon: float, kind: IndexSetKind) -> FrozenSet[IndexTerm]:
    kept = {t for t in terms if t.real <= horizon + REAL_TOLERANCE}
    closed = set()
    for t in kept:
        for k in range(t.logpower + 1):
            closed.add(IndexTerm(t.exponent, k))
    if kind is IndexSetKind.INDEX and closed:
        if horizon == math.inf:
            raise ValueError("integer-shift closure needs a finite horizon")
        shifted = set()
        for t in closed:
            n = 1
            while t.real + n <= horizon + REAL_TOLERANCE:
                shifted.add(IndexTerm(t.exponent + n, t.logpower))
                n += 1
        closed |= shifted
    return frozenset(closed)


@dataclass(frozen=True)
class IndexSet:
    """
    Finite truncated set of (exponent, log-power) pairs

    Everything with real exponent above the horizon is unrepresented. The
    terms are normalized on construction: truncated at the horizon, closed
    downward in log power and, for INDEX kind, closed under exponent + 1 up
    to the horizon.
    """

    terms: FrozenSet[IndexTerm] = frozenset()
    horizon: float = math.inf
    kind: IndexSetKind = IndexSetKind.PRE

    def __post_init__(self):
        object.__setattr__(self, "horizon", float(self.horizon))
        normalized = _close((_as_term(t) for t in self.terms), self.horizon, self.kind)
        object.__setattr__(self, "terms", normalized)

    @classmethod
    def of(
        cls,
        items: Iterable[TermLike] = (),
        horizon: float = math.inf,
        kind: IndexSetKind = IndexSetKind.PRE,
    ) -> "IndexSet":
        """Build a set from (exponent, logpower) pairs"""
        return cls(frozenset(_as_term(t) for t in items), horizon, kind)

    @classmethod
    def empty(cls, horizon: float = math.inf, kind: IndexSetKind = IndexSetKind.PRE) -> "IndexSet":
        return cls(frozenset(), horizon, kind)

    @classmethod
    def _raw(cls, terms: Iterable[IndexTerm], horizon: float, kind: IndexSetKind) -> "IndexSet":
        # Bypass normalization for sets that are already closed.
        obj = cls.__new__(cls)
        object.__setattr__(obj, "terms", frozenset(terms))
        object.__setattr__(obj, "horizon", float(horizon))
        object.__setattr__(obj, "kind", kind)
        return obj

    def __iter__(self) -> Iterator[IndexTerm]:
        return iter(self.sorted())

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, item: TermLike) -> bool:
        return _as_term(item) in self.terms

    def __eq__(self, other) -> bool:
        if isinstance(other, IndexSet):
            return self.terms == other.terms
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.terms)

    def __or__(self, other: "IndexSet") -> "IndexSet":
        return self.union(other)

    def __repr__(self) -> str:
        body = ", ".join(repr(t) for t in self.sorted())
        return f"IndexSet({{{body}}}, horizon={self.horizon:g}, kind={self.kind.name})"

    def sorted(self) -> List[IndexTerm]:
        return sorted(self.terms, key=IndexTerm.sort_key)

    def pairs(self) -> List[Tuple[sp.Expr, int]]:
        return [(t.exponent, t.logpower) for t in self.sorted()]

    def exponents(self) -> List[sp.Expr]:
        """Distinct exponents in ascending real part"""
        seen: Dict[sp.Expr, None] = {}
        for t in self.sorted():
            seen.setdefault(t.exponent, None)
        return list(seen)

    def max_logpower(self, j: sp.Expr) -> int:
        """Largest k with (j, k) in the set, -1 if j is absent"""
        return max((t.logpower for t in self.terms if t.exponent == j), default=-1)

    def union(self, *others: "IndexSet") -> "IndexSet":
        """Union; horizon is the smallest horizon, kind INDEX only if all are"""
        sets = (self,) + others
        horizon = min(s.horizon for s in sets)
        kind = IndexSetKind.INDEX if all(s.kind is IndexSetKind.INDEX for s in sets) else IndexSetKind.PRE
        merged = frozenset().union(*(s.terms for s in sets))
        return IndexSet(merged, horizon, kind)

    def issubset(self, other: "IndexSet") -> bool:
        return self.terms <= other.terms

    def with_horizon(self, horizon: float) -> "IndexSet":
        return IndexSet(self.terms, horizon, self.kind)

    def as_kind(self, kind: IndexSetKind, horizon: Optional[float] = None) -> "IndexSet":
        return IndexSet(self.terms, self.horizon if horizon is None else horizon, kind)

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        return {
            "horizon": self.horizon,
            "kind": self.kind.value,
            "terms": [[t.real, im_part(t.exponent), t.logpower] for t in self.sorted()],
        }

    def to_text(self) -> str:
        """Sorted lines 'Re(j) Im(j) k'"""
        return "\n".join(t.to_text() for t in self.sorted()) + ("\n" if self.terms else "")

    @classmethod
    def from_text(
        cls, text: str, horizon: float = math.inf, kind: IndexSetKind = IndexSetKind.PRE
    ) -> "IndexSet":
        """Parse the output of to_text (exponents become exact decimals)"""
        items = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            re_s, im_s, k_s = line.split()
            items.append((exponent(re_s) + sp.I * exponent(im_s), int(k_s)))
        return cls.of(items, horizon, kind)


# ============================================================================
# Elementary operations
# ============================================================================

def is_pre_index_set(terms: Iterable[TermLike]) -> bool:
    """True iff the finite set is closed downward in log power"""
    pool = {_as_term(t) for t in terms}
    return all(IndexTerm(t.exponent, t.logpower - 1) in pool for t in pool if t.logpower > 0)


def pi_min(E: Union[IndexSet, Iterable[TermLike]]) -> float:
    """Smallest real exponent, +inf for the empty set"""
    terms = E.terms if isinstance(E, IndexSet) else [_as_term(t) for t in E]
    return min((t.real for t in terms), default=math.inf)


def uplus(j: Number, k: int, E: IndexSet) -> IndexSet:
    """
    Merge the term (j, k) into E, creating the logs forced by resonance

    Returns {(j, 0..k)} ∪ E ∪ {(j+δ, k'+κ+1) : (j, κ) ∈ E, δ ∈ ℕ, k' ≤ k},
    truncated at E's horizon and closed downward in log power.
    """
    j = exponent(j)
    new = set(E.terms)
    new.update(IndexTerm(j, kk) for kk in range(k + 1))
    kappa = E.max_logpower(j)
    if kappa >= 0:
        if E.horizon == math.inf:
            raise ValueError(f"resonant uplus at {j} needs a finite horizon")
        delta = 0
        while re_part(j) + delta <= E.horizon + REAL_TOLERANCE:
            for kk in range(k + 1):
                new.add(IndexTerm(j + delta, kk + kappa + 1))
            delta += 1
    return IndexSet(frozenset(new), E.horizon, E.kind)


def shift(E: IndexSet, gamma: Number, kappa: int = 0) -> IndexSet:
    """
    The set E + (γ, κ) = {(j+γ, k+ϰ) : (j,k) ∈ E, 0 ≤ ϰ ≤ κ}

    The horizon moves with the shift, since terms beyond the old horizon were
    never represented.
    """
    gamma = exponent(gamma)
    horizon = E.horizon + re_part(gamma)
    terms = {
        IndexTerm(t.exponent + gamma, t.logpower + extra)
        for t in E.terms
        for extra in range(kappa + 1)
    }
    return IndexSet(frozenset(terms), horizon, E.kind)


def shift_by_order(E: IndexSet, amount: Optional[sp.Expr]) -> IndexSet:
    """Shift by an exact amount; None (an infinite order) gives the empty set"""
    if amount is None:
        return IndexSet.empty(E.horizon, E.kind)
    return shift(E, amount, 0).with_horizon(E.horizon)


class Side(Enum):
    """Which part truncate keeps"""

    BELOW = "below"
    AT_OR_ABOVE = "at-or-above"


def truncate(E: IndexSet, alpha: float, side: Union[Side, str] = Side.BELOW) -> IndexSet:
    """
    Split E at real part alpha

    Args:
        E: index set
        alpha: threshold (must not exceed the horizon)
        side: BELOW keeps Re j < alpha, AT_OR_ABOVE keeps the complement

    Returns:
        The kept part
    """
    side = Side(side) if isinstance(side, str) else side
    if alpha > E.horizon + REAL_TOLERANCE:
        raise ValueError(f"threshold {alpha} exceeds horizon {E.horizon}")
    if side is Side.BELOW:
        kept = [t for t in E.terms if t.real < alpha - REAL_TOLERANCE]
        return IndexSet._raw(kept, alpha, E.kind)
    kept = [t for t in E.terms if t.real >= alpha - REAL_TOLERANCE]
    return IndexSet._raw(kept, E.horizon, E.kind)


# ============================================================================
# Cone data
# ============================================================================

def indicial_roots(d: int, lam: Number) -> Tuple[sp.Expr, sp.Expr]:
    """
    Indicial roots of the conic Laplacian on one boundary harmonic

    Roots of -a² + (d-2)a + λ, returned as (b, c) with -b the negative root
    and c the positive one; r^b and r^(-c) solve the homogeneous equation.
    """
    if d < 3:
        raise ValueError(f"dimension must be >= 3, got {d}")
    lam = exponent(lam)
    if re_part(lam) < 0:
        raise ValueError(f"eigenvalue must be >= 0, got {lam}")
    root = sp.sqrt((d - 2) ** 2 + 4 * lam)
    b = sp.expand((-(d - 2) + root) / 2)
    c = sp.expand(((d - 2) + root) / 2)
    return b, c


@dataclass(frozen=True)
class ModeData:
    """Data class representing one boundary harmonic"""

    l: int
    eigenvalue: sp.Expr
    b: sp.Expr
    c: sp.Expr

    @property
    def nu(self) -> sp.Expr:
        """Bessel order of the transition-face model"""
        return sp.expand(self.c - (self.c - self.b) / 2)

    def to_dict(self) -> Dict:
        return {"l": self.l, "lambda": float(self.eigenvalue), "b": float(self.b), "c": float(self.c)}


@dataclass(frozen=True)
class ConeData:
    """Dimension and link eigenvalues of an exact cone"""

    d: int
    eigenvalues: Tuple[sp.Expr, ...]
    modes: Tuple[ModeData, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 3:
            raise ValueError(f"dimension must be >= 3, got {self.d}")
        lams = tuple(exponent(lam) for lam in self.eigenvalues)
        if not lams:
            raise ValueError("at least one eigenvalue is required")
        if any(re_part(lam) < 0 for lam in lams):
            raise ValueError("eigenvalues must be nonnegative")
        if any(re_part(a) > re_part(b) for a, b in zip(lams, lams[1:])):
            raise ValueError("eigenvalues must be nondecreasing")
        object.__setattr__(self, "eigenvalues", lams)
        modes = tuple(ModeData(l, lam, *indicial_roots(self.d, lam)) for l, lam in enumerate(lams))
        object.__setattr__(self, "modes", modes)

    @classmethod
    def sphere(cls, d: int, l_max: int) -> "ConeData":
        """Cone over the round sphere: λ_l = l(l+d-2)"""
        return cls(d, tuple(sp.Integer(l * (l + d - 2)) for l in range(l_max + 1)))

    def mode(self, l: int) -> ModeData:
        return self.modes[l]

    def to_dict(self) -> Dict:
        return {"d": self.d, "modes": [m.to_dict() for m in self.modes]}


def _modes_up_to(cone: ConeData, ell: int, horizon: float, root: str) -> List[sp.Expr]:
    # Roots of all modes l >= ell with Re(root) <= horizon; the listed modes
    # must reach past the horizon to certify nothing is missing.
    if horizon == math.inf:
        raise InsufficientModesError(f"cannot certify {root}-roots up to an infinite horizon")
    roots = []
    for mode in cone.modes[ell:]:
        value = getattr(mode, root)
        if re_part(value) > horizon + REAL_TOLERANCE:
            return roots
        roots.append(value)
    raise InsufficientModesError(
        f"mode list ends at l={len(cone.modes) - 1} with {root}_l <= horizon {horizon:g}; "
        f"add modes until {root}_l exceeds the horizon"
    )


def c_uplus(cone: ConeData, ell: int, E: IndexSet) -> IndexSet:
    """𝓒_ℓ ⊎ E = ∪_{l ≥ ℓ} (c_l, 0) ⊎ E, truncated at E's horizon"""
    result = E
    for c in _modes_up_to(cone, ell, E.horizon, "c"):
        result = result | uplus(c, 0, E)
    return result


def b_ge(cone: ConeData, ell: int, G: IndexSet) -> IndexSet:
    """ℬ≥ℓ[G]: smallest index set containing (b_l, 0) ⊎ G for every l ≥ ℓ"""
    pieces = [uplus(b, 0, G) for b in _modes_up_to(cone, ell, G.horizon, "b")]
    merged = frozenset().union(G.terms, *(p.terms for p in pieces))
    return IndexSet(merged, G.horizon, IndexSetKind.INDEX)


# ============================================================================
# Zero-energy fixed point
# ============================================================================

def _pad(sets: Sequence[IndexSet], n: int, horizon: float) -> List[IndexSet]:
    out = [s.as_kind(IndexSetKind.INDEX, min(s.horizon, horizon)) for s in sets[:n]]
    out += [IndexSet.empty(horizon, IndexSetKind.INDEX) for _ in range(n - len(out))]
    return out


def zf_iteration_bound(cone: ConeData, E_union: IndexSet, beth: Order, alpha: float) -> int:
    """
    Number of recursion steps after which the part below alpha is final

    With m = min(d-2, Π E_∪) this is 0 when alpha <= m, else
    floor((alpha-m)/(1+ℶ)) + 1 (and 1 when ℶ is infinite).
    """
    m = min(cone.d - 2, pi_min(E_union))
    if alpha <= m:
        return 0
    if beth == math.inf:
        return 1
    return int(math.floor((alpha - m) / (1 + beth))) + 1


def fixed_point_zf_iterates(
    cone: ConeData,
    ell: int,
    E: IndexSet,
    E_l: Sequence[IndexSet],
    beth: Order,
    beth0: Order,
    horizon: float,
) -> Iterator[Tuple[IndexSet, List[IndexSet]]]:
    """Yield (𝓘^(k), [𝓘_l^(k)]) for k = 0, 1, 2, ... (infinite)"""
    if beth > beth0:
        raise ValueError(f"need ℶ <= ℶ₀, got {beth} > {beth0}")
    h = min(horizon, E.horizon, *(s.horizon for s in E_l)) if E_l else min(horizon, E.horizon)
    shift_tail = order_shift(beth)
    shift_cross = order_shift(beth0)
    current = E.as_kind(IndexSetKind.INDEX, h)
    per_mode = _pad(E_l, ell, h)
    sources = [s for s in per_mode]
    c_roots = [cone.mode(l).c for l in range(ell)]
    while True:
        yield current, per_mode
        union_all = current.union(*per_mode) if per_mode else current
        cross = shift_by_order(union_all, shift_cross)
        nxt = current | c_uplus(cone, ell, E.as_kind(IndexSetKind.INDEX, h) | cross | shift_by_order(current, shift_tail))
        nxt_modes = [
            I_l | uplus(c_roots[l], 0, sources[l] | cross | shift_by_order(I_l, shift_tail))
            for l, I_l in enumerate(per_mode)
        ]
        current, per_mode = nxt, nxt_modes


def fixed_point_zf(
    cone: ConeData,
    ell: int,
    E: IndexSet,
    E_l: Sequence[IndexSet],
    beth: Order,
    beth0: Order,
    horizon: float,
) -> Tuple[IndexSet, List[IndexSet]]:
    """
    Least fixed point of the zero-energy index-set recursion

    Args:
        cone: cone data (modes must reach past the horizon)
        ell: number of separately tracked low modes
        E: forcing index set for the modes l >= ell
        E_l: forcing index sets for the modes l < ell
        beth: symmetry-breaking order within a harmonic block
        beth0: symmetry-breaking order across blocks (>= beth)
        horizon: truncation horizon

    Returns:
        (𝓘, [𝓘_l for l < ell]) as index sets

    Raises:
        InvariantViolation: recursion did not stabilize within its bound
    """
    E_union = E.union(*E_l) if E_l else E
    cap = zf_iteration_bound(cone, E_union, beth, horizon) + 1
    previous = None
    for step, (current, per_mode) in enumerate(fixed_point_zf_iterates(cone, ell, E, E_l, beth, beth0, horizon)):
        state = (current, tuple(per_mode))
        if previous is not None and state == previous:
            logger.debug(f"zf index recursion stable after {step - 1} updates")
            return current, list(per_mode)
        if step > cap:
            raise InvariantViolation(
                f"zf index recursion still changing after {cap} updates (horizon {horizon:g})"
            )
        previous = state
    raise AssertionError("unreachable")


def nested_union_zf(cone: ConeData, ell: int, E: IndexSet, beth: Order, horizon: float) -> IndexSet:
    """
    Closed form of 𝓘 when ℶ₀ is infinite

    𝓘 = ∪_n A_n with A_0 = 𝓒_ℓ ⊎ E and A_{n+1} = 𝓒_ℓ ⊎ (1+ℶ+A_n).
    """
    h = min(horizon, E.horizon)
    base = E.as_kind(IndexSetKind.INDEX, h)
    layer = c_uplus(cone, ell, base)
    total = layer
    step = order_shift(beth)
    while step is not None and layer.terms:
        layer = c_uplus(cone, ell, shift_by_order(layer, step))
        merged = total | layer
        if merged == total:
            break
        total = merged
    return total


# ============================================================================
# Step rules of the iteration
# ============================================================================

@dataclass(frozen=True)
class SymmetryOrders:
    """Data class representing the orders (ℶ, ℶ₀, ℶ₁, ℶ₂, ℶ₃, ℶ₄)"""

    beth: Order = math.inf
    beth0: Order = math.inf
    beth1: Order = math.inf
    beth2: Order = math.inf
    beth3: Order = math.inf
    beth4: Order = math.inf

    def __post_init__(self):
        if self.beth > self.beth0:
            raise ValueError(f"need ℶ <= ℶ₀, got {self.beth} > {self.beth0}")

    @classmethod
    def from_sequence(cls, values: Sequence[Order]) -> "SymmetryOrders":
        padded = list(values) + [math.inf] * (6 - len(values))
        return cls(*padded[:6])

    def to_dict(self) -> Dict:
        return {name: getattr(self, name) for name in ("beth", "beth0", "beth1", "beth2", "beth3", "beth4")}


def _order_plus(offset: int, order: Order) -> Optional[sp.Expr]:
    if order == math.inf:
        return None
    return sp.Integer(offset + int(order))


def bf_step_sets(cone: ConeData, E: IndexSet, orders: SymmetryOrders) -> Tuple[IndexSet, IndexSet]:
    """
    Index sets at the far face after one transition step

    Returns:
        (𝓔⁺, 𝓔⁺⁺) with 𝓔⁺ = ((d-1)/2, 0) ⊎ 𝓔 and 𝓔⁺⁺ = 𝓔 ∪ (a + 𝓔⁺) ∪ (a₀ + 𝓔⁺),
        a = (2+ℶ)∧(1+ℶ₁)∧(1+ℶ₃), a₀ = (2+ℶ₀)∧(1+ℶ₂)∧(1+ℶ₄)
    """
    E_plus = uplus(sp.Rational(cone.d - 1, 2), 0, E)
    a = order_min(_order_plus(2, orders.beth), _order_plus(1, orders.beth1), _order_plus(1, orders.beth3))
    a0 = order_min(_order_plus(2, orders.beth0), _order_plus(1, orders.beth2), _order_plus(1, orders.beth4))
    E_plus_plus = E | shift_by_order(E_plus, a) | shift_by_order(E_plus, a0)
    return E_plus, E_plus_plus


def zf_step_sets(
    cone: ConeData,
    F: IndexSet,
    F_l: Sequence[IndexSet],
    I: IndexSet,
    I_l: Sequence[IndexSet],
    orders: SymmetryOrders,
) -> Tuple[IndexSet, List[IndexSet]]:
    """Zero-face index sets after a zf step: (𝓘⁺, [𝓘_l⁺])"""
    I_union = I.union(*I_l) if I_l else I
    cross = shift_by_order(I_union, order_shift(orders.beth0))
    mixed = order_min(_order_plus(1, orders.beth2), _order_plus(1, orders.beth4))
    I_plus = F | I | cross | shift_by_order(I_union, mixed)
    I_l_plus = [F_l[l] | I_l[l] | cross for l in range(len(I_l))]
    return I_plus, I_l_plus


@dataclass(frozen=True)
class TfStepSets:
    """Data class representing the index sets produced by a transition step"""

    zf: IndexSet
    zf_modes: Tuple[IndexSet, ...]
    tf: IndexSet
    tf_modes: Tuple[IndexSet, ...]
    bf_update: Callable[[IndexSet], Tuple[IndexSet, IndexSet]]

    def to_dict(self) -> Dict:
        return {
            "zf": self.zf.to_dict(),
            "zf_modes": [s.to_dict() for s in self.zf_modes],
            "tf": self.tf.to_dict(),
            "tf_modes": [s.to_dict() for s in self.tf_modes],
        }


def _check_positive(F: IndexSet, label: str) -> None:
    for t in F.sorted():
        if t.real <= 0:
            raise PositivityError(f"{label} contains {t!r} with nonpositive real part")


def tf_step_sets(
    cone: ConeData,
    ell: int,
    F: IndexSet,
    F_l: Sequence[IndexSet],
    K: float,
    K_l: Sequence[float],
    orders: SymmetryOrders,
    horizon: Optional[float] = None,
) -> TfStepSets:
    """
    Index sets produced by solving the transition-face model

    Args:
        cone: cone data
        ell: number of separately tracked low modes
        F: transition-face residual index set (modes >= ell)
        F_l: per-mode residual index sets (modes < ell)
        K: remainder threshold for F
        K_l: per-mode thresholds
        orders: symmetry-breaking orders
        horizon: zero-face horizon for 𝓚 (defaults to F's horizon)

    Returns:
        TfStepSets with 𝓚, 𝓚_l, 𝓕⁺, 𝓕_l⁺ and the far-face update rule

    Raises:
        PositivityError: F has a term with Re <= 0, or min Π𝓚 <= 0
    """
    h = F.horizon if horizon is None else horizon
    F_l = list(F_l) + [IndexSet.empty(F.horizon) for _ in range(ell - len(F_l))]
    K_l = list(K_l) + [K] * (ell - len(K_l))
    _check_positive(F, "𝓕")
    for l, s in enumerate(F_l):
        _check_positive(s, f"𝓕_{l}")

    zf_set = IndexSet.empty(h, IndexSetKind.INDEX)
    for j in F.exponents():
        if re_part(j) > K + REAL_TOLERANCE:
            continue
        k_j = F.max_logpower(j)
        local_h = h - re_part(j)
        G = IndexSet.of([(1 - j, k) for k in range(k_j + 1)], local_h, IndexSetKind.INDEX)
        zf_set = zf_set | shift(b_ge(cone, ell, G), j).with_horizon(h)

    zf_modes = []
    for l, F_mode in enumerate(F_l):
        acc = IndexSet.empty(h, IndexSetKind.INDEX)
        for j in F_mode.exponents():
            if re_part(j) > K_l[l] + REAL_TOLERANCE:
                continue
            k_j = F_mode.max_logpower(j)
            base = IndexSet.of([(1, k) for k in range(k_j + 1)], h, IndexSetKind.INDEX)
            acc = acc | uplus(cone.mode(l).b + j, 0, base)
        zf_modes.append(acc)

    for label, s in [("𝓚", zf_set)] + [(f"𝓚_{l}", s) for l, s in enumerate(zf_modes)]:
        if s.terms and pi_min(s) <= 0:
            worst = min(s.terms, key=IndexTerm.sort_key)
            raise PositivityError(f"{label} has nonpositive term {worst!r}")

    same = order_min(_order_plus(1, orders.beth), _order_plus(1, orders.beth1), _order_plus(1, orders.beth3))
    cross = order_min(_order_plus(1, orders.beth0), _order_plus(1, orders.beth2), _order_plus(1, orders.beth4))
    F_union = F.union(*F_l) if F_l else F
    F_plus = (
        truncate(F, min(K, F.horizon), Side.AT_OR_ABOVE)
        | shift_by_order(F, same)
        | shift_by_order(F_union, cross)
    )
    F_l_plus = tuple(
        truncate(F_mode, min(K_l[l], F_mode.horizon), Side.AT_OR_ABOVE) | shift_by_order(F_mode, same)
        for l, F_mode in enumerate(F_l)
    )

    def bf_update(E: IndexSet) -> Tuple[IndexSet, IndexSet]:
        return bf_step_sets(cone, E, orders)

    return TfStepSets(zf_set, tuple(zf_modes), F_plus, F_l_plus, bf_update)
