"""
Polyhomogeneous series
Finite sums Σ a_{j,k} x^j (log x)^k with exact exponents, complex coefficients
and a declared error order, plus the Frobenius solver for b-differential
operators Σ x^s p(x∂x) that all symbolic tails are built with.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from math import comb
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from scripts.indexset import IndexSet, IndexSetKind, IndexTerm, as_complex, exponent, im_part, re_part
from scripts.utils import power_log

logger = logging.getLogger(__name__)

Scalar = Union[int, float, complex]
Key = Tuple[sp.Expr, int]

ORDER_TOLERANCE = 1e-12


class Variable(Enum):
    """Variable a series is expanded in"""

    RHO = "rho"  # 1/r, large r
    R = "r"  # r, small r
    X = "x"  # r̂ = rσ, small r̂
    RHO_HAT = "rho_hat"  # 1/r̂, large r̂

    @property
    def reciprocal(self) -> bool:
        return self in (Variable.RHO, Variable.RHO_HAT)


class PhgTerm(NamedTuple):
    exponent: sp.Expr
    logpower: int
    coeff: complex


def _sort_key(key: Key) -> Tuple[float, float, int]:
    return (re_part(key[0]), im_part(key[0]), key[1])


@dataclass(frozen=True)
class PhgSeries:
    """
    Exact finite polyhomogeneous series

    Represents a function modulo O(x^error_order (log x)^*). Keys are unique,
    zero coefficients are pruned and every term lies below the error order.
    """

    terms: Tuple[PhgTerm, ...] = ()
    error_order: float = math.inf
    variable: Variable = Variable.RHO

    @classmethod
    def build(
        cls,
        items: Union[Dict[Key, complex], Iterable[Tuple]],
        error_order: float = math.inf,
        variable: Variable = Variable.RHO,
    ) -> "PhgSeries":
        """
        Build a series, merging duplicate keys

        Args:
            items: mapping (exponent, logpower) -> coeff, or (exponent, logpower, coeff) triples
            error_order: order of the omitted remainder
            variable: expansion variable
        """
        merged: Dict[Key, complex] = {}
        pairs = items.items() if isinstance(items, dict) else (((j, k), c) for j, k, c in items)
        for (j, k), c in pairs:
            key = (exponent(j), int(k))
            if key[1] < 0:
                raise ValueError(f"negative log power in {key}")
            merged[key] = merged.get(key, 0j) + complex(c)
        kept = [
            PhgTerm(j, k, c)
            for (j, k), c in sorted(merged.items(), key=lambda kv: _sort_key(kv[0]))
            if c != 0 and re_part(j) < error_order - ORDER_TOLERANCE
        ]
        return cls(tuple(kept), float(error_order), variable)

    @classmethod
    def zero(cls, variable: Variable = Variable.RHO, error_order: float = math.inf) -> "PhgSeries":
        return cls((), float(error_order), variable)

    @classmethod
    def monomial(
        cls,
        j,
        k: int = 0,
        coeff: Scalar = 1.0,
        variable: Variable = Variable.RHO,
        error_order: float = math.inf,
    ) -> "PhgSeries":
        return cls.build({(j, k): coeff}, error_order, variable)

    # ------------------------------------------------------------------
    # inspection

    def as_dict(self) -> Dict[Key, complex]:
        return {(t.exponent, t.logpower): t.coeff for t in self.terms}

    def coefficient(self, j, k: int = 0) -> complex:
        return self.as_dict().get((exponent(j), k), 0j)

    def is_zero(self) -> bool:
        return not self.terms

    def pi_min(self) -> float:
        return min((re_part(t.exponent) for t in self.terms), default=math.inf)

    def max_abs_coeff(self) -> float:
        return max((abs(t.coeff) for t in self.terms), default=0.0)

    def index_set(self, tol: float = 0.0) -> IndexSet:
        """Pre-index set of terms with |coeff| > tol, horizon at the error order"""
        items = [IndexTerm(t.exponent, t.logpower) for t in self.terms if abs(t.coeff) > tol]
        return IndexSet(frozenset(items), self.error_order, IndexSetKind.PRE)

    def leading(self) -> Optional[PhgTerm]:
        """Term of smallest exponent and largest log power there"""
        if not self.terms:
            return None
        first = self.terms[0].exponent
        return [t for t in self.terms if t.exponent == first][-1]

    # ------------------------------------------------------------------
    # algebra

    def _check(self, other: "PhgSeries") -> None:
        if self.variable is not other.variable:
            raise ValueError(f"variable mismatch: {self.variable.value} vs {other.variable.value}")

    def __add__(self, other: "PhgSeries") -> "PhgSeries":
        self._check(other)
        merged = self.as_dict()
        for t in other.terms:
            key = (t.exponent, t.logpower)
            merged[key] = merged.get(key, 0j) + t.coeff
        return PhgSeries.build(merged, min(self.error_order, other.error_order), self.variable)

    def __neg__(self) -> "PhgSeries":
        return self.scale(-1.0)

    def __sub__(self, other: "PhgSeries") -> "PhgSeries":
        return self + (-other)

    def scale(self, c: Scalar) -> "PhgSeries":
        if c == 0:
            return PhgSeries.zero(self.variable, self.error_order)
        return PhgSeries(tuple(PhgTerm(t.exponent, t.logpower, t.coeff * c) for t in self.terms), self.error_order, self.variable)

    def __mul__(self, other: Union["PhgSeries", Scalar]) -> "PhgSeries":
        if isinstance(other, PhgSeries):
            return self.multiply(other)
        return self.scale(other)

    __rmul__ = __mul__

    def multiply(self, other: "PhgSeries") -> "PhgSeries":
        """Product; error order min(e1 + Π(s2), e2 + Π(s1))"""
        self._check(other)
        error = min(self.error_order + other.pi_min(), other.error_order + self.pi_min())
        out: Dict[Key, complex] = {}
        for a in self.terms:
            for b in other.terms:
                key = (sp.expand(a.exponent + b.exponent), a.logpower + b.logpower)
                out[key] = out.get(key, 0j) + a.coeff * b.coeff
        return PhgSeries.build(out, error, self.variable)

    def times_power(self, gamma, kappa: int = 0) -> "PhgSeries":
        """Multiply by x^γ (log x)^κ"""
        gamma = exponent(gamma)
        return PhgSeries.build(
            [(t.exponent + gamma, t.logpower + kappa, t.coeff) for t in self.terms],
            self.error_order + re_part(gamma),
            self.variable,
        )

    def truncate(self, order: float) -> "PhgSeries":
        return PhgSeries.build(self.as_dict(), min(order, self.error_order), self.variable)

    def with_error_order(self, order: float) -> "PhgSeries":
        return PhgSeries.build(self.as_dict(), order, self.variable)

    def prune(self, tol: float) -> "PhgSeries":
        """Drop terms with |coeff| <= tol"""
        return PhgSeries(tuple(t for t in self.terms if abs(t.coeff) > tol), self.error_order, self.variable)

    def b_derivative(self) -> "PhgSeries":
        """x∂x applied termwise: x∂x(x^j L^k) = j x^j L^k + k x^j L^(k-1)"""
        out: Dict[Key, complex] = {}
        for t in self.terms:
            key = (t.exponent, t.logpower)
            out[key] = out.get(key, 0j) + as_complex(t.exponent) * t.coeff
            if t.logpower:
                low = (t.exponent, t.logpower - 1)
                out[low] = out.get(low, 0j) + t.logpower * t.coeff
        return PhgSeries.build(out, self.error_order, self.variable)

    def radial_derivative(self) -> "PhgSeries":
        """Derivative in the radial coordinate (r or r̂) whatever the variable"""
        if self.variable.reciprocal:
            return -self.b_derivative().times_power(1)
        return self.b_derivative().times_power(-1)

    # ------------------------------------------------------------------
    # numerics

    def evaluate(self, x) -> np.ndarray:
        """Values of the series at points x > 0 of its own variable"""
        return self.derivatives(x)[0]

    def derivatives(self, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value and first two derivatives in the series variable"""
        x = np.asarray(x, dtype=float)
        value = np.zeros(x.shape, dtype=complex)
        first = np.zeros(x.shape, dtype=complex)
        second = np.zeros(x.shape, dtype=complex)
        for t in self.terms:
            v, d1, d2 = power_log(as_complex(t.exponent), t.logpower, x)
            value += t.coeff * v
            first += t.coeff * d1
            second += t.coeff * d2
        return value, first, second

    # ------------------------------------------------------------------
    # persistence

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        return {
            "variable": self.variable.value,
            "error_order": self.error_order,
            "terms": [
                [re_part(t.exponent), im_part(t.exponent), t.logpower, t.coeff.real, t.coeff.imag]
                for t in self.terms
            ],
        }

    def to_text(self) -> str:
        """Header '# variable error_order' then lines 'Re(j) Im(j) k Re(a) Im(a)'"""
        lines = [f"# {self.variable.value} {self.error_order:.12g}"]
        for t in self.terms:
            lines.append(
                f"{re_part(t.exponent):.12g} {im_part(t.exponent):.12g} {t.logpower} "
                f"{t.coeff.real:.17g} {t.coeff.imag:.17g}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PhgSeries":
        """Parse to_text output; exponents come back as exact decimals"""
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("series text must start with '# variable error_order'")
        _, var, err = lines[0].split()
        items = []
        for line in lines[1:]:
            re_s, im_s, k_s, cr, ci = line.split()
            items.append((exponent(re_s) + sp.I * exponent(im_s), int(k_s), complex(float(cr), float(ci))))
        return cls.build(items, float(err), Variable(var))

    def __repr__(self) -> str:
        body = " + ".join(f"({t.coeff:.6g})x^{t.exponent}L^{t.logpower}" for t in self.terms[:6])
        more = " + …" if len(self.terms) > 6 else ""
        return f"PhgSeries[{self.variable.value}]({body or '0'}{more}; O({self.error_order:g}))"


# ============================================================================
# Derivative operators
# ============================================================================

class Derivative(Enum):
    """Elementary operators acting on series"""

    B = "b"  # x∂x in the series variable
    DR = "d_r"
    DR2 = "d_r2"
    MULTIPLY = "multiply"


def apply_b_derivative(op: Derivative, s: PhgSeries, gamma=0, kappa: int = 0) -> PhgSeries:
    """
    Apply a derivative or power multiplication termwise

    Args:
        op: which operator
        s: series
        gamma: power for MULTIPLY
        kappa: log power for MULTIPLY

    Returns:
        Exact result series
    """
    if op is Derivative.B:
        return s.b_derivative()
    if op is Derivative.DR:
        return s.radial_derivative()
    if op is Derivative.DR2:
        return s.radial_derivative().radial_derivative()
    if op is Derivative.MULTIPLY:
        return s.times_power(gamma, kappa)
    raise ValueError(f"unknown operator {op}")


# ============================================================================
# Frobenius solver
# ============================================================================

Poly = Tuple[sp.Expr, ...]  # coefficients c_0, c_1, ... of p(D) = Σ c_n D^n


def poly(*coeffs) -> Poly:
    return tuple(exponent(c) for c in coeffs)


@lru_cache(maxsize=None)
def _derivative_exact(p: Poly, s: sp.Expr, i: int) -> sp.Expr:
    total = sp.Integer(0)
    for n, c in enumerate(p):
        if n >= i:
            total += c * sp.ff(n, i) * s ** (n - i)
    return sp.expand(total)


@lru_cache(maxsize=None)
def poly_derivative(p: Poly, s: sp.Expr, i: int) -> complex:
    """p^(i)(s) as a complex number"""
    return as_complex(_derivative_exact(p, s, i))


@lru_cache(maxsize=None)
def root_multiplicity(p: Poly, s: sp.Expr) -> int:
    """Multiplicity of s as an exact root of p"""
    m = 0
    while m < len(p) and _derivative_exact(p, s, m) == 0:
        m += 1
    if m >= len(p):
        raise ValueError("indicial polynomial vanishes identically")
    return m


def solve_indicial(p: Poly, s: sp.Expr, rhs: Dict[int, complex]) -> Dict[int, complex]:
    """
    Solve p(D)(x^s Σ a_k L^k) = x^s Σ g_k L^k for the a_k

    At a root of multiplicity m the log power rises by m; the a_k with k < m
    are set to zero (no homogeneous admixture).
    """
    if not rhs:
        return {}
    top_rhs = max(rhs)
    m = root_multiplicity(p, s)
    top = top_rhs + m
    a: Dict[int, complex] = {}
    for n in range(top_rhs, -1, -1):
        acc = complex(rhs.get(n, 0j))
        for k in range(n + m + 1, top + 1):
            acc -= comb(k, k - n) * poly_derivative(p, s, k - n) * a.get(k, 0j)
        a[n + m] = acc / (comb(n + m, m) * poly_derivative(p, s, m))
    return {k: v for k, v in a.items() if v != 0}


@dataclass(frozen=True)
class SeriesOperator:
    """
    b-differential operator Σ_m x^{shift_m} p_m(x∂x) + (multiplication by a series)

    The part with the smallest shift is the indicial part; every other part
    and the multiplier must raise the order strictly.
    """

    parts: Tuple[Tuple[sp.Expr, Poly], ...]
    variable: Variable = Variable.RHO
    multiplier: Optional[PhgSeries] = None

    def __post_init__(self):
        parts = tuple(sorted(((exponent(s), tuple(exponent(c) for c in p)) for s, p in self.parts), key=lambda sp_: re_part(sp_[0])))
        if not parts:
            raise ValueError("operator needs at least one part")
        object.__setattr__(self, "parts", parts)
        lead = re_part(parts[0][0])
        if any(re_part(s) <= lead for s, _ in parts[1:]):
            raise ValueError("non-leading parts must have strictly larger shifts")
        if self.multiplier is not None:
            if self.multiplier.variable is not self.variable:
                raise ValueError("multiplier variable mismatch")
            if not self.multiplier.is_zero() and self.multiplier.pi_min() <= lead:
                raise ValueError(
                    f"multiplier order {self.multiplier.pi_min():g} must exceed the leading shift {lead:g}"
                )

    @property
    def leading_shift(self) -> sp.Expr:
        return self.parts[0][0]

    @property
    def indicial(self) -> Poly:
        return self.parts[0][1]

    def with_multiplier(self, multiplier: Optional[PhgSeries]) -> "SeriesOperator":
        return SeriesOperator(self.parts, self.variable, multiplier)

    def _apply_parts(self, u: PhgSeries, parts) -> Dict[Key, complex]:
        out: Dict[Key, complex] = {}
        for t in u.terms:
            for shift, p in parts:
                j = sp.expand(t.exponent + shift)
                for i in range(t.logpower + 1):
                    value = poly_derivative(p, t.exponent, i)
                    if value == 0:
                        continue
                    key = (j, t.logpower - i)
                    out[key] = out.get(key, 0j) + comb(t.logpower, i) * value * t.coeff
        return out

    def apply(self, u: PhgSeries) -> PhgSeries:
        """Exact application; error order u.error + leading shift (and multiplier bound)"""
        if u.variable is not self.variable:
            raise ValueError(f"variable mismatch: {u.variable.value} vs {self.variable.value}")
        error = u.error_order + re_part(self.leading_shift)
        out = self._apply_parts(u, self.parts)
        result = PhgSeries.build(out, error, self.variable)
        if self.multiplier is not None and not self.multiplier.is_zero():
            result = result + self.multiplier.multiply(u)
        return result

    def _apply_subleading(self, u: PhgSeries) -> PhgSeries:
        out = self._apply_parts(u, self.parts[1:])
        result = PhgSeries.build(out, math.inf, self.variable)
        if self.multiplier is not None and not self.multiplier.is_zero():
            result = result + self.multiplier.multiply(u)
        return result

    def solve(self, f: PhgSeries, order: Optional[float] = None) -> PhgSeries:
        """
        Particular solution of A u = f by Frobenius recursion

        Exponent groups of the residual are cleared from the bottom up; each
        group is solved against the indicial polynomial (creating logs at its
        roots) and the subleading parts push corrections to higher exponents.

        Args:
            f: right-hand side
            order: optional cap on the error order of u

        Returns:
            u with error order f.error - leading shift (capped)
        """
        if f.variable is not self.variable:
            raise ValueError(f"variable mismatch: {f.variable.value} vs {self.variable.value}")
        s0 = self.leading_shift
        lead = re_part(s0)
        residual_error = f.error_order
        if order is not None:
            residual_error = min(residual_error, order + lead)
        if self.multiplier is not None and not self.multiplier.is_zero():
            residual_error = min(residual_error, self.multiplier.error_order + f.pi_min() - lead)

        residual: Dict[Key, complex] = dict(f.truncate(residual_error).as_dict())
        solution: Dict[Key, complex] = {}
        steps = 0
        while True:
            live = [key for key, c in residual.items() if c != 0 and re_part(key[0]) < residual_error - ORDER_TOLERANCE]
            if not live:
                break
            e = min(live, key=_sort_key)[0]
            group = {k: residual.pop((j, k)) for (j, k) in list(residual) if j == e}
            s = sp.expand(e - s0)
            piece = solve_indicial(self.indicial, s, group)
            if not piece:
                continue
            piece_series = PhgSeries.build({(s, k): a for k, a in piece.items()}, math.inf, self.variable)
            for (j, k), a in piece_series.as_dict().items():
                solution[(j, k)] = solution.get((j, k), 0j) + a
            if self.multiplier is not None and math.isfinite(self.multiplier.error_order):
                residual_error = min(residual_error, self.multiplier.error_order + re_part(s))
            for t in self._apply_subleading(piece_series).terms:
                key = (t.exponent, t.logpower)
                residual[key] = residual.get(key, 0j) - t.coeff
            steps += 1
        logger.debug(f"Frobenius solve cleared {steps} exponent groups")
        return PhgSeries.build(solution, residual_error - lead, self.variable)

    def homogeneous(self, root, order: float) -> PhgSeries:
        """
        Solution of A u = 0 starting with x^root

        Args:
            root: exact root of the indicial polynomial
            order: error order of the returned series

        Returns:
            x^root + higher terms
        """
        root = exponent(root)
        if root_multiplicity(self.indicial, root) == 0:
            raise ValueError(f"{root} is not an indicial root")
        start = PhgSeries.monomial(root, 0, 1.0, self.variable)
        forcing = self._apply_subleading(start).truncate(order + re_part(self.leading_shift))
        return (start - self.solve(forcing, order)).truncate(order)


# ============================================================================
# Resonant integral and σ re-expansion
# ============================================================================

def resonant_integral(a, f: PhgSeries) -> PhgSeries:
    """
    Closed form of x^a ∫_x^1 s^(-a-1) f(s) ds

    Solves (x∂x - a)u = -f by Frobenius and adds C x^a so that u(1) = 0.
    A term of f at exponent a produces one extra log.
    """
    a = exponent(a)
    op = SeriesOperator(((0, poly(-a, 1)),), f.variable)
    u = op.solve(-f)
    constant = -sum(t.coeff for t in u.terms if t.logpower == 0)
    return u + PhgSeries.monomial(a, 0, constant, f.variable, u.error_order)


class SigmaRelation(Enum):
    """How the old variable factors through σ"""

    PRODUCT = "product"  # old = σ · new
    QUOTIENT = "quotient"  # old = σ / new


class SigmaTerm(NamedTuple):
    sigma_power: sp.Expr
    sigma_logpower: int
    exponent: sp.Expr
    logpower: int
    coeff: complex


def sigma_rewrite(j, k: int, coeff: Scalar = 1.0, relation: SigmaRelation = SigmaRelation.PRODUCT) -> List[SigmaTerm]:
    """
    Binomial re-expansion of ρ^j (log ρ)^k when ρ = σ·y or ρ = σ/y

    PRODUCT: Σ_κ C(k,κ) σ^j (log σ)^κ y^j (log y)^(k-κ)
    QUOTIENT: Σ_κ C(k,κ) σ^j (log σ)^κ y^(-j) (-log y)^(k-κ)
    """
    j = exponent(j)
    out = []
    for kappa in range(k + 1):
        c = comb(k, kappa) * complex(coeff)
        if relation is SigmaRelation.PRODUCT:
            out.append(SigmaTerm(j, kappa, j, k - kappa, c))
        else:
            out.append(SigmaTerm(j, kappa, sp.expand(-j), k - kappa, c * (-1) ** (k - kappa)))
    return out


def sigma_rewrite_series(
    s: PhgSeries, variable: Variable, relation: SigmaRelation = SigmaRelation.PRODUCT
) -> Dict[Tuple[sp.Expr, int], PhgSeries]:
    """
    Re-expand a whole series into σ strata

    Returns:
        (σ power, σ log power) -> exact series in the new variable. Strata with
        Re σ-power at or above s.error_order are not represented.
    """
    strata: Dict[Tuple[sp.Expr, int], Dict[Key, complex]] = {}
    for t in s.terms:
        for piece in sigma_rewrite(t.exponent, t.logpower, t.coeff, relation):
            bucket = strata.setdefault((piece.sigma_power, piece.sigma_logpower), {})
            key = (piece.exponent, piece.logpower)
            bucket[key] = bucket.get(key, 0j) + piece.coeff
    return {
        key: PhgSeries.build(items, math.inf, variable)
        for key, items in sorted(strata.items(), key=lambda kv: _sort_key(kv[0]))
    }


def oscillatory_tail_integral(g: PhgSeries, k: complex, R: float, max_terms: int = 16) -> complex:
    """
    ∫_R^∞ e^{ks} g(s) ds for a series g in a reciprocal variable, Re k = 0

    Integration by parts with the exact radial derivatives of g,

        -e^{kR} Σ_n (-1)^n g^(n)(R) / k^(n+1),

    summed until the terms stop decreasing.

    Raises:
        ValueError: g is not a decaying series in 1/s
    """
    if not g.variable.reciprocal:
        raise ValueError(f"need a series in a reciprocal variable, got {g.variable.value}")
    if g.is_zero():
        return 0j
    if g.pi_min() <= 0:
        raise ValueError(f"series does not decay (leading exponent {g.pi_min():g})")
    total = 0j
    previous = math.inf
    current = g
    for n in range(max_terms):
        term = (-1) ** n * complex(current.evaluate(1.0 / R)) / k ** (n + 1)
        if abs(term) >= previous:
            break
        total += term
        previous = abs(term)
        current = current.radial_derivative()
    return complex(-np.exp(k * R) * total)
