"""
Transition-face solver
The model operator in r̂ = rσ on one harmonic,

    L_l = -∂² - ((d-1)/r̂ + 2i)∂ + λ_l/r̂² - i(d-1)/r̂,

inverted with the Bessel kernels e^{-ir̂} r̂^{-(d-2)/2} {J_ν, H+_ν}, plus
extraction of leading asymptotic coefficients at r̂ → 0 and r̂ → ∞.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import sympy as sp

from config import Config
from scripts.bessel import BesselKind, bessel, bessel_derivative, hankel_leading_constant
from scripts.errors import AdmissibilityError, FitConditioningError, QuadratureError
from scripts.indexset import ConeData, IndexSet, IndexTerm, ModeData, as_complex, exponent
from scripts.mode_profile import ModeProfile
from scripts.phg_series import PhgSeries, SeriesOperator, Variable, oscillatory_tail_integral, poly
from scripts.utils import cumulative_log_integral, geometric_grid, log_step

logger = logging.getLogger(__name__)

GREEN_FACTOR = 1j * math.pi / 2  # inverse of the scaled Wronskian r̂^{d-1} W(J-branch, H-branch) = 2i/π


@dataclass(frozen=True)
class TfSettings:
    """Grid and matching settings of the transition-face solver"""

    grid_points: int = Config.TF_GRID_POINTS
    r_min: float = Config.TF_R_MIN
    r_max: float = Config.TF_R_MAX
    horizon: float = Config.SERIES_HORIZON
    head_radius: float = 1e-2
    tail_radius: float = 100.0
    tail_tolerance: float = 1e-6
    condition_limit: float = 1e12

    @classmethod
    def from_config(cls, numerics=None) -> "TfSettings":
        if numerics is None:
            return cls()
        return cls(
            grid_points=numerics.tf_grid_points,
            r_min=numerics.tf_r_min,
            r_max=numerics.tf_r_max,
            horizon=numerics.horizon,
            tail_radius=numerics.tf_r_max / 2,
        )

    def grid(self) -> np.ndarray:
        return geometric_grid(self.r_min, self.r_max, self.grid_points)


class KernelBranch(Enum):
    RECESSIVE = "recessive"  # regular at r̂ = 0
    OUTGOING = "outgoing"


@dataclass(frozen=True)
class TfProblem:
    """One harmonic of the transition-face model with an optional forcing in r̂"""

    cone: ConeData
    l: int
    forcing: Optional[ModeProfile] = None

    def __post_init__(self):
        if self.forcing is not None:
            if self.forcing.coordinate != "rhat":
                raise ValueError(f"transition-face forcing must be a profile in r̂, got '{self.forcing.coordinate}'")
            if self.forcing.mode != self.l:
                raise ValueError(f"forcing is mode {self.forcing.mode}, problem is mode {self.l}")

    @property
    def mode(self) -> ModeData:
        return self.cone.mode(self.l)

    @property
    def nu(self) -> float:
        return float(as_complex(self.mode.nu).real)

    @property
    def weight_power(self) -> float:
        return (self.cone.d - 2) / 2

    def with_forcing(self, forcing: ModeProfile) -> "TfProblem":
        return TfProblem(self.cone, self.l, forcing)


def far_operator(cone: ConeData, l: int) -> SeriesOperator:
    """L_l in ρ̂ = 1/r̂: ρ̂(2iD - i(d-1)) + ρ̂²(-D² + (d-2)D + λ)"""
    d, lam = cone.d, cone.mode(l).eigenvalue
    return SeriesOperator(((1, poly(-1j * (d - 1), 2j)), (2, poly(lam, d - 2, -1))), Variable.RHO_HAT)


def head_operator(cone: ConeData, l: int) -> SeriesOperator:
    """L_l in r̂: r̂^-2(-D² - (d-2)D + λ) + r̂^-1(-2iD - i(d-1))"""
    d, lam = cone.d, cone.mode(l).eigenvalue
    return SeriesOperator(((-2, poly(lam, -(d - 2), -1)), (-1, poly(-1j * (d - 1), -2j))), Variable.X)


# ============================================================================
# Kernels
# ============================================================================

def kernel_derivatives(problem: TfProblem, branch: KernelBranch, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Kernel k = e^{-ix} x^{-(d-2)/2} Z_ν(x) with k' and k''

    The second derivative is taken from L_l k = 0.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    kind = BesselKind.J if KernelBranch(branch) is KernelBranch.RECESSIVE else BesselKind.H_PLUS
    a = problem.weight_power
    d = problem.cone.d
    lam = float(problem.mode.eigenvalue)
    Z = bessel(kind, problem.nu, x)
    dZ = bessel_derivative(kind, problem.nu, x)
    envelope = np.exp(-1j * x) * x ** (-a)
    k = envelope * Z
    dk = envelope * (dZ - (1j + a / x) * Z)
    d2k = -((d - 1) / x + 2j) * dk + (lam / x**2 - 1j * (d - 1) / x) * k
    return k, dk, d2k


def tf_kernel(problem: TfProblem, branch: KernelBranch) -> Callable[[np.ndarray], np.ndarray]:
    """r̂ ↦ kernel value; recessive ~ r̂^{b_l} and outgoing ~ r̂^{-c_l} as r̂ → 0"""
    return lambda x: kernel_derivatives(problem, branch, x)[0]


def cutoff_commutator(d: int, x, chi_d1, chi_d2, u, du) -> np.ndarray:
    """[L_l, χ]u = -χ''u - 2χ'u' - ((d-1)/x + 2i)χ'u"""
    x = np.asarray(x, dtype=float)
    return -chi_d2 * u - 2.0 * chi_d1 * du - ((d - 1) / x + 2j) * chi_d1 * u


def tf_apply(problem: TfProblem, u: ModeProfile) -> ModeProfile:
    """L_l u on the grid from spline derivatives"""
    x = u.grid
    d = problem.cone.d
    lam = float(problem.mode.eigenvalue)
    v, d1, d2 = u.derivatives(x)
    values = -d2 - ((d - 1) / x + 2j) * d1 + (lam / x**2 - 1j * (d - 1) / x) * v
    return ModeProfile(x, values, u.mode, "rhat")


# ============================================================================
# Green operator
# ============================================================================

def _inner_remainder(problem: TfProblem, integrand: np.ndarray, forcing: ModeProfile) -> complex:
    # integrand ~ x^p near 0 with p = d + b + (leading head exponent)
    p = problem.cone.d + float(as_complex(problem.mode.b).real)
    if forcing.head is not None and not forcing.head.is_zero():
        p += forcing.head.pi_min()
    if p <= 0:
        raise AdmissibilityError(f"forcing head grows too fast at r̂ → 0 (integrand order {p:g})")
    return integrand[0] / p


def _outer_remainder(problem: TfProblem, forcing: ModeProfile, outgoing: PhgSeries) -> complex:
    """∫_R^∞ e^{2is} k_out(s) f(s) s^{d-1} ds from the outgoing series and the forcing tail"""
    tail = forcing.tail
    if tail is None or tail.is_zero():
        return 0j
    if tail.pi_min() <= 1:
        raise AdmissibilityError(f"forcing tail ρ̂^{tail.pi_min():g} decays too slowly for the outgoing inverse")
    # e^{2is} k_out = e^{2is} C ρ̂^{(d-1)/2}(1 + …) with H+_ν ~ C e^{is} s^{-1/2}
    kernel = outgoing.scale(hankel_leading_constant(problem.nu))
    g = kernel.multiply(tail).times_power(-(problem.cone.d - 1))
    return oscillatory_tail_integral(g, 2j, float(forcing.grid[-1]))


def _match(x: np.ndarray, values: np.ndarray, radius: float, particular: PhgSeries, homogeneous: PhgSeries, order: float) -> PhgSeries:
    i = int(np.argmin(np.abs(np.log(x / radius))))
    point = 1.0 / x[i] if particular.variable.reciprocal else x[i]
    A = (values[i] - complex(particular.evaluate(point))) / complex(homogeneous.evaluate(point))
    return (particular + homogeneous.scale(A)).truncate(order)


def tf_solve(problem: TfProblem, settings: Optional[TfSettings] = None, order: Optional[float] = None) -> ModeProfile:
    """
    Outgoing solution of L_l u = f, regular at r̂ = 0

    u = (iπ/2)[k_out(x) ∫_0^x e^{2is} k_rec f s^{d-1} ds + k_rec(x) ∫_x^∞ e^{2is} k_out f s^{d-1} ds]

    The head (r̂ → 0) is the Frobenius particular solution of the forcing head
    plus a multiple of the recessive series; the tail (r̂ → ∞) is the particular
    solution of the forcing tail plus a multiple of the outgoing series, both
    matched to the samples.

    Raises:
        AdmissibilityError: forcing outside the accepted decay orders
        QuadratureError: non-finite integrals
        TailMismatchError: tail series and samples disagree
    """
    if problem.forcing is None:
        raise ValueError("tf_solve needs a forcing profile")
    settings = settings or TfSettings()
    order = settings.horizon if order is None else order
    f = problem.forcing
    x = f.grid
    dt = log_step(x)
    d = problem.cone.d

    far_op = far_operator(problem.cone, problem.l)
    outgoing = far_op.homogeneous(sp.Rational(d - 1, 2), order)

    k_rec, dk_rec, _ = kernel_derivatives(problem, KernelBranch.RECESSIVE, x)
    k_out, dk_out, _ = kernel_derivatives(problem, KernelBranch.OUTGOING, x)
    weighted = np.exp(2j * x) * f.values * x**d

    inner_integrand = weighted * k_rec
    inner = cumulative_log_integral(inner_integrand, dt) + _inner_remainder(problem, inner_integrand, f)
    outer = cumulative_log_integral(weighted * k_out, dt, reverse=True) + _outer_remainder(problem, f, outgoing)
    if not (np.all(np.isfinite(inner)) and np.all(np.isfinite(outer))):
        raise QuadratureError(f"non-finite transition-face integrals for mode {problem.l}")

    values = GREEN_FACTOR * (k_out * inner + k_rec * outer)
    slopes = GREEN_FACTOR * (dk_out * inner + dk_rec * outer)

    head_op = head_operator(problem.cone, problem.l)
    f_head = f.head if f.head is not None else PhgSeries.zero(Variable.X)
    head_particular = head_op.solve(f_head, order) if not f_head.is_zero() else PhgSeries.zero(Variable.X, order)
    head = _match(x, values, settings.head_radius, head_particular, head_op.homogeneous(problem.mode.b, order), order)

    f_tail = f.tail if f.tail is not None else PhgSeries.zero(Variable.RHO_HAT)
    tail_particular = far_op.solve(f_tail, order) if not f_tail.is_zero() else PhgSeries.zero(Variable.RHO_HAT, order)
    tail = _match(x, values, settings.tail_radius, tail_particular, outgoing, order)

    profile = ModeProfile(x, values, problem.l, "rhat", tail, head, slopes)
    profile.check_tail(settings.tail_radius, settings.tail_tolerance)
    logger.debug(f"mode {problem.l}: transition-face solve on {len(x)} nodes")
    return profile


# ============================================================================
# Asymptotic fits
# ============================================================================

class End(Enum):
    ZERO = "zero"
    INFINITY = "infinity"


class FitTerm(NamedTuple):
    term: IndexTerm
    coeff: complex
    residual: float


def _window(profile: ModeProfile, end: End, decades: float) -> np.ndarray:
    x = profile.grid
    if end is End.ZERO:
        return x <= x[0] * 10**decades
    return x >= x[-1] / 10**decades


def _basis(term: IndexTerm, x: np.ndarray, end: End) -> np.ndarray:
    var = x if end is End.ZERO else 1.0 / x
    return var.astype(complex) ** as_complex(term.exponent) * np.log(var) ** term.logpower


def tf_asymptotic_fit(
    profile: ModeProfile,
    end: Union[End, str],
    candidates: Union[IndexSet, Iterable],
    decades: float = 1.0,
    max_terms: int = 3,
    condition_limit: float = 1e12,
) -> List[FitTerm]:
    """
    Least-squares fit of the leading candidate terms over one end of the grid

    At the zero end a term (j, k) means r̂^j (log r̂)^k, at the infinite end
    ρ̂^j (log ρ̂)^k. Rows are weighted by the inverse leading candidate so the
    fit is relative across the window; columns are normalized before the
    condition number is checked.

    Returns:
        (term, coefficient, relative fit residual) per candidate

    Raises:
        FitConditioningError: the candidates are numerically collinear on the window
    """
    end = End(end)
    terms = candidates.sorted() if isinstance(candidates, IndexSet) else sorted(
        (t if isinstance(t, IndexTerm) else IndexTerm(exponent(t[0]), int(t[1])) for t in candidates),
        key=IndexTerm.sort_key,
    )
    terms = terms[:max_terms]
    if not terms:
        raise ValueError("no candidate terms to fit")
    mask = _window(profile, end, decades)
    x = profile.grid[mask]
    y = profile.values[mask]

    A = np.column_stack([_basis(t, x, end) for t in terms])
    weights = 1.0 / np.abs(A[:, 0])
    Aw = A * weights[:, None]
    yw = y * weights
    norms = np.linalg.norm(Aw, axis=0)
    scaled = Aw / norms
    condition = np.linalg.cond(scaled)
    if not np.isfinite(condition) or condition > condition_limit:
        raise FitConditioningError(f"fit candidates {[t.to_text() for t in terms]} are collinear (condition {condition:.3g})")
    solution, *_ = np.linalg.lstsq(scaled, yw, rcond=None)
    coeffs = solution / norms
    scale = np.linalg.norm(yw)
    residual = float(np.linalg.norm(Aw @ coeffs - yw) / scale) if scale > 0 else 0.0
    logger.debug(f"{end.value} fit over {mask.sum()} nodes: residual {residual:.3g}, condition {condition:.3g}")
    return [FitTerm(t, complex(c), residual) for t, c in zip(terms, coeffs)]


def fit_exponent(profile: ModeProfile, end: Union[End, str], decades: float = 1.0) -> float:
    """Decay exponent from a log-log slope: u ~ r̂^j at zero, u ~ r̂^-j at infinity"""
    end = End(end)
    mask = _window(profile, end, decades)
    slope = np.polyfit(np.log(profile.grid[mask]), np.log(np.abs(profile.values[mask])), 1)[0]
    return float(slope if end is End.ZERO else -slope)
