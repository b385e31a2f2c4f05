"""
Zero-energy solver
Per-harmonic inversion of the cone Laplacian (plus a radial short-range
potential) at zero energy: exact on polyhomogeneous tails, by variation of
parameters on a geometric radial grid.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config import Config
from scripts.errors import DivergenceError, ForcingTooStrongError, QuadratureError, StagnationError
from scripts.indexset import ConeData, ModeData, as_complex
from scripts.mode_profile import ModeProfile
from scripts.phg_series import PhgSeries, SeriesOperator, Variable, poly
from scripts.utils import SmoothCutoff, cumulative_log_integral, geometric_grid, log_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NumericSettings:
    """Grid and iteration settings of the zero-energy solver"""

    grid_points: int = Config.GRID_POINTS
    r_min: float = Config.GRID_R_MIN
    r_max: float = Config.GRID_R_MAX
    tail_radius: float = Config.TAIL_RADIUS
    horizon: float = Config.SERIES_HORIZON
    tolerance: float = Config.TOLERANCE
    max_iter: int = Config.NEUMANN_MAX_ITER
    tail_tolerance: float = 1e-6

    @classmethod
    def from_config(cls, numerics=None) -> "NumericSettings":
        """Build from a RunConfig [numerics] block, or from Config defaults"""
        if numerics is None:
            return cls()
        return cls(
            grid_points=numerics.grid_points,
            r_min=numerics.r_min,
            r_max=numerics.r_max,
            tail_radius=numerics.tail_radius,
            horizon=numerics.horizon,
            tolerance=numerics.tolerance,
            max_iter=numerics.neumann_max_iter,
        )

    def grid(self) -> np.ndarray:
        return geometric_grid(self.r_min, self.r_max, self.grid_points)


def mode_operator(cone: ConeData, l: int, multiplier: Optional[PhgSeries] = None) -> SeriesOperator:
    """ρ²(-D² + (d-2)D + λ_l) in ρ = 1/r, D = ρ∂ρ, plus an optional potential tail"""
    lam = cone.mode(l).eigenvalue
    return SeriesOperator(((2, poly(lam, cone.d - 2, -1)),), Variable.RHO, multiplier)


def green_apply_exact(cone: ConeData, l: int, g: PhgSeries, order: Optional[float] = None) -> PhgSeries:
    """
    Particular solution of L_l u = g on tails

    The output carries no pure (c_l, 0) term; resonant forcing at c_l + 2
    produces one extra log instead.

    Args:
        cone: cone data
        l: harmonic index
        g: forcing tail in ρ
        order: optional cap on the error order of u

    Returns:
        Exact series u with L_l u - g = 0 up to its error order

    Raises:
        ForcingTooStrongError: pi_min(g) <= 2
    """
    if g.variable is not Variable.RHO:
        raise ValueError(f"zero-energy tails live in ρ, got {g.variable.value}")
    if g.pi_min() <= 2:
        raise ForcingTooStrongError(f"forcing tail starts at ρ^{g.pi_min():g}; need decay faster than ρ^2")
    return mode_operator(cone, l).solve(g, order)


# ============================================================================
# Numeric Green operator
# ============================================================================

def _head_integral(m: complex, k: int, R: float) -> complex:
    # ∫_0^R s^m (log s)^k dlog s, Re m > 0
    L = math.log(R)
    total = sum((-1) ** i * factorial(k) / factorial(k - i) * L ** (k - i) / m ** (i + 1) for i in range(k + 1))
    return complex(np.exp(m * L) * total)


def _tail_integral(m: complex, k: int, R: float) -> complex:
    # ∫_R^∞ s^(-m) (log s)^k dlog s, Re m > 0
    L = math.log(R)
    total = sum(factorial(k) / factorial(k - i) * L ** (k - i) / m ** (i + 1) for i in range(k + 1))
    return complex(np.exp(-m * L) * total)


def _inner_remainder(mode: ModeData, d: int, g: ModeProfile) -> complex:
    """∫_0^{r_min} s^{d+b} g dlog s from the head series (or g ≈ g(r_min))"""
    r0 = g.grid[0]
    b = as_complex(mode.b)
    if g.head is None or g.head.is_zero():
        logger.debug(f"no head series for mode {mode.l}, inner remainder from g(r_min) = {g.values[0]:.3g}")
        return g.values[0] * r0 ** (d + b.real) / (d + b.real)
    total = 0j
    for t in g.head.terms:
        total += t.coeff * _head_integral(d + b + as_complex(t.exponent), t.logpower, r0)
    return total


def _outer_remainder(mode: ModeData, d: int, g: ModeProfile) -> complex:
    """∫_{R}^∞ s^{d-c} g dlog s from the tail series"""
    if g.tail is None or g.tail.is_zero():
        return 0j
    R = g.grid[-1]
    c = as_complex(mode.c)
    total = 0j
    for t in g.tail.terms:
        # ρ^j (log ρ)^k = s^-j (-log s)^k
        m = as_complex(t.exponent) + c - d
        total += t.coeff * (-1) ** t.logpower * _tail_integral(m, t.logpower, R)
    return total


def green_apply_numeric(
    cone: ConeData,
    l: int,
    g: ModeProfile,
    settings: Optional[NumericSettings] = None,
    order: Optional[float] = None,
) -> ModeProfile:
    """
    Decaying solution of L_l u = g by variation of parameters

    u(r) = (r^-c ∫_0^r s^(d-1+b) g ds + r^b ∫_r^∞ s^(d-1-c) g ds) / (b + c),
    integrated in log r with cumulative Simpson sums. The pieces outside the
    grid come from the head and tail series in closed form. The tail of u is
    green_apply_exact(g.tail) plus C ρ^c with C matched at the tail radius.

    Raises:
        ForcingTooStrongError: the tail of g decays too slowly
        QuadratureError: the integrals are not finite
        TailMismatchError: samples and the fitted tail disagree beyond the tail radius
    """
    settings = settings or NumericSettings()
    mode = cone.mode(l)
    d = cone.d
    b, c = as_complex(mode.b).real, as_complex(mode.c).real
    r = g.grid
    dt = log_step(r)

    tail_g = g.tail if g.tail is not None else PhgSeries.zero(Variable.RHO)
    horizon = settings.horizon if order is None else order
    particular = green_apply_exact(cone, l, tail_g, horizon) if not tail_g.is_zero() else PhgSeries.zero(Variable.RHO, horizon)

    inner = cumulative_log_integral(r ** (d + b) * g.values, dt) + _inner_remainder(mode, d, g)
    outer = cumulative_log_integral(r ** (d - c) * g.values, dt, reverse=True) + _outer_remainder(mode, d, g)
    if not (np.all(np.isfinite(inner)) and np.all(np.isfinite(outer))):
        raise QuadratureError(f"non-finite Green integrals for mode {l}")

    values = (r ** (-c) * inner + r**b * outer) / (b + c)
    slopes = (-c * r ** (-c - 1) * inner + b * r ** (b - 1) * outer) / (b + c)

    tail = _matched_tail(r, values, particular, mode, settings.tail_radius, particular.error_order)
    profile = ModeProfile(r, values, l, "r", tail, None, slopes)
    profile.check_tail(settings.tail_radius, settings.tail_tolerance)
    logger.debug(f"mode {l}: Green solve on {len(r)} nodes, tail {tail!r}")
    return profile


def _matched_tail(
    r: np.ndarray,
    values: np.ndarray,
    particular: PhgSeries,
    mode: ModeData,
    tail_radius: float,
    order: float,
    homogeneous: Optional[PhgSeries] = None,
) -> PhgSeries:
    """particular + C·h with C fixed by the sample nearest the tail radius"""
    i = int(np.argmin(np.abs(np.log(r / tail_radius))))
    rho = 1.0 / r[i]
    h = homogeneous if homogeneous is not None else PhgSeries.monomial(mode.c, 0, 1.0, Variable.RHO)
    C = (values[i] - complex(particular.evaluate(rho))) / complex(h.evaluate(rho))
    return (particular + h.scale(C)).truncate(order)


def monopole_coefficient(profile: ModeProfile, cone: ConeData) -> complex:
    """Coefficient of the leading decaying homogeneous term ρ^c in the tail"""
    if profile.tail is None:
        raise ValueError("profile has no tail")
    return profile.tail.coefficient(cone.mode(profile.mode).c, 0)


# ============================================================================
# Perturbed problem
# ============================================================================

@dataclass(frozen=True)
class RadialOperator:
    """
    Cone Laplacian plus a radial potential V

    V(r) = (1 - χ(r / r_c)) V_T(1/r), with V_T = Σ coeff ρ^exponent (log ρ)^logpower.
    The potential is real and short range (exponents >= 3).
    """

    cone: ConeData
    potential: Tuple[Tuple[float, float, int], ...] = ()
    potential_cutoff: float = 1.0
    cutoff: SmoothCutoff = field(default_factory=SmoothCutoff)

    def __post_init__(self):
        terms = tuple((float(c), e, int(k)) for c, e, k in self.potential)
        object.__setattr__(self, "potential", terms)
        if self.potential_cutoff <= 0:
            raise ValueError("potential cutoff radius must be positive")
        if not self.tail.is_zero() and self.tail.pi_min() < 3:
            raise ValueError(f"potential must be short range (pi_min >= 3), got {self.tail.pi_min():g}")

    @cached_property
    def tail(self) -> PhgSeries:
        return PhgSeries.build([(e, k, c) for c, e, k in self.potential], math.inf, Variable.RHO)

    @property
    def beth(self) -> float:
        """Order by which V improves decay beyond ρ^3 (inf for V = 0)"""
        return self.tail.pi_min() - 3

    @property
    def is_free(self) -> bool:
        return self.tail.is_zero()

    def mode_operator(self, l: int) -> SeriesOperator:
        return mode_operator(self.cone, l, None if self.is_free else self.tail)

    def potential_values(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.is_free:
            return np.zeros(r.shape)
        return (1.0 - self.cutoff(r / self.potential_cutoff)) * self.tail.evaluate(1.0 / r).real

    def apply(self, u: ModeProfile) -> ModeProfile:
        """(L_l + V)u on the grid from spline derivatives"""
        r = u.grid
        lam = float(self.cone.mode(u.mode).eigenvalue)
        v, d1, d2 = u.derivatives(r)
        values = -d2 - (self.cone.d - 1) / r * d1 + lam / r**2 * v + self.potential_values(r) * v
        tail = None if u.tail is None else self.mode_operator(u.mode).apply(u.tail)
        return ModeProfile(r, values, u.mode, "r", tail)

    def to_dict(self) -> Dict:
        return {
            "potential": [list(t) for t in self.potential],
            "potential_cutoff": self.potential_cutoff,
            "beth": self.beth,
        }


def solve_perturbed(
    op: RadialOperator,
    l: int,
    f: ModeProfile,
    alpha_max: float,
    settings: Optional[NumericSettings] = None,
) -> ModeProfile:
    """
    Solve (L_l + V)u = f by the Neumann iteration u ← G(f - V u)

    Each pass improves the known part of the tail by 1 + ℶ orders. The final
    tail is the exact particular solution of the perturbed tail operator plus
    a multiple of its decaying homogeneous solution.

    Args:
        op: operator with potential
        l: harmonic index
        f: forcing profile with a ρ tail
        alpha_max: order the tail is resolved to
        settings: grid and iteration settings

    Raises:
        DivergenceError: the iteration grows (reports the estimated spectral radius)
        StagnationError: no convergence within the iteration limit
    """
    settings = settings or NumericSettings()
    u = green_apply_numeric(op.cone, l, f, settings, alpha_max)
    if op.is_free:
        return u

    V = op.potential_values(f.grid)
    V_tail = op.tail
    f_tail = f.tail if f.tail is not None else PhgSeries.zero(Variable.RHO)
    scale = max(u.max_abs(), 1e-300)
    deltas = []
    growth = 0
    for iteration in range(1, settings.max_iter + 1):
        rhs_tail = (f_tail - V_tail * u.tail).truncate(alpha_max + 2)
        rhs = ModeProfile(f.grid, f.values - V * u.values, l, "r", rhs_tail)
        nxt = green_apply_numeric(op.cone, l, rhs, settings, alpha_max)
        delta = float(np.max(np.abs(nxt.values - u.values)))
        scale = max(nxt.max_abs(), 1e-300)
        ratio = delta / deltas[-1] if deltas and deltas[-1] > 0 else float("nan")
        logger.debug(f"Neumann pass {iteration}: δ={delta:.3e}, ratio={ratio:.3g}")
        growth = growth + 1 if deltas and delta > deltas[-1] else 0
        deltas.append(delta)
        u = nxt
        if not math.isfinite(delta) or delta > 1e12 * scale or growth >= 3:
            raise DivergenceError(
                f"Neumann iteration for mode {l} diverges (spectral radius ≈ {ratio:.3g})",
                spectral_radius=ratio,
            )
        if delta < settings.tolerance * scale:
            logger.info(f"✅ mode {l}: Neumann iteration converged in {iteration} passes")
            break
    else:
        raise StagnationError(
            f"Neumann iteration for mode {l} stalled at δ={deltas[-1]:.3e} after {settings.max_iter} passes"
        )

    tail_op = op.mode_operator(l)
    particular = tail_op.solve(f_tail, alpha_max) if not f_tail.is_zero() else PhgSeries.zero(Variable.RHO, alpha_max)
    homogeneous = tail_op.homogeneous(op.cone.mode(l).c, alpha_max)
    tail = _matched_tail(u.grid, u.values, particular, op.cone.mode(l), settings.tail_radius, alpha_max, homogeneous)
    return ModeProfile(u.grid, u.values, l, "r", tail, None, u.slopes)


def solve_modes(
    op: RadialOperator,
    forcings: Sequence[ModeProfile],
    alpha_max: float,
    settings: Optional[NumericSettings] = None,
) -> Dict[int, ModeProfile]:
    """Solve each harmonic independently (radial V does not couple modes)"""
    return {f.mode: solve_perturbed(op, f.mode, f, alpha_max, settings) for f in forcings}
