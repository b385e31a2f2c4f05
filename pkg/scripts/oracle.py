"""
Limiting-resolvent oracle
Direct two-sided ODE solution of one radial mode of (Δ + V - σ² - i0)u = f with
the outgoing radiation condition, used to check the low-energy expansions.
Also hosts the log-phase experiment for a 1/r correction to the metric.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy import stats
from scipy.integrate import quad, solve_ivp
from scipy.special import gamma

from config import Config
from scripts.bessel import BesselKind, bessel, bessel_derivative
from scripts.errors import NumericFailure, PhaseUnwrapError, ResonanceError
from scripts.indexset import as_complex
from scripts.mode_profile import ModeProfile
from scripts.phg_series import PhgSeries, SeriesOperator, Variable, oscillatory_tail_integral, poly
from scripts.zf_solver import RadialOperator
from scripts.utils import cumulative_log_integral, geometric_grid, log_step, write_csv, write_text

logger = logging.getLogger(__name__)

MATCHING_PHASE = 20.0  # σ·R_max at the outgoing boundary
RADIANS_PER_STEP = 0.05
RESONANCE_LIMIT = 1e-8


@dataclass(frozen=True)
class OracleRun:
    """
    One radial mode at one frequency

    The regular solution is seeded with the free Bessel solution below the
    potential cutoff; the outgoing solution with its asymptotic series at
    R_max = max(grid end, 20/σ).
    """

    operator: RadialOperator
    l: int
    sigma: float
    forcing: ModeProfile
    r_max: Optional[float] = None
    bc_order: int = Config.BC_ORDER
    rtol: float = 1e-11

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"σ must be positive, got {self.sigma}")
        if self.forcing.coordinate != "r":
            raise ValueError("oracle forcing must be a profile in r")
        if self.bc_order < 0:
            raise ValueError(f"outgoing boundary order must be >= 0, got {self.bc_order}")
        R = self.matching_radius
        if self.sigma * R < MATCHING_PHASE - 1e-9:
            raise ValueError(f"σ·R_max = {self.sigma * R:.3g} is below {MATCHING_PHASE:g}")
        core = self.operator.potential_cutoff * self.operator.cutoff.lo
        if not self.operator.is_free and core <= self.forcing.grid[0]:
            raise ValueError("the grid must start inside the potential-free core")

    @property
    def matching_radius(self) -> float:
        if self.r_max is not None:
            return float(self.r_max)
        return max(float(self.forcing.grid[-1]), MATCHING_PHASE / self.sigma)

    def grid(self) -> np.ndarray:
        """Forcing grid continued to R_max, refined until one step is at most 0.05 rad of e^{iσr}"""
        r0 = float(self.forcing.grid[0])
        R = self.matching_radius
        dt = min(log_step(self.forcing.grid), RADIANS_PER_STEP / (self.sigma * R))
        points = int(math.ceil(math.log(R / r0) / dt)) + 1
        return geometric_grid(r0, R, points)


# ============================================================================
# One-sided solutions
# ============================================================================

def _rhs(run: OracleRun) -> Callable:
    d = run.operator.cone.d
    lam = float(run.operator.cone.mode(run.l).eigenvalue)
    sigma2 = run.sigma**2

    # y = (Re u, Im u, Re r u', Im r u') in t = log r
    def rhs(t, y):
        r = math.exp(t)
        V = float(run.operator.potential_values(r))
        a = lam + r * r * (V - sigma2)
        return [y[2], y[3], -(d - 2) * y[2] + a * y[0], -(d - 2) * y[3] + a * y[1]]

    return rhs


def _integrate(run: OracleRun, t_eval: np.ndarray, u0: complex, v0: complex) -> Tuple[np.ndarray, np.ndarray]:
    sol = solve_ivp(
        _rhs(run),
        (float(t_eval[0]), float(t_eval[-1])),
        [u0.real, u0.imag, v0.real, v0.imag],
        method="RK45",
        t_eval=t_eval,
        rtol=run.rtol,
        atol=1e-300,
    )
    if not sol.success:
        raise NumericFailure(f"mode {run.l} at σ={run.sigma:g}: {sol.message}")
    return sol.y[0] + 1j * sol.y[1], sol.y[2] + 1j * sol.y[3]


def regular_solution(run: OracleRun, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Solution ~ r^{b_l}, normalized to r^{b_l}(1 + O(r²)); returns (u, r u')"""
    cone = run.operator.cone
    mode = cone.mode(run.l)
    nu = float(as_complex(mode.nu).real)
    a = (cone.d - 2) / 2
    r0 = float(r[0])
    z = run.sigma * r0
    # r^{-a} J_ν(σr) scaled so the leading term is r^{b}
    norm = gamma(nu + 1) * (2.0 / run.sigma) ** nu
    J = complex(bessel(BesselKind.J, nu, z)[0])
    dJ = complex(bessel_derivative(BesselKind.J, nu, z)[0])
    u0 = norm * r0 ** (-a) * J
    v0 = norm * r0 ** (-a) * (z * dJ - a * J)
    return _integrate(run, np.log(r), u0, v0)


def outgoing_series(run: OracleRun) -> PhgSeries:
    """w with e^{iσr} w(1/r) outgoing: w = ρ^{(d-1)/2}(1 + c₁ρ + …), bc_order corrections"""
    cone = run.operator.cone
    d = cone.d
    lam = cone.mode(run.l).eigenvalue
    s = run.sigma
    op = SeriesOperator(
        ((1, poly(-1j * s * (d - 1), 2j * s)), (2, poly(lam, d - 2, -1))),
        Variable.RHO,
        None if run.operator.is_free else run.operator.tail,
    )
    root = (d - 1) / 2
    return op.homogeneous(sp.Rational(d - 1, 2), root + run.bc_order + 0.5)


def outgoing_solution(run: OracleRun, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Outgoing solution integrated inward from R_max; returns (u, r u')"""
    R = float(r[-1])
    w, dw, _ = outgoing_series(run).derivatives(np.array([1.0 / R]))
    phase = np.exp(1j * run.sigma * R)
    u0 = complex(phase * w[0])
    v0 = complex(R * phase * (1j * run.sigma * w[0] - dw[0] / R**2))
    u, v = _integrate(run, np.log(r)[::-1], u0, v0)
    return u[::-1], v[::-1]


# ============================================================================
# Green assembly
# ============================================================================

def _forcing_samples(forcing: ModeProfile, r: np.ndarray) -> np.ndarray:
    inside = r <= forcing.grid[-1]
    values = np.zeros(r.shape, dtype=complex)
    values[inside] = forcing.evaluate(r[inside])
    if forcing.tail is not None and np.any(~inside):
        values[~inside] = forcing.tail.evaluate(1.0 / r[~inside])
    return values


def _outer_remainder(run: OracleRun, r: np.ndarray) -> complex:
    """∫_R^∞ φ_out f s^{d-1} ds with φ_out = e^{iσs} w(1/s), integrated by parts on the series"""
    tail = run.forcing.tail
    if tail is None or tail.is_zero():
        return 0j
    g = outgoing_series(run).multiply(tail).times_power(-(run.operator.cone.d - 1))
    if g.pi_min() <= 0:
        raise NumericFailure(f"forcing tail ρ^{tail.pi_min():g} too slow for the outgoing integral")
    return oscillatory_tail_integral(g, 1j * run.sigma, float(r[-1]))


def limiting_resolvent(run: OracleRun) -> ModeProfile:
    """
    Outgoing solution of (-∂² - (d-1)/r ∂ + λ_l/r² + V - σ²)u = f, regular at 0

    u = -[φ_out ∫_0^r φ_reg f s^{d-1} ds + φ_reg ∫_r^∞ φ_out f s^{d-1} ds] / W,
    W = r^{d-1}(φ_reg φ_out' - φ_reg' φ_out).

    Raises:
        ResonanceError: the scaled Wronskian vanishes at this σ
    """
    r = run.grid()
    d = run.operator.cone.d
    phi_reg, v_reg = regular_solution(run, r)
    phi_out, v_out = outgoing_solution(run, r)

    wronskian = r ** (d - 2) * (phi_reg * v_out - v_reg * phi_out)
    W = complex(np.median(wronskian.real) + 1j * np.median(wronskian.imag))
    size = float(np.median(r ** (d - 2) * (np.abs(phi_reg * v_out) + np.abs(v_reg * phi_out))))
    if abs(W) < RESONANCE_LIMIT * size:
        raise ResonanceError(f"mode {run.l}: Wronskian {abs(W):.3g} vanishes at σ={run.sigma:g}")
    spread = float(np.max(np.abs(wronskian - W))) / abs(W)
    logger.debug(f"mode {run.l}, σ={run.sigma:g}: Wronskian {W:.6g}, drift {spread:.2e} over {len(r)} nodes")

    f = _forcing_samples(run.forcing, r)
    dt = log_step(r)
    inner_integrand = phi_reg * f * r**d
    b = float(as_complex(run.operator.cone.mode(run.l).b).real)
    inner = cumulative_log_integral(inner_integrand, dt) + inner_integrand[0] / (b + d)
    outer = cumulative_log_integral(phi_out * f * r**d, dt, reverse=True) + _outer_remainder(run, r)

    values = -(phi_out * inner + phi_reg * outer) / W
    slopes = -(v_out * inner + v_reg * outer) / (W * r)
    return ModeProfile(r, values, run.l, "r", None, None, slopes)


def free_resolvent_mode0(sigma: float, f: Callable[[float], float], r: Iterable[float]) -> np.ndarray:
    """
    Outgoing resolvent of -Δ - σ² on R³ applied to a radial f, by quadrature

    u(r) = e^{iσr}/r ∫_0^r sin(σs)/σ f(s) s ds + sin(σr)/(σr) ∫_r^∞ e^{iσs} f(s) s ds
    """
    out = []
    for x in np.atleast_1d(np.asarray(r, dtype=float)):
        inner = quad(lambda s: math.sin(sigma * s) / sigma * f(s) * s, 0.0, x, epsabs=0, epsrel=1e-12, limit=200)[0]
        outer_re = quad(lambda s: math.cos(sigma * s) * f(s) * s, x, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
        outer_im = quad(lambda s: math.sin(sigma * s) * f(s) * s, x, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
        value = np.exp(1j * sigma * x) / x * inner + math.sin(sigma * x) / (sigma * x) * (outer_re + 1j * outer_im)
        out.append(value)
    return np.array(out, dtype=complex)


# ============================================================================
# Comparison with the low-energy expansion
# ============================================================================

class ComparisonRow(NamedTuple):
    sigma: float
    error: float
    weight: float


@dataclass
class ConvergenceReport:
    """Weighted errors against the oracle and the fitted rate σ^p"""

    rows: List[ComparisonRow]
    exponent: float
    interval: Tuple[float, float]
    predicted: float
    mode: int = 0
    notes: List[str] = field(default_factory=list)

    @property
    def relative_gap(self) -> float:
        if self.predicted == 0:
            return math.inf
        return abs(self.exponent - self.predicted) / self.predicted

    def to_dict(self):
        return {
            "mode": self.mode,
            "exponent": self.exponent,
            "interval": list(self.interval),
            "predicted": self.predicted,
            "rows": [row._asdict() for row in self.rows],
        }

    def summary(self) -> str:
        lines = [
            f"mode {self.mode}",
            f"fitted exponent p = {self.exponent:.6g}",
            f"95% interval [{self.interval[0]:.6g}, {self.interval[1]:.6g}]",
            f"predicted exponent = {self.predicted:.6g}",
        ]
        lines += self.notes
        return "\n".join(lines) + "\n"

    def save(self, directory, stem: str = "convergence"):
        directory = Path(directory)
        csv = write_csv(directory / f"{stem}.csv", ["sigma", "err", "weight"], self.rows)
        write_text(directory / f"{stem}.txt", self.summary())
        return csv


def fit_rate(sigmas: Sequence[float], errors: Sequence[float]) -> Tuple[float, Tuple[float, float]]:
    """Slope of log err against log σ with its 95% interval"""
    x = np.log(np.asarray(sigmas, dtype=float))
    y = np.log(np.maximum(np.asarray(errors, dtype=float), 1e-300))
    fit = stats.linregress(x, y)
    if len(x) > 2:
        half = float(stats.t.ppf(0.975, len(x) - 2) * fit.stderr)
    else:
        half = math.inf
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half))


def _decreasing(sigmas: Sequence[float]) -> List[float]:
    sigmas = [float(s) for s in sigmas]
    if any(s <= 0 for s in sigmas) or any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("σ values must be positive and strictly decreasing")
    return sigmas


def compare(
    state,
    sigmas: Sequence[float],
    weight: float = 0.0,
    bc_order: int = Config.BC_ORDER,
) -> ConvergenceReport:
    """
    Weighted sup error between the expansion and the oracle at each σ

    The expansion is compared after conjugation, e^{iσr}·evaluate(state, σ, r),
    on the part of the oracle grid covered by the zero-energy grid. The weight
    is ⟨r⟩^{-weight}.
    """
    sigmas = _decreasing(sigmas)
    from scripts.quasimode_driver import evaluate

    rows = []
    for sigma in sigmas:
        run = OracleRun(state.operator, state.l, sigma, state.forcing, bc_order=bc_order)
        truth = limiting_resolvent(run)
        mask = truth.grid <= state.forcing.grid[-1]
        r = truth.grid[mask]
        approx = np.exp(1j * sigma * r) * evaluate(state, sigma, r)
        w = (1.0 + r**2) ** (-weight / 2)
        error = float(np.max(w * np.abs(approx - truth.values[mask])))
        logger.info(f"📋 mode {state.l}, σ={sigma:g}: weighted error {error:.3e}")
        rows.append(ComparisonRow(sigma, error, weight))

    p, interval = fit_rate([row.sigma for row in rows], [row.error for row in rows])
    return ConvergenceReport(rows, p, interval, float(state.achieved_order), state.l)


def residual_decay(state, sigmas: Sequence[float], weight: float = 0.0) -> ConvergenceReport:
    """Fitted rate σ^p of the weighted residual P(σ)u - e^{-iσr}f, against the declared order"""
    sigmas = _decreasing(sigmas)
    from scripts.quasimode_driver import residual_norm

    rows = [ComparisonRow(sigma, residual_norm(state, sigma, weight), weight) for sigma in sigmas]
    for row in rows:
        logger.debug(f"mode {state.l}, σ={row.sigma:g}: residual {row.error:.3e}")
    p, interval = fit_rate(sigmas, [row.error for row in rows])
    return ConvergenceReport(rows, p, interval, float(state.achieved_order), state.l, ["residual of the expansion"])


# ============================================================================
# Log-phase experiment
# ============================================================================

class PhaseFit(NamedTuple):
    slope: float
    intercept: float
    residual: float


def hypergeometric_phase(
    mass: float,
    sigma: float,
    window: Tuple[float, float],
    points: int = 400,
    rtol: float = 1e-11,
) -> PhaseFit:
    """
    Log-phase of the outgoing solution of (-1 + m/r)u'' - σ²u = 0

    Writes u = e^{iσr}w, integrates w'' + 2iσw' + σ² m/(r-m) w = 0 outward from
    WKB data at the window start and fits arg w = a + b log r. Expected b = σm/2.

    Raises:
        PhaseUnwrapError: consecutive phase samples jump by more than π/2
    """
    lo, hi = map(float, window)
    if not (lo > mass + 1 and hi > lo):
        raise ValueError(f"window must lie in (m + 1, ∞), got ({lo:g}, {hi:g}) for m={mass:g}")
    if not sigma > 0:
        raise ValueError(f"σ must be positive, got {sigma}")

    def k_and_slope(r):
        q = r / (r - mass)
        k = sigma * math.sqrt(q)
        dk = -sigma * mass / (2 * math.sqrt(q) * (r - mass) ** 2)
        return k, dk

    k0, dk0 = k_and_slope(lo)
    w0 = 1.0 / math.sqrt(k0)
    dw0 = (1j * (k0 - sigma) - dk0 / (2 * k0)) * w0

    def rhs(r, y):
        w = y[0] + 1j * y[1]
        dw = y[2] + 1j * y[3]
        d2w = -2j * sigma * dw - sigma**2 * mass / (r - mass) * w
        return [y[2], y[3], d2w.real, d2w.imag]

    r_eval = np.geomspace(lo, hi, points)
    sol = solve_ivp(rhs, (lo, hi), [w0, 0.0, dw0.real, dw0.imag], method="RK45", t_eval=r_eval, rtol=rtol, atol=1e-300)
    if not sol.success:
        raise NumericFailure(f"phase integration failed: {sol.message}")
    w = sol.y[0] + 1j * sol.y[1]
    phase = np.unwrap(np.angle(w))
    jumps = np.abs(np.diff(phase))
    if np.any(jumps > math.pi / 2):
        raise PhaseUnwrapError(f"phase jumps by {jumps.max():.3g} between samples")
    logr = np.log(r_eval)
    slope, intercept = np.polyfit(logr, phase, 1)
    residual = float(np.max(np.abs(phase - (slope * logr + intercept))))
    logger.debug(f"m={mass:g}, σ={sigma:g}: log-phase slope {slope:.6g} (fit residual {residual:.2e})")
    return PhaseFit(float(slope), float(intercept), residual)
