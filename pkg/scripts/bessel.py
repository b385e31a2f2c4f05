"""
Bessel functions of real order

J_ν, Y_ν and the outgoing Hankel function H+_ν = J_ν + iY_ν for x > 0,
returned as complex arrays so the three kinds combine freely.
"""

import logging
import math
from enum import Enum

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)


class BesselKind(Enum):
    J = "J"
    Y = "Y"
    H_PLUS = "H+"


_VALUES = {BesselKind.J: special.jv, BesselKind.Y: special.yv, BesselKind.H_PLUS: special.hankel1}
_DERIVATIVES = {BesselKind.J: special.jvp, BesselKind.Y: special.yvp, BesselKind.H_PLUS: special.h1vp}


def _as_points(x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        logger.debug(f"❌ Bessel evaluation points outside (0, ∞): {x[(x <= 0) | ~np.isfinite(x)][:3]}")
        raise ValueError("Bessel functions are evaluated at finite x > 0 only")
    return x


def _check_order(nu: float) -> float:
    if nu < 0:
        raise ValueError(f"order must be >= 0, got {nu}")
    return float(nu)


def bessel(kind: BesselKind, nu: float, x) -> np.ndarray:
    """
    J_ν(x), Y_ν(x) or H+_ν(x) for real ν >= 0 and x > 0

    Raises:
        ValueError: x <= 0 or ν < 0
    """
    nu = _check_order(nu)
    return np.asarray(_VALUES[BesselKind(kind)](nu, _as_points(x)), dtype=complex)


def bessel_derivative(kind: BesselKind, nu: float, x) -> np.ndarray:
    nu = _check_order(nu)
    return np.asarray(_DERIVATIVES[BesselKind(kind)](nu, _as_points(x)), dtype=complex)


def hankel_leading_constant(nu: float) -> complex:
    """C with H+_ν(x) ≈ C x^{-1/2} e^{ix} as x → ∞"""
    return math.sqrt(2.0 / math.pi) * complex(np.exp(-1j * (nu * math.pi / 2 + math.pi / 4)))
