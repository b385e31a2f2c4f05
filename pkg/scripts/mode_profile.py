"""
Mode profiles
A radial function on one boundary harmonic: samples on a geometric grid plus
exact asymptotic series below and above the grid
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline

from scripts.errors import OutOfHullError, TailMismatchError
from scripts.phg_series import PhgSeries, Variable
from scripts.utils import read_csv, write_csv, write_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModeProfile:
    """
    Data class representing a per-harmonic radial profile

    `grid` is geometric in the radial coordinate (r, or r̂ for transition-face
    profiles). `tail` is a series in the reciprocal variable valid above the
    grid, `head` a series in the radial variable valid below it.
    """

    grid: np.ndarray
    values: np.ndarray
    mode: int = 0
    coordinate: str = "r"
    tail: Optional[PhgSeries] = None
    head: Optional[PhgSeries] = None
    slopes: Optional[np.ndarray] = None
    _spline: Tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if grid.shape != values.shape:
            raise ValueError(f"grid and values differ in shape: {grid.shape} vs {values.shape}")
        if np.any(np.diff(grid) <= 0) or grid[0] <= 0:
            raise ValueError("grid must be positive and increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if self.slopes is not None:
            object.__setattr__(self, "slopes", np.asarray(self.slopes, dtype=complex))
        if self.tail is not None and not self.tail.variable.reciprocal:
            raise ValueError("tail must be a series in a reciprocal variable")
        if self.head is not None and self.head.variable.reciprocal:
            raise ValueError("head must be a series in the radial variable")

    @classmethod
    def zeros(cls, grid: np.ndarray, mode: int = 0, coordinate: str = "r") -> "ModeProfile":
        tail_var = Variable.RHO if coordinate == "r" else Variable.RHO_HAT
        head_var = Variable.R if coordinate == "r" else Variable.X
        return cls(grid, np.zeros(len(grid), dtype=complex), mode, coordinate, PhgSeries.zero(tail_var), PhgSeries.zero(head_var))

    @classmethod
    def from_function(cls, grid: np.ndarray, func, mode: int = 0, coordinate: str = "r", **series) -> "ModeProfile":
        return cls(grid, np.asarray(func(np.asarray(grid)), dtype=complex), mode, coordinate, **series)

    # ------------------------------------------------------------------
    # interpolation

    def _splines(self):
        if self._spline is None:
            t = np.log(self.grid)
            splines = (CubicSpline(t, self.values.real), CubicSpline(t, self.values.imag))
            object.__setattr__(self, "_spline", splines)
        return self._spline

    def derivatives(self, r) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Value, first and second radial derivative at points r

        Inside the grid a cubic spline in log r is used; below and above it
        the head and tail series take over.

        Raises:
            OutOfHullError: a point lies outside the grid where no series is attached
        """
        r = np.atleast_1d(np.asarray(r, dtype=float))
        value = np.zeros(r.shape, dtype=complex)
        first = np.zeros(r.shape, dtype=complex)
        second = np.zeros(r.shape, dtype=complex)
        lo, hi = self.grid[0], self.grid[-1]

        inside = (r >= lo) & (r <= hi)
        if np.any(inside):
            t = np.log(r[inside])
            sr, si = self._splines()
            v = sr(t) + 1j * si(t)
            dt = sr(t, 1) + 1j * si(t, 1)
            dtt = sr(t, 2) + 1j * si(t, 2)
            x = r[inside]
            value[inside] = v
            first[inside] = dt / x
            second[inside] = (dtt - dt) / x**2

        below = r < lo
        if np.any(below):
            if self.head is None:
                raise OutOfHullError(f"r={r[below].min():.3g} below grid start {lo:.3g} and no head series")
            value[below], first[below], second[below] = self.head.derivatives(r[below])

        above = r > hi
        if np.any(above):
            if self.tail is None:
                raise OutOfHullError(f"r={r[above].max():.3g} beyond grid end {hi:.3g} and no tail series")
            rho = 1.0 / r[above]
            v, d1, d2 = self.tail.derivatives(rho)
            value[above] = v
            first[above] = -d1 * rho**2
            second[above] = d2 * rho**4 + 2.0 * d1 * rho**3
        return value, first, second

    def evaluate(self, r) -> np.ndarray:
        return self.derivatives(r)[0]

    def grid_slopes(self) -> np.ndarray:
        """First derivative on the grid (stored slopes when available)"""
        if self.slopes is not None:
            return self.slopes
        return self.derivatives(self.grid)[1]

    # ------------------------------------------------------------------
    # algebra

    def scale(self, c: complex) -> "ModeProfile":
        return ModeProfile(
            self.grid,
            self.values * c,
            self.mode,
            self.coordinate,
            None if self.tail is None else self.tail.scale(c),
            None if self.head is None else self.head.scale(c),
            None if self.slopes is None else self.slopes * c,
        )

    def __add__(self, other: "ModeProfile") -> "ModeProfile":
        if self.grid.shape != other.grid.shape or not np.allclose(self.grid, other.grid, rtol=1e-14):
            raise ValueError("profiles live on different grids")
        if self.mode != other.mode:
            raise ValueError(f"mode mismatch: {self.mode} vs {other.mode}")

        def merge(a, b):
            if a is None or b is None:
                return None
            return a + b

        slopes = None if self.slopes is None or other.slopes is None else self.slopes + other.slopes
        return ModeProfile(
            self.grid,
            self.values + other.values,
            self.mode,
            self.coordinate,
            merge(self.tail, other.tail),
            merge(self.head, other.head),
            slopes,
        )

    def __sub__(self, other: "ModeProfile") -> "ModeProfile":
        return self + other.scale(-1.0)

    def with_series(self, tail: Optional[PhgSeries] = None, head: Optional[PhgSeries] = None) -> "ModeProfile":
        return replace(self, tail=tail if tail is not None else self.tail, head=head if head is not None else self.head)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    def tail_mismatch(self, r_from: float) -> float:
        """Sup difference between samples and tail on [r_from, grid end], relative to the sup of the profile"""
        if self.tail is None:
            return math.inf
        mask = self.grid >= r_from
        if not np.any(mask):
            return 0.0
        samples = self.values[mask]
        series = self.tail.evaluate(1.0 / self.grid[mask])
        scale = max(self.max_abs(), 1e-300)
        return float(np.max(np.abs(samples - series))) / scale

    def check_tail(self, r_from: float, tolerance: float) -> None:
        mismatch = self.tail_mismatch(r_from)
        if mismatch > tolerance:
            raise TailMismatchError(f"samples and tail disagree by {mismatch:.3g} beyond r={r_from:g}")

    # ------------------------------------------------------------------
    # persistence

    def to_dict(self) -> Dict:
        return {
            "mode": self.mode,
            "coordinate": self.coordinate,
            "points": len(self.grid),
            "range": [float(self.grid[0]), float(self.grid[-1])],
            "tail": None if self.tail is None else self.tail.to_dict(),
            "head": None if self.head is None else self.head.to_dict(),
        }

    def save(self, path: Union[str, Path]) -> Path:
        """
        Write CSV 'r, Re(u), Im(u)' plus sidecar .tail/.head series files

        Args:
            path: CSV destination

        Returns:
            The CSV path
        """
        path = Path(path)
        write_csv(path, [self.coordinate, "re", "im"], zip(self.grid, self.values.real, self.values.imag))
        if self.tail is not None:
            write_text(path.with_suffix(".tail"), self.tail.to_text())
        if self.head is not None:
            write_text(path.with_suffix(".head"), self.head.to_text())
        return path

    @classmethod
    def load(cls, path: Union[str, Path], mode: int = 0) -> "ModeProfile":
        path = Path(path)
        header, rows = read_csv(path)
        data = np.array([[float(v) for v in row] for row in rows])
        tail = head = None
        if path.with_suffix(".tail").exists():
            tail = PhgSeries.from_text(path.with_suffix(".tail").read_text())
        if path.with_suffix(".head").exists():
            head = PhgSeries.from_text(path.with_suffix(".head").read_text())
        return cls(data[:, 0], data[:, 1] + 1j * data[:, 2], mode, header[0], tail, head)
