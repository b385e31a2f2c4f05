"""
Utility functions for cone-resolvent
Shared helpers: logging setup, grids, smooth cutoffs and flat-file writers
"""

import csv
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import expit

# Color support for Windows and Unix
try:
    from colorama import init, Fore, Style
    init(autoreset=True)
    COLORS_ENABLED = True
except ImportError:
    COLORS_ENABLED = False

    class Fore:
        GREEN = RED = YELLOW = RESET = ""

    class Style:
        BRIGHT = RESET_ALL = ""


LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

ArrayLike = Union[float, np.ndarray]


# ============================================================================
# Logging
# ============================================================================

class ColoredFormatter(logging.Formatter):
    """Custom formatter with colors for console output"""

    def format(self, record):
        msg = str(record.msg)
        if record.levelno == logging.INFO and msg.startswith("✅"):
            record.msg = f"{Fore.GREEN}{Style.BRIGHT}{msg}{Style.RESET_ALL}"
        elif record.levelno == logging.WARNING:
            record.msg = f"{Fore.YELLOW}{msg}{Style.RESET_ALL}"
        elif record.levelno >= logging.ERROR:
            record.msg = f"{Fore.RED}{Style.BRIGHT}{msg}{Style.RESET_ALL}"
        return super().format(record)


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """
    Configure root logging once for the process

    Args:
        level: Log level name
        log_file: Optional path for a plain (uncolored) log file
    """
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(ColoredFormatter(LOG_FORMAT))
    handlers: List[logging.Handler] = [console_handler]

    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(file_handler)

    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), handlers=handlers, force=True)


# ============================================================================
# Grids
# ============================================================================

def geometric_grid(r_min: float, r_max: float, n: int) -> np.ndarray:
    """
    Geometric grid, uniform in log r

    Args:
        r_min: First node (> 0)
        r_max: Last node
        n: Number of nodes

    Returns:
        Array of n nodes
    """
    if not 0 < r_min < r_max:
        raise ValueError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
    if n < 8:
        raise ValueError(f"grid needs at least 8 nodes, got {n}")
    return np.geomspace(r_min, r_max, n)


def log_step(grid: np.ndarray) -> float:
    """Uniform step in log r of a geometric grid"""
    return float(np.log(grid[1] / grid[0]))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def cumulative_log_integral(y: np.ndarray, dt: float, reverse: bool = False) -> np.ndarray:
    """
    Running integral of complex samples on a grid uniform in log r

    Forward: ∫ from the first node to each node. Reverse: ∫ from each node to
    the last one. Composite Simpson weights.
    """
    y = np.asarray(y, dtype=complex)
    if reverse:
        return cumulative_log_integral(y[::-1], dt)[::-1]
    re = cumulative_simpson(y.real, dx=dt, initial=0.0)
    im = cumulative_simpson(y.imag, dx=dt, initial=0.0)
    return re + 1j * im


# ============================================================================
# Smooth cutoffs
# ============================================================================

_EDGE = 1e-3  # the bump is below 1e-400 this close to either end


def smooth_step(s: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    C^∞ step m(s) = e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)}) and its first two derivatives

    m = 0 for s <= 0 and m = 1 for s >= 1.
    """
    s = np.asarray(s, dtype=float)
    inside = (s > _EDGE) & (s < 1.0 - _EDGE)
    t = np.where(inside, s, 0.5)
    m = expit(-(1.0 / t - 1.0 / (1.0 - t)))
    w = 1.0 / t**2 + 1.0 / (1.0 - t) ** 2
    dw = -2.0 / t**3 + 2.0 / (1.0 - t) ** 3
    d1 = m * (1.0 - m) * w
    d2 = d1 * (1.0 - 2.0 * m) * w + m * (1.0 - m) * dw
    value = np.where(inside, m, np.where(s >= 0.5, 1.0, 0.0))
    return value, np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)


@dataclass(frozen=True)
class SmoothCutoff:
    """
    Cutoff equal to 1 for t <= lo and 0 for t >= hi

    The inner cutoff χ₀ is used as χ₀(rσ); the outer cutoff χ₁ is the same
    shape evaluated at 1/r.
    """

    lo: float = 0.25
    hi: float = 0.75

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError(f"cutoff window needs 0 < lo < hi, got ({self.lo}, {self.hi})")

    def derivatives(self, t: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value, first and second derivative in t"""
        width = self.hi - self.lo
        m, d1, d2 = smooth_step((np.asarray(t, dtype=float) - self.lo) / width)
        return 1.0 - m, -d1 / width, -d2 / width**2

    def __call__(self, t: ArrayLike) -> np.ndarray:
        return self.derivatives(t)[0]

    def widened(self, factor: float) -> "SmoothCutoff":
        """Same lower edge, transition width scaled by factor"""
        return SmoothCutoff(self.lo, self.lo + factor * (self.hi - self.lo))

    def inverted_derivatives(self, r: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """χ(1/r) and its first two r-derivatives"""
        r = np.asarray(r, dtype=float)
        v, d1, d2 = self.derivatives(1.0 / r)
        return v, -d1 / r**2, d2 / r**4 + 2.0 * d1 / r**3

    def inverted(self, r: ArrayLike) -> np.ndarray:
        return self.inverted_derivatives(r)[0]

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi}


def power_log(s: complex, m: int, x: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    x^s (log x)^m with its first two x-derivatives

    Args:
        s: Exponent (complex allowed)
        m: Log power >= 0
        x: Positive points

    Returns:
        (value, first derivative, second derivative)
    """
    x = np.asarray(x, dtype=float)
    L = np.log(x)

    def lp(k: int) -> np.ndarray:
        return L**k if k >= 0 else np.zeros_like(L)

    xs = x.astype(complex) ** s
    value = xs * lp(m)
    first = xs / x * (s * lp(m) + m * lp(m - 1))
    second = xs / x**2 * (s * (s - 1) * lp(m) + m * (2 * s - 1) * lp(m - 1) + m * (m - 1) * lp(m - 2))
    return value, first, second


# ============================================================================
# Flat-file output
# ============================================================================

def ensure_dir(path: Union[str, Path]) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


def format_float(value: float) -> str:
    """Locale-free, fixed-width-independent float text (deterministic)"""
    return f"{value:.12e}"


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """
    Write a CSV file with a header row

    Floats are rendered with format_float so identical runs give identical bytes.

    Args:
        path: Destination file
        header: Column names
        rows: Row sequences

    Returns:
        The written path
    """
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path: Union[str, Path]) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w") as f:
        f.write(text)
    return path


def write_gnuplot_script(
    path: Union[str, Path],
    csv_name: str,
    columns: Sequence[Tuple[int, int, str]],
    title: str,
    logscale: str = "",
) -> Path:
    """
    Write a gnuplot script plotting columns of a CSV

    Args:
        path: Script destination
        csv_name: CSV file name relative to the script
        columns: (x column, y column, legend) triples, 1-based
        title: Plot title
        logscale: Axes for 'set logscale', e.g. "xy"
    """
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    plots = [f"'{csv_name}' using {x}:{y} with lines title '{label}'" for x, y, label in columns]
    lines.append("plot " + ", \\\n     ".join(plots))
    return write_text(path, "\n".join(lines) + "\n")
