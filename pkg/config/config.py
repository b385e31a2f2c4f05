"""
Configuration module for cone-resolvent
Process-wide defaults from the environment plus the sectioned run-file format
"""

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv

from scripts.errors import ConfigValidationError

# Get the project root directory (parent of config folder)
PROJECT_ROOT = Path(__file__).parent.parent
ENV_FILE = PROJECT_ROOT / "config" / ".env"

# Load environment variables from .env file
if ENV_FILE.exists():
    load_dotenv(ENV_FILE)
else:
    load_dotenv()  # Try to load from current directory as fallback


class Config:
    """Main configuration class"""

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("LOG_FILE", None)
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development")

    # Output
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "./output")
    JOBS: int = int(os.getenv("JOBS", "1"))

    # Zero-energy grid
    GRID_POINTS: int = int(os.getenv("GRID_POINTS", "2048"))
    GRID_R_MIN: float = float(os.getenv("GRID_R_MIN", "1e-3"))
    GRID_R_MAX: float = float(os.getenv("GRID_R_MAX", "1e3"))
    TAIL_RADIUS: float = float(os.getenv("TAIL_RADIUS", "1e2"))

    # Transition-face grid
    TF_GRID_POINTS: int = int(os.getenv("TF_GRID_POINTS", "40000"))
    TF_R_MIN: float = float(os.getenv("TF_R_MIN", "1e-4"))
    TF_R_MAX: float = float(os.getenv("TF_R_MAX", "200"))

    # Series and iteration
    SERIES_HORIZON: float = float(os.getenv("SERIES_HORIZON", "8"))
    TOLERANCE: float = float(os.getenv("TOLERANCE", "1e-9"))
    NEUMANN_MAX_ITER: int = int(os.getenv("NEUMANN_MAX_ITER", "60"))
    BC_ORDER: int = int(os.getenv("BC_ORDER", "3"))
    SEED: int = int(os.getenv("SEED", "0"))

    @classmethod
    def validate(cls) -> bool:
        """Validate numeric settings"""
        problems = []
        if cls.GRID_POINTS < 64:
            problems.append(f"GRID_POINTS must be >= 64 (got {cls.GRID_POINTS})")
        if not 0 < cls.GRID_R_MIN < cls.TAIL_RADIUS < cls.GRID_R_MAX:
            problems.append("need 0 < GRID_R_MIN < TAIL_RADIUS < GRID_R_MAX")
        if not 0 < cls.TF_R_MIN < cls.TF_R_MAX:
            problems.append("need 0 < TF_R_MIN < TF_R_MAX")
        if cls.TF_GRID_POINTS < 256:
            problems.append(f"TF_GRID_POINTS must be >= 256 (got {cls.TF_GRID_POINTS})")
        if cls.TOLERANCE <= 0:
            problems.append("TOLERANCE must be positive")
        if cls.JOBS < 1:
            problems.append("JOBS must be >= 1")
        if cls.BC_ORDER < 0:
            problems.append("BC_ORDER must be >= 0")

        if problems:
            raise ValueError(f"Invalid configuration: {'; '.join(problems)}")
        return True

    @classmethod
    def get_config_summary(cls) -> str:
        """Get a summary of current configuration"""
        return f"""
cone-resolvent Configuration Summary:
━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
Zero-energy grid:
  - Points: {cls.GRID_POINTS}
  - Range: [{cls.GRID_R_MIN:g}, {cls.GRID_R_MAX:g}], tail radius {cls.TAIL_RADIUS:g}

Transition grid:
  - Points: {cls.TF_GRID_POINTS}
  - Range: [{cls.TF_R_MIN:g}, {cls.TF_R_MAX:g}]

Series:
  - Horizon: {cls.SERIES_HORIZON:g}
  - Tolerance: {cls.TOLERANCE:g}
  - Neumann iterations: {cls.NEUMANN_MAX_ITER}
  - Outgoing BC order: {cls.BC_ORDER}

Run:
  - Output: {cls.OUTPUT_DIR}
  - Jobs: {cls.JOBS}
  - Log Level: {cls.LOG_LEVEL}
"""


# Alternative config for different environments
class DevelopmentConfig(Config):
    """Development environment configuration"""

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "DEBUG")


class ProductionConfig(Config):
    """Production environment configuration"""

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")


def get_config() -> type:
    """Get the appropriate config based on environment"""
    env = os.getenv("ENVIRONMENT", "development").lower()
    if env == "production":
        return ProductionConfig
    return DevelopmentConfig


# ============================================================================
# Run files
# ============================================================================

SECTIONS = ("problem", "forcing", "numerics", "output")
FORCING_TYPES = ("gaussian", "power-tail", "file")


@dataclass(frozen=True)
class PotentialSpec:
    """Data class representing one tail term coeff·ρ^exponent·(log ρ)^logpower"""

    coeff: float
    exponent: float
    logpower: int = 0


@dataclass
class ProblemBlock:
    """The [problem] section"""

    d: int = 3
    modes: Tuple[int, ...] = (0,)
    l_max: Optional[int] = None
    eigenvalues: Optional[Tuple[float, ...]] = None
    potential: Tuple[PotentialSpec, ...] = ()
    potential_cutoff: float = 1.0
    beth: Optional[Tuple[float, ...]] = None
    ell: int = 1
    mass: float = 0.0


@dataclass
class ForcingBlock:
    """The [forcing] section"""

    type: str = "gaussian"
    width: float = 1.0
    amplitude: float = 1.0
    exponent: float = 4.0
    path: Optional[str] = None


@dataclass
class NumericsBlock:
    """The [numerics] section"""

    horizon: float = Config.SERIES_HORIZON
    tolerance: float = Config.TOLERANCE
    grid_points: int = Config.GRID_POINTS
    r_min: float = Config.GRID_R_MIN
    r_max: float = Config.GRID_R_MAX
    tail_radius: float = Config.TAIL_RADIUS
    tf_grid_points: int = Config.TF_GRID_POINTS
    tf_r_min: float = Config.TF_R_MIN
    tf_r_max: float = Config.TF_R_MAX
    neumann_max_iter: int = Config.NEUMANN_MAX_ITER
    bc_order: int = Config.BC_ORDER
    threshold: float = 2.0
    mode_thresholds: Optional[Tuple[float, ...]] = None
    target_order: float = 2.0
    sigmas: Tuple[float, ...] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    cutoff_window: Tuple[float, float] = (0.25, 0.75)
    weight: float = 0.0
    seed: int = Config.SEED


@dataclass
class OutputBlock:
    """The [output] section"""

    directory: str = Config.OUTPUT_DIR
    emit_plots: bool = True
    emit_profiles: bool = True


def _parse_float(text: str) -> float:
    text = text.strip().lower()
    if text in ("inf", "infinity", "∞"):
        return math.inf
    return float(text)


def _parse_list(text: str, item=_parse_float) -> Tuple:
    return tuple(item(part) for part in text.split(",") if part.strip())


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{text.strip()}'")


_SCALARS = {
    "problem": {
        "d": int,
        "modes": lambda v: _parse_list(v, int),
        "l_max": int,
        "eigenvalues": _parse_list,
        "potential_cutoff": _parse_float,
        "beth": _parse_list,
        "ell": int,
        "mass": _parse_float,
    },
    "forcing": {
        "type": lambda v: v.strip().lower(),
        "width": _parse_float,
        "amplitude": _parse_float,
        "exponent": _parse_float,
        "path": str.strip,
    },
    "numerics": {
        "horizon": _parse_float,
        "tolerance": _parse_float,
        "grid_points": int,
        "r_min": _parse_float,
        "r_max": _parse_float,
        "tail_radius": _parse_float,
        "tf_grid_points": int,
        "tf_r_min": _parse_float,
        "tf_r_max": _parse_float,
        "neumann_max_iter": int,
        "bc_order": int,
        "threshold": _parse_float,
        "mode_thresholds": _parse_list,
        "target_order": _parse_float,
        "sigmas": _parse_list,
        "cutoff_window": _parse_list,
        "weight": _parse_float,
        "seed": int,
    },
    "output": {
        "directory": str.strip,
        "emit_plots": _parse_bool,
        "emit_profiles": _parse_bool,
    },
}


@dataclass
class RunConfig:
    """
    A parsed run file

    Format: `[section]` headers, `key = value` lines, `#` comments, comma
    separated lists. The potential is given as repeated
    `potential = coeff, exponent, logpower` lines in [problem].
    """

    problem: ProblemBlock = field(default_factory=ProblemBlock)
    forcing: ForcingBlock = field(default_factory=ForcingBlock)
    numerics: NumericsBlock = field(default_factory=NumericsBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    jobs: int = Config.JOBS
    source: str = "<defaults>"
    lines: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "RunConfig":
        """
        Parse run-file text

        Raises:
            ConfigValidationError: syntax or value errors, with the line number
        """
        config = cls(source=source)
        blocks = {
            "problem": config.problem,
            "forcing": config.forcing,
            "numerics": config.numerics,
            "output": config.output,
        }
        section = None
        potential: List[PotentialSpec] = []

        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise ConfigValidationError(f"unterminated section header '{line}'", line=number)
                section = line[1:-1].strip().lower()
                if section not in SECTIONS:
                    raise ConfigValidationError(f"unknown section [{section}]", line=number)
                continue
            if section is None:
                raise ConfigValidationError("key outside of any section", line=number)
            if "=" not in line:
                raise ConfigValidationError(f"expected 'key = value', got '{line}'", line=number)
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.lower()

            try:
                if section == "problem" and key == "potential":
                    parts = _parse_list(value)
                    if len(parts) not in (2, 3):
                        raise ValueError("potential needs 'coeff, exponent[, logpower]'")
                    logpower = int(parts[2]) if len(parts) == 3 else 0
                    if len(parts) == 3 and parts[2] != logpower:
                        raise ValueError("log power must be an integer")
                    potential.append(PotentialSpec(parts[0], parts[1], logpower))
                    config.lines.setdefault("problem.potential", number)
                    continue
                parser = _SCALARS[section].get(key)
                if parser is None:
                    raise ValueError(f"unknown key '{key}' in [{section}]")
                setattr(blocks[section], key, parser(value))
                config.lines[f"{section}.{key}"] = number
            except ValueError as e:
                raise ConfigValidationError(str(e), line=number) from e

        config.problem.potential = tuple(potential)
        config.validate()
        return config

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigValidationError(f"config file not found: {path}")
        return cls.parse(path.read_text(), str(path))

    def _fail(self, key: str, message: str) -> None:
        raise ConfigValidationError(message, line=self.lines.get(key))

    def validate(self) -> bool:
        """Check the invariants of a run file"""
        p, f, n = self.problem, self.forcing, self.numerics
        if p.d < 3:
            self._fail("problem.d", f"d must be >= 3, got {p.d}")
        if not p.modes or any(m < 0 for m in p.modes):
            self._fail("problem.modes", "modes must be a nonempty list of nonnegative integers")
        if p.eigenvalues is not None:
            if any(b < a for a, b in zip(p.eigenvalues, p.eigenvalues[1:])) or any(v < 0 for v in p.eigenvalues):
                self._fail("problem.eigenvalues", "eigenvalues must be nonnegative and nondecreasing")
        for term in p.potential:
            if term.exponent < 3:
                self._fail("problem.potential", f"potential exponents must be >= 3, got {term.exponent:g}")
            if term.logpower < 0:
                self._fail("problem.potential", "potential log powers must be >= 0")
        if p.potential_cutoff <= 0:
            self._fail("problem.potential_cutoff", "potential_cutoff must be positive")
        if p.beth is not None:
            if len(p.beth) > 6 or any(b < 0 for b in p.beth):
                self._fail("problem.beth", "beth takes up to six nonnegative orders (ℶ, ℶ₀, ℶ₁..ℶ₄)")
            if len(p.beth) >= 2 and p.beth[0] > p.beth[1]:
                self._fail("problem.beth", "need ℶ <= ℶ₀")
        if p.ell < 0:
            self._fail("problem.ell", "ell must be >= 0")
        if f.type not in FORCING_TYPES:
            self._fail("forcing.type", f"forcing type must be one of {', '.join(FORCING_TYPES)}")
        if f.type == "file" and not f.path:
            self._fail("forcing.path", "forcing type 'file' needs a path")
        if f.type == "power-tail" and f.exponent <= 2:
            self._fail("forcing.exponent", "power-tail forcing needs exponent > 2")
        if f.width <= 0:
            self._fail("forcing.width", "width must be positive")
        if not n.sigmas or any(s <= 0 for s in n.sigmas) or any(b >= a for a, b in zip(n.sigmas, n.sigmas[1:])):
            self._fail("numerics.sigmas", "sigmas must be positive and strictly decreasing")
        if n.horizon <= 0 or not math.isfinite(n.horizon):
            self._fail("numerics.horizon", "horizon must be a positive finite number")
        if n.tolerance <= 0:
            self._fail("numerics.tolerance", "tolerance must be positive")
        if not 0 < n.r_min < n.tail_radius < n.r_max:
            self._fail("numerics.tail_radius", "need 0 < r_min < tail_radius < r_max")
        if n.grid_points < 64:
            self._fail("numerics.grid_points", "grid_points must be >= 64")
        if not 0 < n.tf_r_min < n.tf_r_max:
            self._fail("numerics.tf_r_min", "need 0 < tf_r_min < tf_r_max")
        if len(n.cutoff_window) != 2 or not 0 < n.cutoff_window[0] < n.cutoff_window[1]:
            self._fail("numerics.cutoff_window", "cutoff_window needs two numbers 0 < lo < hi")
        if n.target_order < 0:
            self._fail("numerics.target_order", "target_order must be >= 0")
        if self.jobs < 1:
            self._fail("jobs", "jobs must be >= 1")
        return True

    def with_overrides(
        self,
        horizon: Optional[float] = None,
        tolerance: Optional[float] = None,
        output_dir: Optional[str] = None,
        jobs: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> "RunConfig":
        """Apply command-line overrides and revalidate"""
        numerics = replace(
            self.numerics,
            horizon=self.numerics.horizon if horizon is None else horizon,
            tolerance=self.numerics.tolerance if tolerance is None else tolerance,
            seed=self.numerics.seed if seed is None else seed,
        )
        output = replace(self.output, directory=self.output.directory if output_dir is None else output_dir)
        updated = replace(self, numerics=numerics, output=output, jobs=self.jobs if jobs is None else jobs)
        updated.validate()
        return updated

    def symmetry_orders(self) -> Tuple[float, ...]:
        """(ℶ, ℶ₀, ℶ₁..ℶ₄); ℶ defaults to min potential exponent - 3, the rest to ∞"""
        if self.problem.beth is not None:
            return tuple(self.problem.beth) + (math.inf,) * (6 - len(self.problem.beth))
        beth = min((t.exponent for t in self.problem.potential), default=math.inf) - 3
        beth = math.floor(beth) if math.isfinite(beth) else math.inf
        return (beth, math.inf, math.inf, math.inf, math.inf, math.inf)

    def to_dict(self) -> Dict:
        return {
            "source": self.source,
            "problem": vars(self.problem),
            "forcing": vars(self.forcing),
            "numerics": vars(self.numerics),
            "output": vars(self.output),
            "jobs": self.jobs,
        }
