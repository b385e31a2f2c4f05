import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from scripts.indexset import ConeData  # noqa: E402
from scripts.utils import SmoothCutoff, geometric_grid  # noqa: E402


@pytest.fixture
def cone3():
    """Euclidean R^3 as the cone over the round 2-sphere"""
    return ConeData.sphere(3, 12)


@pytest.fixture
def cone4():
    return ConeData.sphere(4, 12)


@pytest.fixture
def grid():
    return geometric_grid(1e-3, 1e3, 2048)


@pytest.fixture
def cutoff():
    return SmoothCutoff()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
