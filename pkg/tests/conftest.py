import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from dynamics import CableSystem, CircleRotation, IdentityMap, PiecewiseLinearMap, UNIT_INTERVAL  # noqa: E402
from quadrature import build_rule  # noqa: E402

CONFIG_DIR = ROOT / "data" / "configs"


@pytest.fixture
def piecewise():
    return PiecewiseLinearMap()


@pytest.fixture
def identity():
    return IdentityMap()


@pytest.fixture
def rotation():
    return CircleRotation(shift=0.1)


@pytest.fixture
def cable():
    return CableSystem()


@pytest.fixture
def unit_rule():
    """256 Gauss-Legendre panels on [0, 1] with the default jump location as a panel edge."""
    return build_rule(UNIT_INTERVAL, breakpoints=(0.4,))


@pytest.fixture
def config_dir():
    return CONFIG_DIR
