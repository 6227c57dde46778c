import numpy as np
import pytest

from hcdefect.config import validate_config
from hcdefect.geometry import BoundaryPolicy, CellGeometry, DefectGeometry, MediumSpec


@pytest.fixture(scope="session")
def default_cfg():
    return validate_config({})


@pytest.fixture
def spec():
    return MediumSpec(0.025, 1.0, 1.0, BoundaryPolicy("full"), CellGeometry(0.3),
                      DefectGeometry("disk", 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
