import numpy as np
import pytest

from ssloc.room import Constellation, PointPosition, RoomSpec

PAPER_DIMS = (6.0, 6.2, 3.0)
MIC1 = PointPosition(3.0, 3.0, 1.0)
MIC2 = PointPosition(3.2, 3.0, 1.0)


@pytest.fixture
def paper_room():
    return RoomSpec(PAPER_DIMS, 0.0, rir_seconds=0.1)


@pytest.fixture
def paper_constellation():
    return Constellation(MIC1, MIC2, source_radius=2.0, azimuth_range=(10.0, 60.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
