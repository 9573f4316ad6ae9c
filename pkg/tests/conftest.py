import pytest

from rematsched.graph import from_edges

SKIP4_EDGES = [(0, 1), (1, 2), (2, 3), (0, 3)]
UNET2_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]


@pytest.fixture
def skip4():
    return from_edges(4, SKIP4_EDGES)


@pytest.fixture
def chain4():
    return from_edges(4, [(0, 1), (1, 2), (2, 3)])
