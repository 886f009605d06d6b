import numpy as np
import pytest

from regiongrasp import hand as handmod
from regiongrasp.geometry import TriMesh

BOX_FACES = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
                      [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
                      [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]],
                     dtype=np.int64)


def box_mesh(center=(0, 0, 0), half=(0.5, 0.5, 0.5)) -> TriMesh:
    """Axis-aligned watertight box with outward faces."""
    half = np.asarray(half, dtype=np.float64)
    v = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                  for sz in (-1, 1)], dtype=np.float64) * half
    return TriMesh(vertices=v + np.asarray(center, dtype=np.float64),
                   faces=BOX_FACES.copy())


@pytest.fixture(scope="session")
def hand_model():
    return handmod.load_hand_model()
