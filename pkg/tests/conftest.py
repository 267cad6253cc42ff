import numpy as np
import pytest

from anglereloc.geometry import CameraIntrinsics, PoseSE3, rotation_about_axis


def random_rotation(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rotation_about_axis(axis, rng.uniform(-np.pi, np.pi))


def random_pose(rng, t_scale=5.0):
    return PoseSE3(random_rotation(rng), rng.uniform(-t_scale, t_scale, size=3))


@pytest.fixture
def intr():
    return CameraIntrinsics(f=100.0, cx=50.0, cy=50.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
