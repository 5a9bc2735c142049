"""Shared oracles and fixtures.

The brute-force helpers here deliberately avoid the package's own
nearest-neighbour code so they can serve as independent references.
"""

import numpy as np
import pytest

from assembloid.geometry import Part, Pose, Scene


def brute_nn_sq(a, b):
    """O(n*m) squared distance from each point of ``a`` to its nearest point in ``b``."""
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return d.min(axis=1)


def brute_chamfer(a, b):
    return float(brute_nn_sq(a, b).mean() + brute_nn_sq(b, a).mean())


def brute_coincident(a, b, radius):
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return int((d.min(axis=1) <= radius * radius).sum())


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_pose(rng, trans_scale=1.0):
    return Pose(random_quat(rng), rng.standard_normal(3) * trans_scale)


def random_scene(rng, n_parts=4, n_points=24, label="chair"):
    parts = [Part(k, rng.standard_normal((n_points, 3)) * 0.1, random_pose(rng, 0.3)) for k in range(n_parts)]
    return Scene(tuple(parts), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
