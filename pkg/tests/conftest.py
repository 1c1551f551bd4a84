import numpy as np
import pytest
from fw_merging.checkpoint import CheckpointPool
from fw_merging.objectives import QuadraticObjective
from fw_merging.params import ParamSet
from support import point


@pytest.fixture
def rng(fw_seed):
    return np.random.default_rng(fw_seed)


@pytest.fixture
def triangle():
    """
    Equilateral triangle of side 0.08 in the plane, with the optimum of the quadratic
    objective at the convex combination (0.3, 0.3, 0.4) of its vertices.
    """
    side = 0.08
    vertices = [point(0.0, 0.0), point(side, 0.0), point(side / 2, side * np.sqrt(3) / 2)]
    weights = np.array([0.3, 0.3, 0.4])
    target = ParamSet({"x": sum(w * v["x"] for w, v in zip(weights, vertices))})
    pool = CheckpointPool.from_params(vertices, ["v0", "v1", "v2"])
    return pool, vertices, QuadraticObjective(target), weights
