import numpy as np
import pytest
from fw_merging.checkpoint import CheckpointPool
from fw_merging.config import FWConfig
from fw_merging.engine import run_fw
from fw_merging.errors import SimplexError
from fw_merging.hull import BarycentricCoords, LayerCoords, coordinates_error, reconstruct
from fw_merging.objectives import QuadraticObjective
from fw_merging.recorder import FeasibilityWatch
from support import params, random_params


def _random_run(rng, trial):
    n = int(rng.integers(2, 7))
    pool = CheckpointPool.from_params([random_params(rng) for _ in range(n)])
    variant = "soft" if trial % 2 else "hard"
    cfg = FWConfig(
        variant=variant,
        lmo_granularity="layer" if trial % 4 >= 2 else "task",
        simplex_mode="capped" if trial % 8 >= 4 else "unit",
        k=int(rng.integers(1, n + 1)) if variant == "soft" else None,
        budget=4,
        epsilon=0.0,
        inner_steps=5,
    )
    theta0 = pool._load(0) if trial % 3 == 0 else random_params(rng)
    return cfg, pool, QuadraticObjective(random_params(rng)), theta0


def test_iterates_stay_in_the_hull(rng):
    for trial in range(200):
        cfg, pool, objective, theta0 = _random_run(rng, trial)
        watch = FeasibilityWatch()
        run_fw(cfg, pool, objective, theta0, callback=watch)
        assert len(watch.sums) > 0
        assert all(abs(total - 1.0) <= 1e-9 for total in watch.sums)
        assert all(minimum >= -1e-9 for minimum in watch.minimums)
        assert all(error <= 1e-6 for error in watch.errors)


def test_feasibility_watch_ignores_unverified_runs(rng):
    pool = CheckpointPool.from_params([random_params(rng) for _ in range(3)])
    watch = FeasibilityWatch()
    cfg = FWConfig(variant="soft", merge_fn="ties", budget=2, epsilon=0.0)
    run_fw(cfg, pool, QuadraticObjective(random_params(rng)), random_params(rng), callback=watch)
    assert watch.sums == [] and watch.errors == []


def test_blend_and_combine():
    coords = BarycentricCoords.vertex(["a", "b", "c"], "a")
    assert coords.to_dict() == {"a": 1.0, "b": 0.0, "c": 0.0}
    blended = coords.blend(0.25, {"b": 1.0})
    assert blended.to_dict() == {"a": 0.75, "b": 0.25, "c": 0.0}
    combined = blended.combine([0.25, 0.25], [{"c": 1.0}, {"a": 1.0}])
    assert combined.to_dict() == {"a": 0.625, "b": 0.125, "c": 0.25}
    combined.validate()


def test_validate_rejects_infeasible_coordinates():
    with pytest.raises(SimplexError, match="Negative"):
        BarycentricCoords({"a": 1.5, "b": -0.5}).validate()
    with pytest.raises(SimplexError, match="sum"):
        BarycentricCoords({"a": 0.5, "b": 0.4}).validate()
    with pytest.raises(SimplexError, match="Layer 'y'"):
        LayerCoords({"x": BarycentricCoords({"a": 1.0}), "y": BarycentricCoords({"a": 0.5})}).validate()


def test_layer_coords_serialization():
    shared = LayerCoords.uniform(["x", "y"], BarycentricCoords({"a": 1.0}))
    assert shared.is_shared()
    assert shared.to_dict() == {"a": 1.0}
    split = LayerCoords({"x": BarycentricCoords({"a": 1.0}), "y": BarycentricCoords({"b": 1.0})})
    assert split.to_dict() == {"x": {"a": 1.0}, "y": {"b": 1.0}}


def test_reconstruct_streams_the_pool():
    pool = CheckpointPool.from_params([params(x=[1.0], y=[0.0]), params(x=[0.0], y=[2.0])], ["a", "b"])
    coords = LayerCoords({"x": BarycentricCoords({"a": 0.5, "b": 0.5}), "y": BarycentricCoords({"b": 1.0})})
    rebuilt = reconstruct(pool, coords)
    assert rebuilt["x"].tolist() == [0.5] and rebuilt["y"].tolist() == [2.0]
    assert pool.meter.peak == 2
    assert coordinates_error(pool, coords, params(x=[0.5], y=[2.0])) == 0.0
    assert coordinates_error(pool, None, params(x=[0.5], y=[2.0])) == np.inf
