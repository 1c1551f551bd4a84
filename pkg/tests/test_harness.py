import dataclasses
import math
import pytest
import struct
from fw_merging.checkpoint import load_checkpoint
from fw_merging.config import ExperimentConfig
from fw_merging.errors import ConfigError
from fw_merging.harness import (
    NOISY_SUFFIX,
    CheckpointCache,
    Suite,
    pool_members,
    run_relevance,
    run_scaling,
)
from fw_merging.objectives import Architecture, TaskSpec
from fw_merging.reporting import read_report


@pytest.fixture(autouse=True)
def no_cache_override(monkeypatch):
    monkeypatch.delenv("FW_MERGE_CACHE", raising=False)


def _tiny(tmp_path, **overrides):
    data = {
        "tasks": [
            {"task_id": "a", "seed": 0, "input_dim": 4, "block_size": 2, "block": 0, "n_train": 20, "n_test": 20},
            {"task_id": "b", "seed": 1, "input_dim": 4, "block_size": 2, "block": 1, "n_train": 20, "n_test": 20},
            {"task_id": "c", "seed": 2, "input_dim": 4, "block_size": 2, "block": 1, "n_train": 20, "n_test": 20},
        ],
        "evaluation_tasks": ["a", "b"],
        "methods": [{"name": "weight-average"}],
        "pool": {"epochs": 3, "hidden": [4]},
    }
    data.update(overrides)
    return ExperimentConfig.from_mapping(data, tmp_path)


def _mean_accuracy(rows):
    """ (method, pool size) -> mean accuracy over the evaluation tasks """
    return {(row.method, row.pool_size): row.mean_accuracy for row in rows}


#
# Pool construction
#
def test_pool_members(tmp_path):
    assert pool_members(_tiny(tmp_path), 1) == ["a"]
    assert pool_members(_tiny(tmp_path, sweep={"relevance": "irrelevant"}), 3) == ["a", "b", "c"]
    assert pool_members(_tiny(tmp_path, sweep={"relevance": "noisy"}), 4) == ["a", "b", "a~noisy", "b~noisy"]
    ordered = _tiny(tmp_path, pool={"order": ["b", "c", "a"], "epochs": 3})
    assert pool_members(ordered, 2) == ["b", "a"]


def test_pool_members_out_of_range(tmp_path):
    with pytest.raises(ConfigError):
        pool_members(_tiny(tmp_path), 3)
    with pytest.raises(ConfigError):
        pool_members(_tiny(tmp_path, sweep={"relevance": "irrelevant"}), 1)


def test_suite_trials_shift_the_seeds(tmp_path):
    config = _tiny(tmp_path)
    first, second = Suite.build(config, 0), Suite.build(config, 1)
    assert first.tasks["a"].seed == 0 and second.tasks["a"].seed != 0
    assert not first.theta0.equals(second.theta0)
    assert second.cache.folder == config.cache_folder / "trial1"
    assert first.objective.task_ids == ["a", "b"]


def test_checkpoint_cache(tmp_path):
    arch = Architecture(4, (4,), 2)
    cache = CheckpointCache(tmp_path / "cache", arch, 0.5)
    spec = TaskSpec("a", seed=0, input_dim=4, n_train=20)
    path = cache.get(spec, 0, 3)
    assert path.name == f"a_0_3_{cache.fingerprint(spec)}.fwck"
    stamp = path.stat().st_mtime_ns
    assert cache.get(spec, 0, 3) == path
    assert path.stat().st_mtime_ns == stamp
    assert load_checkpoint(path).schema == arch.schema


def test_edited_tasks_are_retrained(tmp_path):
    arch = Architecture(4, (4,), 2)
    cache = CheckpointCache(tmp_path, arch, 0.5)
    spec = TaskSpec("a", seed=0, input_dim=4, n_train=20)
    original = cache.get(spec, 0, 3)
    for edited in (
        dataclasses.replace(spec, seed=7),
        dataclasses.replace(spec, rotation=math.pi),
        dataclasses.replace(spec, label_shift=1),
    ):
        path = cache.get(edited, 0, 3)
        assert path != original
        assert not load_checkpoint(path).equals(load_checkpoint(original))
    other_rate = CheckpointCache(tmp_path, arch, 0.1).get(spec, 0, 3)
    assert other_rate != original
    assert len(list(tmp_path.iterdir())) == 5


def test_corrupt_cache_entries_are_regenerated(tmp_path, capsys):
    arch = Architecture(4, (4,), 2)
    cache = CheckpointCache(tmp_path, arch, 0.5)
    spec = TaskSpec("a", seed=0, input_dim=4, n_train=20)
    path = cache.path(spec, 0, 3)
    path.write_bytes(b"garbage")
    cache.get(spec, 0, 3)
    assert "Warning: Corrupt cached checkpoint" in capsys.readouterr().err
    assert load_checkpoint(path).schema == arch.schema
    # a cache file of another architecture is regenerated too
    CheckpointCache(tmp_path, Architecture(4, (2,), 2), 0.5).get(spec, 0, 3)
    assert "does not match the architecture" in capsys.readouterr().err


def test_cache_entry_with_an_oversized_header_is_regenerated(tmp_path, capsys):
    arch = Architecture(4, (4,), 2)
    cache = CheckpointCache(tmp_path, arch, 0.5)
    spec = TaskSpec("a", seed=0, input_dim=4, n_train=20)
    path = cache.get(spec, 0, 3)
    expected = load_checkpoint(path)
    data = bytearray(path.read_bytes())
    data[8:16] = struct.pack("<Q", 2 ** 63 + 5)
    path.write_bytes(bytes(data))
    assert cache.get(spec, 0, 3) == path
    assert "exceeds file size" in capsys.readouterr().err
    assert load_checkpoint(path).equals(expected)


def test_noisy_checkpoints_use_the_noisy_seed(tmp_path):
    suite = Suite.build(_tiny(tmp_path, sweep={"relevance": "noisy"}))
    assert suite.checkpoint("a" + NOISY_SUFFIX).name.startswith("a_1_3_")
    assert suite.checkpoint("a").name.startswith("a_0_3_")


def test_scaling_writes_rows_and_traces(tmp_path):
    config = _tiny(
        tmp_path,
        methods=[
            {"name": "fw-soft", "k": 4, "budget": 1},
            {"name": "weight-average"},
            {"name": "ties", "density": 0.5},
        ],
        sweep={"sizes": [1, 2]},
    )
    rows = run_scaling(config)
    assert [(row.method, row.pool_size, row.task_id) for row in rows[:2]] == [("fw-soft", 1, "a"), ("fw-soft", 1, "b")]
    assert len(rows) == 3 * 2 * 2
    reported = read_report(config.output_dir / "report.csv")
    assert [(row.method, row.pool_size, row.task_id) for row in reported] == \
        [(row.method, row.pool_size, row.task_id) for row in rows]
    assert [row.accuracy for row in reported] == pytest.approx([row.accuracy for row in rows], abs=1e-6)
    traces = sorted(p.name for p in (config.output_dir / "traces").iterdir())
    assert "fw-soft_relevant_1.jsonl" in traces and "ties_relevant_2.jsonl" in traces
    ties_rows = [row for row in rows if row.method == "ties"]
    assert [row.peak_residency for row in ties_rows] == [1, 1, 2, 2]


def test_relevance_with_a_single_checkpoint(tmp_path):
    config = _tiny(tmp_path)
    result = run_relevance(config, ["c"])
    assert [minimal for _, _, _, minimal in result.rows] == ["c", "c"]
    lines = (config.output_dir / "relevance.csv").read_text().splitlines()
    assert lines[0] == "trial,task_id,c,minimal"
    assert len(lines) == 1 + len(config.evaluation_tasks)


def test_relevance_needs_two_tasks(tmp_path):
    config = _tiny(tmp_path, tasks=[{"task_id": "a", "seed": 0, "input_dim": 4}], evaluation_tasks=["a"])
    with pytest.raises(ConfigError):
        run_relevance(config)


#
# Toy-scale experiments
#
def _irrelevant_suite():
    rotations = [0.3, 1.1, 2.0, 2.9]
    tasks = [
        {"task_id": f"e{b}", "seed": b, "input_dim": 16, "block_size": 4, "block": b,
         "rotation": rotations[b], "separation": 3.0}
        for b in range(4)
    ]
    # same input block as the evaluation task, its own rotation and flipped labels
    for m in range(3):
        for b in range(4):
            tasks.append({
                "task_id": f"x{b}_{m}", "seed": 100 + 3 * b + m, "input_dim": 16, "block_size": 4, "block": b,
                "rotation": rotations[b] + 0.5, "separation": 3.0, "label_shift": 1,
            })
    return tasks


@pytest.mark.slow
def test_fw_soft_ignores_irrelevant_checkpoints(tmp_path):
    config = ExperimentConfig.from_mapping({
        "tasks": _irrelevant_suite(),
        "evaluation_tasks": ["e0", "e1", "e2", "e3"],
        "methods": [
            {"name": "fw-soft", "simplex_mode": "capped", "k": 4, "budget": 2},
            {"name": "task-arithmetic", "scaling": 0.3},
        ],
        "pool": {"epochs": 200, "lr": 0.5, "hidden": [16]},
        "sweep": {"sizes": [4, 8, 12, 16], "relevance": "irrelevant"},
    }, tmp_path)
    accuracy = _mean_accuracy(run_scaling(config))
    fw = [accuracy[("fw-soft", size)] for size in config.sizes]
    ta = [accuracy[("task-arithmetic", size)] for size in config.sizes]
    assert max(fw) - min(fw) <= 0.02
    assert ta[0] - ta[-1] >= 0.10


@pytest.mark.slow
def test_fw_soft_improves_with_relevant_checkpoints(tmp_path):
    separations = [1.0, 1.5, 2.0, 2.5, 3.0, 1.2, 1.8, 2.2]
    tasks = [
        {"task_id": f"t{i}", "seed": 10 + i, "input_dim": 16, "block_size": 2, "block": i, "separation": separations[i]}
        for i in range(8)
    ]
    config = ExperimentConfig.from_mapping({
        "tasks": tasks,
        "evaluation_tasks": [task["task_id"] for task in tasks],
        "methods": [
            {"name": "fw-soft", "simplex_mode": "capped", "k": 8, "budget": 6, "inner_steps": 200},
            {"name": "task-arithmetic", "scaling": 0.3},
        ],
        "pool": {"epochs": 200, "lr": 0.5, "hidden": [16]},
        "sweep": {"sizes": [2, 4, 6, 8]},
    }, tmp_path)
    accuracy = _mean_accuracy(run_scaling(config))
    assert accuracy[("fw-soft", 8)] >= accuracy[("fw-soft", 2)]
    assert accuracy[("fw-soft", 8)] >= accuracy[("task-arithmetic", 8)]


@pytest.mark.slow
def test_own_checkpoint_scores_lowest(tmp_path):
    config = ExperimentConfig.from_mapping({
        "tasks": [
            {"task_id": "a", "seed": 0, "input_dim": 16, "block_size": 8, "block": 0, "separation": 3.0},
            {"task_id": "b", "seed": 1, "input_dim": 16, "block_size": 8, "block": 1, "separation": 3.0},
        ],
        "evaluation_tasks": ["a", "b"],
        "methods": [{"name": "weight-average"}],
        "pool": {"epochs": 100, "hidden": [16]},
        "trials": 20,
    }, tmp_path)
    result = run_relevance(config)
    assert len(result.rows) == 40
    assert result.own_minimal_fraction >= 0.9
    lines = (config.output_dir / "relevance.csv").read_text().splitlines()
    assert lines[0] == "trial,task_id,a,b,minimal"
    assert len(lines) == 41


@pytest.mark.slow
def test_scaling_reports_are_reproducible(tmp_path):
    def report(folder):
        config = _tiny(
            tmp_path,
            methods=[{"name": "fw-hard", "budget": 3}, {"name": "task-arithmetic"}],
            sweep={"sizes": [1, 2]},
            output_dir=folder,
            cache_dir="cache",
        )
        run_scaling(config)
        return (config.output_dir / "report.csv").read_bytes()

    assert report("first") == report("second")
