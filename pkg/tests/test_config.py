import pytest
from fw_merging import utils
from fw_merging.config import ExperimentConfig, FWConfig, MethodConfig, TiesConfig, load_document
from fw_merging.errors import ConfigError
from fw_merging.options import Granularity, Init, Method, MergeFn, Relevance, SimplexMode, Variant


TASKS = [
    {"task_id": "a", "seed": 0, "input_dim": 4},
    {"task_id": "b", "seed": 1, "input_dim": 4},
    {"task_id": "c", "seed": 2, "input_dim": 4},
]


def _experiment(**overrides):
    data = {
        "tasks": TASKS,
        "evaluation_tasks": ["a", "b"],
        "methods": [{"name": "fw-hard"}, {"name": "task-arithmetic", "scaling": 0.5}],
    }
    data.update(overrides)
    return data


#
# FW settings
#
def test_fw_defaults():
    cfg = FWConfig()
    assert cfg.variant == Variant.HARD
    assert cfg.lmo_granularity == Granularity.TASK
    assert cfg.budget == 10 and cfg.epsilon == 1e-6
    assert cfg.simplex_mode == SimplexMode.UNIT
    assert cfg.line_search_points == 21
    assert cfg.merge_fn == MergeFn.CONVEX
    assert cfg.init == Init.PRETRAINED


def test_fw_from_mapping():
    cfg = FWConfig.from_mapping({
        "variant": "soft",
        "lmo_granularity": "layer-wise",
        "k": 3,
        "simplex_mode": "capped",
        "ties": {"density": 0.5},
    })
    assert cfg.variant == Variant.SOFT
    assert cfg.lmo_granularity == Granularity.LAYER
    assert cfg.ties == TiesConfig(density=0.5)
    assert cfg.to_dict()["lmo_granularity"] == "layer"
    assert cfg.to_dict()["ties"] == {"density": 0.5, "scaling": 1.0}


@pytest.mark.parametrize(
    "data, match",
    [
        ({"budget": 0}, "budget"),
        ({"epsilon": -1.0}, "epsilon"),
        ({"k": 0}, "k must be"),
        ({"variant": "medium"}, "'variant'"),
        ({"line_search_points": 1}, "line_search_points"),
        ({"lambda_granularity": "layer"}, "soft"),
        ({"inner_lr": 0.0}, "inner"),
        ({"step": 0.1}, "Unknown FW configuration key 'step'"),
    ]
)
def test_fw_invalid_values(data, match):
    with pytest.raises(ConfigError, match=match):
        FWConfig.from_mapping(data)


def test_effective_k():
    assert FWConfig().effective_k(10) == 4
    assert FWConfig().effective_k(2) == 2
    assert FWConfig(k=3).effective_k(3) == 3
    with pytest.raises(ConfigError, match="exceeds"):
        FWConfig(k=5).effective_k(4)


def test_fw_from_file(tmp_path):
    path = tmp_path / "fw.yaml"
    path.write_text("variant: soft\nbudget: 5\nsimplex_mode: capped\n")
    cfg = FWConfig.from_file(path)
    assert cfg.budget == 5 and cfg.simplex_mode == SimplexMode.CAPPED
    assert cfg.replace(budget=7).budget == 7


def test_load_document_errors(tmp_path):
    with pytest.raises(ConfigError, match="Cannot read"):
        load_document(tmp_path / "missing.yaml")
    path = tmp_path / "bad.yaml"
    path.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="Cannot parse"):
        load_document(path)


#
# Methods
#
def test_method_entries():
    soft = MethodConfig.from_mapping({"name": "fw-soft", "label": "soft-capped", "simplex_mode": "capped"})
    assert soft.method == Method.FW_SOFT and soft.label == "soft-capped"
    assert soft.fw.variant == Variant.SOFT
    assert soft.to_dict()["name"] == "fw-soft"
    ta = MethodConfig.from_mapping({"name": "task-arithmetic", "scaling": 0.4})
    assert ta.scaling == 0.4 and ta.label == "task-arithmetic"
    ties = MethodConfig.from_mapping({"name": "ties", "density": 0.3})
    assert ties.ties.density == 0.3


def test_method_entry_errors():
    with pytest.raises(ConfigError, match="variant"):
        MethodConfig.from_mapping({"name": "fw-hard", "variant": "soft"})
    with pytest.raises(ConfigError, match="'name'"):
        MethodConfig.from_mapping({"scaling": 0.3})
    with pytest.raises(ConfigError, match="depth"):
        MethodConfig.from_mapping({"name": "weight-average", "depth": 2})
    with pytest.raises(ConfigError):
        MethodConfig.from_mapping({"name": "model-soup"})


#
# Experiments
#
def test_experiment_defaults(tmp_path):
    config = ExperimentConfig.from_mapping(_experiment(), tmp_path)
    assert [task.task_id for task in config.tasks] == ["a", "b", "c"]
    assert config.pool_order == ["a", "b", "c"]
    assert config.sizes == [2]
    assert config.relevance == Relevance.RELEVANT
    assert config.output_dir == tmp_path / "out"
    assert [m.label for m in config.methods] == ["fw-hard", "task-arithmetic"]
    assert config.task("b").seed == 1


def test_experiment_sections(tmp_path):
    config = ExperimentConfig.from_mapping(_experiment(
        pool={"order": ["c", "a", "b"], "epochs": 10, "lr": 0.1, "hidden": [8]},
        sweep={"sizes": [1, 3], "relevance": "irrelevant"},
        output_dir="results",
        trials=2,
    ), tmp_path)
    assert config.pool_order == ["c", "a", "b"]
    assert config.epochs == 10 and config.finetune_lr == 0.1 and config.hidden == (8,)
    assert config.sizes == [1, 3]
    assert config.relevance == Relevance.IRRELEVANT
    assert config.output_dir == tmp_path / "results"
    assert config.trials == 2


def test_experiment_task_suite_file(tmp_path):
    (tmp_path / "suite.yaml").write_text(
        "- {task_id: a, seed: 0, input_dim: 4}\n- {task_id: b, seed: 1, input_dim: 4}\n"
    )
    (tmp_path / "exp.yaml").write_text(
        "task_suite: suite.yaml\nevaluation_tasks: [a]\nmethods:\n  - name: weight-average\n"
    )
    config = ExperimentConfig.from_file(tmp_path / "exp.yaml")
    assert [task.task_id for task in config.tasks] == ["a", "b"]
    assert config.output_dir == tmp_path / "out"


@pytest.mark.parametrize(
    "overrides, match",
    [
        ({"methods": []}, "at least one merging method"),
        ({"evaluation_tasks": ["z"]}, "missing from the suite"),
        ({"evaluation_tasks": []}, "evaluation_tasks"),
        ({"sweep": {"sizes": [3, 2]}}, "strictly ascending"),
        ({"sweep": {"sizes": [0]}}, "positive"),
        ({"sweep": {"relevance": "random"}}, "sweep.relevance"),
        ({"pool": {"order": ["a", "a"]}}, "twice"),
        ({"pool": {"seed": 3}}, "Unknown pool configuration key 'seed'"),
        ({"trials": 0}, "trials"),
        ({"colour": "red"}, "Unknown experiment configuration key 'colour'"),
        ({"methods": [{"name": "fw-hard"}, {"name": "fw-hard"}]}, "unique"),
    ]
)
def test_experiment_errors(tmp_path, overrides, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_mapping(_experiment(**overrides), tmp_path)


def test_experiment_needs_tasks(tmp_path):
    data = _experiment()
    del data["tasks"]
    with pytest.raises(ConfigError, match="task_suite"):
        ExperimentConfig.from_mapping(data, tmp_path)


def test_cache_folder(tmp_path, monkeypatch):
    monkeypatch.delenv("FW_MERGE_CACHE", raising=False)
    config = ExperimentConfig.from_mapping(_experiment(), tmp_path)
    assert config.cache_folder == tmp_path / "out" / "cache"
    configured = ExperimentConfig.from_mapping(_experiment(cache_dir="ckpt"), tmp_path)
    assert configured.cache_folder == tmp_path / "ckpt"
    monkeypatch.setenv("FW_MERGE_CACHE", str(tmp_path / "env"))
    assert configured.cache_folder == tmp_path / "env"


def test_safe_filename():
    assert utils.safe_filename("tests/test_a.py::test_b[x-1]") == "tests_test_a.py_test_b_x-1"
    assert utils.safe_filename("///") == "run"
