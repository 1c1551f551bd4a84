import json
import pytest
from fw_merging import utils


TEST_MODULE = """
from fw_merging.checkpoint import CheckpointPool
from fw_merging.config import FWConfig
from fw_merging.objectives import QuadraticObjective
from fw_merging.params import ParamSet


def test_run(fw_trace):
    pool = CheckpointPool.from_params([ParamSet({"x": [0.0, 0.0]}), ParamSet({"x": [1.0, 0.0]})])
    objective = QuadraticObjective(ParamSet({"x": [0.37, 0.0]}))
    fw_trace.run("toy", FWConfig(budget=3, epsilon=0.0), pool, objective, ParamSet({"x": [0.0, 0.0]}))


def test_no_run(fw_trace):
    pass
"""


# Without the installed entry point, the plugin is loaded explicitly in the inner sessions
PLUGIN_ARGS = [] if utils.is_package_installed("fw-merging") else ["-p", "fw_merging.plugin"]


@pytest.fixture
def toy_tests(pytester):
    pytester.makepyfile(test_toy=TEST_MODULE)
    return pytester


def _sections(reports, name):
    return [
        content
        for report in reports if report.when == "call"
        for title, content in report.sections if title == name
    ]


def test_summary_is_attached(toy_tests):
    result = toy_tests.inline_run(*PLUGIN_ARGS)
    result.assertoutcome(passed=2)
    summaries = _sections(result.getreports("pytest_runtest_logreport"), "FW traces")
    assert len(summaries) == 1
    assert summaries[0].startswith("toy: budget-exhausted after 3 iterations")
    assert "peak residency" in summaries[0]


def test_summary_can_be_disabled(toy_tests):
    toy_tests.makeini("[pytest]\nfw_merge_attach_traces = false\n")
    result = toy_tests.inline_run(*PLUGIN_ARGS)
    result.assertoutcome(passed=2)
    assert _sections(result.getreports("pytest_runtest_logreport"), "FW traces") == []


def test_traces_are_written(toy_tests):
    toy_tests.makeini("[pytest]\nfw_merge_trace_dir = traces\n")
    result = toy_tests.inline_run(*PLUGIN_ARGS)
    result.assertoutcome(passed=2)
    files = sorted((toy_tests.path / "traces").iterdir())
    assert [f.name for f in files] == ["test_toy.py_test_run-0-toy.jsonl"]
    lines = [json.loads(line) for line in files[0].read_text().splitlines()]
    assert lines[0]["kind"] == "header" and lines[-1]["kind"] == "result"
    assert len(lines) == 5


def test_seed_depends_on_the_node_id(pytester):
    pytester.makepyfile(test_seeds="""
        SEEDS = {}

        def test_a(fw_seed, request):
            SEEDS["a"] = fw_seed
            assert 0 <= fw_seed < 2 ** 64

        def test_b(fw_seed):
            SEEDS["b"] = fw_seed

        def test_c():
            assert SEEDS["a"] != SEEDS["b"]
    """)
    pytester.inline_run(*PLUGIN_ARGS).assertoutcome(passed=3)


def test_slow_marker_is_registered(pytester):
    pytester.makepyfile(test_marked="""
        import pytest

        @pytest.mark.slow
        def test_slow():
            pass
    """)
    pytester.inline_run("--strict-markers", *PLUGIN_ARGS).assertoutcome(passed=1)
