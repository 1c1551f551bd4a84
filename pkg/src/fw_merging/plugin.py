import hashlib
import pytest
from . import utils
from .recorder import TraceRecorder


#
# Definition of test options
#
def pytest_addoption(parser):
    parser.addini(
        "fw_merge_trace_dir",
        type="string",
        default=None,
        help="The folder where the FW runs recorded with the 'fw_trace' fixture are written as JSONL.",
    )
    parser.addini(
        "fw_merge_attach_traces",
        type="bool",
        default=True,
        help="Whether to attach a summary of the recorded FW runs to the test report.",
    )


#
# Auxiliary functions to read INI options
#
def _fx_trace_dir(config):
    """ The folder storing the recorded traces """
    value = config.getini("fw_merge_trace_dir")
    return value if value not in (None, "") else None


def _fx_attach(config):
    """ Whether to attach the run summaries to the report """
    return config.getini("fw_merge_attach_traces")


#
# Test fixtures
#
@pytest.fixture(scope="function")
def fw_trace(request):
    return TraceRecorder(_fx_trace_dir(request.config), _fx_attach(request.config))


@pytest.fixture(scope="function")
def fw_seed(request) -> int:
    """ A 64-bit seed derived from the test node id. """
    digest = hashlib.sha256(request.node.nodeid.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


#
# Pytest Hooks
#
@pytest.hookimpl(tryfirst=True)
def pytest_configure(config):
    """
    Add markers.
    """
    config.addinivalue_line("markers", "slow: toy-scale experiments that fine-tune checkpoint pools")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """
    Complete the test report with the FW runs recorded by the 'fw_trace' fixture.
    """
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "fw_trace" not in getattr(item, "fixturenames", ()):
        return
    try:
        recorder: TraceRecorder = item.funcargs["fw_trace"]
    except (AttributeError, KeyError):
        return
    if len(recorder.runs) == 0:
        return
    if recorder.fx_attach:
        report.sections.append(("FW traces", recorder.summary()))
    try:
        recorder.write(item.nodeid)
    except Exception as error:
        utils.log_error(report, "Error writing FW traces", error)
