import importlib.metadata
import os
import pathlib
import pytest
import re
import sys
from typing import Optional


verbosity = 0


#
# Auxiliary functions
#
def set_verbosity(level: int) -> None:
    """ Sets how chatty log_info is: 0 silences it. """
    global verbosity
    verbosity = level


def is_package_installed(pkg: str) -> bool:
    """ Whether a python package is installed """
    try:
        importlib.metadata.version(pkg)
        return True
    except importlib.metadata.PackageNotFoundError:
        return False


def get_cache_dir(configured: Optional[str | os.PathLike], output_dir: str | os.PathLike) -> pathlib.Path:
    """
    The checkpoint cache folder: $FW_MERGE_CACHE, else the configured folder, else <output_dir>/cache.
    """
    env = os.environ.get("FW_MERGE_CACHE")
    if env:
        return pathlib.Path(env)
    if configured is not None:
        return pathlib.Path(configured)
    return pathlib.Path(output_dir, "cache")


def safe_filename(text: str) -> str:
    """ A file name built from a label or a pytest node id. """
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_") or "run"


#
# Logger functions
#
def _append_stderr(report: pytest.TestReport, message: str) -> None:
    for i in range(len(report.sections)):
        if "stderr" in report.sections[i][0]:
            report.sections[i] = (
                report.sections[i][0],
                report.sections[i][1] + '\n' + message
            )
            return
    report.sections.append(("Captured stderr call", message))


def log_error(
    report: Optional[pytest.TestReport],
    message: Optional[str],
    error: Optional[Exception] = None
) -> None:
    """
    Writes an error message to stderr, or appends it in the stderr section of a test report.

    Args:
        report (pytest.TestReport): The pytest test report (optional).
        message (str): The message to log.
        error (Exception): The exception to log (optional).
    """
    if message is None and error is None:
        return
    message = f"{message}\n" if error is None else f"{message}\n{repr(error)}\n"
    if report is None:
        print(message, end='', file=sys.stderr)
    else:
        _append_stderr(report, message)


def log_warning(
    report: Optional[pytest.TestReport],
    message: str,
    error: Optional[Exception] = None
) -> None:
    """ Same as log_error, with a 'Warning:' prefix. """
    log_error(report, f"Warning: {message}", error)


def log_info(message: str) -> None:
    """ Progress message to stderr, shown only when verbosity is raised. """
    if verbosity > 0:
        print(message, file=sys.stderr)
