import pathlib
from collections.abc import Callable
from typing import Optional
from . import utils
from .checkpoint import CheckpointPool
from .config import FWConfig
from .engine import IterationState, run_fw
from .hull import coordinates_error
from .objectives import Objective
from .params import ParamSet
from .trace import FWResult, write_trace


class TraceRecorder:
    """
    Class to hold the FW runs of a test, to be attached to its report.
    """

    def __init__(self, trace_dir: Optional[str], attach: bool):
        """
        Args:
            trace_dir (str): The folder where the recorded traces are written (optional).
            attach (bool): Whether to attach a summary of the runs to the test report.
        """
        self.runs: list[tuple[str, FWResult]] = []
        self.fx_trace_dir = trace_dir
        self.fx_attach = attach

    def __repr__(self) -> str:
        return f"{{id: {hex(id(self))}, runs: {[label for label, _ in self.runs]}}}"

    def record(self, label: str, result: FWResult) -> FWResult:
        """
        Adds a finished run.

        Args:
            label (str): The run name shown in the report.
            result (FWResult): The run.
        """
        self.runs.append((label, result))
        return result

    def run(
        self,
        label: str,
        cfg: FWConfig,
        pool: CheckpointPool,
        obj: Objective,
        theta0: ParamSet,
        callback: Optional[Callable[[IterationState], None]] = None
    ) -> FWResult:
        """ Runs run_fw and records the result. """
        return self.record(label, run_fw(cfg, pool, obj, theta0, callback))

    def summary(self) -> str:
        lines = []
        for label, result in self.runs:
            lines.append(
                f"{label}: {result.stop_reason} after {len(result.trace)} iterations, "
                f"min gap {result.min_gap:.3e}, final loss {result.final_loss}, "
                f"peak residency {result.peak_residency}"
            )
        return '\n'.join(lines)

    def write(self, nodeid: str) -> list[pathlib.Path]:
        """
        Writes every recorded run as a JSONL file in the trace folder.

        Returns:
            The written files.
        """
        if self.fx_trace_dir is None:
            return []
        files = []
        for i, (label, result) in enumerate(self.runs):
            path = pathlib.Path(self.fx_trace_dir, f"{utils.safe_filename(nodeid)}-{i}-{utils.safe_filename(label)}.jsonl")
            write_trace(result, path)
            files.append(path)
        return files


class FeasibilityWatch:
    """
    run_fw callback collecting, per iteration, the coordinate sum, the smallest
    coordinate and the reconstruction error of the merged model.
    """

    def __init__(self, reconstruct: bool = True):
        self.reconstruct = reconstruct
        self.sums: list[float] = []
        self.minimums: list[float] = []
        self.errors: list[float] = []

    def __call__(self, state: IterationState) -> None:
        if state.coords is None:
            return
        for coords in state.coords.layers.values():
            self.sums.append(coords.total)
            self.minimums.append(min(coords.weights.values()))
        if self.reconstruct:
            self.errors.append(coordinates_error(state.pool, state.coords, state.theta))
