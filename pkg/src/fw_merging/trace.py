import json
import math
import os
import pathlib
from dataclasses import dataclass, field
from typing import Any, Optional
from .errors import FormatError
from .options import StopReason
from .params import ParamSet


TRACE_VERSION = 1


@dataclass
class IterationRecord:
    """
    What one FW iteration saw and did.

    ``scores`` maps vertex id to its linear score (task-wise) or layer name to a map of
    vertex scores (layer-wise). ``selected`` is a list of ids (task-wise) or a map
    layer -> ids (layer-wise). ``step`` is gamma for the hard variant and the merging
    coefficients for the soft one.
    """

    t: int
    scores: dict[str, Any]
    selected: list[str] | dict[str, list[str]]
    gap: float
    step: float | list[float] | dict[str, list[float]]
    loss_before: float
    loss_after: float
    coords: Optional[dict[str, Any]] = None
    wall_ms: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "iteration",
            "t": self.t,
            "scores": self.scores,
            "selected": self.selected,
            "gap": self.gap,
            "step": self.step,
            "loss_before": self.loss_before,
            "loss_after": self.loss_after,
            "coords": self.coords,
            "wall_ms": self.wall_ms,
        }


@dataclass
class FWResult:
    """
    Output of a FW run: the merged model, one record per iteration, and why it stopped.
    """

    merged: ParamSet
    trace: list[IterationRecord]
    stop_reason: StopReason
    header: dict[str, Any] = field(default_factory=dict)
    peak_residency: int = 0

    @property
    def gaps(self) -> list[float]:
        return [record.gap for record in self.trace]

    @property
    def min_gap(self) -> float:
        return min(self.gaps) if len(self.trace) > 0 else math.inf

    @property
    def final_loss(self) -> Optional[float]:
        return self.trace[-1].loss_after if len(self.trace) > 0 else None

    def summary(self) -> dict[str, Any]:
        return {
            "kind": "result",
            "stop_reason": str(self.stop_reason),
            "iterations": len(self.trace),
            "min_gap": self.min_gap,
            "final_loss": self.final_loss,
            "peak_residency": self.peak_residency,
            "merged_hash": self.merged.content_hash(),
        }

    def __repr__(self) -> str:
        return f"{{stop_reason: {self.stop_reason}, iterations: {len(self.trace)}, min_gap: {self.min_gap}}}"


def _json_value(value):
    # JSON has no NaN/Infinity; they are written as strings
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {key: _json_value(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(item) for item in value]
    return value


def write_trace(result: FWResult, path: str | os.PathLike) -> None:
    """
    Writes a run as JSON lines: a header line echoing the configuration, one line per
    iteration, then a result line.
    """
    header = {"kind": "header", "version": TRACE_VERSION, **result.header}
    _write_lines(path, [header] + [record.to_dict() for record in result.trace] + [result.summary()])


def write_merge_trace(header: dict[str, Any], merged: ParamSet, peak_residency: int, path: str | os.PathLike) -> None:
    """ Trace of a merge without iterations (the baseline mergers): header and result lines. """
    _write_lines(path, [
        {"kind": "header", "version": TRACE_VERSION, **header},
        {"kind": "result", "iterations": 0, "peak_residency": peak_residency, "merged_hash": merged.content_hash()},
    ])


def _write_lines(path: str | os.PathLike, lines: list[dict[str, Any]]) -> None:
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(json.dumps(_json_value(line), sort_keys=False, separators=(',', ':')))
            f.write('\n')


def read_trace(path: str | os.PathLike) -> tuple[dict[str, Any], list[IterationRecord], dict[str, Any]]:
    """
    Reads a JSONL trace back.

    Returns:
        The header, the iteration records and the result summary.

    Raises:
        FormatError: If a line is not JSON or the kinds are out of order.
    """
    header = None
    records = []
    summary = None
    try:
        with open(path, encoding="utf-8") as f:
            lines = [line for line in f.read().splitlines() if line.strip() != ""]
    except OSError as error:
        raise FormatError(f"{path}: cannot read trace ({error.strerror})") from None
    for number, line in enumerate(lines, start=1):
        try:
            data = json.loads(line)
        except json.JSONDecodeError as error:
            raise FormatError(f"{path}:{number}: invalid JSON ({error})") from None
        kind = data.pop("kind", None)
        if kind == "header" and number == 1:
            header = data
        elif kind == "iteration" and header is not None and summary is None:
            records.append(IterationRecord(**data))
        elif kind == "result" and header is not None and summary is None:
            summary = data
        else:
            raise FormatError(f"{path}:{number}: unexpected '{kind}' line")
    if header is None or summary is None:
        raise FormatError(f"{path}: incomplete trace")
    return header, records, summary
