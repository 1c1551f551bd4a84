import csv
import math
import os
import pathlib
from collections.abc import Sequence
from dataclasses import dataclass


REPORT_COLUMNS = ("method", "pool_size", "relevance", "task_id", "accuracy", "mean_accuracy", "wall_ms", "peak_residency")


@dataclass(frozen=True)
class ReportRow:
    """
    Accuracy of one merged model on one evaluation task.
    """

    method: str
    pool_size: int
    relevance: str
    task_id: str
    accuracy: float
    mean_accuracy: float
    wall_ms: float
    peak_residency: int

    def to_csv(self) -> list[str]:
        return [
            self.method,
            str(self.pool_size),
            self.relevance,
            self.task_id,
            f"{self.accuracy:.6f}",
            f"{self.mean_accuracy:.6f}",
            f"{self.wall_ms:.3f}",
            str(self.peak_residency),
        ]


def write_report(rows: Sequence[ReportRow], path: str | os.PathLike, methods: Sequence[str] = ()) -> None:
    """
    Writes the report CSV, rows ordered by method (in the given order, else by name) then pool size.

    Args:
        rows (list[ReportRow]): The rows, in any order.
        path (str): The destination file.
        methods (list[str]): The method labels in report order.
    """
    order = {label: i for i, label in enumerate(methods)}
    ranked = sorted(
        enumerate(rows),
        key=lambda item: (order.get(item[1].method, len(order)), item[1].method, item[1].pool_size, item[0])
    )
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline='', encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(REPORT_COLUMNS)
        for _, row in ranked:
            writer.writerow(row.to_csv())


def read_report(path: str | os.PathLike) -> list[ReportRow]:
    with open(path, newline='', encoding="utf-8") as f:
        return [
            ReportRow(
                method=line["method"],
                pool_size=int(line["pool_size"]),
                relevance=line["relevance"],
                task_id=line["task_id"],
                accuracy=float(line["accuracy"]),
                mean_accuracy=float(line["mean_accuracy"]),
                wall_ms=float(line["wall_ms"]),
                peak_residency=int(line["peak_residency"]),
            )
            for line in csv.DictReader(f)
        ]


def write_relevance_matrix(
    rows: Sequence[tuple[int, str, Sequence[float], str]],
    pool_ids: Sequence[str],
    path: str | os.PathLike
) -> None:
    """
    Writes the linear-score matrix: one line per (trial, evaluation task), one column per
    pool checkpoint, then the id of the checkpoint with the smallest score.

    Args:
        rows (list): (trial, task id, scores in pool order, minimal checkpoint id) tuples.
        pool_ids (list[str]): The checkpoint ids, in pool order.
        path (str): The destination file.
    """
    pathlib.Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline='', encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(["trial", "task_id", *pool_ids, "minimal"])
        for trial, task_id, scores, minimal in rows:
            writer.writerow([str(trial), task_id, *[repr(float(s)) for s in scores], minimal])


def mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if len(values) > 0 else math.nan
