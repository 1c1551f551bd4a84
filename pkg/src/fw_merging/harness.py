import dataclasses
import hashlib
import json
import math
import pathlib
import time
from dataclasses import dataclass
from typing import Any, Optional
from . import baselines, utils
from .checkpoint import EXTENSION, CheckpointPool, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, MethodConfig
from .engine import linear_scores, run_fw
from .errors import ConfigError, FormatError
from .objectives import (
    Architecture,
    CalibrationBatch,
    MultiTaskObjective,
    TaskSpec,
    accuracy,
    finetune,
    generate_task,
    pretrained,
)
from .options import Method, Relevance
from .params import ParamSet
from .reporting import ReportRow, mean, write_relevance_matrix, write_report
from .trace import write_merge_trace, write_trace


# Seeds of repeated relevance trials are shifted by multiples of this stride
TRIAL_SEED_STRIDE = 1_000_003
NOISY_SUFFIX = "~noisy"


#
# Checkpoint cache
#
class CheckpointCache:
    """
    Fine-tuned checkpoints stored as ``<task>_<pretrained seed>_<epochs>_<fingerprint>.fwck`` files.

    The fingerprint hashes the task definition and the fine-tuning learning rate,
    so editing a task under the same id trains a new checkpoint.
    """

    def __init__(self, folder: str | pathlib.Path, arch: Architecture, lr: float):
        self.folder = pathlib.Path(folder)
        self.arch = arch
        self.lr = lr

    def fingerprint(self, spec: TaskSpec) -> str:
        text = json.dumps({"task": spec.to_dict(), "lr": self.lr}, sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:8]

    def path(self, spec: TaskSpec, pretrained_seed: int, epochs: int) -> pathlib.Path:
        name = f"{utils.safe_filename(spec.task_id)}_{pretrained_seed}_{epochs}_{self.fingerprint(spec)}"
        return self.folder / f"{name}.{EXTENSION}"

    def get(self, spec: TaskSpec, pretrained_seed: int, epochs: int) -> pathlib.Path:
        """
        The path of the checkpoint fine-tuned on a task, training and saving it if needed.
        Unreadable or mismatching cache files are regenerated with a warning.
        """
        path = self.path(spec, pretrained_seed, epochs)
        if path.is_file():
            try:
                if load_checkpoint(path).schema == self.arch.schema:
                    return path
                utils.log_warning(None, f"Cached checkpoint '{path}' does not match the architecture, regenerating it")
            except FormatError as error:
                utils.log_warning(None, f"Corrupt cached checkpoint '{path}', regenerating it", error)
        utils.log_info(f"Fine-tuning '{spec.task_id}' from pre-trained seed {pretrained_seed} ({epochs} epochs)")
        train, _ = generate_task(spec)
        theta = finetune(pretrained(self.arch, pretrained_seed), train, epochs, self.lr)
        save_checkpoint(theta, path)
        return path


@dataclass
class Suite:
    """ The generated data and pre-trained model of one experiment trial. """

    config: ExperimentConfig
    trial: int
    arch: Architecture
    theta0: ParamSet
    tasks: dict[str, TaskSpec]
    train: dict[str, CalibrationBatch]
    test: dict[str, CalibrationBatch]
    cache: CheckpointCache

    @classmethod
    def build(cls, config: ExperimentConfig, trial: int = 0) -> "Suite":
        shift = trial * TRIAL_SEED_STRIDE
        tasks = {task.task_id: dataclasses.replace(task, seed=task.seed + shift) for task in config.tasks}
        reference = config.tasks[0]
        arch = Architecture(reference.input_dim, config.hidden, reference.num_classes)
        train, test = {}, {}
        for task_id, task in tasks.items():
            train[task_id], test[task_id] = generate_task(task)
        folder = config.cache_folder if trial == 0 else config.cache_folder / f"trial{trial}"
        return cls(
            config=config,
            trial=trial,
            arch=arch,
            theta0=pretrained(arch, config.pretrained_seed + shift),
            tasks=tasks,
            train=train,
            test=test,
            cache=CheckpointCache(folder, arch, config.finetune_lr),
        )

    @property
    def objective(self) -> MultiTaskObjective:
        """ Mean cross-entropy over the training batches of the evaluation tasks. """
        return MultiTaskObjective([self.train[task_id] for task_id in self.config.evaluation_tasks], self.arch)

    def checkpoint(self, task_id: str) -> pathlib.Path:
        shift = self.trial * TRIAL_SEED_STRIDE
        if task_id.endswith(NOISY_SUFFIX):
            task = self.tasks[task_id.removesuffix(NOISY_SUFFIX)]
            return self.cache.get(task, self.config.noisy_pretrained_seed + shift, self.config.epochs)
        return self.cache.get(self.tasks[task_id], self.config.pretrained_seed + shift, self.config.epochs)

    def evaluate(self, theta: ParamSet) -> dict[str, float]:
        return {task_id: accuracy(theta, self.test[task_id]) for task_id in self.config.evaluation_tasks}


def pool_members(config: ExperimentConfig, size: int) -> list[str]:
    """
    The checkpoint ids of a sweep pool of the given size.

    relevant: the first ``size`` evaluation tasks in pool order. irrelevant: every
    evaluation task, then the first non-evaluation tasks. noisy: every evaluation task,
    then evaluation tasks fine-tuned from the noisy pre-trained model.

    Raises:
        ConfigError: If the suite cannot provide that many checkpoints.
    """
    relevant = [task_id for task_id in config.pool_order if task_id in config.evaluation_tasks]
    others = [task_id for task_id in config.pool_order if task_id not in config.evaluation_tasks]
    match config.relevance:
        case Relevance.RELEVANT:
            candidates, minimum = relevant, 1
        case Relevance.IRRELEVANT:
            candidates, minimum = relevant + others, len(relevant)
        case _:
            candidates, minimum = relevant + [task_id + NOISY_SUFFIX for task_id in relevant], len(relevant)
    if not minimum <= size <= len(candidates):
        raise ConfigError(
            f"A {config.relevance} pool of size {size} needs between {minimum} and {len(candidates)} checkpoints"
        )
    return candidates[:size]


#
# Merging methods
#
def _merge(
    method: MethodConfig,
    suite: Suite,
    pool: CheckpointPool,
    trace_path: pathlib.Path,
    header: dict[str, Any]
) -> tuple[ParamSet, int]:
    """ Runs a method on a pool; returns the merged model and the peak residency. """
    header = {**header, "method": method.to_dict()}
    if method.method.is_frank_wolfe:
        cfg = method.fw
        if cfg.k is not None and cfg.k > len(pool):
            cfg = cfg.replace(k=len(pool))
        result = run_fw(cfg, pool, suite.objective, suite.theta0, record_timing=suite.config.record_timing)
        result.header = {**header, **result.header}
        write_trace(result, trace_path)
        return result.merged, result.peak_residency
    match method.method:
        case Method.WEIGHT_AVERAGE:
            merged = baselines.weight_average(pool)
        case Method.TASK_ARITHMETIC:
            merged = baselines.task_arithmetic(suite.theta0, pool, method.scaling)
        case _:
            merged = baselines.ties_merge(suite.theta0, pool, method.ties)
    write_merge_trace(header, merged, pool.meter.peak, trace_path)
    return merged, pool.meter.peak


def run_scaling(config: ExperimentConfig) -> list[ReportRow]:
    """
    Sweeps the pool sizes in ascending order, runs every method at every size and writes
    ``report.csv`` and one trace per run in the output folder.
    """
    suite = Suite.build(config)
    rows = []
    for method in config.methods:
        for size in config.sizes:
            members = pool_members(config, size)
            pool = CheckpointPool([(member, suite.checkpoint(member)) for member in members])
            utils.log_info(f"{method.label}: {config.relevance} pool of {size} checkpoints")
            trace_path = config.output_dir / "traces" / f"{utils.safe_filename(method.label)}_{config.relevance}_{size}.jsonl"
            header = {"pool_size": size, "relevance": str(config.relevance), "pool": members}
            start = time.perf_counter()
            merged, peak = _merge(method, suite, pool, trace_path, header)
            wall_ms = (time.perf_counter() - start) * 1000.0 if config.record_timing else 0.0
            accuracies = suite.evaluate(merged)
            average = mean(list(accuracies.values()))
            for task_id, value in accuracies.items():
                rows.append(ReportRow(method.label, size, str(config.relevance), task_id, value, average, wall_ms, peak))
    write_report(rows, config.output_dir / "report.csv", [method.label for method in config.methods])
    return rows


#
# Relevance analysis
#
@dataclass
class RelevanceResult:
    """ Linear scores of every pool checkpoint under each evaluation task's gradient at theta0. """

    pool_ids: list[str]
    rows: list[tuple[int, str, list[float], str]]

    @property
    def own_minimal_fraction(self) -> float:
        """ Among tasks with their own checkpoint in the pool, the fraction where it scores lowest. """
        owned = [minimal == task_id for _, task_id, _, minimal in self.rows if task_id in self.pool_ids]
        return sum(owned) / len(owned) if len(owned) > 0 else math.nan


def run_relevance(config: ExperimentConfig, pool_ids: Optional[list[str]] = None) -> RelevanceResult:
    """
    For every trial and evaluation task, scores the pool checkpoints with that task's
    gradient at the pre-trained model and writes ``relevance.csv``.

    Raises:
        ConfigError: If the suite has fewer than 2 tasks.
    """
    if len(config.tasks) < 2:
        raise ConfigError("The relevance analysis needs a suite with at least 2 tasks")
    pool_ids = list(pool_ids if pool_ids is not None else config.pool_order)
    rows = []
    for trial in range(config.trials):
        suite = Suite.build(config, trial)
        pool = CheckpointPool([(task_id, suite.checkpoint(task_id)) for task_id in pool_ids])
        for task_id in config.evaluation_tasks:
            _, grad = MultiTaskObjective([suite.train[task_id]], suite.arch).loss_and_grad(suite.theta0)
            scores = [score for _, score in linear_scores(pool, grad)]
            minimal = pool_ids[min(range(len(scores)), key=lambda i: (scores[i], i))]
            rows.append((trial, task_id, scores, minimal))
    result = RelevanceResult(pool_ids, rows)
    write_relevance_matrix(rows, pool_ids, config.output_dir / "relevance.csv")
    return result
