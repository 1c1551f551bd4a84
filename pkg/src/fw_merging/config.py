import dataclasses
import os
import pathlib
import yaml
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Optional, Self
from . import utils
from .errors import ConfigError
from .options import (
    Granularity,
    Init,
    LambdaGranularity,
    MergeFn,
    Method,
    Relevance,
    SimplexMode,
    Variant,
)


#
# Document helpers
#
def load_document(path: str | os.PathLike) -> Any:
    """
    Reads a JSON or YAML document.

    Raises:
        ConfigError: If the file is missing or cannot be parsed.
    """
    try:
        with open(path, encoding="utf-8") as f:
            return yaml.safe_load(f)
    except OSError as error:
        raise ConfigError(f"Cannot read configuration file '{path}' ({error.strerror})") from None
    except yaml.YAMLError as error:
        raise ConfigError(f"Cannot parse configuration file '{path}'\n{error}") from None


def check_keys(data: Mapping[str, Any], allowed: set[str], what: str) -> None:
    """
    Raises:
        ConfigError: Naming the first unknown key.
    """
    if not isinstance(data, Mapping):
        raise ConfigError(f"The {what} configuration must be a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"Unknown {what} configuration key '{key}'. Accepted keys: {', '.join(sorted(allowed))}")


def pick(data: Mapping[str, Any], cls: type, what: str) -> dict[str, Any]:
    """ The keys of a mapping accepted by a dataclass, after checking for unknown ones. """
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    check_keys(data, names, what)
    return dict(data)


#
# Merger configurations
#
@dataclass(frozen=True)
class TiesConfig:
    """
    Parameters of the TIES-style merge: trim to ``density``, elect signs, disjoint mean,
    then scale the merged task vector by ``scaling``.
    """

    density: float = 0.2
    scaling: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.density <= 1.0:
            raise ConfigError(f"TIES density must be in (0, 1], got {self.density!r}")
        if self.scaling <= 0.0:
            raise ConfigError(f"TIES scaling must be positive, got {self.scaling!r}")

    @classmethod
    def from_mapping(cls, data: Optional[Mapping[str, Any]]) -> Self:
        return cls(**pick(data or {}, cls, "ties"))


@dataclass(frozen=True)
class FWConfig:
    """
    Settings of a Frank-Wolfe merging run. Every value is echoed in the trace header.
    """

    variant: Variant = Variant.HARD
    lmo_granularity: Granularity = Granularity.TASK
    budget: int = 10
    epsilon: float = 1e-6
    k: Optional[int] = None
    inner_steps: int = 50
    inner_lr: float = 0.1
    simplex_mode: SimplexMode = SimplexMode.UNIT
    lambda_granularity: LambdaGranularity = LambdaGranularity.VERTEX
    line_search_points: int = 21
    merge_fn: MergeFn = MergeFn.CONVEX
    init: Init = Init.PRETRAINED
    init_scaling: float = 0.3
    optimize_lambda: bool = True
    ties: TiesConfig = field(default_factory=TiesConfig)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "variant", Variant.parse(self.variant, "variant"))
        set_(self, "lmo_granularity", Granularity.parse(self.lmo_granularity, "lmo_granularity"))
        set_(self, "simplex_mode", SimplexMode.parse(self.simplex_mode, "simplex_mode"))
        set_(self, "lambda_granularity", LambdaGranularity.parse(self.lambda_granularity, "lambda_granularity"))
        set_(self, "merge_fn", MergeFn.parse(self.merge_fn, "merge_fn"))
        set_(self, "init", Init.parse(self.init, "init"))
        if isinstance(self.ties, Mapping):
            set_(self, "ties", TiesConfig.from_mapping(self.ties))
        if self.budget < 1:
            raise ConfigError(f"The FW budget must be >= 1, got {self.budget}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon!r}")
        if self.k is not None and self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.inner_steps < 1 or self.inner_lr <= 0:
            raise ConfigError(f"Invalid inner optimization: steps={self.inner_steps}, lr={self.inner_lr!r}")
        if self.line_search_points < 2:
            raise ConfigError(f"line_search_points must be >= 2, got {self.line_search_points}")
        if self.lambda_granularity == LambdaGranularity.LAYER and self.variant != Variant.SOFT:
            raise ConfigError("Per-layer merging coefficients require variant 'soft'")

    @classmethod
    def from_mapping(cls, data: Optional[Mapping[str, Any]]) -> Self:
        return cls(**pick(data or {}, cls, "FW"))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> Self:
        return cls.from_mapping(load_document(path))

    def effective_k(self, pool_size: int) -> int:
        """
        The top-k size for a pool (including the appended initial solution).

        Raises:
            ConfigError: If an explicit k exceeds the pool size.
        """
        if self.k is None:
            return min(4, pool_size)
        if self.k > pool_size:
            raise ConfigError(f"k = {self.k} exceeds the pool size {pool_size}")
        return self.k

    def replace(self, **changes) -> Self:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        result = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, TiesConfig):
                value = dataclasses.asdict(value)
            elif isinstance(value, (Variant, Granularity, SimplexMode, LambdaGranularity, MergeFn, Init)):
                value = str(value)
            result[f.name] = value
        return result


#
# Experiment configuration
#
@dataclass(frozen=True)
class MethodConfig:
    """
    One merging method of an experiment and its settings.
    """

    method: Method
    label: str
    fw: Optional[FWConfig] = None
    scaling: float = 0.3
    ties: TiesConfig = field(default_factory=TiesConfig)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> Self:
        """
        A method entry: ``name`` plus the keys of that method.

        FW methods take FWConfig keys (the variant follows the name); task-arithmetic takes
        ``scaling``; ties takes TiesConfig keys. ``label`` distinguishes two entries of a method.
        """
        if not isinstance(data, Mapping) or "name" not in data:
            raise ConfigError(f"A method entry must be a mapping with a 'name' key, got {data!r}")
        settings = dict(data)
        method = Method.parse(settings.pop("name"), "methods.name")
        label = str(settings.pop("label", method.value))
        if method.is_frank_wolfe:
            if "variant" in settings:
                raise ConfigError(f"Method '{label}': the variant is given by the method name")
            variant = Variant.HARD if method == Method.FW_HARD else Variant.SOFT
            return cls(method, label, fw=FWConfig.from_mapping({**settings, "variant": variant}))
        if method == Method.TASK_ARITHMETIC:
            check_keys(settings, {"scaling"}, f"method '{label}'")
            return cls(method, label, scaling=float(settings.get("scaling", 0.3)))
        if method == Method.TIES:
            return cls(method, label, ties=TiesConfig.from_mapping(settings))
        check_keys(settings, set(), f"method '{label}'")
        return cls(method, label)

    def to_dict(self) -> dict[str, Any]:
        result: dict[str, Any] = {"name": str(self.method), "label": self.label}
        if self.fw is not None:
            result.update(self.fw.to_dict())
        elif self.method == Method.TASK_ARITHMETIC:
            result["scaling"] = self.scaling
        elif self.method == Method.TIES:
            result.update(dataclasses.asdict(self.ties))
        return result


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A scaling or relevance experiment: task suite, pool construction plan, methods and sweep.
    """

    tasks: list                                # list[TaskSpec]
    evaluation_tasks: list[str]
    methods: list[MethodConfig]
    pool_order: list[str]
    sizes: list[int]
    relevance: Relevance = Relevance.RELEVANT
    hidden: tuple[int, ...] = (32, 32)
    pretrained_seed: int = 0
    noisy_pretrained_seed: int = 1
    epochs: int = 200
    finetune_lr: float = 0.5
    trials: int = 1
    output_dir: pathlib.Path = pathlib.Path("out")
    cache_dir: Optional[pathlib.Path] = None
    record_timing: bool = False

    _KEYS = {
        "task_suite", "tasks", "evaluation_tasks", "methods", "pool", "sweep",
        "output_dir", "cache_dir", "record_timing", "trials",
    }
    _POOL_KEYS = {"order", "pretrained_seed", "noisy_pretrained_seed", "epochs", "lr", "hidden"}
    _SWEEP_KEYS = {"sizes", "relevance"}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: str | os.PathLike = ".") -> Self:
        """
        Args:
            data (Mapping): The parsed document.
            base_dir (str): Folder against which relative paths of the document are resolved.

        Raises:
            ConfigError: On unknown keys, unknown task ids or an invalid sweep.
        """
        from .objectives import load_task_suite

        check_keys(data, cls._KEYS, "experiment")
        base_dir = pathlib.Path(base_dir)
        if "task_suite" in data:
            tasks = load_task_suite(base_dir / data["task_suite"])
        elif "tasks" in data:
            tasks = load_task_suite(data["tasks"])
        else:
            raise ConfigError("The experiment needs a 'task_suite' file or an inline 'tasks' list")
        ids = [task.task_id for task in tasks]

        evaluation = list(data.get("evaluation_tasks") or [])
        if len(evaluation) == 0:
            raise ConfigError("'evaluation_tasks' must list at least one task")
        _check_subset(evaluation, ids, "evaluation_tasks")

        methods = [MethodConfig.from_mapping(entry) for entry in data.get("methods") or []]
        if len(methods) == 0:
            raise ConfigError("'methods' must list at least one merging method")
        labels = [m.label for m in methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"Method labels must be unique: {labels}")

        pool = data.get("pool") or {}
        check_keys(pool, cls._POOL_KEYS, "pool")
        order = list(pool.get("order") or evaluation + [i for i in ids if i not in evaluation])
        _check_subset(order, ids, "pool.order")
        if len(set(order)) != len(order):
            raise ConfigError(f"'pool.order' lists a task twice: {order}")

        sweep = data.get("sweep") or {}
        check_keys(sweep, cls._SWEEP_KEYS, "sweep")
        sizes = [int(size) for size in sweep.get("sizes") or [len(evaluation)]]
        if any(size < 1 for size in sizes) or sizes != sorted(set(sizes)):
            raise ConfigError(f"Sweep sizes must be positive and strictly ascending, got {sizes}")

        cache_dir = data.get("cache_dir")
        output_dir = base_dir / data.get("output_dir", "out")
        trials = int(data.get("trials", 1))
        if trials < 1:
            raise ConfigError(f"'trials' must be >= 1, got {trials}")
        return cls(
            tasks=tasks,
            evaluation_tasks=evaluation,
            methods=methods,
            pool_order=order,
            sizes=sizes,
            relevance=Relevance.parse(sweep.get("relevance", "relevant"), "sweep.relevance"),
            hidden=tuple(int(h) for h in pool.get("hidden", (32, 32))),
            pretrained_seed=int(pool.get("pretrained_seed", 0)),
            noisy_pretrained_seed=int(pool.get("noisy_pretrained_seed", 1)),
            epochs=int(pool.get("epochs", 200)),
            finetune_lr=float(pool.get("lr", 0.5)),
            trials=trials,
            output_dir=output_dir,
            cache_dir=base_dir / cache_dir if cache_dir is not None else None,
            record_timing=bool(data.get("record_timing", False)),
        )

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> Self:
        return cls.from_mapping(load_document(path), pathlib.Path(path).parent)

    @property
    def cache_folder(self) -> pathlib.Path:
        return utils.get_cache_dir(self.cache_dir, self.output_dir)

    def task(self, task_id: str):
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise ConfigError(f"Unknown task '{task_id}'")


def _check_subset(selected: list[str], ids: list[str], what: str) -> None:
    unknown = [task_id for task_id in selected if task_id not in ids]
    if unknown:
        raise ConfigError(f"'{what}' references tasks missing from the suite: {unknown}")
