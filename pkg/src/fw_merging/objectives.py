import math
import numpy as np
import os
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from typing import Any, Optional, Protocol, Self
from . import config
from .errors import ConfigError, NumericsError, SchemaError
from .params import ParamSet, Schema, axpy, check_same_schema, describe_mismatch, sub


class Objective(Protocol):
    """
    Loss/gradient contract used by the FW engine.
    """

    def loss(self, theta: ParamSet) -> float:
        ...

    def loss_and_grad(self, theta: ParamSet) -> tuple[float, ParamSet]:
        ...


def loss_and_grad(obj: Objective, theta: ParamSet) -> tuple[float, ParamSet]:
    """ Returns the objective value and its gradient at theta. """
    return obj.loss_and_grad(theta)


#
# Synthetic tasks
#
@dataclass(frozen=True)
class TaskSpec:
    """
    Synthetic Gaussian-blob classification task.

    Class means sit on a circle of radius ``separation`` in the plane spanned by the
    first two coordinates of the task's input block, starting at angle ``rotation``.
    Coordinates outside the block are zero. ``label_shift`` permutes the labels
    cyclically, giving a task with the same inputs and different label semantics.
    """

    task_id: str
    seed: int
    input_dim: int = 16
    num_classes: int = 2
    n_train: int = 100
    n_test: int = 200
    block: int = 0
    block_size: Optional[int] = None
    rotation: Optional[float] = None
    label_shift: int = 0
    separation: float = 2.0
    noise: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError(f"Task '{self.task_id}': input_dim must be >= 1 and num_classes >= 2")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError(f"Task '{self.task_id}': n_train and n_test must be >= 1")
        size = self.input_dim if self.block_size is None else self.block_size
        if size < 1 or self.block < 0 or (self.block + 1) * size > self.input_dim:
            raise ConfigError(
                f"Task '{self.task_id}': block {self.block} of size {size} "
                f"does not fit in {self.input_dim} inputs"
            )
        if self.noise < 0:
            raise ConfigError(f"Task '{self.task_id}': noise must be >= 0")

    @property
    def block_slice(self) -> slice:
        size = self.input_dim if self.block_size is None else self.block_size
        return slice(self.block * size, (self.block + 1) * size)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> Self:
        return cls(**config.pick(data, cls, "task"))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CalibrationBatch:
    """
    Labeled samples of one task.
    """

    task_id: str
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise SchemaError(f"Batch '{self.task_id}': inputs must be a non-empty matrix")
        if labels.size != inputs.shape[0]:
            raise SchemaError(f"Batch '{self.task_id}': {labels.size} labels for {inputs.shape[0]} samples")
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise SchemaError(f"Batch '{self.task_id}': labels outside [0, {self.num_classes})")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def generate_task(
    spec: TaskSpec,
    n_train: Optional[int] = None,
    n_test: Optional[int] = None
) -> tuple[CalibrationBatch, CalibrationBatch]:
    """
    Generates the train and test splits of a task. Same spec, same batches.

    Labels are balanced: sample i has class i mod num_classes before shuffling.
    """
    n_train = spec.n_train if n_train is None else n_train
    n_test = spec.n_test if n_test is None else n_test
    if n_train < 1 or n_test < 1:
        raise ConfigError(f"Task '{spec.task_id}': n_train and n_test must be >= 1")
    rng = np.random.default_rng(spec.seed)
    rotation = rng.uniform(0.0, 2.0 * math.pi) if spec.rotation is None else float(spec.rotation)
    n = n_train + n_test
    classes = rng.permutation(np.arange(n) % spec.num_classes)
    block = spec.block_slice
    width = block.stop - block.start
    angles = rotation + 2.0 * math.pi * np.arange(spec.num_classes) / spec.num_classes
    means = np.zeros((spec.num_classes, width))
    means[:, 0] = spec.separation * np.cos(angles)
    if width > 1:
        means[:, 1] = spec.separation * np.sin(angles)
    inputs = np.zeros((n, spec.input_dim))
    inputs[:, block] = means[classes] + spec.noise * rng.standard_normal((n, width))
    labels = (classes + spec.label_shift) % spec.num_classes
    train = CalibrationBatch(spec.task_id, inputs[:n_train], labels[:n_train], spec.num_classes)
    test = CalibrationBatch(spec.task_id, inputs[n_train:], labels[n_train:], spec.num_classes)
    return train, test


def load_task_suite(source: str | os.PathLike | Mapping | Sequence) -> list[TaskSpec]:
    """
    Reads a task suite: a list of task mappings, or a mapping with a 'tasks' list.

    Raises:
        ConfigError: On duplicated ids or seeds, or tasks disagreeing on input_dim/num_classes.
    """
    document = config.load_document(source) if isinstance(source, (str, os.PathLike)) else source
    if isinstance(document, Mapping):
        document = document.get("tasks")
    if not isinstance(document, Sequence) or isinstance(document, str) or len(document) == 0:
        raise ConfigError("A task suite must be a non-empty list of tasks")
    tasks = [TaskSpec.from_mapping(entry) for entry in document]
    ids = [task.task_id for task in tasks]
    seeds = [task.seed for task in tasks]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"Duplicated task ids in suite: {ids}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"Tasks of a suite must have distinct seeds: {seeds}")
    if len({(task.input_dim, task.num_classes) for task in tasks}) != 1:
        raise ConfigError("All tasks of a suite must share input_dim and num_classes")
    return tasks


#
# Toy MLP
#
@dataclass(frozen=True)
class Architecture:
    """
    Layer sizes of a tanh MLP with a softmax cross-entropy output.

    Layers are named W1, b1, ..., WL, bL; weights have shape (fan_in, fan_out).
    """

    input_dim: int = 16
    hidden: tuple[int, ...] = (32, 32)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.num_classes < 2 or any(h < 1 for h in self.hidden):
            raise ConfigError(f"Invalid architecture {self}")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.num_classes]

    @property
    def depth(self) -> int:
        return len(self.hidden) + 1

    @property
    def schema(self) -> Schema:
        sizes = self.sizes
        schema = []
        for layer in range(1, self.depth + 1):
            schema.append((f"W{layer}", (sizes[layer - 1], sizes[layer])))
            schema.append((f"b{layer}", (sizes[layer],)))
        return tuple(schema)

    @classmethod
    def from_schema(cls, schema: Schema) -> Self:
        """
        Raises:
            SchemaError: If the schema is not a chained W/b MLP.
        """
        if len(schema) < 2 or len(schema) % 2 != 0 or len(schema[0][1]) != 2:
            raise SchemaError(f"Not an MLP schema: {[name for name, _ in schema]}")
        sizes = [schema[0][1][0]]
        for layer in range(len(schema) // 2):
            (w_name, w_shape), (b_name, b_shape) = schema[2 * layer], schema[2 * layer + 1]
            if (
                w_name != f"W{layer + 1}" or b_name != f"b{layer + 1}" or len(w_shape) != 2 or
                w_shape[0] != sizes[-1] or b_shape != (w_shape[1],)
            ):
                raise SchemaError(f"Layers '{w_name}'/'{b_name}' do not chain as an MLP")
            sizes.append(w_shape[1])
        return cls(sizes[0], tuple(sizes[1:-1]), sizes[-1])

    def check(self, theta: ParamSet) -> None:
        if theta.schema != self.schema:
            raise SchemaError(f"Parameters do not match the architecture: {describe_mismatch(self.schema, theta.schema)}")


def pretrained(arch: Architecture, seed: int) -> ParamSet:
    """
    Random backbone (N(0, 1/fan_in) weights, zero biases) with a zero classification head.
    """
    rng = np.random.default_rng(seed)
    sizes = arch.sizes
    layers = {}
    for layer in range(1, arch.depth + 1):
        fan_in, fan_out = sizes[layer - 1], sizes[layer]
        if layer < arch.depth:
            layers[f"W{layer}"] = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
        else:
            layers[f"W{layer}"] = np.zeros((fan_in, fan_out))
        layers[f"b{layer}"] = np.zeros(fan_out)
    return ParamSet(layers)


def _forward(arch: Architecture, theta: ParamSet, inputs: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    activations = [inputs]
    for layer in range(1, arch.depth):
        activations.append(np.tanh(activations[-1] @ theta[f"W{layer}"] + theta[f"b{layer}"]))
    logits = activations[-1] @ theta[f"W{arch.depth}"] + theta[f"b{arch.depth}"]
    return activations, logits


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """ Mean cross-entropy and the softmax probabilities. """
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    log_probs = shifted - log_norm[:, None]
    loss = -float(np.mean(log_probs[np.arange(labels.size), labels]))
    return loss, np.exp(log_probs)


def _check_batch(arch: Architecture, batch: CalibrationBatch) -> None:
    if batch.inputs.shape[1] != arch.input_dim or batch.num_classes != arch.num_classes:
        raise SchemaError(
            f"Batch '{batch.task_id}' has {batch.inputs.shape[1]} inputs and {batch.num_classes} classes, "
            f"the model expects {arch.input_dim} and {arch.num_classes}"
        )


def task_loss_and_grad(
    arch: Architecture,
    theta: ParamSet,
    batch: CalibrationBatch,
    with_grad: bool = True
) -> tuple[float, Optional[dict[str, np.ndarray]]]:
    """
    Mean cross-entropy of one batch and its gradient by backpropagation.

    Returns:
        The loss and a dict of gradient arrays in layer order (None if with_grad is False).
    """
    activations, logits = _forward(arch, theta, batch.inputs)
    loss, probs = _cross_entropy(logits, batch.labels)
    if not with_grad:
        return loss, None
    n = batch.n_samples
    delta = probs
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    grads: dict[str, np.ndarray] = {}
    for layer in range(arch.depth, 0, -1):
        grads[f"W{layer}"] = activations[layer - 1].T @ delta
        grads[f"b{layer}"] = np.sum(delta, axis=0)
        if layer > 1:
            delta = (delta @ theta[f"W{layer}"].T) * (1.0 - activations[layer - 1] ** 2)
    return loss, {name: grads[name] for name, _ in arch.schema}


class MultiTaskObjective:
    """
    Unweighted mean over tasks of the per-task mean cross-entropy of a toy MLP.
    """

    def __init__(self, batches: list[CalibrationBatch], arch: Architecture):
        """
        Args:
            batches (list[CalibrationBatch]): One batch per task entry; a task listed twice counts twice.
            arch (Architecture): The model architecture.
        """
        if len(batches) == 0:
            raise ConfigError("A multi-task objective needs at least one calibration batch")
        for batch in batches:
            _check_batch(arch, batch)
        self.batches = list(batches)
        self.arch = arch
        self.aggregation = "mean"

    @property
    def task_ids(self) -> list[str]:
        return [batch.task_id for batch in self.batches]

    def loss(self, theta: ParamSet) -> float:
        self.arch.check(theta)
        total = 0.0
        for batch in self.batches:
            total += task_loss_and_grad(self.arch, theta, batch, with_grad=False)[0]
        return _finite_loss(total / len(self.batches))

    def loss_and_grad(self, theta: ParamSet) -> tuple[float, ParamSet]:
        """
        Raises:
            SchemaError: If theta does not match the architecture.
            NumericsError: If the loss or the gradient is not finite.
        """
        self.arch.check(theta)
        total = 0.0
        accumulated = {name: np.zeros(shape) for name, shape in self.arch.schema}
        # serial accumulation in batch order keeps the result bitwise reproducible
        for batch in self.batches:
            loss, grads = task_loss_and_grad(self.arch, theta, batch)
            total += loss
            for name in accumulated:
                accumulated[name] += grads[name]
        count = len(self.batches)
        loss = _finite_loss(total / count)
        gradient = {name: array / count for name, array in accumulated.items()}
        for name, array in gradient.items():
            if not np.all(np.isfinite(array)):
                raise NumericsError(f"Non-finite gradient in layer '{name}'")
        return loss, ParamSet(gradient, check_finite=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "multi-task",
            "aggregation": self.aggregation,
            "tasks": self.task_ids,
            "architecture": asdict(self.arch),
        }


class QuadraticObjective:
    """
    weight * ||theta - target||^2, smooth with constant 2 * weight.
    """

    def __init__(self, target: ParamSet, weight: float = 1.0):
        self.target = target
        self.weight = float(weight)

    @property
    def lipschitz(self) -> float:
        return 2.0 * self.weight

    def loss(self, theta: ParamSet) -> float:
        check_same_schema(theta, self.target)
        residual = theta.to_vector() - self.target.to_vector()
        return _finite_loss(self.weight * float(np.dot(residual, residual)))

    def loss_and_grad(self, theta: ParamSet) -> tuple[float, ParamSet]:
        residual = sub(theta, self.target)
        loss = self.loss(theta)
        return loss, ParamSet({name: 2.0 * self.weight * array for name, array in residual.layers.items()})

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "quadratic", "weight": self.weight}


def _finite_loss(value: float) -> float:
    if not math.isfinite(value):
        raise NumericsError(f"Non-finite loss {value!r}")
    return value


#
# Training and evaluation
#
def finetune(theta0: ParamSet, task: CalibrationBatch, epochs: int, lr: float) -> ParamSet:
    """
    Full-batch gradient descent on one task, starting from theta0.

    Raises:
        NumericsError: If the loss diverges.
    """
    if epochs < 0 or lr <= 0:
        raise ConfigError(f"Invalid fine-tuning schedule: epochs={epochs}, lr={lr}")
    objective = MultiTaskObjective([task], Architecture.from_schema(theta0.schema))
    theta = theta0
    for epoch in range(epochs):
        try:
            _, gradient = objective.loss_and_grad(theta)
            theta = axpy(theta, -lr, gradient)
        except NumericsError as error:
            raise NumericsError(f"Fine-tuning on '{task.task_id}' diverged at epoch {epoch}: {error}") from None
    return theta


def predict(theta: ParamSet, inputs: np.ndarray) -> np.ndarray:
    """ Predicted classes; ties between logits go to the lowest class index. """
    arch = Architecture.from_schema(theta.schema)
    _, logits = _forward(arch, theta, np.asarray(inputs, dtype=np.float64))
    return np.argmax(logits, axis=1)


def accuracy(theta: ParamSet, batch: CalibrationBatch) -> float:
    """
    Fraction of correctly classified samples.

    Raises:
        SchemaError: If the batch does not fit the model.
    """
    _check_batch(Architecture.from_schema(theta.schema), batch)
    return float(np.mean(predict(theta, batch.inputs) == batch.labels))


def build_objective(
    document: str | os.PathLike | Mapping[str, Any],
    arch: Architecture,
    split: str = "train"
) -> MultiTaskObjective:
    """
    Multi-task objective from an objective document: a task suite plus an optional
    'evaluation_tasks' list selecting the tasks whose batches form the objective.
    """
    if isinstance(document, (str, os.PathLike)):
        document = config.load_document(document)
    if not isinstance(document, Mapping):
        document = {"tasks": document}
    config.check_keys(document, {"tasks", "evaluation_tasks"}, "objective")
    tasks = {task.task_id: task for task in load_task_suite(document)}
    selected = document.get("evaluation_tasks") or list(tasks)
    unknown = [task_id for task_id in selected if task_id not in tasks]
    if unknown:
        raise ConfigError(f"Unknown evaluation tasks {unknown}")
    index = 0 if split == "train" else 1
    return MultiTaskObjective([generate_task(tasks[task_id])[index] for task_id in selected], arch)
