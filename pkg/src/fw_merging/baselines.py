import numpy as np
from collections.abc import Sequence
from .checkpoint import CheckpointPool, check_schema
from .config import TiesConfig
from .errors import ConfigError, EmptyPoolError
from .params import ParamSet, check_same_schema


def as_pool(pool: CheckpointPool | Sequence[ParamSet]) -> CheckpointPool:
    """ Wraps a list of parameter sets in an in-memory pool. """
    if isinstance(pool, CheckpointPool):
        return pool
    return CheckpointPool.from_params(list(pool))


def weight_average(pool: CheckpointPool | Sequence[ParamSet]) -> ParamSet:
    """
    Element-wise mean of all checkpoints, streamed with a running sum.

    Raises:
        EmptyPoolError: If the pool is empty.
    """
    pool = as_pool(pool)
    check_schema(pool)
    layers = {name: np.zeros(shape) for name, shape in pool.schema}
    with pool.meter.holding():
        for _, _, params in pool.stream():
            for name in layers:
                layers[name] += params[name]
    return ParamSet({name: array / len(pool) for name, array in layers.items()})


def task_arithmetic(theta0: ParamSet, pool: CheckpointPool | Sequence[ParamSet], scaling: float) -> ParamSet:
    """
    theta0 + scaling * sum of the task vectors (checkpoint - theta0).

    Raises:
        SchemaError: If a checkpoint does not match theta0.
    """
    pool = as_pool(pool)
    check_schema(pool)
    total = {name: np.zeros(array.shape) for name, array in theta0.layers.items()}
    with pool.meter.holding():
        for _, entry_id, params in pool.stream():
            check_same_schema(theta0, params, f"the base model and '{entry_id}'")
            for name in total:
                total[name] += params[name] - theta0[name]
    scaling = float(scaling)
    return ParamSet({name: theta0[name] + scaling * total[name] for name in total})


#
# TIES-style merging
#
def ties_vector(vectors: np.ndarray, density: float) -> np.ndarray:
    """
    Trim, elect and disjoint-merge a stack of flat task vectors.

    Each row keeps its round(density * D) largest-magnitude entries (at least one;
    equal magnitudes keep the lower index). The elected sign of a coordinate is the
    sign of the sum of the trimmed values; a zero sum elects +. The merged value is
    the mean of the trimmed entries agreeing with the elected sign, or 0 when none does.

    Args:
        vectors (ndarray): One task vector per row.
        density (float): Fraction of entries kept per task vector, in (0, 1].

    Raises:
        ConfigError: If density is outside (0, 1].
    """
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"TIES density must be in (0, 1], got {density!r}")
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n, size = vectors.shape
    keep = max(1, int(round(density * size)))
    trimmed = np.zeros_like(vectors)
    for i in range(n):
        order = np.argsort(-np.abs(vectors[i]), kind="stable")[:keep]
        trimmed[i, order] = vectors[i, order]
    elected = np.where(np.sum(trimmed, axis=0) >= 0.0, 1.0, -1.0)
    agree = trimmed * elected > 0.0
    counts = np.sum(agree, axis=0)
    sums = np.sum(np.where(agree, trimmed, 0.0), axis=0)
    return np.divide(sums, counts, out=np.zeros(size), where=counts > 0)


def ties_merge(theta0: ParamSet, pool: CheckpointPool | Sequence[ParamSet], cfg: TiesConfig) -> ParamSet:
    """
    theta0 + scaling * TIES merge of the task vectors.

    Every task vector is held at once, so the pool's residency reaches its size.

    Raises:
        SchemaError: If a checkpoint does not match theta0.
        ConfigError: If density is outside (0, 1].
    """
    pool = as_pool(pool)
    if len(pool) == 0:
        raise EmptyPoolError("The checkpoint pool is empty")
    check_schema(pool)
    base = theta0.to_vector()
    vectors = []
    held = 0
    try:
        for i, entry_id in enumerate(pool.ids):
            with pool.checkout(i) as params:
                check_same_schema(theta0, params, f"the base model and '{entry_id}'")
                vectors.append(params.to_vector() - base)
            pool.meter.acquire()
            held += 1
        merged = ties_vector(np.stack(vectors), cfg.density)
    finally:
        pool.meter.release(held)
    return ParamSet.from_vector(theta0.schema, base + cfg.scaling * merged)
