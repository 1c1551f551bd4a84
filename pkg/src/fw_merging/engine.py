import contextlib
import math
import numpy as np
import time
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass
from typing import Optional
from . import baselines
from .checkpoint import CheckpointPool, check_schema
from .config import FWConfig
from .errors import ConfigError, DimensionError, NumericsError, SchemaError
from .hull import BarycentricCoords, LayerCoords
from .objectives import Objective
from .options import Granularity, Init, LambdaGranularity, MergeFn, SimplexMode, StopReason, Variant
from .params import ParamSet, axpy, check_same_schema, describe_mismatch, dot, dot_per_layer, sub
from .simplex import LayerSimplexWeights, SimplexWeights, project_simplex, uniform_weights, unit_vector
from .trace import FWResult, IterationRecord


# A task-wise selection is a vertex id, a layer-wise one maps each layer to a vertex id
Selection = str | dict[str, str]
Weights = SimplexWeights | LayerSimplexWeights


#
# Linear minimization oracle
#
def _check_grad(pool: CheckpointPool, grad: ParamSet) -> None:
    if pool.schema != grad.schema:
        raise SchemaError(f"Gradient does not match the pool schema: {describe_mismatch(pool.schema, grad.schema)}")


def _total(per_layer: dict[str, float]) -> float:
    # same accumulation order as params.dot
    total = 0.0
    for value in per_layer.values():
        total += value
    return total


def _ranking(values: Sequence[float]) -> list[int]:
    return sorted(range(len(values)), key=lambda i: (values[i], i))


def layer_scores(pool: CheckpointPool, grad: ParamSet) -> list[tuple[str, dict[str, float]]]:
    """
    Per-layer linear scores <grad, vertex> of every vertex, streaming the pool one
    checkpoint at a time.
    """
    _check_grad(pool, grad)
    return [(entry_id, dot_per_layer(grad, params)) for _, entry_id, params in pool.stream()]


def linear_scores(pool: CheckpointPool, grad: ParamSet) -> list[tuple[str, float]]:
    """
    Linear scores <grad, vertex> of every vertex, in pool order.

    Raises:
        SchemaError: If the gradient does not match the pool.
    """
    return [(entry_id, _total(scores)) for entry_id, scores in layer_scores(pool, grad)]


def _select(scores: list[tuple[str, dict[str, float]]], k: int, granularity: Granularity) -> list[Selection]:
    ids = [entry_id for entry_id, _ in scores]
    if granularity == Granularity.TASK:
        return [ids[i] for i in _ranking([_total(s) for _, s in scores])[:k]]
    names = list(scores[0][1])
    per_layer = {name: [ids[i] for i in _ranking([s[name] for _, s in scores])[:k]] for name in names}
    return [{name: per_layer[name][j] for name in names} for j in range(k)]


def lmo_topk(
    pool: CheckpointPool,
    grad: ParamSet,
    k: int,
    granularity: Granularity | str = Granularity.TASK
) -> list[Selection]:
    """
    The k vertices with the smallest linear scores, ascending, ties broken by pool index.

    Args:
        pool (CheckpointPool): The vertices.
        grad (ParamSet): The gradient at the current model.
        k (int): How many vertices to return.
        granularity (Granularity): 'task' returns ids; 'layer' returns, for each rank j,
            a map layer -> id of the j-th best vertex of that layer.

    Raises:
        ConfigError: If k is not in [1, pool size].
        SchemaError: If the gradient does not match the pool.
    """
    granularity = Granularity.parse(granularity, "lmo_granularity")
    _check_grad(pool, grad)
    if not 1 <= k <= len(pool):
        raise ConfigError(f"k = {k} must be between 1 and the pool size {len(pool)}")
    return _select(layer_scores(pool, grad), k, granularity)


def lmo_hard(pool: CheckpointPool, grad: ParamSet, granularity: Granularity | str = Granularity.TASK) -> Selection:
    """ The vertex (or per-layer vertices) with the smallest linear score. """
    return lmo_topk(pool, grad, 1, granularity)[0]


def fw_gap(grad: ParamSet, theta: ParamSet, s: ParamSet) -> float:
    """ <-grad, s - theta>. """
    return 0.0 - dot(grad, sub(s, theta))


def _gap(scores: list[tuple[str, dict[str, float]]], theta_scores: dict[str, float], granularity: Granularity) -> float:
    if granularity == Granularity.TASK:
        return _total(theta_scores) - min(_total(s) for _, s in scores)
    gap = 0.0
    for name, value in theta_scores.items():
        gap += value - min(s[name] for _, s in scores)
    return gap


#
# Step size and merging functions
#
def _grid_search(loss_at: Callable[[float], float], points: int) -> tuple[float, float]:
    if points < 2:
        raise ConfigError(f"The line search needs at least 2 points, got {points}")
    best_gamma, best_loss = 0.0, loss_at(0.0)
    for i in range(1, points):
        gamma = i / (points - 1)
        loss = loss_at(gamma)
        if loss < best_loss:
            best_gamma, best_loss = gamma, loss
    return best_gamma, best_loss


def line_search(obj: Objective, theta: ParamSet, direction: ParamSet, points: int = 21) -> float:
    """
    Grid line search of loss(theta + gamma * direction) over ``points`` evenly spaced
    values of [0, 1], both ends included. The lowest gamma wins ties.

    Raises:
        ConfigError: If points < 2.
    """
    check_same_schema(theta, direction, "the model and the direction")
    return _grid_search(lambda gamma: obj.loss(axpy(theta, gamma, direction)), points)[0]


def merge_convex(theta: ParamSet, s: ParamSet, gamma: float) -> ParamSet:
    """
    (1 - gamma) * theta + gamma * s.

    Raises:
        ConfigError: If gamma is outside [0, 1].
    """
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"Step size {gamma!r} is outside [0, 1]")
    check_same_schema(theta, s, "the model and the vertex")
    return ParamSet({name: (1.0 - gamma) * theta[name] + gamma * s[name] for name in theta})


def _coefficients(weights: Weights, names: Sequence[str], count: int) -> dict[str, np.ndarray]:
    if isinstance(weights, SimplexWeights):
        if len(weights) != count:
            raise DimensionError(f"{len(weights)} merging coefficients for {count} vertices")
        return {name: weights.values for name in names}
    if list(weights.layers) != list(names):
        raise SchemaError(f"Per-layer coefficients for {list(weights.layers)}, expected {list(names)}")
    for name, layer in weights.layers.items():
        if len(layer) != count:
            raise DimensionError(f"Layer '{name}': {len(layer)} merging coefficients for {count} vertices")
    return {name: layer.values for name, layer in weights.layers.items()}


def merge_soft(theta: ParamSet, vertices: Sequence[ParamSet], weights: Weights) -> ParamSet:
    """
    theta + sum_j weights_j * (vertex_j - theta), computed as
    (1 - sum(weights)) * theta + sum_j weights_j * vertex_j.

    Args:
        theta (ParamSet): The current model.
        vertices (list[ParamSet]): The selected vertices.
        weights (SimplexWeights | LayerSimplexWeights): One coefficient per vertex, or per layer and vertex.

    Raises:
        SimplexError: If the weights violate the simplex invariants of their mode.
    """
    weights.validate()
    for vertex in vertices:
        check_same_schema(theta, vertex, "the model and a vertex")
    coefficients = _coefficients(weights, theta.names, len(vertices))
    layers = {}
    for name in theta:
        values = coefficients[name]
        array = (1.0 - math.fsum(values)) * theta[name]
        for coefficient, vertex in zip(values, vertices):
            array = array + float(coefficient) * vertex[name]
        layers[name] = array
    return ParamSet(layers)


def merge_ties(cfg: FWConfig, theta: ParamSet, vertices: Sequence[ParamSet], weights: Weights) -> ParamSet:
    """
    TIES-style merge of the weighted directions weights_j * (vertex_j - theta) around theta.
    The result may leave the convex hull.
    """
    weights.validate()
    coefficients = _coefficients(weights, theta.names, len(vertices))
    directions = []
    for j, vertex in enumerate(vertices):
        check_same_schema(theta, vertex, "the model and a vertex")
        directions.append(np.concatenate([
            (coefficients[name][j] * (vertex[name] - theta[name])).ravel() for name in theta
        ]))
    merged = baselines.ties_vector(np.stack(directions), cfg.ties.density)
    return ParamSet.from_vector(theta.schema, theta.to_vector() + cfg.ties.scaling * merged)


MERGE_FUNCTIONS: dict[MergeFn, Callable[[FWConfig, ParamSet, Sequence[ParamSet], Weights], ParamSet]] = {
    MergeFn.CONVEX: lambda cfg, theta, vertices, weights: merge_soft(theta, vertices, weights),
    MergeFn.TIES: merge_ties,
}


#
# Soft-variant inner optimization
#
def _weights(values: np.ndarray | dict[str, np.ndarray], mode: SimplexMode) -> Weights:
    if isinstance(values, dict):
        return LayerSimplexWeights({name: SimplexWeights(layer, mode) for name, layer in values.items()})
    return SimplexWeights(values, mode)


def inner_optimize_lambda(
    obj: Objective,
    theta: ParamSet,
    vertices: Sequence[ParamSet],
    cfg: FWConfig
) -> Weights:
    """
    Projected gradient descent on phi(lambda) = loss(theta + sum_j lambda_j (vertex_j - theta))
    over the simplex, from uniform coefficients.

    The derivative in lambda_j is <grad loss, vertex_j - theta>, per layer when
    lambda_granularity is 'layer'. The best coefficients seen are returned; every unit
    vector (and zero in capped mode) is also a candidate, so the result is never worse
    than moving fully to the best single vertex.

    Raises:
        DimensionError: If no vertex is given.
        NumericsError: If the loss diverges, naming the step.
    """
    k = len(vertices)
    if k < 1:
        raise DimensionError("The inner optimization needs at least one vertex")
    mode = cfg.simplex_mode
    names = theta.names
    per_layer = cfg.lambda_granularity == LambdaGranularity.LAYER

    def spread(values: np.ndarray) -> np.ndarray | dict[str, np.ndarray]:
        return {name: values.copy() for name in names} if per_layer else values

    def evaluate(step: int | str, lam, with_grad: bool) -> tuple[float, Optional[ParamSet]]:
        try:
            merged = merge_soft(theta, vertices, _weights(lam, mode))
            if with_grad:
                return obj.loss_and_grad(merged)
            return obj.loss(merged), None
        except NumericsError as error:
            raise NumericsError(f"Inner optimization diverged at step {step}: {error}") from None

    lam = spread(uniform_weights(k, mode).values.copy())
    best_loss, best = math.inf, lam
    for step in range(cfg.inner_steps + 1):
        with_grad = step < cfg.inner_steps
        loss, grad = evaluate(step, lam, with_grad)
        if loss < best_loss:
            best_loss, best = loss, lam
        if not with_grad:
            break
        base = dot_per_layer(grad, theta)
        vertex_scores = [dot_per_layer(grad, vertex) for vertex in vertices]
        if per_layer:
            lam = {
                name: project_simplex(
                    lam[name] - cfg.inner_lr * np.array([s[name] - base[name] for s in vertex_scores]), mode
                ).values.copy()
                for name in names
            }
        else:
            gradient = np.array([_total(s) - _total(base) for s in vertex_scores])
            lam = project_simplex(lam - cfg.inner_lr * gradient, mode).values.copy()

    candidates = [unit_vector(k, j, mode).values.copy() for j in range(k)]
    if mode == SimplexMode.CAPPED:
        candidates.append(np.zeros(k))
    for j, candidate in enumerate(candidates):
        candidate = spread(candidate)
        loss, _ = evaluate(f"candidate {j}", candidate, False)
        if loss < best_loss:
            best_loss, best = loss, candidate
    return _weights(best, mode)


#
# Frank-Wolfe loop
#
@dataclass
class IterationState:
    """ What the run_fw callback receives after each iteration. """

    record: IterationRecord
    theta: ParamSet
    coords: Optional[LayerCoords]
    pool: CheckpointPool


def _composite(pool: CheckpointPool, selection: dict[str, str]) -> ParamSet:
    layers = {}
    for i, entry_id in enumerate(pool.ids):
        names = [name for name, vertex_id in selection.items() if vertex_id == entry_id]
        if names:
            with pool.checkout(i) as params:
                for name in names:
                    layers[name] = params[name]
    return ParamSet({name: layers[name] for name in selection})


@contextlib.contextmanager
def _vertex(pool: CheckpointPool, selection: Selection) -> Iterator[ParamSet]:
    """ A selected vertex: a checkout, or a composite of per-layer vertices. """
    if isinstance(selection, str):
        with pool.checkout(pool.index(selection)) as params:
            yield params
    else:
        with pool.meter.holding():
            yield _composite(pool, selection)


def _target(selection: Selection, name: str) -> dict[str, float]:
    return {selection if isinstance(selection, str) else selection[name]: 1.0}


def _initial_solution(cfg: FWConfig, pool: CheckpointPool, theta0: ParamSet) -> tuple[str, ParamSet, bool]:
    match cfg.init:
        case Init.TASK_ARITHMETIC:
            return "@task-arithmetic", baselines.task_arithmetic(theta0, pool, cfg.init_scaling), \
                cfg.init_scaling > 1.0 / len(pool)
        case Init.WEIGHT_AVERAGE:
            return "@weight-average", baselines.weight_average(pool), False
        case _:
            return "@theta0", theta0, False


def run_fw(
    cfg: FWConfig,
    pool: CheckpointPool,
    obj: Objective,
    theta0: ParamSet,
    callback: Optional[Callable[[IterationState], None]] = None,
    record_timing: bool = False
) -> FWResult:
    """
    Frank-Wolfe merging over the convex hull of the pool.

    The initial solution (theta0 or the configured initializer) is appended to the pool
    as a vertex unless a checkpoint with the same content is already there. Each
    iteration computes the gradient, streams the linear scores, logs the FW gap and
    stops when it is at most epsilon. Otherwise the hard variant takes a grid line
    search step towards the LMO vertex and the soft variant merges the top-k vertices
    with optimized coefficients.

    Args:
        cfg (FWConfig): The run settings.
        pool (CheckpointPool): The fine-tuned checkpoints. Not modified.
        obj (Objective): The loss to minimize.
        theta0 (ParamSet): The pre-trained model.
        callback (Callable): Called with an IterationState after every iteration.
        record_timing (bool): Whether to record wall times (0 otherwise, for reproducible traces).

    Raises:
        ConfigError: On an invalid budget or k.
        SchemaError: If theta0, the pool and the objective disagree.
        NumericsError: If the loss or a merge diverges.
    """
    if cfg.budget < 1:
        raise ConfigError(f"The FW budget must be >= 1, got {cfg.budget}")
    check_schema(pool)
    if pool.schema != theta0.schema:
        raise SchemaError(f"The base model does not match the pool: {describe_mismatch(pool.schema, theta0.schema)}")

    init_id, theta, outside_hull = _initial_solution(cfg, pool, theta0)
    index = pool.find(theta)
    if index is None:
        pool = pool.extended(init_id, theta)
    else:
        init_id = pool.ids[index]
    k = cfg.effective_k(len(pool)) if cfg.variant == Variant.SOFT else 1
    names = theta.names
    keeps_hull = cfg.merge_fn.keeps_hull
    coords = LayerCoords.uniform(names, BarycentricCoords.vertex(pool.ids, init_id)) if keeps_hull else None
    header = {
        "config": cfg.to_dict(),
        "k": k,
        "objective": obj.to_dict() if hasattr(obj, "to_dict") else type(obj).__name__,
        "vertices": pool.ids,
        "theta0_hash": theta0.content_hash(),
        "init_vertex": init_id,
        "init_outside_hull": outside_hull,
        "feasibility_unverified": not keeps_hull,
    }
    merge_fn = MERGE_FUNCTIONS[cfg.merge_fn]
    granularity = cfg.lmo_granularity
    trace: list[IterationRecord] = []
    stop_reason = StopReason.BUDGET

    pool.meter.acquire()  # the working model
    try:
        for t in range(cfg.budget):
            start = time.perf_counter()
            loss_before, grad = obj.loss_and_grad(theta)
            scores = layer_scores(pool, grad)
            gap = _gap(scores, dot_per_layer(grad, theta), granularity)
            selections = _select(scores, k, granularity)
            if granularity == Granularity.TASK:
                score_record = {entry_id: _total(s) for entry_id, s in scores}
                selected = list(selections)
            else:
                score_record = {name: {entry_id: s[name] for entry_id, s in scores} for name in names}
                selected = {name: [selection[name] for selection in selections] for name in names}

            if gap <= cfg.epsilon:
                step = 0.0 if cfg.variant == Variant.HARD else [0.0] * k
                new_theta, loss_after, stop_reason = theta, loss_before, StopReason.GAP
            elif cfg.variant == Variant.HARD:
                selection = selections[0]
                with _vertex(pool, selection) as s:
                    with pool.meter.holding():
                        step, loss_after = _grid_search(
                            lambda gamma: obj.loss(merge_convex(theta, s, gamma)), cfg.line_search_points
                        )
                        new_theta = merge_fn(cfg, theta, [s], SimplexWeights([step], SimplexMode.CAPPED))
                if not keeps_hull:
                    loss_after = obj.loss(new_theta)
                else:
                    coords = LayerCoords({
                        name: coords.layers[name].blend(step, _target(selection, name)) for name in names
                    })
            else:
                with contextlib.ExitStack() as stack:
                    vertices = [stack.enter_context(_vertex(pool, selection)) for selection in selections]
                    with pool.meter.holding():
                        if cfg.optimize_lambda:
                            weights = inner_optimize_lambda(obj, theta, vertices, cfg)
                        else:
                            values = uniform_weights(k, cfg.simplex_mode).values
                            weights = _weights(
                                {name: values for name in names}
                                if cfg.lambda_granularity == LambdaGranularity.LAYER else values,
                                cfg.simplex_mode
                            )
                        new_theta = merge_fn(cfg, theta, vertices, weights)
                        loss_after = obj.loss(new_theta)
                step = weights.tolist()
                if keeps_hull:
                    coefficients = _coefficients(weights, names, k)
                    coords = LayerCoords({
                        name: coords.layers[name].combine(
                            [float(c) for c in coefficients[name]],
                            [_target(selection, name) for selection in selections]
                        )
                        for name in names
                    })

            record = IterationRecord(
                t=t,
                scores=score_record,
                selected=selected,
                gap=gap,
                step=step,
                loss_before=loss_before,
                loss_after=loss_after,
                coords=coords.to_dict() if coords is not None else None,
                wall_ms=(time.perf_counter() - start) * 1000.0 if record_timing else 0.0,
            )
            trace.append(record)
            theta = new_theta
            if callback is not None:
                callback(IterationState(record, theta, coords, pool))
            if stop_reason == StopReason.GAP:
                break
    finally:
        pool.meter.release()

    return FWResult(theta, trace, stop_reason, header, pool.meter.peak)
