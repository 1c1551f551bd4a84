import math
import numpy as np
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional, Self
from .checkpoint import CheckpointPool
from .errors import SimplexError
from .params import ParamSet, norm, sub
from .simplex import SUM_TOLERANCE


@dataclass(frozen=True)
class BarycentricCoords:
    """
    Convex-combination weights of a merged model over the pool vertices, keyed by id.
    Zero weights are kept so that every vertex appears in pool order.
    """

    weights: dict[str, float] = field(default_factory=dict)

    @classmethod
    def vertex(cls, ids: Sequence[str], selected: str) -> Self:
        return cls({vertex_id: 1.0 if vertex_id == selected else 0.0 for vertex_id in ids})

    @property
    def total(self) -> float:
        total = 0.0
        for value in self.weights.values():
            total += value
        return total

    def validate(self, tolerance: float = SUM_TOLERANCE) -> None:
        """
        Raises:
            SimplexError: If a weight is below -tolerance or the weights do not sum to 1.
        """
        negative = {key: value for key, value in self.weights.items() if value < -tolerance}
        if negative:
            raise SimplexError(f"Negative barycentric coordinates {negative}")
        if abs(self.total - 1.0) > tolerance:
            raise SimplexError(f"Barycentric coordinates sum to {self.total!r}")

    def blend(self, gamma: float, target: Mapping[str, float]) -> Self:
        """ (1 - gamma) * self + gamma * target. """
        keys = list(self.weights) + [key for key in target if key not in self.weights]
        return type(self)({
            key: (1.0 - gamma) * self.weights.get(key, 0.0) + gamma * target.get(key, 0.0)
            for key in keys
        })

    def combine(self, coefficients: Sequence[float], targets: Sequence[Mapping[str, float]]) -> Self:
        """ (1 - sum(c)) * self + sum(c_j * target_j), the soft-merge update. """
        keep = 1.0 - math.fsum(coefficients)
        result = {key: keep * value for key, value in self.weights.items()}
        for coefficient, target in zip(coefficients, targets):
            for key, value in target.items():
                result[key] = result.get(key, 0.0) + coefficient * value
        return type(self)(result)

    def to_dict(self) -> dict[str, float]:
        return dict(self.weights)


@dataclass(frozen=True)
class LayerCoords:
    """
    One set of barycentric coordinates per layer, for layer-wise selection.
    With task-wise selection all layers share the same coordinates.
    """

    layers: dict[str, BarycentricCoords] = field(default_factory=dict)

    @classmethod
    def uniform(cls, names: Sequence[str], coords: BarycentricCoords) -> Self:
        return cls({name: coords for name in names})

    def validate(self, tolerance: float = SUM_TOLERANCE) -> None:
        for name, coords in self.layers.items():
            try:
                coords.validate(tolerance)
            except SimplexError as error:
                raise SimplexError(f"Layer '{name}': {error}") from None

    def is_shared(self) -> bool:
        values = list(self.layers.values())
        return all(coords == values[0] for coords in values[1:])

    def to_dict(self) -> dict[str, dict[str, float]] | dict[str, float]:
        """ A single map when all layers agree, otherwise one map per layer. """
        if self.is_shared() and len(self.layers) > 0:
            return next(iter(self.layers.values())).to_dict()
        return {name: coords.to_dict() for name, coords in self.layers.items()}


def reconstruct(pool: CheckpointPool, coords: LayerCoords | BarycentricCoords) -> ParamSet:
    """
    Rebuilds a merged model from its coordinates by streaming the pool.

    Args:
        pool (CheckpointPool): The pool holding every vertex named in the coordinates.
        coords (LayerCoords | BarycentricCoords): Shared or per-layer coordinates.
    """
    schema = pool.schema
    if isinstance(coords, BarycentricCoords):
        coords = LayerCoords.uniform([name for name, _ in schema], coords)
    layers = {name: np.zeros(shape) for name, shape in schema}
    with pool.meter.holding():
        for _, vertex_id, params in pool.stream():
            for name in layers:
                weight = coords.layers[name].weights.get(vertex_id, 0.0)
                if weight != 0.0:
                    layers[name] += weight * params[name]
    return ParamSet(layers)


def hull_diameter(pool: CheckpointPool) -> float:
    """
    Largest pairwise distance between vertices; the hull's diameter.
    Loads two checkpoints at a time.
    """
    diameter = 0.0
    for i in range(len(pool)):
        with pool.checkout(i) as a:
            for j in range(i + 1, len(pool)):
                with pool.checkout(j) as b:
                    diameter = max(diameter, norm(sub(a, b)))
    return diameter


def fw_gap_bound(suboptimality: float, budget: int, lipschitz: float, diameter: float) -> float:
    """
    Upper bound on the smallest FW gap after ``budget`` iterations:
    suboptimality / budget + lipschitz * diameter^2 / 2.
    """
    return suboptimality / budget + lipschitz * diameter ** 2 / 2.0


def coordinates_error(pool: CheckpointPool, coords: Optional[LayerCoords], theta: ParamSet) -> float:
    """ Largest absolute difference between theta and its reconstruction. """
    if coords is None:
        return math.inf
    rebuilt = reconstruct(pool, coords)
    return float(np.max(np.abs(rebuilt.to_vector() - theta.to_vector())))
