import numpy as np
from collections.abc import Sequence
from dataclasses import dataclass, field
from .errors import DimensionError, NumericsError, SimplexError
from .options import SimplexMode


SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SimplexWeights:
    """
    Merging coefficients on the unit simplex (sum = 1) or the capped simplex (sum <= 1).
    """

    values: np.ndarray
    mode: SimplexMode = SimplexMode.UNIT

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mode", SimplexMode.parse(self.mode, "simplex_mode"))

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, j: int) -> float:
        return float(self.values[j])

    @property
    def total(self) -> float:
        return float(np.sum(self.values))

    def validate(self) -> None:
        """
        Raises:
            SimplexError: If a value is negative or not finite, or the sum is out of range.
        """
        if self.values.size == 0:
            raise SimplexError("Empty merging coefficients")
        if not np.all(np.isfinite(self.values)):
            raise SimplexError(f"Non-finite merging coefficients {self.values.tolist()}")
        if np.any(self.values < 0):
            raise SimplexError(f"Negative merging coefficients {self.values.tolist()}")
        total = self.total
        if self.mode == SimplexMode.UNIT and abs(total - 1.0) > SUM_TOLERANCE:
            raise SimplexError(f"Merging coefficients sum to {total!r}, expected 1")
        if self.mode == SimplexMode.CAPPED and total > 1.0 + SUM_TOLERANCE:
            raise SimplexError(f"Merging coefficients sum to {total!r}, expected at most 1")

    def tolist(self) -> list[float]:
        return [float(v) for v in self.values]


@dataclass(frozen=True)
class LayerSimplexWeights:
    """
    One set of merging coefficients per layer.
    """

    layers: dict[str, SimplexWeights] = field(default_factory=dict)

    def validate(self) -> None:
        for name, weights in self.layers.items():
            try:
                weights.validate()
            except SimplexError as error:
                raise SimplexError(f"Layer '{name}': {error}") from None

    def tolist(self) -> dict[str, list[float]]:
        return {name: weights.tolist() for name, weights in self.layers.items()}


def _check_vector(v: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise DimensionError("Cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise NumericsError(f"Cannot project non-finite vector {v.tolist()}")
    return v


def _project_unit(v: np.ndarray) -> np.ndarray:
    # stable sort so that equal entries keep their original order
    order = np.argsort(-v, kind="stable")
    u = v[order]
    css = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    positive = u - (css - 1.0) / ranks > 0
    rho = int(np.nonzero(positive)[0][-1]) + 1
    threshold = (css[rho - 1] - 1.0) / rho
    return np.maximum(v - threshold, 0.0)


def project_simplex(v: Sequence[float] | np.ndarray, mode: SimplexMode | str = SimplexMode.UNIT) -> SimplexWeights:
    """
    Euclidean projection onto the unit simplex {w >= 0, sum(w) = 1} or the capped
    simplex {w >= 0, sum(w) <= 1}, by the sort-and-threshold method.

    Args:
        v (array): The vector to project.
        mode (SimplexMode): 'unit' (default) or 'capped'.

    Raises:
        DimensionError: If v is empty.
        NumericsError: If v has non-finite entries.
    """
    mode = SimplexMode.parse(mode, "simplex_mode")
    v = _check_vector(v)
    if mode == SimplexMode.CAPPED:
        clipped = np.maximum(v, 0.0)
        if np.sum(clipped) <= 1.0:
            return SimplexWeights(clipped, mode)
    return SimplexWeights(_project_unit(v), mode)


def uniform_weights(n: int, mode: SimplexMode | str = SimplexMode.UNIT) -> SimplexWeights:
    """
    Raises:
        DimensionError: If n < 1.
    """
    if n < 1:
        raise DimensionError(f"Cannot build uniform weights of dimension {n}")
    return SimplexWeights(np.full(n, 1.0 / n), mode)


def unit_vector(n: int, j: int, mode: SimplexMode | str = SimplexMode.UNIT) -> SimplexWeights:
    values = np.zeros(n)
    values[j] = 1.0
    return SimplexWeights(values, mode)
