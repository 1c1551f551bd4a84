import hashlib
import math
import numpy as np
from collections.abc import Iterable, Iterator, Mapping
from typing import Optional, Self
from .errors import NumericsError, SchemaError


Shape = tuple[int, ...]
Schema = tuple[tuple[str, Shape], ...]


class ParamSet:
    """
    Ordered map from layer name to a 64-bit float tensor.

    Layer order is the insertion order and is kept by every operation of this module.
    The arrays are read-only: operations return new parameter sets.
    """

    def __init__(self, layers: Mapping[str, np.ndarray | Iterable[float]], check_finite: bool = True):
        """
        Args:
            layers (Mapping[str, ndarray]): The tensors, in layer order.
            check_finite (bool): Whether to reject NaN/Inf values.

        Raises:
            SchemaError: If a layer is empty.
            NumericsError: If check_finite is set and a value is not finite.
        """
        self._layers: dict[str, np.ndarray] = {}
        for name, data in layers.items():
            array = np.array(data, dtype=np.float64)
            if array.size == 0:
                raise SchemaError(f"Layer '{name}' is empty")
            if check_finite and not np.all(np.isfinite(array)):
                raise NumericsError(f"Layer '{name}' contains non-finite values")
            array.flags.writeable = False
            self._layers[str(name)] = array

    @classmethod
    def from_vector(cls, schema: Schema, vector: np.ndarray) -> Self:
        """
        Splits a flat vector into layers following a schema.

        Raises:
            SchemaError: If the vector length differs from the schema's total size.
        """
        vector = np.asarray(vector, dtype=np.float64)
        total = sum(math.prod(shape) for _, shape in schema)
        if vector.ndim != 1 or vector.size != total:
            raise SchemaError(f"Vector of size {vector.size} does not match schema of size {total}")
        layers = {}
        offset = 0
        for name, shape in schema:
            size = math.prod(shape)
            layers[name] = vector[offset:offset + size].reshape(shape)
            offset += size
        return cls(layers)

    @property
    def layers(self) -> Mapping[str, np.ndarray]:
        return self._layers

    @property
    def names(self) -> list[str]:
        return list(self._layers)

    @property
    def schema(self) -> Schema:
        return tuple((name, tuple(int(d) for d in array.shape)) for name, array in self._layers.items())

    @property
    def total_dim(self) -> int:
        return sum(array.size for array in self._layers.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self._layers[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._layers)

    def __len__(self) -> int:
        return len(self._layers)

    def to_vector(self) -> np.ndarray:
        """ The concatenation of all layers, in layer order. """
        return np.concatenate([array.ravel() for array in self._layers.values()])

    def content_hash(self) -> str:
        """ SHA-256 over layer names, shapes and little-endian float64 bytes. """
        digest = hashlib.sha256()
        for name, array in self._layers.items():
            digest.update(name.encode("utf-8"))
            digest.update(repr(tuple(array.shape)).encode("ascii"))
            digest.update(np.ascontiguousarray(array, dtype="<f8").tobytes())
        return digest.hexdigest()

    def equals(self, other: "ParamSet") -> bool:
        """ Bitwise equality of schema and values. """
        if self.schema != other.schema:
            return False
        return all(np.array_equal(self._layers[name], other.layers[name]) for name in self._layers)

    def __repr__(self) -> str:
        parts = ", ".join(f"{name}: {list(array.shape)}" for name, array in self._layers.items())
        return f"{{layers: {{{parts}}}, total_dim: {self.total_dim}}}"


#
# Schema checks
#
def check_same_schema(a: ParamSet, b: ParamSet, what: str = "parameter sets") -> None:
    """
    Raises:
        SchemaError: naming the first layer where the schemas disagree.
    """
    if a.schema == b.schema:
        return
    raise SchemaError(f"Schema mismatch between {what}: {describe_mismatch(a.schema, b.schema)}")


def describe_mismatch(expected: Schema, actual: Schema) -> str:
    """ Human-readable description of the first difference between two schemas. """
    expected_names = [name for name, _ in expected]
    actual_names = [name for name, _ in actual]
    for name in expected_names:
        if name not in actual_names:
            return f"missing layer '{name}'"
    for name in actual_names:
        if name not in expected_names:
            return f"unexpected layer '{name}'"
    if expected_names != actual_names:
        return f"layer order {actual_names} differs from {expected_names}"
    for (name, shape), (_, other) in zip(expected, actual):
        if shape != other:
            return f"layer '{name}' has shape {list(other)}, expected {list(shape)}"
    return "no difference"


def _finite(layers: dict[str, np.ndarray], operation: str) -> ParamSet:
    for name, array in layers.items():
        if not np.all(np.isfinite(array)):
            raise NumericsError(f"{operation} produced non-finite values in layer '{name}'")
    return ParamSet(layers, check_finite=False)


#
# Arithmetic
#
def axpy(dst: ParamSet, alpha: float, src: ParamSet) -> ParamSet:
    """
    Returns dst + alpha * src, element-wise.

    Raises:
        SchemaError: If the schemas differ.
        NumericsError: If the result is not finite.
    """
    check_same_schema(dst, src)
    alpha = float(alpha)
    return _finite({name: dst[name] + alpha * src[name] for name in dst}, "axpy")


def scale(p: ParamSet, alpha: float) -> ParamSet:
    """ Returns alpha * p. """
    alpha = float(alpha)
    return _finite({name: alpha * array for name, array in p.layers.items()}, "scale")


def sub(a: ParamSet, b: ParamSet) -> ParamSet:
    """ Returns a - b. """
    check_same_schema(a, b)
    return _finite({name: a[name] - b[name] for name in a}, "sub")


def zeros_like(p: ParamSet) -> ParamSet:
    return ParamSet({name: np.zeros_like(array) for name, array in p.layers.items()}, check_finite=False)


def dot_per_layer(a: ParamSet, b: ParamSet) -> dict[str, float]:
    """
    Per-layer inner products, in layer order. Each layer is accumulated sequentially
    in flat-index order, independent of BLAS threading.

    Raises:
        SchemaError: If the schemas differ.
    """
    check_same_schema(a, b)
    return {name: float(np.cumsum(a[name].ravel() * b[name].ravel())[-1]) for name in a}


def dot(a: ParamSet, b: ParamSet) -> float:
    """
    Inner product over all layers.

    Layers are accumulated serially in layer order, so the result is the sum of
    dot_per_layer's values taken in that order.

    Raises:
        SchemaError: If the schemas differ.
    """
    total = 0.0
    for value in dot_per_layer(a, b).values():
        total += value
    return total


def norm(p: ParamSet) -> float:
    return math.sqrt(max(dot(p, p), 0.0))


def combine(base: Optional[ParamSet], terms: list[tuple[float, ParamSet]]) -> ParamSet:
    """
    Returns base + sum(coefficient * p) accumulated in list order.

    Args:
        base (ParamSet): The starting point, or None for zero.
        terms (list[tuple[float, ParamSet]]): The coefficients and parameter sets.
    """
    if base is None:
        if len(terms) == 0:
            raise SchemaError("Cannot combine an empty list of parameter sets")
        base = zeros_like(terms[0][1])
    result = {name: array.copy() for name, array in base.layers.items()}
    for coefficient, p in terms:
        check_same_schema(base, p)
        for name in result:
            result[name] += float(coefficient) * p[name]
    return _finite(result, "combine")
