import numpy as np
from fw_merging.params import ParamSet


def params(**layers) -> ParamSet:
    return ParamSet({name: np.asarray(values, dtype=np.float64) for name, values in layers.items()})


def random_params(rng: np.random.Generator, shapes=(("W", (3, 2)), ("b", (2,)))) -> ParamSet:
    return ParamSet({name: rng.standard_normal(shape) for name, shape in shapes})


def point(x: float, y: float) -> ParamSet:
    """ A 2-D point as a single-layer parameter set. """
    return params(x=[x, y])


def simplex_grid(n: int, step: float) -> np.ndarray:
    """ Every point of the n-simplex whose coordinates are multiples of step (n <= 3). """
    ticks = int(round(1.0 / step))
    if n == 2:
        a = np.arange(ticks + 1)
        return np.stack([a, ticks - a], axis=1) / ticks
    a, b = np.meshgrid(np.arange(ticks + 1), np.arange(ticks + 1), indexing="ij")
    keep = a + b <= ticks
    a, b = a[keep], b[keep]
    return np.stack([a, b, ticks - a - b], axis=1) / ticks
