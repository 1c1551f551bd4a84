from enum import StrEnum
from typing import Optional, Self
from .errors import ConfigError


class _Option(StrEnum):
    """
    Base enum for configuration values read from flags and documents.
    """

    @classmethod
    def aliases(cls) -> dict[str, str]:
        return {}

    @classmethod
    def parse(cls, value: Optional[str | Self], field: Optional[str] = None) -> Self:
        """
        Returns the enum member matching a value or one of its aliases.

        Args:
            value (str): The canonical value or an alias.
            field (str): The configuration key, used in the error message.

        Raises:
            ConfigError: If the value is not accepted.
        """
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower().replace('_', '-')
            key = cls.aliases().get(key, key)
            try:
                return cls(key)
            except ValueError:
                pass
        accepted = ", ".join(member.value for member in cls)
        name = field if field is not None else cls.__name__
        raise ConfigError(f"Invalid value {value!r} for '{name}'. Accepted values: {accepted}")


class Variant(_Option):
    """ Frank-Wolfe variant. """

    HARD = "hard"
    SOFT = "soft"


class Granularity(_Option):
    """ Vertex selection granularity of the LMO. """

    TASK = "task"
    LAYER = "layer"

    @classmethod
    def aliases(cls) -> dict[str, str]:
        return {"task-wise": "task", "layer-wise": "layer"}


class LambdaGranularity(_Option):
    """ Shape of the soft-FW merging coefficients. """

    VERTEX = "vertex"
    LAYER = "layer"

    @classmethod
    def aliases(cls) -> dict[str, str]:
        return {"per-vertex": "vertex", "per-layer": "layer", "per-vertex-per-layer": "layer"}


class SimplexMode(_Option):
    """ Unit simplex (sum = 1) or capped simplex (sum <= 1). """

    UNIT = "unit"
    CAPPED = "capped"


class MergeFn(_Option):
    """ Merging function applied at each FW update. """

    CONVEX = "convex"
    TIES = "ties"

    @property
    def keeps_hull(self) -> bool:
        return self == MergeFn.CONVEX


class Init(_Option):
    """ Initial solution of the FW loop. """

    PRETRAINED = "pretrained"
    TASK_ARITHMETIC = "task-arithmetic"
    WEIGHT_AVERAGE = "weight-average"


class StopReason(_Option):
    """ Why the FW loop returned. """

    GAP = "gap-below-epsilon"
    BUDGET = "budget-exhausted"


class Relevance(_Option):
    """ Which checkpoints a scaling sweep adds to the pool. """

    RELEVANT = "relevant"
    IRRELEVANT = "irrelevant"
    NOISY = "noisy"


class Method(_Option):
    """ Merging methods known to the experiment harness. """

    FW_HARD = "fw-hard"
    FW_SOFT = "fw-soft"
    WEIGHT_AVERAGE = "weight-average"
    TASK_ARITHMETIC = "task-arithmetic"
    TIES = "ties"

    @property
    def is_frank_wolfe(self) -> bool:
        return self in (Method.FW_HARD, Method.FW_SOFT)
