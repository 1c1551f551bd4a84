from .baselines import task_arithmetic, ties_merge, weight_average
from .checkpoint import CheckpointPool, check_schema, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, FWConfig, TiesConfig
from .engine import fw_gap, line_search, linear_scores, lmo_hard, lmo_topk, merge_convex, merge_soft, run_fw
from .errors import (
    ConfigError,
    DimensionError,
    EmptyPoolError,
    FWMergeError,
    FormatError,
    NumericsError,
    SchemaError,
    SimplexError,
)
from .objectives import MultiTaskObjective, QuadraticObjective, TaskSpec
from .params import ParamSet, axpy, dot, dot_per_layer
from .simplex import SimplexWeights, project_simplex, uniform_weights

__all__ = [
    'CheckpointPool', 'ConfigError', 'DimensionError', 'EmptyPoolError', 'ExperimentConfig', 'FWConfig',
    'FWMergeError', 'FormatError', 'MultiTaskObjective', 'NumericsError', 'ParamSet', 'QuadraticObjective',
    'SchemaError', 'SimplexError', 'SimplexWeights', 'TaskSpec', 'TiesConfig', 'axpy', 'check_schema', 'dot',
    'dot_per_layer', 'fw_gap', 'line_search', 'linear_scores', 'lmo_hard', 'lmo_topk', 'load_checkpoint',
    'merge_convex', 'merge_soft', 'project_simplex', 'run_fw', 'save_checkpoint', 'task_arithmetic',
    'ties_merge', 'uniform_weights', 'weight_average',
]
