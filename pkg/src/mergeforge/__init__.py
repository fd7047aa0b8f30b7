"""Checkpoint merging by spherical interpolation, benchmark grading and merge analytics."""
from ._backend import BACKEND
from .mergecore import (
    FilterRule,
    MergeMethod,
    ParameterPolicy,
    TSchedule,
    layer_index,
    lerp_vec,
    merge_checkpoints,
    merge_tensor,
    resolve_t,
    schedule_eval,
    slerp_vec,
)
from .recipe import MergeRecipe, emit_recipe, load_recipe, parse_recipe, validate
from .tensorstore import Checkpoint, DType, TensorRecord, cast, decode_f64, read_checkpoint, write_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Checkpoint",
    "DType",
    "FilterRule",
    "MergeMethod",
    "MergeRecipe",
    "ParameterPolicy",
    "TSchedule",
    "TensorRecord",
    "cast",
    "decode_f64",
    "emit_recipe",
    "layer_index",
    "lerp_vec",
    "load_recipe",
    "merge_checkpoints",
    "merge_tensor",
    "parse_recipe",
    "read_checkpoint",
    "resolve_t",
    "schedule_eval",
    "slerp_vec",
    "validate",
    "write_checkpoint",
]
