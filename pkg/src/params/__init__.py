from .checkpoint import load_checkpoint, save_checkpoint
from .store import (
    AdamState,
    LrVector,
    ParamGroup,
    ParamLayout,
    ParamVector,
    SigmaVector,
    adam_step,
    init_params,
    lrs_from_sigma,
    mean_params,
    sum_sq_dev,
)

__all__ = [
    "AdamState",
    "LrVector",
    "ParamGroup",
    "ParamLayout",
    "ParamVector",
    "SigmaVector",
    "adam_step",
    "init_params",
    "load_checkpoint",
    "lrs_from_sigma",
    "mean_params",
    "save_checkpoint",
    "sum_sq_dev",
]
