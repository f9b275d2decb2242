from .adam import AdamState, adam_step, lr_at_epoch
from .flops import flops_estimate, format_flops_table
from .layers import attention, build_masks, softmax_rows
from .model import ModelConfig, PositionNet, Stage1Net

__all__ = [
    "AdamState",
    "ModelConfig",
    "PositionNet",
    "Stage1Net",
    "adam_step",
    "attention",
    "build_masks",
    "flops_estimate",
    "format_flops_table",
    "lr_at_epoch",
    "softmax_rows",
]
