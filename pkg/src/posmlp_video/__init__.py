"""Positional gating MLPs for video: LRPE gating units, factorized blocks,
the hierarchical backbone, complexity accounting and a toy training harness."""

from .accounting import count_model_flops, count_model_params, count_unit_params
from .blocks import Block, BlockSpec, PosModule, PosModuleSpec
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, preset
from .network import PosMLPVideo, image_mode_forward, model_forward
from .rpe import RelPosDictionary
from .tensor import Tensor, no_grad
from .units import GatingUnit, GatingUnitSpec

__version__ = "0.1.0"

__all__ = [
    "Block", "BlockSpec", "GatingUnit", "GatingUnitSpec", "ModelConfig", "PosMLPVideo", "PosModule",
    "PosModuleSpec", "RelPosDictionary", "Tensor", "count_model_flops", "count_model_params",
    "count_unit_params", "image_mode_forward", "load_checkpoint", "model_forward", "no_grad",
    "preset", "save_checkpoint",
]
