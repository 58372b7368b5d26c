"""Minimal differentiable substrate: autograd tape, layers, checks, checkpoints."""

from . import autograd
from .autograd import Tensor
from .checkpoint import load_checkpoint, load_meta, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    BiGRU,
    ChannelNorm,
    Conv2d,
    ConvStack,
    Embedding,
    GRU,
    LayerNorm,
    LayerSpec,
    Linear,
    Module,
    ModuleList,
    MultiHeadAttention,
    Param,
    orthogonal,
    scaled_dot_attention,
    uniform_fan_in,
)

__all__ = [
    "autograd",
    "Tensor",
    "Param",
    "Module",
    "ModuleList",
    "Linear",
    "Embedding",
    "GRU",
    "BiGRU",
    "Conv2d",
    "ConvStack",
    "ChannelNorm",
    "LayerNorm",
    "LayerSpec",
    "MultiHeadAttention",
    "scaled_dot_attention",
    "uniform_fan_in",
    "orthogonal",
    "grad_check",
    "GradCheckReport",
    "save_checkpoint",
    "load_checkpoint",
    "load_meta",
]
