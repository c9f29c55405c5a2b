"""Keyword spotting on raw waveforms with Xception-1d, in numpy."""

from .model import ModelConfig, build, forward, param_count
from .tensor import Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = ["ModelConfig", "Tensor", "backward", "build", "forward", "grad_check", "param_count"]
