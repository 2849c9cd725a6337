"""Hybrid EfficientNet/CBAM/transformer pneumonia classifier on a small numpy autodiff core."""
from .model import PRESETS, LungX, ModelConfig, build_model
from .tensor import Tensor, no_grad

__all__ = ["PRESETS", "LungX", "ModelConfig", "build_model", "Tensor", "no_grad"]
__version__ = "0.1.0"
