"""Lightweight one-stage detector built on a small numpy autograd core.

Subpackages: ``tensor`` (autodiff and kernels), ``nn`` (layers and YOLOv8
blocks), ``kw`` (kernel-warehouse convolution), ``fdpn`` (diffusion neck),
``gsd_head`` (shared head), ``zoo`` (variants, audits, weights, training)
and ``evaluation`` (decode, metrics, data, augmentation, benchmarking).
"""
from .errors import KFGError
from .tensor import Tensor, kernels, no_grad
from .zoo import ModelConfig, audit_params, build_model, load_weights, save_weights, variant_config

__version__ = "0.1.0"

__all__ = [
    "KFGError", "ModelConfig", "Tensor", "audit_params", "build_model", "kernels",
    "load_weights", "no_grad", "save_weights", "variant_config",
]
