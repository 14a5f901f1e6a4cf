"""Blind image denoising with a selective-residual M-Net.

A self-contained stack: 4-D tensor autodiff, the convolution/fusion
operators, the hierarchical model with its Charbonnier objective, PPM
data handling with synthetic Gaussian noise, PSNR/SSIM scoring, an
analytic FLOPs profiler, and a CLI tying it together.
"""

from .errors import SrmnetError
from .graph import FlopsReport, GraphNode, count_flops
from .metrics import psnr, ssim
from .model import (ModelConfig, SrmNet, charbonnier_loss, denoise_array,
                    init_model)
from .modelio import load_model, save_model
from .ops import (bilinear_resize, branch_softmax, concat_channels, conv2d,
                  global_avg_pool, leaky_relu, pixel_shuffle, pixel_unshuffle)
from .tensor import (FdReport, Tensor, finite_diff_check, no_grad, record_op,
                     sqrt)
from .train import Adam, TrainConfig, TrainResult, evaluate, train

__all__ = [
    "Adam", "FdReport", "FlopsReport", "GraphNode", "ModelConfig", "SrmNet",
    "SrmnetError", "Tensor", "TrainConfig", "TrainResult", "bilinear_resize",
    "branch_softmax", "charbonnier_loss", "concat_channels", "conv2d",
    "count_flops", "denoise_array", "evaluate", "finite_diff_check",
    "global_avg_pool", "init_model", "leaky_relu", "load_model", "no_grad",
    "pixel_shuffle", "pixel_unshuffle", "psnr", "record_op", "save_model",
    "sqrt", "ssim", "train",
]

__version__ = "0.1.0"
